#pragma once
// Integer/rational geometry of the step set: hull of R, faces, convex
// representations of velocities, target-path endpoints, and coefficient
// transport along converging velocity sequences. All core queries run in
// exact rational arithmetic; full facet/face enumeration is capped for
// large step sets or d > 4 (flagged, queries still exact via LP).

#include "rwrp/lp.hpp"
#include "rwrp/rational.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwrp {

using LatticeVec = std::vector<long long>;

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotInHullError : GeometryError {
  using GeometryError::GeometryError;
};

struct Facet {
  std::vector<BigInt> normal;  // normal·x <= rhs for all of U, equality on the facet
  BigInt rhs;
  std::vector<int> touching;   // step indices on the facet
};

struct AffineEq {
  std::vector<BigInt> normal;  // normal·x = rhs on aff U
  BigInt rhs;
};

struct Face {
  std::vector<int> steps;          // sorted indices into geometry steps, = R ∩ U₀
  int affine_dim = 0;
  std::vector<LatticeVec> basis;   // integer direction basis of aff U₀
  bool contains_origin = false;
};

struct StepGeometry {
  int d = 0;
  std::vector<LatticeVec> steps;
  std::vector<double> kernel;      // p̂_z, positive, sums to 1
  std::vector<double> log_kernel;
  double M = 0;                    // max Euclidean step norm
  int affine_dim = 0;
  std::vector<AffineEq> affine_eqs;
  std::vector<Facet> facets;
  std::vector<int> extreme;        // indices of ex U
  std::vector<Face> faces;         // all nonempty faces, U last
  bool strictly_directed = false;
  std::optional<LatticeVec> uhat;
  bool origin_in_U = false;
  bool origin_in_ri_U = false;
  bool space_time = false;         // last coordinate of every step equals 1
  bool hull_enumerated = true;     // false when facet/face enumeration was capped
  std::vector<LatticeVec> span_basis;  // integer basis of span(R−R)
};

struct ConvexRep {
  std::vector<int> face_steps;  // indices into geometry steps
  RatVec beta;                  // aligned with face_steps, >0, sums to 1
  RatVec zeta;                  // the represented velocity
};

struct PathPlan {
  long long n = 0;
  std::vector<int> face_steps;
  std::vector<long long> counts;  // k_z aligned with face_steps
  LatticeVec endpoint;            // x̂_n(ζ)
};

namespace geo {

inline RatVec to_rat(const LatticeVec& v) {
  RatVec r(v.size());
  for (size_t i = 0; i < v.size(); ++i) r[i] = Rat(v[i]);
  return r;
}

inline bool lex_less(const LatticeVec& a, const LatticeVec& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// Scales a rational vector to a primitive integer vector (gcd 1).
inline std::vector<BigInt> integerize(const RatVec& v) {
  BigInt l = 1;
  for (const auto& r : v) l = boost::multiprecision::lcm(l, rat_den(r));
  std::vector<BigInt> out(v.size());
  BigInt g = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    out[i] = rat_num(v[i]) * (l / rat_den(v[i]));
    g = boost::multiprecision::gcd(g, out[i]);
  }
  if (g > 1)
    for (auto& x : out) x /= g;
  return out;
}

// Convex-representation constraint system over the given point list:
// rows = d coordinate equations + the normalization row.
inline void rep_system(const std::vector<RatVec>& pts, const RatVec& target,
                       Mat<Rat>& a, RatVec& b) {
  size_t d = target.size(), n = pts.size();
  a.assign(d + 1, RatVec(n, Rat(0)));
  b.assign(d + 1, Rat(0));
  for (size_t i = 0; i < d; ++i) {
    for (size_t j = 0; j < n; ++j) a[i][j] = pts[j][i];
    b[i] = target[i];
  }
  for (size_t j = 0; j < n; ++j) a[d][j] = 1;
  b[d] = 1;
}

inline std::optional<RatVec> convex_rep(const std::vector<RatVec>& pts, const RatVec& target) {
  Mat<Rat> a;
  RatVec b;
  rep_system(pts, target, a, b);
  auto res = lp_feasible(a, b);
  if (res.status != LpStatus::Optimal) return std::nullopt;
  return res.x;
}

// Maximizes coordinate j over the representation polytope; nullopt if infeasible.
inline std::optional<std::pair<Rat, RatVec>> max_rep_coord(const std::vector<RatVec>& pts,
                                                           const RatVec& target, size_t j) {
  Mat<Rat> a;
  RatVec b;
  rep_system(pts, target, a, b);
  RatVec c(pts.size(), Rat(0));
  c[j] = -1;  // maximize x_j
  auto res = lp_solve(a, b, c);
  if (res.status != LpStatus::Optimal) return std::nullopt;
  return std::make_pair(res.x[j], res.x);
}

inline int affine_dim_of(const std::vector<RatVec>& pts) {
  if (pts.empty()) return -1;
  Mat<Rat> diffs;
  for (size_t i = 1; i < pts.size(); ++i) {
    RatVec row(pts[0].size());
    for (size_t j = 0; j < row.size(); ++j) row[j] = pts[i][j] - pts[0][j];
    diffs.push_back(std::move(row));
  }
  return diffs.empty() ? 0 : rank(diffs);
}

}  // namespace geo

inline std::pair<Face, ConvexRep> face_of(const StepGeometry& g, const RatVec& zeta);

// ---- build_geometry ----

inline StepGeometry build_geometry(int d, std::vector<LatticeVec> steps,
                                   std::vector<double> kernel = {}) {
  if (steps.empty()) throw GeometryError("empty step list");
  for (const auto& z : steps)
    if ((int)z.size() != d) throw GeometryError("step dimension mismatch");
  {
    auto sorted = steps;
    std::sort(sorted.begin(), sorted.end(), geo::lex_less);
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw GeometryError("duplicate steps");
  }
  if (kernel.empty()) kernel.assign(steps.size(), 1.0 / (double)steps.size());
  if (kernel.size() != steps.size()) throw GeometryError("kernel size mismatch");
  double ksum = 0;
  for (double w : kernel) {
    if (!(w > 0)) throw GeometryError("non-positive kernel weight");
    ksum += w;
  }
  if (std::fabs(ksum - 1.0) > 1e-12) throw GeometryError("kernel weights do not sum to 1");

  StepGeometry g;
  g.d = d;
  g.steps = std::move(steps);
  g.kernel = std::move(kernel);
  g.log_kernel.resize(g.kernel.size());
  for (size_t i = 0; i < g.kernel.size(); ++i) g.log_kernel[i] = std::log(g.kernel[i]);
  for (const auto& z : g.steps) {
    double s = 0;
    for (long long c : z) s += (double)c * (double)c;
    g.M = std::max(g.M, std::sqrt(s));
  }
  g.space_time = d >= 2;
  for (const auto& z : g.steps)
    if (z[d - 1] != 1) g.space_time = false;

  const size_t nR = g.steps.size();
  std::vector<RatVec> pts(nR);
  for (size_t i = 0; i < nR; ++i) pts[i] = geo::to_rat(g.steps[i]);

  // Affine hull: dimension, integer direction basis, and equality constraints.
  Mat<Rat> diffs;
  for (size_t i = 1; i < nR; ++i) {
    RatVec row(d);
    for (int j = 0; j < d; ++j) row[j] = pts[i][j] - pts[0][j];
    diffs.push_back(std::move(row));
  }
  g.affine_dim = diffs.empty() ? 0 : rank(diffs);
  {
    Mat<Rat> m = diffs;
    auto pivots = row_reduce(m);
    for (size_t r = 0; r < pivots.size(); ++r) g.span_basis.push_back(LatticeVec());
    for (size_t r = 0; r < pivots.size(); ++r) {
      auto iv = geo::integerize(m[r]);
      LatticeVec v(d);
      for (int j = 0; j < d; ++j) v[j] = to_ll(iv[j]);
      g.span_basis[r] = std::move(v);
    }
    // Equalities: normals spanning the orthogonal complement of span(R−R).
    for (auto& nv : nullspace(diffs)) {
      auto iv = geo::integerize(nv);
      Rat rhs = 0;
      for (int j = 0; j < d; ++j) rhs += Rat(iv[j]) * pts[0][j];
      g.affine_eqs.push_back({iv, rat_num(rhs)});  // rhs integral: integer normal on integer point
    }
  }

  // Extreme points: z_i extreme iff not representable over the others.
  for (size_t i = 0; i < nR; ++i) {
    std::vector<RatVec> others;
    for (size_t j = 0; j < nR; ++j)
      if (j != i) others.push_back(pts[j]);
    if (others.empty() || !geo::convex_rep(others, pts[i])) g.extreme.push_back((int)i);
  }

  // Facets: supporting hyperplanes through affine_dim many affinely independent
  // steps, normals constrained to the hull's direction space. Enumeration is
  // capped; queries below never depend on it.
  const int k = g.affine_dim;
  double comb = 1;
  for (int i = 0; i < k; ++i) comb *= (double)(nR - i) / (double)(i + 1);
  g.hull_enumerated = (d <= 4 || comb <= 20000) && k >= 1;
  if (k == 0) {  // single-point hull: only face is U itself
    g.hull_enumerated = true;
  } else if (g.hull_enumerated) {
    std::set<std::vector<int>> seen_touch;
    std::vector<int> idx(k);
    std::function<void(size_t, int)> rec = [&](size_t pos, int start) {
      if (pos == (size_t)k) {
        // Normal n = Σ y_r basis_r with n·(s_j − s_0) = 0 for chosen steps.
        Mat<Rat> sys;  // (k−1) × k
        for (int j = 1; j < k; ++j) {
          RatVec row(k);
          for (int r = 0; r < k; ++r) {
            Rat acc = 0;
            for (int c = 0; c < d; ++c)
              acc += Rat(g.span_basis[r][c]) * (pts[idx[j]][c] - pts[idx[0]][c]);
            row[r] = acc;
          }
          sys.push_back(std::move(row));
        }
        // k=1: empty system carries no column count; the direction space is 1-d.
        auto null = (k == 1) ? Mat<Rat>{{Rat(1)}} : nullspace(sys);
        if (null.size() != 1) return;  // chosen steps not affinely independent
        RatVec normal(d, Rat(0));
        for (int r = 0; r < k; ++r)
          for (int c = 0; c < d; ++c) normal[c] += null[0][r] * Rat(g.span_basis[r][c]);
        Rat rhs = 0;
        for (int c = 0; c < d; ++c) rhs += normal[c] * pts[idx[0]][c];
        int sign = 0;
        std::vector<int> touching;
        for (size_t i2 = 0; i2 < nR; ++i2) {
          Rat v = 0;
          for (int c = 0; c < d; ++c) v += normal[c] * pts[i2][c];
          if (v == rhs) touching.push_back((int)i2);
          else if (v < rhs) { if (sign > 0) return; sign = -1; }
          else { if (sign < 0) return; sign = 1; }
        }
        if (sign == 0) return;  // all touching: hyperplane contains U
        if (sign > 0) {  // flip so U satisfies normal·x <= rhs
          for (auto& c : normal) c = -c;
          rhs = -rhs;
        }
        if (!seen_touch.insert(touching).second) return;
        RatVec aug = normal;
        aug.push_back(rhs);
        auto iv = geo::integerize(aug);
        Facet f;
        f.normal.assign(iv.begin(), iv.end() - 1);
        f.rhs = iv.back();
        f.touching = touching;
        g.facets.push_back(std::move(f));
        return;
      }
      for (int i2 = start; i2 < (int)nR; ++i2) {
        idx[pos] = i2;
        rec(pos + 1, i2 + 1);
      }
    };
    rec(0, 0);
  }

  // Face lattice: facet touching sets closed under intersection, plus U.
  auto face_from_steps = [&](std::vector<int> s) {
    Face f;
    std::sort(s.begin(), s.end());
    f.steps = std::move(s);
    std::vector<RatVec> fp;
    for (int i : f.steps) fp.push_back(pts[i]);
    f.affine_dim = geo::affine_dim_of(fp);
    {
      Mat<Rat> fd;
      for (size_t i = 1; i < fp.size(); ++i) {
        RatVec row(d);
        for (int j = 0; j < d; ++j) row[j] = fp[i][j] - fp[0][j];
        fd.push_back(std::move(row));
      }
      Mat<Rat> m = fd;
      auto pv = row_reduce(m);
      for (size_t r = 0; r < pv.size(); ++r) {
        auto iv = geo::integerize(m[r]);
        LatticeVec v(d);
        for (int j = 0; j < d; ++j) v[j] = to_ll(iv[j]);
        f.basis.push_back(std::move(v));
      }
    }
    f.contains_origin = (bool)geo::convex_rep(fp, RatVec(d, Rat(0)));
    return f;
  };
  if (g.hull_enumerated) {
    std::set<std::vector<int>> face_sets;
    for (const auto& f : g.facets) {
      auto t = f.touching;
      std::sort(t.begin(), t.end());
      face_sets.insert(t);
    }
    for (bool grew = true; grew;) {
      grew = false;
      std::vector<std::vector<int>> cur(face_sets.begin(), face_sets.end());
      for (size_t i = 0; i < cur.size(); ++i)
        for (size_t j = i + 1; j < cur.size(); ++j) {
          std::vector<int> inter;
          std::set_intersection(cur[i].begin(), cur[i].end(), cur[j].begin(), cur[j].end(),
                                std::back_inserter(inter));
          if (!inter.empty() && face_sets.insert(inter).second) grew = true;
        }
    }
    for (const auto& s : face_sets) g.faces.push_back(face_from_steps(s));
    std::sort(g.faces.begin(), g.faces.end(), [](const Face& a, const Face& b) {
      if (a.affine_dim != b.affine_dim) return a.affine_dim < b.affine_dim;
      return a.steps < b.steps;
    });
  }
  {
    std::vector<int> all(nR);
    std::iota(all.begin(), all.end(), 0);
    g.faces.push_back(face_from_steps(all));  // U itself, last
  }

  // Directedness: û with û·z ≥ 1 for all z exists iff 0 ∉ U.
  g.origin_in_U = (bool)geo::convex_rep(pts, RatVec(d, Rat(0)));
  {
    // Variables u⁺, u⁻, slack per step: (u⁺−u⁻)·z − s_z = 1.
    Mat<Rat> a(nR, RatVec(2 * d + nR, Rat(0)));
    RatVec b(nR, Rat(1));
    for (size_t i = 0; i < nR; ++i) {
      for (int j = 0; j < d; ++j) {
        a[i][j] = pts[i][j];
        a[i][d + j] = -pts[i][j];
      }
      a[i][2 * d + i] = -1;
    }
    auto res = lp_feasible(a, b);
    g.strictly_directed = res.status == LpStatus::Optimal;
    if (g.strictly_directed) {
      RatVec u(d);
      for (int j = 0; j < d; ++j) u[j] = res.x[j] - res.x[d + j];
      auto iv = geo::integerize(u);
      LatticeVec uh(d);
      for (int j = 0; j < d; ++j) uh[j] = to_ll(iv[j]);
      g.uhat = uh;
    }
    if (g.strictly_directed == g.origin_in_U)
      throw GeometryError("internal: directedness certificate disagrees with 0∈U test");
  }
  if (g.origin_in_U) {
    auto fo = face_of(g, RatVec(d, Rat(0)));
    g.origin_in_ri_U = fo.first.steps.size() == nR;
  }
  return g;
}

// ---- face_of ----

inline std::pair<Face, ConvexRep> face_of(const StepGeometry& g, const RatVec& zeta) {
  if ((int)zeta.size() != g.d) throw GeometryError("velocity dimension mismatch");
  std::vector<RatVec> pts(g.steps.size());
  for (size_t i = 0; i < pts.size(); ++i) pts[i] = geo::to_rat(g.steps[i]);
  if (!geo::convex_rep(pts, zeta)) throw NotInHullError("velocity outside conv R");

  // R₀ = steps usable with positive coefficient; the average of the per-step
  // maximizing vertex representations is rational and positive on all of R₀.
  std::vector<int> r0;
  RatVec avg(pts.size(), Rat(0));
  int used = 0;
  for (size_t j = 0; j < pts.size(); ++j) {
    auto m = geo::max_rep_coord(pts, zeta, j);
    if (!m) throw NotInHullError("velocity outside conv R");
    if (m->first > 0) {
      r0.push_back((int)j);
      for (size_t i = 0; i < pts.size(); ++i) avg[i] += m->second[i];
      ++used;
    }
  }
  for (auto& v : avg) v /= used;

  Face face;
  face.steps = r0;
  {
    std::vector<RatVec> fp;
    for (int i : r0) fp.push_back(pts[i]);
    face.affine_dim = geo::affine_dim_of(fp);
    Mat<Rat> fd;
    for (size_t i = 1; i < fp.size(); ++i) {
      RatVec row(g.d);
      for (int j = 0; j < g.d; ++j) row[j] = fp[i][j] - fp[0][j];
      fd.push_back(std::move(row));
    }
    Mat<Rat> m = fd;
    auto pv = row_reduce(m);
    for (size_t r = 0; r < pv.size(); ++r) {
      auto iv = geo::integerize(m[r]);
      LatticeVec v(g.d);
      for (int j = 0; j < g.d; ++j) v[j] = to_ll(iv[j]);
      face.basis.push_back(std::move(v));
    }
    face.contains_origin = (bool)geo::convex_rep(fp, RatVec(g.d, Rat(0)));
  }

  ConvexRep rep;
  rep.face_steps = r0;
  rep.zeta = zeta;
  for (int i : r0) {
    if (avg[i] <= 0) throw GeometryError("internal: interior representation not positive");
    rep.beta.push_back(avg[i]);
  }
  // Off-face coordinates must vanish in every representation.
  for (size_t i = 0; i < avg.size(); ++i)
    if (std::find(r0.begin(), r0.end(), (int)i) == r0.end() && avg[i] != 0)
      throw GeometryError("internal: representation leaks outside its face");
  return {face, rep};
}

// ---- path_endpoint ----

inline PathPlan path_endpoint(const StepGeometry& g, const ConvexRep& rep, long long n) {
  if (n < 0) throw GeometryError("negative path length");
  PathPlan plan;
  plan.n = n;
  plan.face_steps = rep.face_steps;
  size_t m = rep.face_steps.size();
  plan.counts.assign(m, 0);
  std::vector<Rat> rema(m);
  BigInt assigned = 0;
  for (size_t i = 0; i < m; ++i) {
    Rat nb = Rat(n) * rep.beta[i];
    BigInt fl = rat_floor(nb);
    plan.counts[i] = to_ll(fl);
    rema[i] = nb - Rat(fl);
    assigned += fl;
  }
  long long deficit = n - to_ll(assigned);
  // Largest remainder wins; ties broken by lexicographic step order.
  std::vector<size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (rema[a] != rema[b]) return rema[a] > rema[b];
    return geo::lex_less(g.steps[rep.face_steps[a]], g.steps[rep.face_steps[b]]);
  });
  for (long long i = 0; i < deficit; ++i) {
    if (rema[order[i]] == 0)
      throw GeometryError("internal: deficit unit would land on a zero-coefficient step");
    plan.counts[order[i]] += 1;
  }
  plan.endpoint.assign(g.d, 0);
  for (size_t i = 0; i < m; ++i)
    for (int j = 0; j < g.d; ++j)
      plan.endpoint[j] += plan.counts[i] * g.steps[rep.face_steps[i]][j];
  return plan;
}

inline PathPlan path_endpoint(const StepGeometry& g, const RatVec& zeta, long long n) {
  return path_endpoint(g, face_of(g, zeta).second, n);
}

// ---- coefficient_transport ----

struct TransportResult {
  std::vector<RatVec> alpha;   // per n, aligned with the input point list
  std::vector<int> chart;      // chart id used (−1 = LP fallback)
  int fallbacks = 0;
  double lipschitz = 0;        // max ∞-norm Lipschitz constant over charts used
};

inline TransportResult coefficient_transport(const std::vector<RatVec>& I, const RatVec& beta,
                                             const std::vector<RatVec>& xi) {
  size_t m = I.size();
  if (beta.size() != m || m == 0) throw GeometryError("bad transport inputs");
  size_t d = I[0].size();
  Rat bsum = 0;
  for (const auto& b : beta) {
    if (b <= 0) throw GeometryError("transport requires strictly positive beta");
    bsum += b;
  }
  if (bsum != 1) throw GeometryError("beta does not sum to 1");
  RatVec zeta(d, Rat(0));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < d; ++j) zeta[j] += beta[i] * I[i][j];

  int k = geo::affine_dim_of(I);

  // Charts: affinely independent (k+1)-subsets; barycentric coordinates of a
  // point ξ solve [diffs]·w = ξ − z₀ within the chart.
  struct Chart {
    std::vector<int> idx;
    Mat<Rat> diffs;          // d × k system columns (stored as k rows)
    bool has_zeta = false;
    RatVec zeta_bar;         // barycentric coords of ζ (size k+1)
    double lips = 0;
  };
  std::vector<Chart> charts;
  {
    std::vector<int> idx(k + 1);
    std::function<void(size_t, int)> rec = [&](size_t pos, int start) {
      if (pos == (size_t)k + 1) {
        std::vector<RatVec> sub;
        for (int i : idx) sub.push_back(I[i]);
        if (geo::affine_dim_of(sub) != k) return;
        Chart c;
        c.idx = idx;
        for (int r = 1; r <= k; ++r) {
          RatVec row(d);
          for (size_t j = 0; j < d; ++j) row[j] = I[idx[r]][j] - I[idx[0]][j];
          c.diffs.push_back(std::move(row));
        }
        charts.push_back(std::move(c));
        return;
      }
      for (int i = start; i < (int)m; ++i) {
        idx[pos] = i;
        rec(pos + 1, i + 1);
      }
    };
    rec(0, 0);
  }

  // Barycentric solve: w from the k×k normal-free system via row reduction of
  // the stacked [diffsᵀ | ξ−z₀] coordinate system (consistent because ξ ∈ aff I).
  auto barycentric = [&](const Chart& c, const RatVec& p) -> std::optional<RatVec> {
    Mat<Rat> a(d, RatVec(k, Rat(0)));
    RatVec rhs(d);
    for (size_t i = 0; i < d; ++i) {
      for (int r = 0; r < k; ++r) a[i][r] = c.diffs[r][i];
      rhs[i] = p[i] - I[c.idx[0]][i];
    }
    auto w = solve_linear(a, rhs);
    if (w.empty() && k > 0) return std::nullopt;  // p outside aff(chart) = aff I
    RatVec bc(k + 1);
    Rat s = 0;
    for (int r = 0; r < k; ++r) {
      bc[r + 1] = w[r];
      s += w[r];
    }
    bc[0] = 1 - s;
    return bc;
  };

  for (auto& c : charts) {
    auto bc = barycentric(c, zeta);
    if (!bc) continue;
    bool ok = true;
    for (const auto& v : *bc)
      if (v < 0) ok = false;
    c.has_zeta = ok;
    if (ok) c.zeta_bar = *bc;
    // ∞-norm Lipschitz constant of ξ ↦ barycentric(ξ): probe the unit directions.
    if (ok && k > 0) {
      double lips = 0;
      for (size_t j = 0; j < d; ++j) {
        RatVec p = zeta;
        p[j] += 1;
        auto probe = barycentric(c, p);
        if (!probe) continue;  // direction leaves aff I; irrelevant for in-hull ξ
        for (int r = 0; r <= k; ++r) {
          double dv = std::fabs(to_double((*probe)[r] - (*bc)[r]));
          lips = std::max(lips, dv * (double)d);  // ∑_j |∂w/∂ξ_j| ≤ d · max_j
        }
      }
      c.lips = lips;
    }
  }

  std::vector<RatVec> pts = I;
  TransportResult out;
  for (const auto& xn : xi) {
    bool placed = false;
    for (size_t ci = 0; ci < charts.size() && !placed; ++ci) {
      const Chart& c = charts[ci];
      if (!c.has_zeta) continue;
      auto bc = barycentric(c, xn);
      if (!bc) continue;
      bool inside = true;
      for (const auto& v : *bc)
        if (v < 0) inside = false;
      if (!inside) continue;
      // α = [ᾱ 0] + y with y = β − [β̄ 0]; positivity can fail far from ζ.
      RatVec alpha = beta;
      for (int r = 0; r <= k; ++r) alpha[c.idx[r]] += (*bc)[r] - c.zeta_bar[r];
      bool nonneg = true;
      for (const auto& v : alpha)
        if (v < 0) nonneg = false;
      if (!nonneg) continue;
      out.alpha.push_back(std::move(alpha));
      out.chart.push_back((int)ci);
      out.lipschitz = std::max(out.lipschitz, c.lips);
      placed = true;
    }
    if (!placed) {
      auto rep = geo::convex_rep(pts, xn);
      if (!rep) throw NotInHullError("transport target outside conv I");
      out.alpha.push_back(std::move(*rep));
      out.chart.push_back(-1);
      ++out.fallbacks;
    }
  }
  return out;
}

}  // namespace rwrp
