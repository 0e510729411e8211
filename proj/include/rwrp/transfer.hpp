#pragma once
// Log-space dynamic programming for quenched partition functions, plus the two
// oracles everything is tested against: exhaustive path enumeration and the
// log spectral radius of the periodic transfer matrix.
//
// DP state at stage k is (endpoint x_k, upcoming steps z_{k+1..k+l}). Layer 0
// charges each memory tuple its kernel mass at the origin; a transition
// consumes the first memory step (advancing the endpoint), appends a fresh
// step z' with weight log kernel(z') plus the potential at the pre-move state.
// The l unconsumed trailing steps carry kernel mass summing to one, so the
// final layer's log-sum-exp is exactly log Z_n.
//
// A tilt t implements the potential g + t.z1: each transition adds t.(consumed
// step), which telescopes to exactly t.x_n. With no memory (l = 0) the step is
// chosen and consumed in one move and the tilt rides on it, which is the same
// partition function as the one-step-memory lift.

#include "rwrp/environment.hpp"
#include "rwrp/geometry.hpp"
#include "rwrp/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwrp {

struct TransferError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BudgetExceeded : TransferError {
  BudgetExceeded(size_t estimate, size_t budget)
      : TransferError("state budget exceeded: estimated " + std::to_string(estimate) +
                      " states against a budget of " + std::to_string(budget)),
        estimate(estimate) {}
  size_t estimate;
};

struct ReducibleModel : TransferError {
  ReducibleModel(std::string msg, std::vector<std::vector<int>> comps)
      : TransferError(std::move(msg)), components(std::move(comps)) {}
  std::vector<std::vector<int>> components;  // strongly connected pieces, by state index
};

// ---- DP core ----

struct DPState {
  LatticeVec x;
  std::vector<int> mem;  // indices into geom.steps, first entry consumed next
  bool operator<(const DPState& o) const {
    if (x != o.x) return x < o.x;
    return mem < o.mem;
  }
  bool operator==(const DPState& o) const { return x == o.x && mem == o.mem; }
};

struct DPLayer {
  long long stage = 0;
  std::map<DPState, double> w;  // logWeight; sorted keys fix accumulation order
};

struct DPOptions {
  std::vector<double> tilt;   // empty = untilted; else length d
  bool prune = false;
  double prune_delta = 60.0 * 2.302585092994045684;  // 60 ln 10
  size_t max_states = 4000000;                       // per-layer budget
};

struct DPRunInfo {
  size_t states_max = 0;
  long long pruned_states = 0;
  double pruned_log_mass = kNegInf;  // LSE of dropped logweights (raw, at drop time)
};

namespace detail {

inline double tilt_dot(const std::vector<double>& t, const LatticeVec& z) {
  double s = 0;
  for (size_t j = 0; j < t.size(); ++j) s += t[j] * (double)z[j];
  return s;
}

}  // namespace detail

// Streaming fold over DP layers: visit(stage, layer) is called for stages
// 0..n in order. Only the current layer is kept.
template <typename Visit>
DPRunInfo fold_dp(const EnvironmentModel& env, const PotentialSpec& spec,
                  const StepGeometry& geom, long long n, const DPOptions& opts,
                  Visit&& visit) {
  if (n < 0) throw TransferError("fold_dp: n must be >= 0");
  if (!opts.tilt.empty() && (int)opts.tilt.size() != geom.d)
    throw TransferError("fold_dp: tilt dimension mismatch");
  check_admissible(env, spec, geom);
  const int ell = spec.ell;
  const size_t nR = geom.steps.size();
  DPRunInfo info;

  DPLayer cur;
  cur.stage = 0;
  {
    // Layer 0: endpoint at the origin, every memory tuple weighted by its
    // kernel mass.
    LatticeVec origin(geom.d, 0);
    std::vector<int> mem(ell, 0);
    for (;;) {
      double w = 0;
      for (int i = 0; i < ell; ++i) w += geom.log_kernel[mem[i]];
      cur.w[{origin, mem}] = w;
      int pos = ell - 1;
      while (pos >= 0 && mem[pos] == (int)nR - 1) mem[pos--] = 0;
      if (pos < 0) break;
      ++mem[pos];
    }
  }
  info.states_max = cur.w.size();
  visit((long long)0, (const DPLayer&)cur);

  std::vector<LatticeVec> mem_steps(ell);
  for (long long k = 0; k < n; ++k) {
    DPLayer next;
    next.stage = k + 1;
    for (const auto& [st, w] : cur.w) {
      for (int i = 0; i < ell; ++i) mem_steps[i] = geom.steps[st.mem[i]];
      const double pot = potential_eval(env, spec, st.x, mem_steps);
      if (ell == 0) {
        for (size_t zi = 0; zi < nR; ++zi) {
          DPState ns;
          ns.x = st.x;
          for (int j = 0; j < geom.d; ++j) ns.x[j] += geom.steps[zi][j];
          double add = geom.log_kernel[zi] + pot;
          if (!opts.tilt.empty()) add += detail::tilt_dot(opts.tilt, geom.steps[zi]);
          auto [it, fresh] = next.w.try_emplace(std::move(ns), w + add);
          if (!fresh) {
            LogAcc acc;
            acc.add(it->second);
            acc.add(w + add);
            it->second = acc.value();
          }
        }
      } else {
        const int consumed = st.mem[0];
        double base = w + pot;
        if (!opts.tilt.empty()) base += detail::tilt_dot(opts.tilt, geom.steps[consumed]);
        DPState ns;
        ns.x = st.x;
        for (int j = 0; j < geom.d; ++j) ns.x[j] += geom.steps[consumed][j];
        ns.mem.assign(st.mem.begin() + 1, st.mem.end());
        ns.mem.push_back(0);
        for (size_t zi = 0; zi < nR; ++zi) {
          ns.mem.back() = (int)zi;
          double val = base + geom.log_kernel[zi];
          auto [it, fresh] = next.w.try_emplace(ns, val);
          if (!fresh) {
            LogAcc acc;
            acc.add(it->second);
            acc.add(val);
            it->second = acc.value();
          }
        }
      }
      if (next.w.size() > opts.max_states) throw BudgetExceeded(next.w.size(), opts.max_states);
    }
    if (opts.prune && !next.w.empty()) {
      double mx = kNegInf;
      for (const auto& [st, w] : next.w) mx = std::max(mx, w);
      LogAcc dropped;
      dropped.add(info.pruned_log_mass);
      for (auto it = next.w.begin(); it != next.w.end();) {
        if (it->second < mx - opts.prune_delta) {
          dropped.add(it->second);
          ++info.pruned_states;
          it = next.w.erase(it);
        } else {
          ++it;
        }
      }
      info.pruned_log_mass = dropped.value();
    }
    cur = std::move(next);
    info.states_max = std::max(info.states_max, cur.w.size());
    visit(k + 1, (const DPLayer&)cur);
  }
  return info;
}

// All layers, materialized. For small n; tests and endpoint laws use it.
inline std::vector<DPLayer> run_dp(const EnvironmentModel& env, const PotentialSpec& spec,
                                   const StepGeometry& geom, long long n,
                                   const DPOptions& opts = {}, DPRunInfo* info_out = nullptr) {
  std::vector<DPLayer> layers;
  auto info = fold_dp(env, spec, geom, n, opts,
                      [&](long long, const DPLayer& l) { layers.push_back(l); });
  if (info_out) *info_out = info;
  return layers;
}

inline double layer_log_sum(const DPLayer& layer) {
  LogAcc acc;
  for (const auto& [st, w] : layer.w) acc.add(w);
  return acc.value();
}

// log Z_n: total mass of the final layer.
inline double log_partition_line(const EnvironmentModel& env, const PotentialSpec& spec,
                                 const StepGeometry& geom, long long n,
                                 const DPOptions& opts = {}, DPRunInfo* info_out = nullptr) {
  double out = kNegInf;
  auto info = fold_dp(env, spec, geom, n, opts, [&](long long k, const DPLayer& l) {
    if (k == n) out = layer_log_sum(l);
  });
  if (info_out) *info_out = info;
  return out;
}

// Restricted mass at one endpoint; nullopt = endpoint not reachable (a
// semantic statement, distinct from numerical underflow).
inline std::optional<double> log_partition_point(const EnvironmentModel& env,
                                                 const PotentialSpec& spec,
                                                 const StepGeometry& geom, long long n,
                                                 const PathPlan& plan,
                                                 const DPOptions& opts = {},
                                                 DPRunInfo* info_out = nullptr) {
  if (plan.n != n) throw TransferError("log_partition_point: plan length mismatch");
  LogAcc acc;
  bool found = false;
  auto info = fold_dp(env, spec, geom, n, opts, [&](long long k, const DPLayer& l) {
    if (k != n) return;
    for (const auto& [st, w] : l.w)
      if (st.x == plan.endpoint) {
        acc.add(w);
        found = true;
      }
  });
  if (info_out) *info_out = info;
  if (!found) return std::nullopt;
  return acc.value();
}

// Endpoint law of the length-n polymer measure: x -> exp(F_n(x) - log Z_n).
inline std::map<LatticeVec, double> endpoint_distribution(const EnvironmentModel& env,
                                                          const PotentialSpec& spec,
                                                          const StepGeometry& geom, long long n,
                                                          const DPOptions& opts = {}) {
  std::map<LatticeVec, LogAcc> mass;
  fold_dp(env, spec, geom, n, opts, [&](long long k, const DPLayer& l) {
    if (k != n) return;
    for (const auto& [st, w] : l.w) mass[st.x].add(w);
  });
  LogAcc total;
  for (const auto& [x, acc] : mass) total.add(acc.value());
  const double logZ = total.value();
  std::map<LatticeVec, double> out;
  for (const auto& [x, acc] : mass) out[x] = std::exp(acc.value() - logZ);
  return out;
}

// ---- exhaustive oracle ----
//
// Enumerates every step sequence long enough to feed all n potential terms
// (n + l - 1 steps for l >= 1; the DP's trailing memory marginalizes to the
// same quantity). Shares nothing with the DP beyond potential_eval.

inline double brute_force_log_partition(const EnvironmentModel& env, const PotentialSpec& spec,
                                        const StepGeometry& geom, long long n,
                                        const std::optional<LatticeVec>& endpoint = std::nullopt,
                                        const DPOptions& opts = {}) {
  check_admissible(env, spec, geom);
  const int ell = spec.ell;
  const long long len = n + std::max(0, ell - 1);
  double total = std::pow((double)geom.steps.size(), (double)len);
  if (total > 1e7) throw BudgetExceeded((size_t)total, (size_t)1e7);
  LogAcc acc;
  std::vector<int> seq(len, 0);
  std::vector<LatticeVec> mem(ell);
  const size_t nR = geom.steps.size();
  for (;;) {
    // Weight of this path: kernel mass of all steps, potential at each stage.
    double w = 0;
    for (long long i = 0; i < len; ++i) w += geom.log_kernel[seq[i]];
    LatticeVec x(geom.d, 0);
    for (long long k = 0; k < n; ++k) {
      for (int i = 0; i < ell; ++i) mem[i] = geom.steps[seq[k + i]];
      w += potential_eval(env, spec, x, mem);
      if (!opts.tilt.empty()) w += detail::tilt_dot(opts.tilt, geom.steps[seq[k]]);
      for (int j = 0; j < geom.d; ++j) x[j] += geom.steps[seq[k]][j];
    }
    if (!endpoint || x == *endpoint) acc.add(w);
    long long pos = len - 1;
    while (pos >= 0 && seq[pos] == (int)nR - 1) seq[pos--] = 0;
    if (pos < 0) break;
    ++seq[pos];
    for (long long i = pos + 1; i < len; ++i) seq[i] = 0;
  }
  return acc.value();
}

// ---- periodic spectral oracle ----
//
// On a periodic environment the limiting free energy of the tilted model is
// the log spectral radius of the finite matrix
//   A[(x,m) -> (x+m1 mod L, shift(m,z'))] = kernel(z') e^{g(x,m) + t.m1}.
// Power iteration on the aperiodic lift A/scale + I warms up the eigenvector,
// then shift-inverted iteration (an M-matrix solve just above the spectral
// radius) tightens the Collatz-Wielandt bracket to relative width 1e-13; this
// converges geometrically even when A itself is periodic or has a tiny gap.

namespace detail {

// Kosaraju strongly-connected components on a dense adjacency.
inline std::vector<std::vector<int>> scc_of(const std::vector<std::vector<int>>& adj) {
  const int n = (int)adj.size();
  std::vector<std::vector<int>> radj(n);
  for (int u = 0; u < n; ++u)
    for (int v : adj[u]) radj[v].push_back(u);
  std::vector<int> order;
  std::vector<char> seen(n, 0);
  for (int s = 0; s < n; ++s) {
    if (seen[s]) continue;
    std::vector<std::pair<int, size_t>> stack{{s, 0}};
    seen[s] = 1;
    while (!stack.empty()) {
      auto& [u, i] = stack.back();
      if (i < adj[u].size()) {
        int v = adj[u][i++];
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back({v, 0});
        }
      } else {
        order.push_back(u);
        stack.pop_back();
      }
    }
  }
  std::vector<std::vector<int>> comps;
  std::vector<char> used(n, 0);
  for (int i = n - 1; i >= 0; --i) {
    int s = order[i];
    if (used[s]) continue;
    comps.emplace_back();
    std::vector<int> stack{s};
    used[s] = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      comps.back().push_back(u);
      for (int v : radj[u])
        if (!used[v]) {
          used[v] = 1;
          stack.push_back(v);
        }
    }
  }
  return comps;
}

// LU with partial pivoting; solve in place.
struct DenseLU {
  std::vector<double> a;  // row-major n x n
  std::vector<int> perm;
  int n = 0;
  void factor(std::vector<double> m, int dim) {
    a = std::move(m);
    n = dim;
    perm.resize(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int k = 0; k < n; ++k) {
      int piv = k;
      double best = std::fabs(a[(size_t)k * n + k]);
      for (int i = k + 1; i < n; ++i) {
        double v = std::fabs(a[(size_t)i * n + k]);
        if (v > best) {
          best = v;
          piv = i;
        }
      }
      if (best == 0.0) throw TransferError("singular shift matrix in spectral solve");
      if (piv != k) {
        for (int j = 0; j < n; ++j) std::swap(a[(size_t)k * n + j], a[(size_t)piv * n + j]);
        std::swap(perm[k], perm[piv]);
      }
      const double d = a[(size_t)k * n + k];
      for (int i = k + 1; i < n; ++i) {
        double f = a[(size_t)i * n + k] / d;
        a[(size_t)i * n + k] = f;
        for (int j = k + 1; j < n; ++j) a[(size_t)i * n + j] -= f * a[(size_t)k * n + j];
      }
    }
  }
  std::vector<double> solve(const std::vector<double>& b) const {
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) y[i] = b[perm[i]];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) y[i] -= a[(size_t)i * n + j] * y[j];
    for (int i = n - 1; i >= 0; --i) {
      for (int j = i + 1; j < n; ++j) y[i] -= a[(size_t)i * n + j] * y[j];
      y[i] /= a[(size_t)i * n + i];
    }
    return y;
  }
};

}  // namespace detail

// One state of the periodic chain: torus residue plus the step-index memory.
struct PeriodicState {
  LatticeVec cell;
  std::vector<int> mem;
};

// The tilted transfer matrix of a periodic model, kept edge-resolved so both
// the spectral oracle and the Gibbs kernel construction can use it.  Edge
// (s, zi) appends step zi; its weight already includes kernel, potential and
// tilt.  Distinct zi may share a target (memoryless models on small tori).
struct PeriodicTransferMatrix {
  size_t S = 0, nR = 0;
  int ell = 0;
  std::vector<PeriodicState> states;
  std::vector<size_t> edge_to;    // S * nR
  std::vector<double> edge_logw;  // S * nR
  double cmax = kNegInf;

  // Dense row-major exp(logA - cmax) with parallel edges merged.
  std::vector<double> dense_scaled() const {
    std::vector<double> logA(S * S, kNegInf);
    for (size_t s = 0; s < S; ++s)
      for (size_t zi = 0; zi < nR; ++zi) {
        double& slot = logA[s * S + edge_to[s * nR + zi]];
        const double le = edge_logw[s * nR + zi];
        if (slot == kNegInf) {
          slot = le;
        } else {
          LogAcc acc;
          acc.add(slot);
          acc.add(le);
          slot = acc.value();
        }
      }
    std::vector<double> A(S * S, 0.0);
    for (size_t i = 0; i < S * S; ++i)
      if (logA[i] != kNegInf) A[i] = std::exp(logA[i] - cmax);
    return A;
  }
};

inline PeriodicTransferMatrix build_periodic_transfer(const EnvironmentModel& env,
                                                      const PotentialSpec& spec,
                                                      const StepGeometry& geom,
                                                      const std::vector<double>& tilt = {}) {
  if (env.kind != EnvironmentModel::Kind::Periodic)
    throw TransferError("periodic transfer matrix requires a periodic environment");
  if (!tilt.empty() && (int)tilt.size() != geom.d)
    throw TransferError("periodic transfer matrix: tilt dimension mismatch");
  check_admissible(env, spec, geom);
  const int ell = spec.ell;
  const size_t nR = geom.steps.size();
  long long cells = 1;
  for (long long l : env.period) cells *= l;
  size_t mem_count = 1;
  for (int i = 0; i < ell; ++i) mem_count *= nR;
  const size_t S = (size_t)cells * mem_count;
  if (S > 4000) throw BudgetExceeded(S, 4000);

  // Residue coordinates of each cell (row-major).
  auto cell_coords = [&](long long c) {
    LatticeVec x(geom.d, 0);
    for (int j = geom.d - 1; j >= 0; --j) {
      x[j] = c % env.period[j];
      c /= env.period[j];
    }
    return x;
  };
  auto cell_index = [&](const LatticeVec& x) {
    long long idx = 0;
    for (int j = 0; j < geom.d; ++j) {
      long long r = x[j] % env.period[j];
      if (r < 0) r += env.period[j];
      idx = idx * env.period[j] + r;
    }
    return idx;
  };

  PeriodicTransferMatrix out;
  out.S = S;
  out.nR = nR;
  out.ell = ell;
  out.states.resize(S);
  out.edge_to.assign(S * nR, 0);
  out.edge_logw.assign(S * nR, kNegInf);
  std::vector<int> mem(ell);
  std::vector<LatticeVec> mem_steps(ell);
  for (size_t s = 0; s < S; ++s) {
    const long long c = (long long)(s / mem_count);
    size_t m = s % mem_count;
    for (int i = ell - 1; i >= 0; --i) {
      mem[i] = (int)(m % nR);
      m /= nR;
    }
    LatticeVec x = cell_coords(c);
    for (int i = 0; i < ell; ++i) mem_steps[i] = geom.steps[mem[i]];
    out.states[s] = {x, mem};
    const double pot = potential_eval(env, spec, x, mem_steps);
    const int consumed = ell > 0 ? mem[0] : -1;
    LatticeVec nx = x;
    if (ell > 0)
      for (int j = 0; j < geom.d; ++j) nx[j] += geom.steps[consumed][j];
    for (size_t zi = 0; zi < nR; ++zi) {
      size_t target;
      double le = geom.log_kernel[zi] + pot;
      if (ell > 0) {
        size_t nm = 0;
        for (int i = 1; i < ell; ++i) nm = nm * nR + mem[i];
        nm = nm * nR + zi;
        target = (size_t)cell_index(nx) * mem_count + nm;
        if (!tilt.empty()) le += detail::tilt_dot(tilt, geom.steps[consumed]);
      } else {
        LatticeVec tx = x;
        for (int j = 0; j < geom.d; ++j) tx[j] += geom.steps[zi][j];
        target = (size_t)cell_index(tx) * mem_count;
        if (!tilt.empty()) le += detail::tilt_dot(tilt, geom.steps[zi]);
      }
      out.edge_to[s * nR + zi] = target;
      out.edge_logw[s * nR + zi] = le;
      out.cmax = std::max(out.cmax, le);
    }
  }
  return out;
}

namespace detail {

// Dominant eigenpair of a scaled nonnegative irreducible dense matrix.
// Power warm-up on A + I (aperiodic), then shift-inverted iteration just
// above the Collatz-Wielandt bracket; the Perron mode dominates strictly in
// (mu I - A)^{-1} even for periodic graphs.  Final inverse-iteration polish
// pushes the eigenvector residual near machine precision.
inline std::pair<double, std::vector<double>> dominant_perron(const std::vector<double>& A,
                                                              size_t S) {
  auto matvec = [&](const std::vector<double>& v) {
    std::vector<double> w(S, 0.0);
    for (size_t i = 0; i < S; ++i) {
      const double* row = &A[i * S];
      double acc = 0;
      for (size_t j = 0; j < S; ++j) acc += row[j] * v[j];
      w[i] = acc;
    }
    return w;
  };
  auto brackets = [&](const std::vector<double>& v) {
    auto w = matvec(v);
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (size_t i = 0; i < S; ++i) {
      double r = w[i] / v[i];
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    return std::pair{lo, hi};
  };
  auto invert_rounds = [&](std::vector<double>& v, double mu, int its) {
    std::vector<double> m(S * S);
    for (size_t i = 0; i < S * S; ++i) m[i] = -A[i];
    for (size_t i = 0; i < S; ++i) m[i * S + i] += mu;
    DenseLU lu;
    lu.factor(std::move(m), (int)S);
    for (int it = 0; it < its; ++it) {
      auto w = lu.solve(v);
      double mx = 0;
      for (double x : w) mx = std::max(mx, std::fabs(x));
      if (!(mx > 0)) throw TransferError("spectral solve collapsed");
      for (size_t i = 0; i < S; ++i) v[i] = std::max(std::fabs(w[i]) / mx, 1e-290);
    }
  };

  std::vector<double> v(S, 1.0);
  for (int it = 0; it < 300; ++it) {
    auto w = matvec(v);
    double mx = 0;
    for (size_t i = 0; i < S; ++i) {
      w[i] += v[i];
      mx = std::max(mx, w[i]);
    }
    for (size_t i = 0; i < S; ++i) v[i] = std::max(w[i] / mx, 1e-290);
  }
  auto [lo, hi] = brackets(v);
  for (int round = 0; round < 60 && hi - lo > 1e-13 * hi; ++round) {
    invert_rounds(v, hi * (1.0 + 1e-8) + 1e-290, 40);
    std::tie(lo, hi) = brackets(v);
  }
  if (!(hi - lo <= 1e-12 * hi))
    throw TransferError("spectral radius bracket failed to converge");
  invert_rounds(v, hi * (1.0 + 1e-9) + 1e-290, 12);
  std::tie(lo, hi) = brackets(v);
  const double rho = 0.5 * (lo + hi);
  {
    auto w = matvec(v);
    double vmax = 0, res = 0;
    for (size_t i = 0; i < S; ++i) {
      vmax = std::max(vmax, v[i]);
      res = std::max(res, std::fabs(w[i] - rho * v[i]));
    }
    if (!(res <= 1e-11 * rho * vmax))
      throw TransferError("spectral residual check failed");
  }
  return {rho, std::move(v)};
}

}  // namespace detail

// Dominant eigen-triple of a periodic transfer matrix.  log_rho includes the
// scaling constant; right/left are the Perron eigenvectors of the scaled
// matrix (positive, each normalized to unit sum).
struct PerronSystem {
  double log_rho = 0.0;
  std::vector<double> right, left;
};

inline PerronSystem perron_eigensystem(const PeriodicTransferMatrix& T) {
  const size_t S = T.S;
  auto A = T.dense_scaled();
  {
    std::vector<std::vector<int>> adj(S);
    for (size_t i = 0; i < S; ++i)
      for (size_t j = 0; j < S; ++j)
        if (A[i * S + j] > 0) adj[i].push_back((int)j);
    auto comps = detail::scc_of(adj);
    if (comps.size() != 1) {
      std::ostringstream msg;
      msg << "transfer matrix is reducible: " << comps.size() << " strongly connected components"
          << " of sizes";
      for (const auto& cmp : comps) msg << " " << cmp.size();
      throw ReducibleModel(msg.str(), comps);
    }
  }
  auto [rho_r, right] = detail::dominant_perron(A, S);
  std::vector<double> At(S * S);
  for (size_t i = 0; i < S; ++i)
    for (size_t j = 0; j < S; ++j) At[j * S + i] = A[i * S + j];
  auto [rho_l, left] = detail::dominant_perron(At, S);
  if (!(std::fabs(rho_l - rho_r) <= 1e-10 * rho_r))
    throw TransferError("left/right spectral radius mismatch");
  auto norm1 = [](std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    for (double& x : v) x /= s;
  };
  norm1(right);
  norm1(left);
  PerronSystem out;
  out.log_rho = T.cmax + std::log(0.5 * (rho_r + rho_l));
  out.right = std::move(right);
  out.left = std::move(left);
  return out;
}

inline double perron_free_energy(const EnvironmentModel& env, const PotentialSpec& spec,
                                 const StepGeometry& geom, const std::vector<double>& tilt = {}) {
  return perron_eigensystem(build_periodic_transfer(env, spec, geom, tilt)).log_rho;
}

// ---- free-energy series with 1/n extrapolation ----

struct FreeEnergyTarget {
  enum class Kind { Line, Point };
  Kind kind = Kind::Line;
  RatVec zeta;  // Point only
  static FreeEnergyTarget line() { return {}; }
  static FreeEnergyTarget point(RatVec z) {
    FreeEnergyTarget t;
    t.kind = Kind::Point;
    t.zeta = std::move(z);
    return t;
  }
};

struct FreeEnergySeries {
  FreeEnergyTarget target;
  std::vector<long long> ns;
  std::vector<double> values;  // F_n / n
  double extrapolate = 0.0;
  double residual = 0.0;               // fit-covariance error bar on the limit
  std::vector<long long> unreachable;  // point targets the DP could not hit
  DPRunInfo info;
};

inline FreeEnergySeries estimate_free_energy(const EnvironmentModel& env,
                                             const PotentialSpec& spec, const StepGeometry& geom,
                                             const FreeEnergyTarget& target,
                                             std::vector<long long> schedule,
                                             const DPOptions& opts = {}) {
  if (schedule.empty()) throw TransferError("estimate_free_energy: empty schedule");
  for (size_t i = 1; i < schedule.size(); ++i)
    if (schedule[i] <= schedule[i - 1])
      throw TransferError("estimate_free_energy: schedule must be strictly increasing");
  FreeEnergySeries out;
  out.target = target;
  std::map<long long, PathPlan> plans;
  if (target.kind == FreeEnergyTarget::Kind::Point)
    for (long long n : schedule) plans.emplace(n, path_endpoint(geom, target.zeta, n));
  size_t next = 0;
  out.info = fold_dp(env, spec, geom, schedule.back(), opts, [&](long long k, const DPLayer& l) {
    if (next >= schedule.size() || k != schedule[next]) return;
    ++next;
    if (target.kind == FreeEnergyTarget::Kind::Line) {
      out.ns.push_back(k);
      out.values.push_back(layer_log_sum(l) / (double)k);
      return;
    }
    const auto& plan = plans.at(k);
    LogAcc acc;
    bool found = false;
    for (const auto& [st, w] : l.w)
      if (st.x == plan.endpoint) {
        acc.add(w);
        found = true;
      }
    if (!found) {
      out.unreachable.push_back(k);
      return;
    }
    out.ns.push_back(k);
    out.values.push_back(acc.value() / (double)k);
  });
  if (out.ns.size() >= 2) {
    auto fit = fit_a_plus_b_over_n(out.ns, out.values);
    out.extrapolate = fit.a;
    out.residual = fit.a_err;
  } else if (out.ns.size() == 1) {
    out.extrapolate = out.values[0];
    out.residual = std::numeric_limits<double>::infinity();
  } else {
    throw TransferError("estimate_free_energy: no reachable schedule points");
  }
  return out;
}

}  // namespace rwrp
