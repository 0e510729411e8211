#pragma once
// Tilted free energies and Legendre duality. The tilted value Λ(g + t·z1) is
// exact on periodic environments (spectral oracle) and extrapolated with an
// error bar on i.i.d. ones. The dual transform
//     Λ_usc(ζ) = inf over grid tilts of { Λ(g + t·z1) − ζ·t }
// is a finite inf of affine functions of ζ: concave by construction, an upper
// bound that only decreases as the grid refines. The rate function is
// I(ζ) = Λ(line) − Λ_usc(ζ); with t = 0 always in the grid, I ≥ 0 identically.

#include "rwrp/geometry.hpp"
#include "rwrp/numeric.hpp"
#include "rwrp/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace rwrp {

struct DualityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TiltEntry {
  std::vector<double> t;
  double value = 0.0;  // Λ(g + t·z1)
  double error = 0.0;  // 0 for spectral entries, fit error bar otherwise
  bool exact = false;  // provenance: spectral vs extrapolated
};

struct TiltedFreeEnergyTable {
  int d = 0;
  std::vector<TiltEntry> entries;
  size_t zero_index = 0;  // entry with t = 0
  double max_norm = 0.0;  // sup-norm radius of the grid (interiority checks)
};

struct TiltTableOptions {
  std::vector<long long> schedule{100, 200, 400};  // i.i.d. extrapolation schedule
  DPOptions dp;
};

// Axis-aligned tilt lattice spanning the direction space of the step set
// (tilt components normal to span(R−R) cancel in the dual expression, so they
// are never needed). Includes t = 0; appends the directed axis when it exists.
inline std::vector<std::vector<double>> make_tilt_grid(const StepGeometry& geom, double radius,
                                                       double step) {
  if (!(radius >= 0) || !(step > 0)) throw DualityError("make_tilt_grid: bad radius/step");
  // Orthonormalize the integer span basis.
  std::vector<std::vector<double>> dirs;
  for (const auto& b : geom.span_basis) {
    std::vector<double> v(b.begin(), b.end());
    for (const auto& u : dirs) {
      double dp = 0;
      for (int j = 0; j < geom.d; ++j) dp += v[j] * u[j];
      for (int j = 0; j < geom.d; ++j) v[j] -= dp * u[j];
    }
    double nrm = 0;
    for (double x : v) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) continue;
    for (double& x : v) x /= nrm;
    dirs.push_back(std::move(v));
  }
  const int m = (int)dirs.size();
  std::vector<std::vector<double>> grid;
  const long long half = (long long)std::floor(radius / step + 1e-9);
  std::vector<long long> c(m, -half);
  if (m == 0) {
    grid.push_back(std::vector<double>(geom.d, 0.0));
    return grid;
  }
  for (;;) {
    std::vector<double> t(geom.d, 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < geom.d; ++j) t[j] += (double)c[i] * step * dirs[i][j];
    grid.push_back(std::move(t));
    int pos = m - 1;
    while (pos >= 0 && c[pos] == half) c[pos--] = -half;
    if (pos < 0) break;
    ++c[pos];
  }
  if (geom.uhat) {
    std::vector<double> u(geom.uhat->begin(), geom.uhat->end());
    double nrm = 0;
    for (double x : u) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (long long k = -half; k <= half; ++k) {
      if (k == 0) continue;
      std::vector<double> t(geom.d);
      for (int j = 0; j < geom.d; ++j) t[j] = (double)k * step * u[j] / nrm;
      grid.push_back(std::move(t));
    }
  }
  return grid;
}

inline TiltedFreeEnergyTable build_tilt_table(const EnvironmentModel& env,
                                              const PotentialSpec& spec, const StepGeometry& geom,
                                              std::vector<std::vector<double>> grid,
                                              const TiltTableOptions& opts = {}) {
  TiltedFreeEnergyTable table;
  table.d = geom.d;
  bool has_zero = false;
  for (const auto& t : grid) {
    if ((int)t.size() != geom.d) throw DualityError("build_tilt_table: tilt dimension mismatch");
    bool z = true;
    for (double v : t) z = z && v == 0.0;
    has_zero = has_zero || z;
  }
  if (!has_zero) grid.push_back(std::vector<double>(geom.d, 0.0));
  const bool periodic = env.kind == EnvironmentModel::Kind::Periodic;
  std::function<TiltEntry(size_t)> eval = [&](size_t i) {
    TiltEntry e;
    e.t = grid[i];
    if (periodic) {
      e.value = perron_free_energy(env, spec, geom, e.t);
      e.error = 0.0;
      e.exact = true;
    } else {
      DPOptions dp = opts.dp;
      dp.tilt = e.t;
      auto series = estimate_free_energy(env, spec, geom, FreeEnergyTarget::line(),
                                         opts.schedule, dp);
      e.value = series.extrapolate;
      e.error = std::max(series.residual, 1e-12);
      e.exact = false;
    }
    return e;
  };
  table.entries = parallel_map_ordered<TiltEntry>(grid.size(), eval);
  for (size_t i = 0; i < table.entries.size(); ++i) {
    double nrm = 0;
    bool z = true;
    for (double v : table.entries[i].t) {
      nrm = std::max(nrm, std::fabs(v));
      z = z && v == 0.0;
    }
    table.max_norm = std::max(table.max_norm, nrm);
    if (z) table.zero_index = i;
  }
  return table;
}

struct LegendreValue {
  double value = 0.0;  // Λ_usc(ζ), grid upper bound
  double error = 0.0;  // error bar of the achieving entry
  size_t argmin = 0;
  bool interior = true;  // argmin strictly inside the grid's sup-norm radius
};

// The dual transform at ζ. ζ must lie in the hull of the step set; the check
// is an exact rational membership test.
inline LegendreValue legendre_usc(const TiltedFreeEnergyTable& table, const StepGeometry& geom,
                                  const RatVec& zeta) {
  if ((int)zeta.size() != table.d) throw DualityError("legendre_usc: dimension mismatch");
  {
    std::vector<RatVec> pts;
    for (const auto& z : geom.steps) pts.push_back(geo::to_rat(z));
    if (!geo::convex_rep(pts, zeta))
      throw NotInHullError("legendre_usc: velocity outside the hull of the step set");
  }
  std::vector<double> zd = to_double_vec(zeta);
  LegendreValue best;
  best.value = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < table.entries.size(); ++i) {
    const auto& e = table.entries[i];
    double dot = 0;
    for (int j = 0; j < table.d; ++j) dot += e.t[j] * zd[j];
    double v = e.value - dot;
    if (v < best.value) {
      best.value = v;
      best.error = e.error;
      best.argmin = i;
    }
  }
  double nrm = 0;
  for (double v : table.entries[best.argmin].t) nrm = std::max(nrm, std::fabs(v));
  best.interior = nrm < table.max_norm - 1e-12;
  return best;
}

struct RatePoint {
  RatVec zeta;
  double lambda_usc = 0.0;
  double I = 0.0;
  double error = 0.0;
  bool interior = true;
};

struct RateFunctionTable {
  double lambda_line = 0.0;
  double lambda_line_error = 0.0;
  std::vector<RatePoint> points;
  double min_I = 0.0;
  bool consistent = true;  // min_I within the combined error allowance
};

inline RateFunctionTable rate_function(const TiltedFreeEnergyTable& table,
                                       const StepGeometry& geom, double lambda_line,
                                       double lambda_line_error,
                                       const std::vector<RatVec>& zetas,
                                       double grid_allowance = 2e-2) {
  RateFunctionTable out;
  out.lambda_line = lambda_line;
  out.lambda_line_error = lambda_line_error;
  out.min_I = std::numeric_limits<double>::infinity();
  for (const auto& zeta : zetas) {
    auto lv = legendre_usc(table, geom, zeta);
    RatePoint p;
    p.zeta = zeta;
    p.lambda_usc = lv.value;
    p.I = lambda_line - lv.value;
    p.error = lambda_line_error + lv.error;
    p.interior = lv.interior;
    out.min_I = std::min(out.min_I, p.I);
    out.points.push_back(std::move(p));
  }
  double max_err = 0;
  for (const auto& p : out.points) max_err = std::max(max_err, p.error);
  out.consistent = out.min_I <= grid_allowance + max_err + lambda_line_error;
  return out;
}

// Convenience: Λ(line) read off the table's t = 0 entry.
inline RateFunctionTable rate_function(const TiltedFreeEnergyTable& table,
                                       const StepGeometry& geom,
                                       const std::vector<RatVec>& zetas,
                                       double grid_allowance = 2e-2) {
  const auto& z = table.entries[table.zero_index];
  return rate_function(table, geom, z.value, z.error, zetas, grid_allowance);
}

// Doubles the tilt radius until every requested velocity has its argmin
// strictly inside the grid, or the radius cap is hit (reported per point).
inline TiltedFreeEnergyTable adaptive_tilt_table(const EnvironmentModel& env,
                                                 const PotentialSpec& spec,
                                                 const StepGeometry& geom,
                                                 const std::vector<RatVec>& zetas, double step,
                                                 double radius0, double radius_cap,
                                                 const TiltTableOptions& opts = {}) {
  double radius = radius0;
  for (;;) {
    auto table = build_tilt_table(env, spec, geom, make_tilt_grid(geom, radius, step), opts);
    bool all_interior = true;
    for (const auto& zeta : zetas)
      all_interior = all_interior && legendre_usc(table, geom, zeta).interior;
    if (all_interior || radius >= radius_cap) return table;
    radius = std::min(2.0 * radius, radius_cap);
  }
}

// Decay rate of quenched point probabilities of a random walk in a random
// environment: −(1/n) log Q{X_n = x̂_n(ζ)}, extrapolated along the schedule.
// The walk's point probabilities are partition functions of the log-kernel
// potential over the uniform reference walk, so the DP is reused directly.
struct RwreRate {
  double value = 0.0;
  double error = 0.0;
  std::vector<long long> ns;
  std::vector<double> rates;  // per-n values
};

inline RwreRate rwre_point_prob_rate(const EnvironmentModel& env, const PotentialSpec& spec,
                                     const StepGeometry& geom, const RatVec& zeta,
                                     const std::vector<long long>& schedule,
                                     const DPOptions& dp = {}) {
  if (spec.kind != PotentialSpec::Kind::RWRE)
    throw DualityError("rwre_point_prob_rate: spec must be the random-kernel variant");
  const double unif = 1.0 / (double)geom.steps.size();
  for (double k : geom.kernel)
    if (std::fabs(k - unif) > 1e-12)
      throw DualityError("rwre_point_prob_rate: reference kernel must be uniform");
  auto series = estimate_free_energy(env, spec, geom, FreeEnergyTarget::point(zeta), schedule, dp);
  RwreRate out;
  out.ns = series.ns;
  const double logR = std::log((double)geom.steps.size());
  for (size_t i = 0; i < series.ns.size(); ++i)
    out.rates.push_back(-(series.values[i] + logR));
  if (out.ns.size() >= 2) {
    auto fit = fit_a_plus_b_over_n(out.ns, out.rates);
    out.value = fit.a;
    out.error = std::max(fit.a_err, 1e-12);
  } else if (out.ns.size() == 1) {
    out.value = out.rates[0];
    out.error = std::numeric_limits<double>::infinity();
  } else {
    throw DualityError("rwre_point_prob_rate: no reachable schedule points");
  }
  return out;
}

}  // namespace rwrp
