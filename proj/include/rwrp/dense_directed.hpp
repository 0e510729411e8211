#pragma once

// Dense array engine for strictly directed space-time walks (every step shares
// the same unit time increment).  The sparse map engine in transfer.hpp is
// exact but its per-state overhead dominates when layers hold ~10^6 sites;
// here a layer is a flat array over the reachable spatial box, transitions are
// index offsets, and an active-cell list keeps the work proportional to the
// occupied part of the box.  Memoryless potentials only (ell = 0).  Produces
// the same numbers as run_dp up to summation order; equality is unit-tested.

#include <algorithm>
#include <limits>
#include <vector>

#include "rwrp/transfer.hpp"

namespace rwrp {

struct DenseSchedule {
  std::vector<long long> ns;             // strictly increasing capture times
  std::vector<LatticeVec> point_targets;  // optional, one full-d site per n
};

struct DenseSeries {
  std::vector<long long> ns;
  std::vector<double> line_logZ;
  std::vector<double> point_logZ;  // kNegInf = unreachable; empty when no targets
};

// direction of the potential charge: forward polymers charge the departure
// site of each step, reversed polymers the arrival site (so the origin site
// is charged by exactly one of the two).
enum class DenseCharge { Departure, Arrival };

inline DenseSeries dense_directed_partition(const EnvironmentModel& env, const PotentialSpec& spec,
                                            const StepGeometry& geom,
                                            const std::vector<double>& tilt,
                                            const DenseSchedule& sched,
                                            DenseCharge charge = DenseCharge::Departure) {
  if (spec.ell != 0)
    throw TransferError("dense engine: memoryless (ell=0) potentials only");
  if (sched.ns.empty()) throw TransferError("dense engine: empty schedule");
  for (size_t i = 0; i < sched.ns.size(); ++i) {
    if (sched.ns[i] < 1 || (i > 0 && sched.ns[i] <= sched.ns[i - 1]))
      throw TransferError("dense engine: schedule must be strictly increasing, >= 1");
  }
  if (!sched.point_targets.empty() && sched.point_targets.size() != sched.ns.size())
    throw TransferError("dense engine: one point target per capture time");
  if (!tilt.empty() && (int)tilt.size() != geom.d)
    throw TransferError("dense engine: tilt dimension mismatch");
  check_admissible(env, spec, geom);

  const int d = geom.d, ds = d - 1;
  const size_t nR = geom.steps.size();
  if (nR > 16) throw TransferError("dense engine: step set too large");
  const long long tau = geom.steps.empty() ? 0 : geom.steps[0].back();
  if (tau != 1 && tau != -1)
    throw TransferError("dense engine: steps must advance time by +-1");
  for (const auto& z : geom.steps)
    if (z.back() != tau) throw TransferError("dense engine: steps must share the time increment");

  const long long n = sched.ns.back();
  std::vector<long long> off_min(ds, 0), off_max(ds, 0);
  for (const auto& z : geom.steps)
    for (int j = 0; j < ds; ++j) {
      off_min[j] = std::min(off_min[j], z[j]);
      off_max[j] = std::max(off_max[j], z[j]);
    }
  // Final bounding box and row-major strides (last spatial coord contiguous).
  std::vector<long long> width(ds), stride(ds);
  long long cellsll = 1;
  for (int j = 0; j < ds; ++j) {
    width[j] = n * (off_max[j] - off_min[j]) + 1;
    if (cellsll > (long long)4e7 / std::max<long long>(width[j], 1))
      throw BudgetExceeded((double)cellsll * (double)width[j], 4e7);
    cellsll *= width[j];
  }
  const size_t cells = (size_t)cellsll;
  long long s = 1;
  for (int j = ds - 1; j >= 0; --j) {
    stride[j] = s;
    s *= width[j];
  }
  std::vector<long long> base(ds);  // coordinate of array index 0
  for (int j = 0; j < ds; ++j) base[j] = n * off_min[j];
  auto index_of = [&](const std::vector<long long>& x) {
    long long idx = 0;
    for (int j = 0; j < ds; ++j) idx += (x[j] - base[j]) * stride[j];
    return (size_t)idx;
  };

  // Per-step log-weight (kernel + tilt on the chosen step) and index offset.
  std::vector<double> cz(nR);
  std::vector<long long> delta(nR);
  for (size_t zi = 0; zi < nR; ++zi) {
    cz[zi] = geom.log_kernel[zi];
    if (!tilt.empty()) cz[zi] += detail::tilt_dot(tilt, geom.steps[zi]);
    long long dlt = 0;
    for (int j = 0; j < ds; ++j) dlt += geom.steps[zi][j] * stride[j];
    delta[zi] = dlt;
  }

  // Only cells a path can actually occupy are ever touched: `active` lists the
  // live indices of the current layer in deterministic (creation) order, with
  // their spatial coordinates carried in a parallel flat array so no index
  // arithmetic is needed to recover them.  For step sets much thinner than
  // their bounding box (a simple walk's l1 ball fills ~1/12 of it in three
  // spatial dimensions) this is the difference between scanning the box and
  // doing real work.
  //
  // Two accumulation modes share the buffers.  Linear mode stores
  // w = exp(logw - shift_e*ln2) so a scatter edge is one multiply-add; the
  // addends are positive, so the sums are well-conditioned, and all rescaling
  // is by exact powers of two (the only rounding of the shift happens once,
  // at capture).  When the within-layer dynamic range approaches the double
  // exponent budget the state converts -- losslessly, nothing has underflowed
  // yet -- to plain log weights with log-sum-exp updates.  Empty cells hold
  // 0.0 in linear mode and -inf in log mode.
  std::vector<double> cur(cells, 0.0), nxt(cells, 0.0);
  std::vector<size_t> active, next_active;
  std::vector<long long> coords, next_coords;  // active.size() * ds, row-major
  bool linear = true;
  long long shift_e = 0;  // logw = log(cur) + shift_e * ln2 in linear mode
  std::vector<double> ecz(nR);
  for (size_t zi = 0; zi < nR; ++zi) {
    if (std::fabs(cz[zi]) > 100.0) linear = false;
    ecz[zi] = std::exp(cz[zi]);
  }
  if (!linear) {
    std::fill(cur.begin(), cur.end(), kNegInf);
    std::fill(nxt.begin(), nxt.end(), kNegInf);
  }
  {
    std::vector<long long> origin(ds, 0);
    cur[index_of(origin)] = linear ? 1.0 : 0.0;
    active.push_back(index_of(origin));
    coords.assign(ds, 0);
  }

  auto to_log = [&](double w) { return std::log(w) + (double)shift_e * 0.69314718055994530941723212145818; };
  // Lossless switch to log mode: every live weight is still a normal double.
  auto convert_to_log = [&]() {
    std::vector<double> logs(active.size());
    for (size_t a = 0; a < active.size(); ++a) logs[a] = to_log(cur[active[a]]);
    std::fill(cur.begin(), cur.end(), kNegInf);
    std::fill(nxt.begin(), nxt.end(), kNegInf);
    for (size_t a = 0; a < active.size(); ++a) cur[active[a]] = logs[a];
    linear = false;
    shift_e = 0;
  };
  // Keep the layer maximum within a comfortable band (exact 2^e scaling) and
  // bail out to log mode before the spread can flush anything to zero.
  auto range_guard = [&]() {
    if (!linear || active.empty()) return;
    double mx = 0.0, mn = std::numeric_limits<double>::infinity();
    for (size_t idx : active) {
      const double w = cur[idx];
      mx = std::max(mx, w);
      mn = std::min(mn, w);
    }
    if (mn <= 0.0 || mx / mn > 1e200) {
      convert_to_log();
      return;
    }
    if (mx > 1e32 || mx < 1e-32) {
      const int e = -std::ilogb(mx);
      const double scale = std::ldexp(1.0, e);
      for (size_t idx : active) cur[idx] *= scale;
      shift_e -= e;
    }
  };

  LatticeVec site(d);
  std::vector<double> pots;
  // Apply the layer potential in place.  In linear mode the potentials are
  // screened first so an extreme draw (|beta g| > 100) triggers the log-mode
  // conversion instead of overflowing exp.
  auto charge_layer = [&](long long k) {
    site[ds] = k * tau;
    if (linear) {
      pots.resize(active.size());
      bool wild = false;
      for (size_t a = 0; a < active.size(); ++a) {
        for (int j = 0; j < ds; ++j) site[j] = coords[a * (size_t)ds + j];
        pots[a] = potential_eval(env, spec, site, {});
        wild = wild || !(std::fabs(pots[a]) <= 100.0);
      }
      if (wild) convert_to_log();
      if (linear) {
        for (size_t a = 0; a < active.size(); ++a) cur[active[a]] *= std::exp(pots[a]);
        range_guard();
        return;
      }
      for (size_t a = 0; a < active.size(); ++a) cur[active[a]] += pots[a];
      return;
    }
    for (size_t a = 0; a < active.size(); ++a) {
      for (int j = 0; j < ds; ++j) site[j] = coords[a * (size_t)ds + j];
      cur[active[a]] += potential_eval(env, spec, site, {});
    }
  };

  DenseSeries out;
  out.ns = sched.ns;
  size_t cap = 0;
  for (long long k = 0;; ++k) {
    if (charge == DenseCharge::Arrival && k >= 1) charge_layer(k);
    while (cap < sched.ns.size() && sched.ns[cap] == k) {
      if (linear) {
        double tot = 0.0;
        for (size_t idx : active) tot += cur[idx];
        out.line_logZ.push_back(to_log(tot));
      } else {
        LogAcc line;
        for (size_t idx : active) line.add(cur[idx]);
        out.line_logZ.push_back(line.value());
      }
      if (!sched.point_targets.empty()) {
        const auto& tgt = sched.point_targets[cap];
        if ((int)tgt.size() != d)
          throw TransferError("dense engine: point target dimension mismatch");
        double val = kNegInf;
        if (tgt[ds] == k * tau) {
          bool in = true;
          std::vector<long long> x(ds);
          for (int j = 0; j < ds; ++j) {
            x[j] = tgt[j];
            if (x[j] < k * off_min[j] || x[j] > k * off_max[j]) in = false;
          }
          if (in) {
            const double w = cur[index_of(x)];
            val = linear ? (w > 0.0 ? to_log(w) : kNegInf) : w;
          }
        }
        out.point_logZ.push_back(val);
      }
      ++cap;
    }
    if (k == n) break;
    if (charge == DenseCharge::Departure) charge_layer(k);
    // Scatter each live cell into its nR successors (all stay inside the
    // final box because layer boxes nest), clearing sources as we go so the
    // swapped-out buffer comes back fully reset without a box sweep.
    next_active.clear();
    next_coords.clear();
    next_active.reserve(active.size() * nR);
    next_coords.reserve(active.size() * nR * (size_t)ds);
    if (linear) {
      for (size_t a = 0; a < active.size(); ++a) {
        const size_t idx = active[a];
        const long long* cd = coords.data() + a * (size_t)ds;
        const double u = cur[idx];
        cur[idx] = 0.0;
        for (size_t zi = 0; zi < nR; ++zi) {
          const size_t dst = (size_t)((long long)idx + delta[zi]);
          const double val = u * ecz[zi];
          double& slot = nxt[dst];
          if (slot == 0.0) {
            slot = val;
            next_active.push_back(dst);
            for (int j = 0; j < ds; ++j) next_coords.push_back(cd[j] + geom.steps[zi][j]);
          } else {
            slot += val;
          }
        }
      }
    } else {
      for (size_t a = 0; a < active.size(); ++a) {
        const size_t idx = active[a];
        const long long* cd = coords.data() + a * (size_t)ds;
        const double u = cur[idx];
        cur[idx] = kNegInf;
        for (size_t zi = 0; zi < nR; ++zi) {
          const size_t dst = (size_t)((long long)idx + delta[zi]);
          const double val = u + cz[zi];
          double& slot = nxt[dst];
          if (slot == kNegInf) {
            slot = val;
            next_active.push_back(dst);
            for (int j = 0; j < ds; ++j) next_coords.push_back(cd[j] + geom.steps[zi][j]);
          } else {
            const double hi = std::max(slot, val), lo = std::min(slot, val);
            slot = hi + std::log1p(std::exp(lo - hi));
          }
        }
      }
    }
    std::swap(cur, nxt);
    std::swap(active, next_active);
    std::swap(coords, next_coords);
    range_guard();
  }
  return out;
}

}  // namespace rwrp
