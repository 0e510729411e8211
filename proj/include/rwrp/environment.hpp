#pragma once
// Random environments on Z^d with shift semantics, and the potentials read off
// them. IID sites are a pure hash of (seed, x) so the unbounded lattice needs
// no storage and any thread can read any site; periodic environments are the
// exact-oracle class (their limits reduce to finite spectral problems).

#include "rwrp/geometry.hpp"
#include "rwrp/numeric.hpp"
#include "rwrp/rng.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwrp {

struct EnvironmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- site marginals ----

struct Marginal {
  enum class Kind { Gaussian, Bernoulli, Discrete, Constant };
  Kind kind = Kind::Constant;
  double mean = 0.0, stddev = 1.0;          // Gaussian
  double p = 0.5, lo = -1.0, hi = 1.0;      // Bernoulli: p = P(value = hi)
  std::vector<double> values, probs;        // Discrete
  double c = 0.0;                           // Constant

  static Marginal gaussian(double mean, double stddev) {
    Marginal m;
    m.kind = Kind::Gaussian;
    m.mean = mean;
    m.stddev = stddev;
    if (!(stddev >= 0)) throw EnvironmentError("gaussian stddev must be >= 0");
    return m;
  }
  static Marginal bernoulli(double p, double lo, double hi) {
    Marginal m;
    m.kind = Kind::Bernoulli;
    m.p = p;
    m.lo = lo;
    m.hi = hi;
    if (!(p >= 0 && p <= 1)) throw EnvironmentError("bernoulli p outside [0,1]");
    return m;
  }
  static Marginal discrete(std::vector<double> values, std::vector<double> probs) {
    Marginal m;
    m.kind = Kind::Discrete;
    if (values.empty() || values.size() != probs.size())
      throw EnvironmentError("discrete marginal: values/probs size mismatch");
    double s = 0;
    for (double q : probs) {
      if (!(q >= 0)) throw EnvironmentError("discrete marginal: negative prob");
      s += q;
    }
    if (std::fabs(s - 1.0) > 1e-12) throw EnvironmentError("discrete marginal: probs must sum to 1");
    m.values = std::move(values);
    m.probs = std::move(probs);
    return m;
  }
  static Marginal constant(double c) {
    Marginal m;
    m.kind = Kind::Constant;
    m.c = c;
    return m;
  }

  // One sample from a uniform in (0,1); inverse-CDF in every branch so a
  // single uniform maps to a single site value.
  double from_u01(double u) const {
    switch (kind) {
      case Kind::Gaussian:
        return mean + stddev * inv_normal_cdf(u);
      case Kind::Bernoulli:
        return (u < p) ? hi : lo;
      case Kind::Discrete: {
        double acc = 0;
        for (size_t i = 0; i < probs.size(); ++i) {
          acc += probs[i];
          if (u < acc) return values[i];
        }
        return values.back();
      }
      case Kind::Constant:
        return c;
    }
    throw EnvironmentError("unreachable marginal kind");
  }

  double moment_mean() const {
    switch (kind) {
      case Kind::Gaussian: return mean;
      case Kind::Bernoulli: return p * hi + (1 - p) * lo;
      case Kind::Discrete: {
        double s = 0;
        for (size_t i = 0; i < values.size(); ++i) s += probs[i] * values[i];
        return s;
      }
      case Kind::Constant: return c;
    }
    throw EnvironmentError("unreachable marginal kind");
  }
  double moment_var() const {
    switch (kind) {
      case Kind::Gaussian: return stddev * stddev;
      case Kind::Bernoulli: {
        double m1 = moment_mean();
        return p * (hi - m1) * (hi - m1) + (1 - p) * (lo - m1) * (lo - m1);
      }
      case Kind::Discrete: {
        double m1 = moment_mean(), s = 0;
        for (size_t i = 0; i < values.size(); ++i)
          s += probs[i] * (values[i] - m1) * (values[i] - m1);
        return s;
      }
      case Kind::Constant: return 0.0;
    }
    throw EnvironmentError("unreachable marginal kind");
  }

  // log E[e^{t ω}], closed form per kind (finite for all t in every kind here).
  double log_mgf(double t) const {
    switch (kind) {
      case Kind::Gaussian: return t * mean + 0.5 * t * t * stddev * stddev;
      case Kind::Bernoulli: {
        LogAcc acc;
        if (p > 0) acc.add(std::log(p) + t * hi);
        if (p < 1) acc.add(std::log(1 - p) + t * lo);
        return acc.value();
      }
      case Kind::Discrete: {
        LogAcc acc;
        for (size_t i = 0; i < values.size(); ++i)
          if (probs[i] > 0) acc.add(std::log(probs[i]) + t * values[i]);
        return acc.value();
      }
      case Kind::Constant: return t * c;
    }
    throw EnvironmentError("unreachable marginal kind");
  }

  bool bounded_above() const { return kind != Kind::Gaussian || stddev == 0.0; }
};

// ---- environment models ----

struct EnvironmentModel {
  enum class Kind { IID, Periodic };
  Kind kind = Kind::IID;
  int d = 1;
  Marginal marginal;            // IID
  uint64_t seed = 0;            // IID
  LatticeVec period;            // Periodic: box L₁×…×L_d
  std::vector<double> table;    // Periodic: row-major over the box
  LatticeVec offset;            // lookups happen at x + offset (the shift T_offset)

  static EnvironmentModel iid(int d, Marginal m, uint64_t seed) {
    EnvironmentModel e;
    e.kind = Kind::IID;
    e.d = d;
    e.marginal = std::move(m);
    e.seed = seed;
    e.offset.assign(d, 0);
    return e;
  }
  static EnvironmentModel periodic(LatticeVec period, std::vector<double> table) {
    EnvironmentModel e;
    e.kind = Kind::Periodic;
    e.d = (int)period.size();
    long long cells = 1;
    for (long long l : period) {
      if (l <= 0) throw EnvironmentError("periodic: period entries must be positive");
      cells *= l;
    }
    if ((long long)table.size() != cells)
      throw EnvironmentError("periodic: table size must equal the period box volume");
    e.period = std::move(period);
    e.table = std::move(table);
    e.offset.assign(e.d, 0);
    return e;
  }

  double value(const LatticeVec& x) const {
    if ((int)x.size() != d) throw EnvironmentError("env_value: dimension mismatch");
    if (kind == Kind::IID) {
      uint64_t s = splitmix64(seed ^ 0x8c98fc8ee2b847d5ULL);
      for (int j = 0; j < d; ++j) s = splitmix64(s ^ (uint64_t)(x[j] + offset[j]));
      return marginal.from_u01(u01(s));
    }
    long long idx = 0;
    for (int j = 0; j < d; ++j) {
      long long r = (x[j] + offset[j]) % period[j];
      if (r < 0) r += period[j];
      idx = idx * period[j] + r;
    }
    return table[idx];
  }

  // The shifted environment T_yω: (T_yω)_x = ω_{x+y}.
  EnvironmentModel shifted(const LatticeVec& y) const {
    if ((int)y.size() != d) throw EnvironmentError("shifted: dimension mismatch");
    EnvironmentModel e = *this;
    for (int j = 0; j < d; ++j) e.offset[j] += y[j];
    return e;
  }
};

inline double env_value(const EnvironmentModel& model, const LatticeVec& x) {
  return model.value(x);
}

// ---- potentials ----
//
// g takes the environment seen from x and the next ℓ steps. The inverse
// temperature multiplies g at evaluation time.

struct PotentialSpec {
  enum class Kind { Site, Step, Stretched, RWRE, General };
  Kind kind = Kind::Site;
  int ell = 0;        // memory length
  double beta = 1.0;  // >= 0, multiplies g
  int r0 = 0;         // locality radius of the General closure

  std::function<double(double)> site_fn;                          // Site
  std::function<double(double, const LatticeVec&)> step_fn;       // Step, ℓ=1
  std::function<double(double)> psi;                              // Stretched Ψ
  std::vector<double> h;                                          // Stretched field
  std::function<std::vector<double>(double)> rwre_kernel;         // ω_x → kernel over steps
  std::vector<LatticeVec> rwre_steps;                             // step order the kernel uses
  std::function<double(const EnvironmentModel&, const LatticeVec&,
                       const std::vector<LatticeVec>&)>
      general_fn;  // full window access within radius r0

  // When unset, validation infers boundedness from the marginal.
  std::optional<bool> unbounded_above;

  static PotentialSpec site(std::function<double(double)> fn, double beta = 1.0) {
    PotentialSpec s;
    s.kind = Kind::Site;
    s.ell = 0;
    s.beta = beta;
    s.site_fn = std::move(fn);
    return s;
  }
  static PotentialSpec site_identity(double beta = 1.0) {
    return site([](double w) { return w; }, beta);
  }
  static PotentialSpec step(std::function<double(double, const LatticeVec&)> fn,
                            double beta = 1.0) {
    PotentialSpec s;
    s.kind = Kind::Step;
    s.ell = 1;
    s.beta = beta;
    s.step_fn = std::move(fn);
    return s;
  }
  static PotentialSpec stretched(std::function<double(double)> psi, std::vector<double> h,
                                 double beta = 1.0) {
    PotentialSpec s;
    s.kind = Kind::Stretched;
    s.ell = 1;
    s.beta = beta;
    s.psi = std::move(psi);
    s.h = std::move(h);
    return s;
  }
  static PotentialSpec rwre(std::function<std::vector<double>(double)> kernel,
                            std::vector<LatticeVec> steps) {
    PotentialSpec s;
    s.kind = Kind::RWRE;
    s.ell = 1;
    s.beta = 1.0;  // the walk-in-random-environment potential is not tempered
    s.rwre_kernel = std::move(kernel);
    s.rwre_steps = std::move(steps);
    return s;
  }
  static PotentialSpec general(std::function<double(const EnvironmentModel&, const LatticeVec&,
                                                    const std::vector<LatticeVec>&)>
                                   fn,
                               int ell, int r0, double beta = 1.0) {
    PotentialSpec s;
    s.kind = Kind::General;
    s.ell = ell;
    s.beta = beta;
    s.r0 = r0;
    s.general_fn = std::move(fn);
    return s;
  }
};

// β·g(T_xω, z_{1,ℓ}). Site potentials ignore the step tuple.
inline double potential_eval(const EnvironmentModel& env, const PotentialSpec& spec,
                             const LatticeVec& x, const std::vector<LatticeVec>& z) {
  if ((int)z.size() != spec.ell)
    throw EnvironmentError("potential_eval: step tuple length != memory length");
  switch (spec.kind) {
    case PotentialSpec::Kind::Site:
      return spec.beta * spec.site_fn(env.value(x));
    case PotentialSpec::Kind::Step:
      return spec.beta * spec.step_fn(env.value(x), z[0]);
    case PotentialSpec::Kind::Stretched: {
      double v = spec.psi(env.value(x));
      for (size_t j = 0; j < spec.h.size(); ++j) v += spec.h[j] * (double)z[0][j];
      return spec.beta * v;
    }
    case PotentialSpec::Kind::RWRE: {
      std::vector<double> q = spec.rwre_kernel(env.value(x));
      if (q.size() != spec.rwre_steps.size())
        throw EnvironmentError("rwre kernel: wrong arity at site");
      double s = 0;
      for (double v : q) {
        if (!(v > 0)) throw EnvironmentError("rwre kernel: non-positive entry at site");
        s += v;
      }
      if (std::fabs(s - 1.0) > 1e-9)
        throw EnvironmentError("rwre kernel: does not sum to 1 at site");
      for (size_t i = 0; i < spec.rwre_steps.size(); ++i)
        if (spec.rwre_steps[i] == z[0]) return std::log(q[i]);
      throw EnvironmentError("rwre kernel: step not in the configured step set");
    }
    case PotentialSpec::Kind::General:
      return spec.beta * spec.general_fn(env, x, z);
  }
  throw EnvironmentError("unreachable potential kind");
}

// Syntactic admissibility screen. Rejects the one regime the finite-n engines
// cannot speak about honestly: a potential unbounded above when loops are
// available (0 in the convex hull of R), where the limiting free energy is
// +∞. Everything else in this library has all exponential moments by
// construction, so the remaining conditions are recorded, not computed.
inline void check_admissible(const EnvironmentModel& env, const PotentialSpec& spec,
                             const StepGeometry& geom) {
  bool unbounded;
  if (spec.unbounded_above.has_value()) {
    unbounded = *spec.unbounded_above;
  } else if (spec.kind == PotentialSpec::Kind::RWRE) {
    unbounded = false;  // log of a probability is <= 0
  } else {
    unbounded = (env.kind == EnvironmentModel::Kind::IID) && !env.marginal.bounded_above() &&
                spec.beta > 0;
  }
  if (unbounded && geom.origin_in_U)
    throw EnvironmentError(
        "potential unbounded above with 0 in the hull of the step set: "
        "the limiting free energy is +infinity; refusing the configuration");
}

}  // namespace rwrp
