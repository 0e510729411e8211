#pragma once
// Counter-based RNG: every draw is a pure hash of (seed, key...), so any site
// or replica can be sampled independently, in any order, on any thread, with
// bit-identical results. Normals come from the AS241 inverse CDF (one uniform
// per normal, no rejection, no state).

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>

namespace rwrp {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Hash a seed plus an arbitrary key tuple into one 64-bit word. Feeding each
// word through splitmix64 with a running state gives good avalanche across
// coordinates (adjacent lattice sites decorrelate).
inline uint64_t hash_key(uint64_t seed, std::initializer_list<int64_t> key) {
  uint64_t s = splitmix64(seed ^ 0x8c98fc8ee2b847d5ULL);
  for (int64_t k : key) s = splitmix64(s ^ (uint64_t)k);
  return s;
}

// Uniform in the open interval (0,1): 53 mantissa bits, centered half-steps.
inline double u01(uint64_t bits) {
  return ((double)(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

// Inverse standard normal CDF, AS241 (PPND16), |error| < 1e-15 over (0,1).
inline double inv_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("inv_normal_cdf: p outside (0,1)");
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
               1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
             1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
               5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
             4.2313330701600911252e1) * r + 1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

// Standard normal keyed by (seed, key...).
inline double keyed_normal(uint64_t seed, std::initializer_list<int64_t> key) {
  return inv_normal_cdf(u01(hash_key(seed, key)));
}

inline double keyed_u01(uint64_t seed, std::initializer_list<int64_t> key) {
  return u01(hash_key(seed, key));
}

}  // namespace rwrp
