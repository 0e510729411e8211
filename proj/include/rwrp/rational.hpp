#pragma once
// Exact rational scalars used by the convex-geometry code paths.

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwrp {

using BigInt = boost::multiprecision::cpp_int;
using Rat = boost::multiprecision::cpp_rational;
using RatVec = std::vector<Rat>;

inline double to_double(const Rat& r) { return r.convert_to<double>(); }

inline BigInt rat_num(const Rat& r) { return boost::multiprecision::numerator(r); }
inline BigInt rat_den(const Rat& r) { return boost::multiprecision::denominator(r); }

// floor(r), exact for either sign. Denominator is canonical positive.
inline BigInt rat_floor(const Rat& r) {
  BigInt n = rat_num(r), d = rat_den(r);
  BigInt q = n / d;
  if (n % d != 0 && n < 0) --q;
  return q;
}

inline long long to_ll(const BigInt& v) { return v.convert_to<long long>(); }

// Parses "p", "-p/q", "1.25" style tokens into an exact rational.
inline Rat parse_rational(const std::string& s) {
  auto slash = s.find('/');
  if (slash != std::string::npos) {
    BigInt num(s.substr(0, slash));
    BigInt den(s.substr(slash + 1));
    if (den == 0) throw std::invalid_argument("rational with zero denominator: " + s);
    return Rat(num, den);
  }
  auto dot = s.find('.');
  if (dot != std::string::npos) {
    std::string digits = s.substr(0, dot) + s.substr(dot + 1);
    size_t frac_len = s.size() - dot - 1;
    BigInt num(digits);
    BigInt den = 1;
    for (size_t i = 0; i < frac_len; ++i) den *= 10;
    return Rat(num, den);
  }
  return Rat(BigInt(s));
}

inline Rat dot(const RatVec& a, const RatVec& b) {
  Rat s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> to_double_vec(const RatVec& v) {
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = to_double(v[i]);
  return out;
}

}  // namespace rwrp
