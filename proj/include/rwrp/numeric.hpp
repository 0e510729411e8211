#pragma once
// Small numeric helpers shared across the library: streaming log-sum-exp,
// mean/stderr, least-squares a + b/n extrapolation, ordered parallel map.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rwrp {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---- streaming log-sum-exp ----
//
// Keeps a running maximum and a sum of exp(x - max); rescales when a new
// maximum arrives. Adding -inf is a no-op, so empty sums come out as -inf.
class LogAcc {
 public:
  void add(double x) {
    if (x == kNegInf) return;
    if (sum_ == 0.0 || x > max_) {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    } else {
      sum_ += std::exp(x - max_);
    }
  }
  void add_scaled(double logw, double x) { add(logw + x); }
  double value() const { return sum_ == 0.0 ? kNegInf : max_ + std::log(sum_); }
  bool empty() const { return sum_ == 0.0; }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
};

inline double log_sum_exp(const std::vector<double>& xs) {
  LogAcc acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

// ---- summary statistics ----

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean
  size_t n = 0;
};

inline MeanSE mean_se(const std::vector<double>& xs) {
  MeanSE r;
  r.n = xs.size();
  if (r.n == 0) return r;
  double s = 0;
  for (double x : xs) s += x;
  r.mean = s / (double)r.n;
  if (r.n < 2) return r;
  double v = 0;
  for (double x : xs) v += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(v / (double)(r.n - 1) / (double)r.n);
  return r;
}

// ---- a + b/n extrapolation ----
//
// Least squares fit of y_i = a + b / n_i; returns a with a fit-covariance
// error bar (residual-scaled). Used to extrapolate finite-n free energies.

struct Extrapolation {
  double a = 0.0;
  double b = 0.0;
  double a_err = 0.0;  // std error of a from the fit covariance
};

inline Extrapolation fit_a_plus_b_over_n(const std::vector<long long>& ns,
                                         const std::vector<double>& ys) {
  if (ns.size() != ys.size() || ns.size() < 2)
    throw std::invalid_argument("fit_a_plus_b_over_n: need >=2 points");
  const size_t m = ns.size();
  double sxx = 0, sx = 0, sxy = 0, sy = 0;
  for (size_t i = 0; i < m; ++i) {
    double x = 1.0 / (double)ns[i];
    sxx += x * x;
    sx += x;
    sxy += x * ys[i];
    sy += ys[i];
  }
  double det = (double)m * sxx - sx * sx;
  if (det <= 0) throw std::invalid_argument("fit_a_plus_b_over_n: degenerate n values");
  Extrapolation r;
  r.a = (sxx * sy - sx * sxy) / det;
  r.b = ((double)m * sxy - sx * sy) / det;
  if (m > 2) {
    double rss = 0;
    for (size_t i = 0; i < m; ++i) {
      double e = ys[i] - (r.a + r.b / (double)ns[i]);
      rss += e * e;
    }
    double s2 = rss / (double)(m - 2);
    r.a_err = std::sqrt(s2 * sxx / det);
  }
  return r;
}

// Variant with a (log n)/n basis column: y_i = a + b (log n_i)/n_i + c/n_i.
// Point-to-point free energies carry a local-CLT (log n)/n correction that a
// plain a + b/n fit cannot absorb; with >= 3 schedule points this fit removes
// it (leaving O(1/n^2) bias). Falls back to a + b/n for 2 points.
inline Extrapolation fit_with_log_correction(const std::vector<long long>& ns,
                                             const std::vector<double>& ys) {
  if (ns.size() != ys.size() || ns.size() < 2)
    throw std::invalid_argument("fit_with_log_correction: need >=2 points");
  const size_t m = ns.size();
  if (m == 2) return fit_a_plus_b_over_n(ns, ys);
  // normal equations over the 3-column basis
  double G[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double rhs[3] = {0, 0, 0};
  for (size_t i = 0; i < m; ++i) {
    const double n = (double)ns[i];
    const double col[3] = {1.0, std::log(n) / n, 1.0 / n};
    for (int r = 0; r < 3; ++r) {
      rhs[r] += col[r] * ys[i];
      for (int c = 0; c < 3; ++c) G[r][c] += col[r] * col[c];
    }
  }
  // 3x3 Gaussian elimination with partial pivoting
  int piv[3] = {0, 1, 2};
  for (int k = 0; k < 3; ++k) {
    int best = k;
    for (int r = k + 1; r < 3; ++r)
      if (std::fabs(G[piv[r]][k]) > std::fabs(G[piv[best]][k])) best = r;
    std::swap(piv[k], piv[best]);
    const double pv = G[piv[k]][k];
    if (std::fabs(pv) < 1e-300)
      throw std::invalid_argument("fit_with_log_correction: degenerate n values");
    for (int r = k + 1; r < 3; ++r) {
      const double f = G[piv[r]][k] / pv;
      for (int c = k; c < 3; ++c) G[piv[r]][c] -= f * G[piv[k]][c];
      rhs[piv[r]] -= f * rhs[piv[k]];
    }
  }
  double coef[3];
  for (int k = 2; k >= 0; --k) {
    double s = rhs[piv[k]];
    for (int c = k + 1; c < 3; ++c) s -= G[piv[k]][c] * coef[c];
    coef[k] = s / G[piv[k]][k];
  }
  Extrapolation r;
  r.a = coef[0];
  r.b = coef[2];
  if (m > 3) {
    double rss = 0;
    for (size_t i = 0; i < m; ++i) {
      const double n = (double)ns[i];
      const double e = ys[i] - (coef[0] + coef[1] * std::log(n) / n + coef[2] / n);
      rss += e * e;
    }
    r.a_err = std::sqrt(rss / (double)(m - 3));  // residual scale, not a covariance
  }
  return r;
}

// ---- ordered parallel map ----
//
// Applies fn(i) for i in [0, n) and collects results in index order. Thread
// count comes from RWRP_THREADS (default 1: fully deterministic sequential
// execution; results are index-ordered either way so reductions are stable).

inline int thread_count() {
  if (const char* env = std::getenv("RWRP_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

template <typename T>
std::vector<T> parallel_map_ordered(size_t n, const std::function<T(size_t)>& fn) {
  std::vector<T> out(n);
  int nt = thread_count();
  if (nt <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errs(nt);
  for (int t = 0; t < nt; ++t) {
    workers.emplace_back([&, t]() {
      try {
        for (size_t i = t; i < n; i += nt) out[i] = fn(i);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace rwrp
