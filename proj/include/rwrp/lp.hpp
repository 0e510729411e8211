#pragma once
// Two-phase tableau simplex, min c.x s.t. A x = b, x >= 0, Bland's rule.
// Instantiated with Rat this is exact (no cycling, no tolerances); the double
// instantiation backs the float fallback for high-dimensional step sets.

#include "rwrp/ratlin.hpp"

#include <algorithm>
#include <vector>

namespace rwrp {

enum class LpStatus { Optimal, Infeasible, Unbounded };

template <class T>
struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  std::vector<T> x;
  T obj = T(0);
};

namespace detail {

// One simplex phase on an explicit tableau. tab is m rows of (ncols coefficients, rhs);
// cost holds reduced costs and cost[ncols] the negated objective. basis[i] = basic var of row i.
// allowed[j] = eligible entering columns. Returns false if unbounded.
template <class T>
bool simplex_iterate(Mat<T>& tab, std::vector<T>& cost, std::vector<int>& basis,
                     const std::vector<bool>& allowed) {
  size_t m = tab.size();
  size_t ncols = cost.size() - 1;
  for (;;) {
    int enter = -1;
    for (size_t j = 0; j < ncols; ++j) {
      if (!allowed[j]) continue;
      if (cost[j] < 0 && !FieldTraits<T>::is_zero(cost[j])) { enter = (int)j; break; }  // Bland
    }
    if (enter < 0) return true;
    int leave = -1;
    T best_ratio = T(0);
    for (size_t i = 0; i < m; ++i) {
      const T& a = tab[i][enter];
      if (a > 0 && !FieldTraits<T>::is_zero(a)) {
        T ratio = tab[i][ncols] / a;
        if (leave < 0 || ratio < best_ratio ||
            (ratio == best_ratio && basis[i] < basis[leave]))
          leave = (int)i, best_ratio = ratio;
      }
    }
    if (leave < 0) return false;  // unbounded direction
    // Pivot on (leave, enter).
    T piv = tab[leave][enter];
    for (size_t j = 0; j <= ncols; ++j) tab[leave][j] = tab[leave][j] / piv;
    for (size_t i = 0; i < m; ++i) {
      if ((int)i == leave) continue;
      T f = tab[i][enter];
      if (FieldTraits<T>::is_zero(f)) continue;
      for (size_t j = 0; j <= ncols; ++j) tab[i][j] = tab[i][j] - f * tab[leave][j];
    }
    T f = cost[enter];
    if (!FieldTraits<T>::is_zero(f))
      for (size_t j = 0; j <= ncols; ++j) cost[j] = cost[j] - f * tab[leave][j];
    basis[leave] = enter;
  }
}

}  // namespace detail

template <class T>
LpResult<T> lp_solve(Mat<T> a, std::vector<T> b, std::vector<T> c) {
  size_t m = a.size();
  size_t n = m ? a[0].size() : c.size();
  for (size_t i = 0; i < m; ++i)
    if (b[i] < 0) {
      for (auto& v : a[i]) v = -v;
      b[i] = -b[i];
    }

  size_t ncols = n + m;  // original + artificial
  Mat<T> tab(m, std::vector<T>(ncols + 1, T(0)));
  std::vector<int> basis(m);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) tab[i][j] = a[i][j];
    tab[i][n + i] = T(1);
    tab[i][ncols] = b[i];
    basis[i] = (int)(n + i);
  }

  // Phase 1: minimize the artificial sum.
  std::vector<T> cost(ncols + 1, T(0));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j <= ncols; ++j)
      if (j < n || j == ncols) cost[j] = cost[j] - tab[i][j];
  std::vector<bool> allowed(ncols, true);
  detail::simplex_iterate(tab, cost, basis, allowed);  // bounded by construction
  T phase1 = -cost[ncols];
  if (!FieldTraits<T>::is_zero(phase1)) return {LpStatus::Infeasible, {}, T(0)};

  // Drive leftover zero-level artificials out of the basis where possible.
  for (size_t i = 0; i < m; ++i) {
    if (basis[i] < (int)n) continue;
    int enter = -1;
    for (size_t j = 0; j < n; ++j)
      if (!FieldTraits<T>::is_zero(tab[i][j])) { enter = (int)j; break; }
    if (enter < 0) continue;  // redundant row
    T piv = tab[i][enter];
    for (size_t j = 0; j <= ncols; ++j) tab[i][j] = tab[i][j] / piv;
    for (size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      T f = tab[k][enter];
      if (FieldTraits<T>::is_zero(f)) continue;
      for (size_t j = 0; j <= ncols; ++j) tab[k][j] = tab[k][j] - f * tab[i][j];
    }
    basis[i] = enter;
  }

  // Phase 2: original objective, artificial columns locked out.
  std::vector<T> cost2(ncols + 1, T(0));
  for (size_t j = 0; j < n; ++j) cost2[j] = c[j];
  for (size_t i = 0; i < m; ++i) {
    if (basis[i] >= (int)n) continue;
    T f = cost2[basis[i]];
    if (FieldTraits<T>::is_zero(f)) continue;
    for (size_t j = 0; j <= ncols; ++j) cost2[j] = cost2[j] - f * tab[i][j];
  }
  std::fill(allowed.begin() + n, allowed.end(), false);
  bool bounded = detail::simplex_iterate(tab, cost2, basis, allowed);
  if (!bounded) return {LpStatus::Unbounded, {}, T(0)};

  LpResult<T> res;
  res.status = LpStatus::Optimal;
  res.x.assign(n, T(0));
  for (size_t i = 0; i < m; ++i)
    if (basis[i] < (int)n) res.x[basis[i]] = tab[i][ncols];
  res.obj = T(0);
  for (size_t j = 0; j < n; ++j) res.obj += c[j] * res.x[j];
  return res;
}

// Feasibility of A x = b, x >= 0 (phase 1 only, zero objective).
template <class T>
LpResult<T> lp_feasible(const Mat<T>& a, const std::vector<T>& b) {
  return lp_solve(a, b, std::vector<T>(a.empty() ? 0 : a[0].size(), T(0)));
}

}  // namespace rwrp
