#pragma once
// Small dense linear algebra over an exact field (Rat) or doubles with a tolerance.
// Sizes here are tiny (step sets, affine bases), so plain Gaussian elimination is enough.

#include "rwrp/rational.hpp"

#include <cmath>
#include <cstdlib>
#include <vector>

namespace rwrp {

template <class T>
struct FieldTraits {
  static bool is_zero(const T& x) { return x == 0; }
  static T abs(const T& x) { return x < 0 ? T(-x) : x; }
};

template <>
struct FieldTraits<double> {
  static constexpr double eps = 1e-9;
  static bool is_zero(double x) { return std::fabs(x) < eps; }
  static double abs(double x) { return std::fabs(x); }
};

template <class T>
using Mat = std::vector<std::vector<T>>;

// Row-reduces M in place (full row echelon), returns pivot column per pivot row.
template <class T>
std::vector<int> row_reduce(Mat<T>& m) {
  std::vector<int> pivots;
  if (m.empty()) return pivots;
  size_t rows = m.size(), cols = m[0].size();
  size_t r = 0;
  for (size_t c = 0; c < cols && r < rows; ++c) {
    // Largest-magnitude pivot keeps the double path stable; harmless for exact T.
    size_t best = r;
    for (size_t i = r; i < rows; ++i)
      if (FieldTraits<T>::abs(m[i][c]) > FieldTraits<T>::abs(m[best][c])) best = i;
    if (FieldTraits<T>::is_zero(m[best][c])) continue;
    std::swap(m[r], m[best]);
    T inv = m[r][c];
    for (size_t j = c; j < cols; ++j) m[r][j] = m[r][j] / inv;
    for (size_t i = 0; i < rows; ++i) {
      if (i == r || FieldTraits<T>::is_zero(m[i][c])) continue;
      T f = m[i][c];
      for (size_t j = c; j < cols; ++j) m[i][j] = m[i][j] - f * m[r][j];
    }
    pivots.push_back((int)c);
    ++r;
  }
  return pivots;
}

template <class T>
int rank(Mat<T> m) {
  return (int)row_reduce(m).size();
}

// Solves A x = b (A square-ish, consistent system expected). Returns empty on failure.
template <class T>
std::vector<T> solve_linear(Mat<T> a, std::vector<T> b) {
  size_t rows = a.size(), cols = rows ? a[0].size() : 0;
  for (size_t i = 0; i < rows; ++i) a[i].push_back(b[i]);
  auto pivots = row_reduce(a);
  std::vector<T> x(cols, T(0));
  for (size_t r = 0; r < pivots.size(); ++r) {
    if (pivots[r] == (int)cols) return {};  // inconsistent: pivot in the RHS column
    x[pivots[r]] = a[r][cols];
  }
  // Rows beyond the pivot count must be all-zero including RHS.
  for (size_t r = pivots.size(); r < rows; ++r)
    if (!FieldTraits<T>::is_zero(a[r][cols])) return {};
  return x;
}

// Nullspace basis of A (columns = variables).
template <class T>
Mat<T> nullspace(Mat<T> a) {
  size_t cols = a.empty() ? 0 : a[0].size();
  auto pivots = row_reduce(a);
  std::vector<bool> is_pivot(cols, false);
  for (int c : pivots) is_pivot[c] = true;
  Mat<T> basis;
  for (size_t fc = 0; fc < cols; ++fc) {
    if (is_pivot[fc]) continue;
    std::vector<T> v(cols, T(0));
    v[fc] = T(1);
    for (size_t r = 0; r < pivots.size(); ++r) v[pivots[r]] = -a[r][fc];
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace rwrp
