#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include "meva/common.hpp"
#include "meva/dual.hpp"

namespace meva {

template <class S, std::size_t N>
using SquareMat = std::array<std::array<S, N>, N>;

template <class S, std::size_t N>
std::array<S, N> matvec(const SquareMat<S, N>& a, const std::array<S, N>& x) {
  std::array<S, N> y{};
  for (std::size_t i = 0; i < N; ++i) {
    S acc = a[i][0] * x[0];
    for (std::size_t j = 1; j < N; ++j) acc += a[i][j] * x[j];
    y[i] = acc;
  }
  return y;
}

template <class S, std::size_t N>
S dot(const std::array<S, N>& a, const std::array<S, N>& b) {
  S acc = a[0] * b[0];
  for (std::size_t i = 1; i < N; ++i) acc += a[i] * b[i];
  return acc;
}

// Dense solve by Gaussian elimination with partial pivoting. Works on any
// dual nesting level (pivot choice compares value parts, which keeps the
// derivative path piecewise consistent). The residual of the value parts is
// checked against `residual_tol`.
template <class S, std::size_t N>
std::array<S, N> solve(SquareMat<S, N> a, std::array<S, N> b,
                       double residual_tol = 1e-9) {
  const SquareMat<S, N> a0 = a;
  const std::array<S, N> b0 = b;

  for (std::size_t col = 0; col < N; ++col) {
    std::size_t piv = col;
    double best = std::fabs(value_of(a[col][col]));
    for (std::size_t r = col + 1; r < N; ++r) {
      double m = std::fabs(value_of(a[r][col]));
      if (m > best) { best = m; piv = r; }
    }
    if (best == 0.0) throw NumericError("linear solve: singular matrix");
    if (piv != col) {
      std::swap(a[piv], a[col]);
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < N; ++r) {
      S f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < N; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<S, N> x{};
  for (int i = static_cast<int>(N) - 1; i >= 0; --i) {
    S acc = b[i];
    for (std::size_t j = i + 1; j < N; ++j) acc -= a[i][j] * x[j];
    x[i] = acc / a[i][i];
  }

  double resid = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double r = -value_of(b0[i]);
    for (std::size_t j = 0; j < N; ++j)
      r += value_of(a0[i][j]) * value_of(x[j]);
    resid = std::max(resid, std::fabs(r));
  }
  if (!(resid <= residual_tol))
    throw NumericError("linear solve: residual " + std::to_string(resid) +
                       " exceeds tolerance");
  return x;
}

}  // namespace meva
