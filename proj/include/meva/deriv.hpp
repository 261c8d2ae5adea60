#pragma once

#include <array>
#include <functional>

#include "meva/games.hpp"
#include "meva/policy.hpp"

namespace meva {

// Jacobian rows are indexed by flat player-major coordinates (2*n valid
// columns); the array is sized for the largest game.
template <class S>
using FullJacobian = std::array<std::array<S, 2 * kMaxDim>, kPlayers>;

// Full jacobian: row i is the gradient of f_i with respect to every entry of
// x (player-major flat order). Matrix games use the analytic form; the
// logistic game differentiates its value with one dual pass per coordinate.
template <class S>
FullJacobian<S> full_jacobian(const GameSpec& g, const PolicyT<S>& x) {
  check_shape(g, x.n);
  if (const auto* mg = std::get_if<RepeatedMatrixGame>(&g))
    return mg->jacobian(x);
  FullJacobian<S> jac{};
  for (int idx = 0; idx < x.total_dim(); ++idx) {
    auto xd = seed_coord(x, idx);
    auto f = game_value(g, xd);
    jac[0][idx] = f[0].d;
    jac[1][idx] = f[1].d;
  }
  return jac;
}

// Value and full jacobian together; the matrix games share the linear
// solves between the two.
template <class S>
FullJacobian<S> value_and_jacobian(const GameSpec& g, const PolicyT<S>& x,
                                   ReturnVec<S>& value_out) {
  check_shape(g, x.n);
  if (const auto* mg = std::get_if<RepeatedMatrixGame>(&g))
    return mg->value_and_jacobian(x, value_out);
  value_out = game_value(g, x);
  return full_jacobian(g, x);
}

// Rows (i, block i) of the full jacobian: each player's gradient of its own
// return in its own parameters.
template <class S>
PolicyT<S> aligned_grad(const GameSpec& g, const PolicyT<S>& x) {
  FullJacobian<S> jac = full_jacobian(g, x);
  PolicyT<S> out(x.n);
  for (int i = 0; i < kPlayers; ++i)
    for (int j = 0; j < x.n; ++j) out.at(i, j) = jac[i][i * x.n + j];
  return out;
}

// Exact H_i v, where H_i is the Hessian of f_i over all of x.
inline std::array<double, 2 * kMaxDim> hessian_vector(const GameSpec& g,
                                                      const JointPolicy& x,
                                                      int player,
                                                      const JointPolicy& v) {
  check_shape(g, v.n);
  auto xd = seed_dir(x, v);
  auto jac = full_jacobian(g, xd);
  std::array<double, 2 * kMaxDim> hv{};
  for (int idx = 0; idx < x.total_dim(); ++idx) hv[idx] = jac[player][idx].d;
  return hv;
}

// Vector-jacobian product of the aligned-gradient field: the gradient of
// sum_i <w_i, grad_{x_i} f_i(x)> with w held constant. This is the
// second-order quantity needed to reverse through one naive-learning step
// and through the COLA consistency loss.
inline JointPolicy aligned_field_vjp(const GameSpec& g, const JointPolicy& x,
                                     const JointPolicy& w) {
  JointPolicy out(x.n);
  for (int idx = 0; idx < x.total_dim(); ++idx) {
    auto xd = seed_coord(x, idx);
    auto jac = full_jacobian(g, xd);
    double acc = 0.0;
    for (int i = 0; i < kPlayers; ++i)
      for (int j = 0; j < x.n; ++j)
        acc += w.at(i, j) * jac[i][i * x.n + j].d;
    out.flat(idx) = acc;
  }
  return out;
}

using ScalarFn = std::function<double(const JointPolicy&)>;

// Central-difference gradient, the test oracle for every exact derivative.
inline JointPolicy finite_diff_gradient(const ScalarFn& fn,
                                        const JointPolicy& x,
                                        double h = 1e-5) {
  JointPolicy grad(x.n);
  JointPolicy xp = x;
  for (int idx = 0; idx < x.total_dim(); ++idx) {
    double orig = xp.flat(idx);
    xp.flat(idx) = orig + h;
    double fp = fn(xp);
    xp.flat(idx) = orig - h;
    double fm = fn(xp);
    xp.flat(idx) = orig;
    grad.flat(idx) = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace meva
