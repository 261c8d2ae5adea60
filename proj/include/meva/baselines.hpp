#pragma once

#include <array>
#include <random>

#include "meva/deriv.hpp"
#include "meva/games.hpp"
#include "meva/rng.hpp"

namespace meva {

template <class S>
PolicyT<S> apply_step(const PolicyT<S>& x, const PolicyT<S>& dir,
                      const std::array<double, kPlayers>& alpha) {
  PolicyT<S> y = x;
  for (int i = 0; i < kPlayers; ++i)
    for (int j = 0; j < x.n; ++j) y.at(i, j) += alpha[i] * dir.at(i, j);
  return y;
}

// Simultaneous gradient ascent on own returns.
template <class S>
PolicyT<S> naive_step(const GameSpec& g, const PolicyT<S>& x, double alpha) {
  return apply_step(x, aligned_grad(g, x), {alpha, alpha});
}

template <class S>
PolicyT<S> value_parts(const PolicyT<Dual<S>>& x) {
  PolicyT<S> y(x.n);
  for (int i = 0; i < kPlayers; ++i)
    for (int j = 0; j < x.n; ++j) y.at(i, j) = x.at(i, j).v;
  return y;
}

// u_i = grad_{x_i} f_i(x_i, x_{-i} + alpha_im * field(x)_{-i}), where the
// imagined opponent update `field` is itself differentiated through. Each
// own coordinate gets a dual pass through the field; the game side applies
// the chain rule via the jacobian at the shifted point, so alpha_im = 0
// collapses to the plain aligned gradient bit for bit.
template <class S, class Field>
PolicyT<S> shaped_grad(const GameSpec& g, const PolicyT<S>& x, double alpha_im,
                       Field&& field) {
  PolicyT<S> u(x.n);
  for (int i = 0; i < kPlayers; ++i) {
    const int opp = 1 - i;
    for (int j = 0; j < x.n; ++j) {
      auto xd = seed_coord(x, i * x.n + j);
      auto imagined = field(xd);
      auto y = xd;
      for (int jj = 0; jj < x.n; ++jj)
        y.at(opp, jj) += alpha_im * imagined.at(opp, jj);
      auto jac = full_jacobian(g, value_parts(y));
      S acc = jac[i][0] * y.flat(0).d;
      for (int c = 1; c < x.total_dim(); ++c) acc += jac[i][c] * y.flat(c).d;
      u.at(i, j) = acc;
    }
  }
  return u;
}

// LOLA: opponents are extrapolated one imagined naive step.
template <class S>
PolicyT<S> lola_field(const GameSpec& g, const PolicyT<S>& x,
                      double alpha_im) {
  return shaped_grad(g, x, alpha_im,
                     [&](const auto& xd) { return aligned_grad(g, xd); });
}

// HOLA hierarchy: level 0 is the naive gradient, level 1 is LOLA, level k
// assumes opponents follow level k-1. Each level adds one dual nesting.
template <int K, class S>
PolicyT<S> hola_field(const GameSpec& g, const PolicyT<S>& x, double alpha) {
  if constexpr (K == 0) {
    return aligned_grad(g, x);
  } else {
    return shaped_grad(g, x, alpha, [&](const auto& xd) {
      return hola_field<K - 1>(g, xd, alpha);
    });
  }
}

inline JointPolicy lola_step(const GameSpec& g, const JointPolicy& x,
                             double alpha, double alpha_im) {
  return apply_step(x, lola_field(g, x, alpha_im), {alpha, alpha});
}

// `alpha` scales the applied update, `alpha_im` the imagined steps inside
// the recursion; the basin maps vary the latter while stepping at a fixed
// rate, the tournaments use one shared value.
inline JointPolicy hola_step(const GameSpec& g, const JointPolicy& x,
                             double alpha, double alpha_im, int order) {
  switch (order) {
    case 0:
      return apply_step(x, hola_field<0>(g, x, alpha_im), {alpha, alpha});
    case 1:
      return apply_step(x, hola_field<1>(g, x, alpha_im), {alpha, alpha});
    case 2:
      return apply_step(x, hola_field<2>(g, x, alpha_im), {alpha, alpha});
    case 3:
      return apply_step(x, hola_field<3>(g, x, alpha_im), {alpha, alpha});
    default:
      throw ConfigError("hola order must be in [0,3]");
  }
}

struct BestResponseResult {
  JointPolicy final_x;
  ReturnVec<double> returns{};
  ReturnVec<double> initial_returns{};
};

// Trains a naive exploiter against one frozen policy: ascends its own block
// only, leaving the frozen side untouched.
inline BestResponseResult best_response_train(const GameSpec& g,
                                              const JointPolicy& x,
                                              int frozen_player, int steps,
                                              double alpha, Rng& rng) {
  const int exploiter = 1 - frozen_player;
  JointPolicy y = x;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < y.n; ++j) y.at(exploiter, j) = normal(rng);

  BestResponseResult out;
  out.initial_returns = game_value(g, y);
  for (int t = 0; t < steps; ++t) {
    auto grad = aligned_grad(g, y);
    for (int j = 0; j < y.n; ++j)
      y.at(exploiter, j) += alpha * grad.at(exploiter, j);
  }
  out.final_x = y;
  out.returns = game_value(g, y);
  return out;
}

}  // namespace meva
