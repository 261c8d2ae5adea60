#pragma once

#include <array>
#include <cmath>

#include "meva/dual.hpp"

namespace meva {

inline constexpr int kPlayers = 2;
inline constexpr int kMaxDim = 5;  // logits per player (5 for matrix games)

// Joint policy of a two-player differentiable game: one parameter row per
// player. Also reused as the container for per-player gradient rows and
// update directions, which share the same shape.
template <class S>
struct PolicyT {
  int n = 0;
  std::array<std::array<S, kMaxDim>, kPlayers> row{};

  PolicyT() = default;
  explicit PolicyT(int dim) : n(dim) {}

  S& at(int player, int j) { return row[player][j]; }
  const S& at(int player, int j) const { return row[player][j]; }

  int total_dim() const { return kPlayers * n; }
  S& flat(int idx) { return row[idx / n][idx % n]; }
  const S& flat(int idx) const { return row[idx / n][idx % n]; }
};

using JointPolicy = PolicyT<double>;

template <class S>
PolicyT<S> swap_players(const PolicyT<S>& x) {
  PolicyT<S> y(x.n);
  y.row[0] = x.row[1];
  y.row[1] = x.row[0];
  return y;
}

template <class S>
bool all_finite(const PolicyT<S>& x) {
  for (int i = 0; i < kPlayers; ++i)
    for (int j = 0; j < x.n; ++j)
      if (!std::isfinite(value_of(x.at(i, j)))) return false;
  return true;
}

// Lift to one more dual level, all derivative parts zero (constants).
template <class S>
PolicyT<Dual<S>> lift(const PolicyT<S>& x) {
  PolicyT<Dual<S>> y(x.n);
  for (int i = 0; i < kPlayers; ++i)
    for (int j = 0; j < x.n; ++j) y.at(i, j) = Dual<S>(x.at(i, j));
  return y;
}

// Lift and seed the unit direction of flat coordinate `idx`.
template <class S>
PolicyT<Dual<S>> seed_coord(const PolicyT<S>& x, int idx) {
  PolicyT<Dual<S>> y = lift(x);
  y.flat(idx).d = S(1.0);
  return y;
}

// Lift and seed an arbitrary direction v (same shape as x).
template <class S>
PolicyT<Dual<S>> seed_dir(const PolicyT<S>& x, const PolicyT<S>& v) {
  PolicyT<Dual<S>> y = lift(x);
  for (int i = 0; i < kPlayers; ++i)
    for (int j = 0; j < x.n; ++j) y.at(i, j).d = v.at(i, j);
  return y;
}

}  // namespace meva
