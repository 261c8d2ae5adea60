#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "meva/common.hpp"
#include "meva/linalg.hpp"
#include "meva/policy.hpp"
#include "meva/rng.hpp"

namespace meva {

enum class Symmetry { kSymmetric, kAntisymmetric, kNone };

template <class S>
using ReturnVec = std::array<S, kPlayers>;

// Two-player Logistic Game: each policy is a single scalar. Two stable
// solutions, A in the negative quadrant and B in the positive quadrant;
// both players prefer B.
struct LogisticGame {
  static constexpr int dim = 1;

  template <class S>
  ReturnVec<S> value(const PolicyT<S>& x) const {
    const S& x1 = x.at(0, 0);
    const S& x2 = x.at(1, 0);
    S s1 = sigmoid(x1);
    S s2 = sigmoid(x2);
    S poly = (x1 * x1 * x2 * x2 +
              (x1 - x2) * (x1 - x2) * (x1 + x2) * (x1 + x2)) /
             10000.0;
    ReturnVec<S> f;
    f[0] = -4.0 * s1 * (1.0 - 2.0 * s2) - poly;
    f[1] = -4.0 * s2 * (1.0 - 2.0 * s1) - poly;
    return f;
  }

  Symmetry symmetry() const { return Symmetry::kSymmetric; }
};

// Observation states for the repeated matrix games: the empty starting state
// followed by the four joint actions in the fixed order AA, AB, BA, BB
// (own action listed first). Player 2 observes the joint action with the
// roles swapped, so its logits for AB and BA trade places.
struct StateIndexing {
  static constexpr int kStates = 5;  // empty + 4 joint actions
  static constexpr int kJoint = 4;

  // Permutation of joint-action indices seen by player 2 (AB <-> BA).
  static constexpr int player2_perm(int joint) {
    return joint == 1 ? 2 : (joint == 2 ? 1 : joint);
  }
};

// Infinitely repeated 2x2 matrix game with parameter vectors of five binary
// logits (initial state + one per previous joint action). Returns are the
// normalized discounted values (1-delta) * p0^T (I - delta P)^-1 r.
struct RepeatedMatrixGame {
  static constexpr int dim = 5;

  std::string name;
  std::array<double, 4> payoff1{};  // per joint action AA, AB, BA, BB
  std::array<double, 4> payoff2{};
  double discount = 0.96;
  Symmetry sym = Symmetry::kSymmetric;

  // Probability of action A for each player in each of the four joint states,
  // and in the initial state.
  template <class S>
  struct ActionProbs {
    S init1, init2;                 // P(A) in the empty state
    std::array<S, 4> act1, act2;    // P(A) after each joint action
  };

  template <class S>
  ActionProbs<S> action_probs(const PolicyT<S>& x) const {
    ActionProbs<S> p;
    p.init1 = sigmoid(x.at(0, 0));
    p.init2 = sigmoid(x.at(1, 0));
    for (int s = 0; s < 4; ++s) {
      p.act1[s] = sigmoid(x.at(0, 1 + s));
      p.act2[s] = sigmoid(x.at(1, 1 + StateIndexing::player2_perm(s)));
    }
    return p;
  }

  template <class S>
  static std::array<S, 4> joint_dist(const S& a, const S& b) {
    return {a * b, a * (1.0 - b), (1.0 - a) * b, (1.0 - a) * (1.0 - b)};
  }

  template <class S>
  ReturnVec<S> value(const PolicyT<S>& x) const {
    auto p = action_probs(x);
    std::array<S, 4> p0 = joint_dist(p.init1, p.init2);
    // w solves (I - delta P^T) w = p0, so that v_i = (1-delta) w . r_i.
    SquareMat<S, 4> mt{};
    for (int s = 0; s < 4; ++s) {
      std::array<S, 4> rowp = joint_dist(p.act1[s], p.act2[s]);
      for (int t = 0; t < 4; ++t) mt[t][s] = -discount * rowp[t];
      mt[s][s] += 1.0;
    }
    std::array<S, 4> w = solve(mt, p0);
    ReturnVec<S> v;
    S v1 = w[0] * payoff1[0], v2 = w[0] * payoff2[0];
    for (int t = 1; t < 4; ++t) {
      v1 += w[t] * payoff1[t];
      v2 += w[t] * payoff2[t];
    }
    v[0] = (1.0 - discount) * v1;
    v[1] = (1.0 - discount) * v2;
    return v;
  }

  template <class S>
  std::array<std::array<S, 2 * kMaxDim>, kPlayers> jacobian(
      const PolicyT<S>& x) const {
    ReturnVec<S> unused;
    return value_and_jacobian(x, unused);
  }

  // Full 2 x (2*5) jacobian, analytic, with the values as a byproduct of the
  // same solves. Row i holds the gradient of value i with respect to every
  // logit of both players (player-major flat order).
  // d v_i = (1-delta) [ dp0 . u_i + delta * w[s] * drow_s . u_i ] where
  // u_i = (I - delta P)^-1 r_i and w = (I - delta P^T)^-1 p0.
  template <class S>
  std::array<std::array<S, 2 * kMaxDim>, kPlayers> value_and_jacobian(
      const PolicyT<S>& x, ReturnVec<S>& value_out) const {
    auto p = action_probs(x);
    std::array<S, 4> p0 = joint_dist(p.init1, p.init2);

    SquareMat<S, 4> m{}, mt{};
    for (int s = 0; s < 4; ++s) {
      std::array<S, 4> rowp = joint_dist(p.act1[s], p.act2[s]);
      for (int t = 0; t < 4; ++t) {
        m[s][t] = -discount * rowp[t];
        mt[t][s] = -discount * rowp[t];
      }
      m[s][s] += 1.0;
      mt[s][s] += 1.0;
    }
    std::array<S, 4> r1{}, r2{};
    for (int t = 0; t < 4; ++t) { r1[t] = S(payoff1[t]); r2[t] = S(payoff2[t]); }
    std::array<S, 4> u1 = solve(m, r1);
    std::array<S, 4> u2 = solve(m, r2);
    std::array<S, 4> w = solve(mt, p0);

    const double nd = 1.0 - discount;
    value_out[0] = nd * dot(p0, u1);
    value_out[1] = nd * dot(p0, u2);
    std::array<std::array<S, 2 * kMaxDim>, kPlayers> jac{};

    // Derivative of a joint distribution over (A,B)x(A,B) w.r.t. each margin.
    auto d_own = [](const S& other) {
      return std::array<S, 4>{other, 1.0 - other, -other, -(1.0 - other)};
    };
    auto d_other = [](const S& own) {
      return std::array<S, 4>{own, -own, 1.0 - own, -(1.0 - own)};
    };

    // Initial-state logits move p0 only.
    {
      S ds1 = p.init1 * (1.0 - p.init1);
      S ds2 = p.init2 * (1.0 - p.init2);
      std::array<S, 4> dp0_1 = d_own(p.init2);
      std::array<S, 4> dp0_2 = d_other(p.init1);
      jac[0][0] = nd * ds1 * dot(dp0_1, u1);
      jac[1][0] = nd * ds1 * dot(dp0_1, u2);
      jac[0][dim] = nd * ds2 * dot(dp0_2, u1);
      jac[1][dim] = nd * ds2 * dot(dp0_2, u2);
    }
    // Per-state logits move one row of the transition matrix.
    for (int s = 0; s < 4; ++s) {
      S ds1 = p.act1[s] * (1.0 - p.act1[s]);
      std::array<S, 4> drow = d_own(p.act2[s]);
      S g1 = nd * discount * ds1 * w[s];
      jac[0][1 + s] = g1 * dot(drow, u1);
      jac[1][1 + s] = g1 * dot(drow, u2);
    }
    for (int t = 0; t < 4; ++t) {
      int s = StateIndexing::player2_perm(t);  // state whose row uses logit t
      S ds2 = p.act2[s] * (1.0 - p.act2[s]);
      std::array<S, 4> drow = d_other(p.act1[s]);
      S g2 = nd * discount * ds2 * w[s];
      jac[0][dim + 1 + t] = g2 * dot(drow, u1);
      jac[1][dim + 1 + t] = g2 * dot(drow, u2);
    }
    return jac;
  }

  Symmetry symmetry() const { return sym; }
};

using GameSpec = std::variant<LogisticGame, RepeatedMatrixGame>;

inline LogisticGame make_logistic() { return {}; }

inline RepeatedMatrixGame make_ipd() {
  return {"ipd", {-1, -3, 0, -2}, {-1, 0, -3, -2}, 0.96, Symmetry::kSymmetric};
}
inline RepeatedMatrixGame make_imp() {
  return {"imp", {1, -1, -1, 1}, {-1, 1, 1, -1}, 0.96,
          Symmetry::kAntisymmetric};
}
inline RepeatedMatrixGame make_chicken() {
  return {"chicken", {0, -1, 1, -100}, {0, 1, -1, -100}, 0.96,
          Symmetry::kSymmetric};
}

inline GameSpec game_by_name(const std::string& name) {
  if (name == "logistic") return make_logistic();
  if (name == "ipd") return make_ipd();
  if (name == "imp") return make_imp();
  if (name == "chicken") return make_chicken();
  throw ConfigError("unknown game: " + name);
}

inline std::string game_name(const GameSpec& g) {
  if (std::holds_alternative<LogisticGame>(g)) return "logistic";
  return std::get<RepeatedMatrixGame>(g).name;
}

inline int game_dim(const GameSpec& g) {
  return std::holds_alternative<LogisticGame>(g) ? LogisticGame::dim
                                                 : RepeatedMatrixGame::dim;
}

inline Symmetry game_symmetry(const GameSpec& g) {
  return std::visit([](const auto& game) { return game.symmetry(); }, g);
}

inline void check_shape(const GameSpec& g, int n) {
  if (n != game_dim(g))
    throw ConfigError("policy dimension " + std::to_string(n) +
                      " does not match game " + game_name(g));
}

template <class S>
ReturnVec<S> game_value(const GameSpec& g, const PolicyT<S>& x) {
  check_shape(g, x.n);
  return std::visit([&](const auto& game) { return game.value(x); }, g);
}

struct McEstimate {
  ReturnVec<double> mean{};
  ReturnVec<double> stderr_{};
  int episodes = 0;
};

// Monte-Carlo oracle for the matrix-game value: simulates the repeated game
// and averages normalized empirical discounted returns. Test oracle only;
// everything else uses the exact solve.
inline McEstimate monte_carlo_value(const JointPolicy& x,
                                    const RepeatedMatrixGame& game,
                                    int episodes, int horizon, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto probs = game.action_probs(x);
  McEstimate out;
  out.episodes = episodes;
  // Welford accumulation: identical episodes yield a variance of exactly 0.
  std::array<double, 2> mean{}, m2{};
  for (int e = 0; e < episodes; ++e) {
    double g1 = 0.0, g2 = 0.0, w = 1.0 - game.discount;
    int a1 = unif(rng) < value_of(probs.init1) ? 0 : 1;
    int a2 = unif(rng) < value_of(probs.init2) ? 0 : 1;
    for (int t = 0; t < horizon; ++t) {
      int joint = 2 * a1 + a2;
      g1 += w * game.payoff1[joint];
      g2 += w * game.payoff2[joint];
      w *= game.discount;
      a1 = unif(rng) < value_of(probs.act1[joint]) ? 0 : 1;
      a2 = unif(rng) < value_of(probs.act2[joint]) ? 0 : 1;
    }
    const double g[2] = {g1, g2};
    for (int i = 0; i < 2; ++i) {
      double delta = g[i] - mean[i];
      mean[i] += delta / (e + 1);
      m2[i] += delta * (g[i] - mean[i]);
    }
  }
  for (int i = 0; i < 2; ++i) {
    out.mean[i] = mean[i];
    double var = m2[i] / std::max(1, episodes - 1);
    out.stderr_[i] = std::sqrt(var / episodes);
  }
  return out;
}

struct ReturnPair {
  double r1 = 0.0;
  double r2 = 0.0;
};

// Andrew monotone chain; returns hull vertices in counterclockwise order
// (r2 as the horizontal axis, r1 vertical). Collinear points are dropped.
inline std::vector<ReturnPair> convex_hull(std::vector<ReturnPair> pts) {
  auto lt = [](const ReturnPair& a, const ReturnPair& b) {
    return a.r2 < b.r2 || (a.r2 == b.r2 && a.r1 < b.r1);
  };
  auto cross = [](const ReturnPair& o, const ReturnPair& a,
                  const ReturnPair& b) {
    return (a.r2 - o.r2) * (b.r1 - o.r1) - (a.r1 - o.r1) * (b.r2 - o.r2);
  };
  std::sort(pts.begin(), pts.end(), lt);
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const ReturnPair& a, const ReturnPair& b) {
                          return a.r2 == b.r2 && a.r1 == b.r1;
                        }),
            pts.end());
  int n = static_cast<int>(pts.size());
  if (n < 3) return pts;
  std::vector<ReturnPair> h(2 * n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (int i = n - 2, lower = k + 1; i >= 0; --i) {
    while (k >= lower && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

inline bool inside_hull(const std::vector<ReturnPair>& hull,
                        const ReturnPair& p, double slack) {
  if (hull.empty()) return false;
  if (hull.size() == 1)
    return std::hypot(hull[0].r2 - p.r2, hull[0].r1 - p.r1) <= slack;
  if (hull.size() == 2) {
    double ex = hull[1].r2 - hull[0].r2, ey = hull[1].r1 - hull[0].r1;
    double len2 = ex * ex + ey * ey;
    double t = len2 == 0.0 ? 0.0
                           : std::clamp(((p.r2 - hull[0].r2) * ex +
                                         (p.r1 - hull[0].r1) * ey) / len2,
                                        0.0, 1.0);
    return std::hypot(p.r2 - (hull[0].r2 + t * ex),
                      p.r1 - (hull[0].r1 + t * ey)) <= slack;
  }
  int n = static_cast<int>(hull.size());
  for (int i = 0; i < n; ++i) {
    const ReturnPair& a = hull[i];
    const ReturnPair& b = hull[(i + 1) % n];
    double ex = b.r2 - a.r2, ey = b.r1 - a.r1;
    double len = std::hypot(ex, ey);
    if (len == 0.0) continue;
    // CCW polygon: interior is on the left of each edge.
    double side = ex * (p.r1 - a.r1) - ey * (p.r2 - a.r2);
    if (side < -slack * len) return false;
  }
  return true;
}

// Feasible/achieved return pairs versus a frozen player-1 policy.
struct ReturnPairCloud {
  std::vector<ReturnPair> samples;  // frozen policy vs random opponents
  std::vector<ReturnPair> corners;  // deterministic policy pairs
  std::vector<ReturnPair> hull;     // hull of the corners (CCW)
};

// Deterministic corner pairs: both players run every +-20 sign pattern.
inline std::vector<ReturnPair> corner_pairs(const RepeatedMatrixGame& game) {
  std::vector<ReturnPair> out;
  out.reserve(32 * 32);
  JointPolicy x(RepeatedMatrixGame::dim);
  for (int m1 = 0; m1 < 32; ++m1) {
    for (int m2 = 0; m2 < 32; ++m2) {
      for (int j = 0; j < 5; ++j) {
        x.at(0, j) = (m1 >> j) & 1 ? 20.0 : -20.0;
        x.at(1, j) = (m2 >> j) & 1 ? 20.0 : -20.0;
      }
      auto v = game.value(x);
      out.push_back({v[0], v[1]});
    }
  }
  return out;
}

inline ReturnPairCloud return_region(const std::array<double, 5>& frozen1,
                                     const RepeatedMatrixGame& game,
                                     int n_opponents, Rng& rng,
                                     double opponent_sigma = 3.0) {
  ReturnPairCloud cloud;
  cloud.corners = corner_pairs(game);
  cloud.hull = convex_hull(cloud.corners);
  std::normal_distribution<double> normal(0.0, opponent_sigma);
  JointPolicy x(RepeatedMatrixGame::dim);
  for (int j = 0; j < 5; ++j) x.at(0, j) = frozen1[j];
  cloud.samples.reserve(n_opponents);
  for (int i = 0; i < n_opponents; ++i) {
    for (int j = 0; j < 5; ++j) x.at(1, j) = normal(rng);
    auto v = game.value(x);
    cloud.samples.push_back({v[0], v[1]});
  }
  return cloud;
}

// Slope (delta return_1 / delta return_2) of the hull edge leaving the
// rightmost sample on its upper side; the ZD-extortion signature is a slope
// greater than one. Returns +inf for a vertical front.
inline double front_slope(const std::vector<ReturnPair>& samples) {
  std::vector<ReturnPair> hull = convex_hull(samples);
  if (hull.size() < 2) return 0.0;
  int n = static_cast<int>(hull.size());
  int p = 0;
  for (int i = 1; i < n; ++i) {
    if (hull[i].r2 > hull[p].r2 ||
        (hull[i].r2 == hull[p].r2 && hull[i].r1 > hull[p].r1))
      p = i;
  }
  const ReturnPair& a = hull[p];
  const ReturnPair& b = hull[(p + 1) % n];  // CCW: the edge on the upper side
  double run = b.r2 - a.r2;
  double rise = b.r1 - a.r1;
  if (std::fabs(run) < 1e-12) return std::numeric_limits<double>::infinity();
  return rise / run;
}

}  // namespace meva
