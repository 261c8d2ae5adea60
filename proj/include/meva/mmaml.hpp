#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "meva/baselines.hpp"
#include "meva/deriv.hpp"
#include "meva/games.hpp"
#include "meva/rng.hpp"

namespace meva {

// Learned initialization for one player and one side of the game; deployed
// as naive learning from that initialization. Antisymmetric games need a
// separate model per side.
struct MmamlInit {
  std::string game;
  int side = 0;  // 0-based player index the init plays
  int n = 0;
  std::array<double, kMaxDim> x0{};
  double alpha_self = 0.0;  // learning rate this init was trained to deploy
};

struct UnrollGrad {
  double objective = 0.0;
  JointPolicy grad;  // dJ/dx^(0), both blocks
};

// J = sum_{t=0..steps} gamma_meta^t f_player(x^(t)) along a naive-learning
// unroll with per-player step sizes, differentiated exactly by reverse
// accumulation. Each backward step needs one aligned-field VJP (the
// second-order term of the update jacobian).
inline UnrollGrad naive_unroll_grad(const GameSpec& g, const JointPolicy& x0,
                                    int player,
                                    const std::array<double, 2>& alpha,
                                    int steps, double gamma_meta) {
  std::vector<JointPolicy> states;
  states.reserve(steps + 1);
  states.push_back(x0);
  for (int t = 0; t < steps; ++t) {
    auto grad = aligned_grad(g, states.back());
    states.push_back(apply_step(states.back(), grad, alpha));
    if (!all_finite(states.back()))
      throw NumericError("naive unroll diverged at step " + std::to_string(t));
  }

  UnrollGrad out;
  out.grad = JointPolicy(x0.n);
  double w = 1.0;
  std::vector<double> weights(steps + 1);
  for (int t = 0; t <= steps; ++t) { weights[t] = w; w *= gamma_meta; }

  JointPolicy adjoint(x0.n);
  for (int t = steps; t >= 0; --t) {
    auto jac = full_jacobian(g, states[t]);
    auto f = game_value(g, states[t]);
    out.objective += weights[t] * f[player];
    for (int idx = 0; idx < x0.total_dim(); ++idx)
      adjoint.flat(idx) += weights[t] * jac[player][idx];
    if (t > 0) {
      // Pull the adjoint through x^(t) = x^(t-1) + alpha . G(x^(t-1)).
      JointPolicy scaled(x0.n);
      for (int i = 0; i < kPlayers; ++i)
        for (int j = 0; j < x0.n; ++j)
          scaled.at(i, j) = alpha[i] * adjoint.at(i, j);
      JointPolicy vjp = aligned_field_vjp(g, states[t - 1], scaled);
      for (int idx = 0; idx < x0.total_dim(); ++idx)
        adjoint.flat(idx) += vjp.flat(idx);
    }
  }
  out.grad = adjoint;
  return out;
}

struct MmamlHyper {
  int batch = 64;
  int rollout_steps = 300;
  int iterations = 150;
  double lr = 0.1;
  double gamma_meta = 0.95;
  std::array<double, 2> alpha{25.0, 25.0};  // [self, opponent] deploy rates
};

// Ascends the meta-objective over the learned initialization with Adam;
// opponents start from standard-normal initializations each batch.
inline MmamlInit mmaml_train(const GameSpec& g, int side,
                             const MmamlHyper& hyper, std::uint64_t seed,
                             std::vector<double>* objective_log = nullptr) {
  const int n = game_dim(g);
  const int opp = 1 - side;
  MmamlInit init;
  init.game = game_name(g);
  init.side = side;
  init.n = n;
  init.alpha_self = hyper.alpha[0];

  Rng init_rng = make_rng(seed, 0xA11CE);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, kMaxDim> x{};
  for (int j = 0; j < n; ++j) x[j] = normal(init_rng);

  std::array<double, kMaxDim> m{}, v{};
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::array<double, 2> alpha{};
  alpha[side] = hyper.alpha[0];
  alpha[opp] = hyper.alpha[1];

  for (int it = 0; it < hyper.iterations; ++it) {
    std::array<double, kMaxDim> grad{};
    double mean_obj = 0.0;
    Rng batch_rng = make_rng(seed, 0xB47C4, it);
    for (int b = 0; b < hyper.batch; ++b) {
      JointPolicy x0(n);
      for (int j = 0; j < n; ++j) {
        x0.at(side, j) = x[j];
        x0.at(opp, j) = normal(batch_rng);
      }
      UnrollGrad ug = naive_unroll_grad(g, x0, side, alpha,
                                        hyper.rollout_steps, hyper.gamma_meta);
      mean_obj += ug.objective / hyper.batch;
      for (int j = 0; j < n; ++j)
        grad[j] += ug.grad.at(side, j) / hyper.batch;
    }
    if (objective_log) objective_log->push_back(mean_obj);
    for (int j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1 - b1) * grad[j];
      v[j] = b2 * v[j] + (1 - b2) * grad[j] * grad[j];
      double mhat = m[j] / (1 - std::pow(b1, it + 1));
      double vhat = v[j] / (1 - std::pow(b2, it + 1));
      x[j] += hyper.lr * mhat / (std::sqrt(vhat) + eps);  // ascent
    }
  }
  init.x0 = x;
  return init;
}

}  // namespace meva
