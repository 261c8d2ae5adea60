#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "meva/checkpoint.hpp"
#include "meva/net.hpp"
#include "meva/rng.hpp"

namespace meva {
namespace {

double rel_err(double got, double want) {
  return std::fabs(got - want) / std::max(1.0, std::fabs(want));
}

NetLayout matrix_layout() { return {5, 64, 16, false, true}; }
NetLayout shared_layout() { return {1, 64, 8, true, false}; }

MatrixXd random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = normal(rng);
  return m;
}

// Fill the head with random weights so outputs and grads are nontrivial.
void randomize_head(Params& p, Rng& rng) {
  p.head_w = random_mat(p.layout.head_dim, p.layout.hidden, rng, 0.3);
  p.head_b = random_mat(p.layout.head_dim, 1, rng, 0.3);
}

TEST(ValueNet, FreshModelPredictsZero) {
  Params p = init_params(matrix_layout(), 1);
  Rng rng = make_rng(2);
  MatrixXd x1 = random_mat(5, 7, rng), x2 = random_mat(5, 7, rng);
  RowVectorXd g = RowVectorXd::Constant(7, 0.95);
  Forward fw = net_forward(p, x1, x2, g, g, nullptr, true);
  EXPECT_NEAR(fw.q.cwiseAbs().maxCoeff(), 0.0, 0.0);
  EXPECT_NEAR(fw.mean_value.cwiseAbs().maxCoeff(), 0.0, 0.0);

  MatrixXd dx1, dx2;
  net_input_grad(p, fw, nullptr, true, true, &dx1, &dx2);
  EXPECT_DOUBLE_EQ(dx1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(dx2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ValueNet, SameSeedSameParams) {
  Params a = init_params(matrix_layout(), 99);
  Params b = init_params(matrix_layout(), 99);
  auto ra = tensor_refs(a), rb = tensor_refs(b);
  for (size_t k = 0; k < ra.size(); ++k)
    for (long i = 0; i < ra[k].size(); ++i)
      EXPECT_DOUBLE_EQ(ra[k].data[i], rb[k].data[i]);
}

TEST(ValueNet, SharedWeightsAreSwapEquivariant) {
  Params p = init_params(shared_layout(), 5);
  Rng rng = make_rng(6);
  randomize_head(p, rng);
  MatrixXd x1 = random_mat(1, 9, rng), x2 = random_mat(1, 9, rng);
  RowVectorXd g1 = RowVectorXd::Constant(9, 0.5);
  RowVectorXd g2 = RowVectorXd::Constant(9, 0.9);
  Forward fw = net_forward(p, x1, x2, g1, g2, nullptr, true);
  Forward sw = net_forward(p, x2, x1, g2, g1, nullptr, true);
  // Player 1's outputs under the swap equal player 2's before it.
  EXPECT_NEAR((sw.q.leftCols(9) - fw.q.rightCols(9)).cwiseAbs().maxCoeff(),
              0.0, 1e-12);
  EXPECT_NEAR((sw.q.rightCols(9) - fw.q.leftCols(9)).cwiseAbs().maxCoeff(),
              0.0, 1e-12);
}

TEST(ValueNet, UnsharedScaleShiftBreaksEquivariance) {
  NetLayout layout = matrix_layout();
  Params p = init_params(layout, 7);
  Rng rng = make_rng(8);
  randomize_head(p, rng);
  p.ss_scale[0] = VectorXd::Constant(layout.hidden, 1.3);
  p.ss_shift[1] = VectorXd::Constant(layout.hidden, -0.4);
  MatrixXd x1 = random_mat(5, 4, rng), x2 = random_mat(5, 4, rng);
  RowVectorXd g = RowVectorXd::Constant(4, 0.95);
  Forward fw = net_forward(p, x1, x2, g, g, nullptr, true);
  Forward sw = net_forward(p, x2, x1, g, g, nullptr, true);
  EXPECT_GT((sw.q.leftCols(4) - fw.q.rightCols(4)).cwiseAbs().maxCoeff(),
            1e-6);
}

TEST(ValueNet, InputGradMatchesFiniteDifferences) {
  for (NetLayout layout : {matrix_layout(), shared_layout()}) {
    Params p = init_params(layout, 11);
    Rng rng = make_rng(12);
    randomize_head(p, rng);
    const int b = 3;
    MatrixXd x1 = random_mat(layout.n_in, b, rng);
    MatrixXd x2 = random_mat(layout.n_in, b, rng);
    RowVectorXd g1 = RowVectorXd::Constant(b, 0.7);
    RowVectorXd g2 = RowVectorXd::Constant(b, 0.3);

    Forward fw = net_forward(p, x1, x2, g1, g2);
    MatrixXd dx1, dx2;
    net_input_grad(p, fw, nullptr, true, true, &dx1, &dx2);

    const double h = 1e-6;
    for (int c = 0; c < b; ++c) {
      for (int r = 0; r < layout.n_in; ++r) {
        MatrixXd xp = x1, xm = x1;
        xp(r, c) += h;
        xm(r, c) -= h;
        double vp = net_forward(p, xp, x2, g1, g2).mean_value(c);
        double vm = net_forward(p, xm, x2, g1, g2).mean_value(c);
        EXPECT_LT(rel_err(dx1(r, c), (vp - vm) / (2 * h)), 1e-5);

        xp = x2; xm = x2;
        xp(r, c) += h;
        xm(r, c) -= h;
        vp = net_forward(p, x1, xp, g1, g2).mean_value(b + c);
        vm = net_forward(p, x1, xm, g1, g2).mean_value(b + c);
        EXPECT_LT(rel_err(dx2(r, c), (vp - vm) / (2 * h)), 1e-5);
      }
    }
  }
}

TEST(ValueNet, InputGradConstantHeadBiasInvariance) {
  Params p = init_params(matrix_layout(), 13);
  Rng rng = make_rng(14);
  randomize_head(p, rng);
  MatrixXd x1 = random_mat(5, 2, rng), x2 = random_mat(5, 2, rng);
  RowVectorXd g = RowVectorXd::Constant(2, 0.95);
  Forward fw = net_forward(p, x1, x2, g, g);
  MatrixXd dx1a, dx2a;
  net_input_grad(p, fw, nullptr, true, true, &dx1a, &dx2a);
  p.head_b.array() += 17.0;
  Forward fw2 = net_forward(p, x1, x2, g, g);
  MatrixXd dx1b, dx2b;
  net_input_grad(p, fw2, nullptr, true, true, &dx1b, &dx2b);
  EXPECT_NEAR((dx1a - dx1b).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(ValueNet, ParamGradMatchesFiniteDifferences) {
  // Quadratic probe loss L = 0.5 || Q - Y ||^2 over a small batch, checked
  // on a spread of individual parameters from every tensor.
  for (NetLayout layout : {matrix_layout(), shared_layout()}) {
    Params p = init_params(layout, 21);
    Rng rng = make_rng(22);
    randomize_head(p, rng);
    const int b = 2;
    MatrixXd x1 = random_mat(layout.n_in, b, rng);
    MatrixXd x2 = random_mat(layout.n_in, b, rng);
    RowVectorXd g1 = RowVectorXd::Constant(b, 0.6);
    RowVectorXd g2 = RowVectorXd::Constant(b, 0.8);
    MatrixXd y = random_mat(layout.head_dim, 2 * b, rng);

    auto loss = [&](Params& params) {
      Forward fw = net_forward(params, x1, x2, g1, g2, nullptr, true);
      return 0.5 * (fw.q - y).squaredNorm();
    };

    Forward fw = net_forward(p, x1, x2, g1, g2, nullptr, true);
    Params grads = zero_like(p);
    MatrixXd dq = fw.q - y;
    net_param_grad(p, fw, dq, grads);

    auto prefs = tensor_refs(p);
    auto grefs = tensor_refs(grads);
    const double h = 1e-6;
    for (size_t k = 0; k < prefs.size(); ++k) {
      // Probe three entries per tensor.
      for (long probe = 0; probe < 3; ++probe) {
        long i = (probe * 7919) % prefs[k].size();
        double orig = prefs[k].data[i];
        prefs[k].data[i] = orig + h;
        double lp = loss(p);
        prefs[k].data[i] = orig - h;
        double lm = loss(p);
        prefs[k].data[i] = orig;
        double fd = (lp - lm) / (2 * h);
        EXPECT_LT(rel_err(grefs[k].data[i], fd), 1e-4)
            << prefs[k].name << "[" << i << "]";
      }
    }
  }
}

TEST(ValueNet, AdamWClosedFormFirstStep) {
  Params p = init_params(matrix_layout(), 31);
  Params grads = zero_like(p);
  AdamW opt;

  // Zero gradient, zero decay: parameters unchanged.
  Params before = p;
  opt.step(p, grads, 1e-3, 0.0);
  auto rb = tensor_refs(before), ra = tensor_refs(p);
  for (size_t k = 0; k < ra.size(); ++k)
    for (long i = 0; i < ra[k].size(); ++i)
      EXPECT_DOUBLE_EQ(ra[k].data[i], rb[k].data[i]);

  // Unit gradient: first step is about -lr per coordinate.
  Params p2 = init_params(matrix_layout(), 31);
  Params g2 = zero_like(p2);
  for (TensorRef& t : tensor_refs(g2))
    std::fill(t.data, t.data + t.size(), 1.0);
  Params before2 = p2;
  AdamW opt2;
  opt2.step(p2, g2, 1e-3, 0.0);
  auto r2 = tensor_refs(p2);
  auto rb2 = tensor_refs(before2);
  for (size_t k = 0; k < r2.size(); ++k)
    for (long i = 0; i < std::min<long>(r2[k].size(), 4); ++i)
      EXPECT_NEAR(rb2[k].data[i] - r2[k].data[i], 1e-3, 1e-8);

  // Pure decay shrinks weights.
  Params p3 = init_params(matrix_layout(), 31);
  double w0 = p3.enc.w1(0, 0);
  Params g3 = zero_like(p3);
  AdamW opt3;
  opt3.step(p3, g3, 1e-3, 1e-2);
  EXPECT_NEAR(p3.enc.w1(0, 0), w0 * (1.0 - 1e-3 * 1e-2), 1e-15);
}

TEST(ValueNet, EmaArithmetic) {
  NetLayout layout = shared_layout();
  Params target = init_params(layout, 41);
  Params params = init_params(layout, 41);
  for (TensorRef& t : tensor_refs(target))
    std::fill(t.data, t.data + t.size(), 0.0);
  for (TensorRef& t : tensor_refs(params))
    std::fill(t.data, t.data + t.size(), 1.0);

  ema_update(target, params, 0.99);
  EXPECT_NEAR(target.enc.w1(0, 0), 0.01, 1e-15);

  Params t0 = init_params(layout, 43);
  Params snapshot = t0;
  ema_update(t0, params, 1.0);  // inertia one: unchanged
  EXPECT_DOUBLE_EQ(t0.enc.w1(3, 0), snapshot.enc.w1(3, 0));

  ema_update(t0, params, 0.0);  // inertia zero: copies
  EXPECT_DOUBLE_EQ(t0.enc.w1(3, 0), 1.0);
}

TEST(ValueNet, SignFlipMaskProperties) {
  Rng rng = make_rng(51);
  MatrixXd none = make_sign_mask(64, 100, 0.0, rng);
  EXPECT_DOUBLE_EQ(none.minCoeff(), 1.0);

  MatrixXd mask = make_sign_mask(64, 160, 1.0 / 16, rng);  // 10240 draws
  double flipped = (mask.array() < 0).count();
  double n = 64.0 * 160.0;
  double p = 1.0 / 16;
  double sigma = std::sqrt(n * p * (1 - p));
  EXPECT_NEAR(flipped, n * p, 3 * sigma);

  // Applying the same mask twice is the identity.
  MatrixXd twice = mask.array() * mask.array();
  EXPECT_DOUBLE_EQ(twice.minCoeff(), 1.0);
  EXPECT_DOUBLE_EQ(twice.maxCoeff(), 1.0);
}

TEST(ValueNet, SignFlipPerturbsForwardButNotParams) {
  Params p = init_params(matrix_layout(), 61);
  Rng rng = make_rng(62);
  randomize_head(p, rng);
  MatrixXd x1 = random_mat(5, 3, rng), x2 = random_mat(5, 3, rng);
  RowVectorXd g = RowVectorXd::Constant(3, 0.95);
  MatrixXd mask = make_sign_mask(64, 6, 0.5, rng);
  Perturb perturb{&mask, nullptr};
  Forward base = net_forward(p, x1, x2, g, g, nullptr, true);
  Forward pert = net_forward(p, x1, x2, g, g, &perturb, true);
  EXPECT_GT((base.q - pert.q).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_THROW(
      {
        Params grads = zero_like(p);
        net_param_grad(p, pert, base.q, grads);
      },
      NumericError);
}

TEST(ValueNet, InputGradUnderPerturbationsMatchesFiniteDifferences) {
  Params p = init_params(matrix_layout(), 71);
  Rng rng = make_rng(72);
  randomize_head(p, rng);
  const int b = 2;
  MatrixXd x1 = random_mat(5, b, rng), x2 = random_mat(5, b, rng);
  RowVectorXd g = RowVectorXd::Constant(b, 0.95);
  MatrixXd mask = make_sign_mask(64, 2 * b, 1.0 / 16, rng);
  auto noise = make_w2_noise(64, 2 * b, 0.1, rng);
  Perturb perturb{&mask, &noise};

  Forward fw = net_forward(p, x1, x2, g, g, &perturb);
  MatrixXd dx1, dx2;
  net_input_grad(p, fw, &perturb, true, true, &dx1, &dx2);
  const double h = 1e-6;
  for (int c = 0; c < b; ++c) {
    for (int r = 0; r < 5; ++r) {
      MatrixXd xp = x1, xm = x1;
      xp(r, c) += h;
      xm(r, c) -= h;
      double vp = net_forward(p, xp, x2, g, g, &perturb).mean_value(c);
      double vm = net_forward(p, xm, x2, g, g, &perturb).mean_value(c);
      EXPECT_LT(rel_err(dx1(r, c), (vp - vm) / (2 * h)), 1e-5);
    }
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  Params p = init_params(matrix_layout(), 81);
  Rng rng = make_rng(82);
  randomize_head(p, rng);
  CheckpointMeta meta;
  meta.game = "ipd";
  meta.formulation = "U";
  meta.seed = 81;
  meta.outer_loops = 123;
  meta.hyper["alpha"] = 25.0;
  meta.tags["opponent"] = "naive";

  std::string path = std::string(::testing::TempDir()) + "ckpt_roundtrip.json";
  save_checkpoint(p, meta, path);
  LoadedCheckpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.meta.game, "ipd");
  EXPECT_EQ(loaded.meta.tags["opponent"], "naive");
  EXPECT_EQ(loaded.meta.outer_loops, 123);
  EXPECT_DOUBLE_EQ(loaded.meta.hyper["alpha"], 25.0);

  auto ra = tensor_refs(p);
  auto rb = tensor_refs(loaded.params);
  for (size_t k = 0; k < ra.size(); ++k)
    for (long i = 0; i < ra[k].size(); ++i)
      EXPECT_EQ(ra[k].data[i], rb[k].data[i]) << ra[k].name;
  std::remove(path.c_str());
}

TEST(Checkpoint, RejectsCorruptInput) {
  Params p = init_params(shared_layout(), 91);
  CheckpointMeta meta;
  meta.game = "logistic";
  meta.formulation = "V";
  nlohmann::json j = params_to_json(p, meta);

  nlohmann::json bad_shape = j;
  bad_shape["arrays"][0]["shape"] = {1, 1};
  EXPECT_THROW(params_from_json(bad_shape), CheckpointError);

  nlohmann::json bad_version = j;
  bad_version["format_version"] = 999;
  EXPECT_THROW(params_from_json(bad_version), CheckpointError);

  nlohmann::json bad_value = j;
  bad_value["arrays"][2]["values"][0] = "not-a-number";
  EXPECT_THROW(params_from_json(bad_value), CheckpointError);

  EXPECT_THROW(load_checkpoint("/nonexistent/path.json"), MissingCheckpoint);
}

}  // namespace
}  // namespace meva
