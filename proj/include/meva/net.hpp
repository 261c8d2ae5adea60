#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "meva/common.hpp"
#include "meva/rng.hpp"

namespace meva {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// Activations are laid out features x columns; a column is one batch item.
// Both players share the column pipeline: player-1 items first, player-2
// items second.

struct NetLayout {
  int n_in = 1;       // policy parameters per player; +1 input for gamma
  int hidden = 64;
  int head_dim = 16;  // quantile count M (1 for point estimates, N for COLA)
  bool shared_players = true;  // no per-player scale-shift when set
  bool final_tanh = false;     // decoder's final nonlinearity (tanh enables
                               // sign-flip exploration)
  bool operator==(const NetLayout&) const = default;
};

// One MLP stage: layer-normalized GELU layer, gated residual block,
// layer-normalized final layer.
struct StageParams {
  MatrixXd w1; VectorXd b1, ln1_g, ln1_b;
  MatrixXd wr; VectorXd br, lnr_g, lnr_b, gate_raw;
  MatrixXd w2; VectorXd b2, ln2_g, ln2_b;
};

struct Params {
  NetLayout layout;
  StageParams enc, dec;
  std::array<VectorXd, 2> ss_scale, ss_shift;  // unshared elementwise affine
  MatrixXd head_w;
  VectorXd head_b;
};

struct TensorRef {
  std::string name;
  double* data;
  long rows, cols;
  long size() const { return rows * cols; }
};

namespace detail {
inline void stage_refs(const std::string& prefix, StageParams& s,
                       std::vector<TensorRef>& out) {
  auto add = [&](const std::string& n, MatrixXd& m) {
    out.push_back({prefix + n, m.data(), m.rows(), m.cols()});
  };
  auto addv = [&](const std::string& n, VectorXd& v) {
    out.push_back({prefix + n, v.data(), v.rows(), 1});
  };
  add("w1", s.w1); addv("b1", s.b1); addv("ln1_g", s.ln1_g); addv("ln1_b", s.ln1_b);
  add("wr", s.wr); addv("br", s.br); addv("lnr_g", s.lnr_g); addv("lnr_b", s.lnr_b);
  addv("gate", s.gate_raw);
  add("w2", s.w2); addv("b2", s.b2); addv("ln2_g", s.ln2_g); addv("ln2_b", s.ln2_b);
}
}  // namespace detail

inline std::vector<TensorRef> tensor_refs(Params& p) {
  std::vector<TensorRef> out;
  detail::stage_refs("enc.", p.enc, out);
  detail::stage_refs("dec.", p.dec, out);
  if (!p.layout.shared_players) {
    for (int i = 0; i < 2; ++i) {
      out.push_back({"ss_scale" + std::to_string(i + 1),
                     p.ss_scale[i].data(), p.ss_scale[i].rows(), 1});
      out.push_back({"ss_shift" + std::to_string(i + 1),
                     p.ss_shift[i].data(), p.ss_shift[i].rows(), 1});
    }
  }
  out.push_back({"head_w", p.head_w.data(), p.head_w.rows(), p.head_w.cols()});
  out.push_back({"head_b", p.head_b.data(), p.head_b.rows(), 1});
  return out;
}

namespace detail {
inline StageParams make_stage(int in, int h) {
  StageParams s;
  s.w1 = MatrixXd::Zero(h, in); s.b1 = VectorXd::Zero(h);
  s.ln1_g = VectorXd::Ones(h);  s.ln1_b = VectorXd::Zero(h);
  s.wr = MatrixXd::Zero(h, h);  s.br = VectorXd::Zero(h);
  s.lnr_g = VectorXd::Ones(h);  s.lnr_b = VectorXd::Zero(h);
  s.gate_raw = VectorXd::Constant(h, 2.0);  // near pass-through at init
  s.w2 = MatrixXd::Zero(h, h);  s.b2 = VectorXd::Zero(h);
  s.ln2_g = VectorXd::Ones(h);  s.ln2_b = VectorXd::Zero(h);
  return s;
}
}  // namespace detail

// Fan-in-scaled random init for hidden affine layers; the quantile head and
// all biases start at zero, so a fresh model predicts the zero vector.
inline Params init_params(const NetLayout& layout, std::uint64_t seed) {
  Params p;
  p.layout = layout;
  const int h = layout.hidden;
  p.enc = detail::make_stage(layout.n_in + 1, h);
  p.dec = detail::make_stage(2 * h, h);
  for (int i = 0; i < 2; ++i) {
    p.ss_scale[i] = VectorXd::Ones(h);
    p.ss_shift[i] = VectorXd::Zero(h);
  }
  p.head_w = MatrixXd::Zero(layout.head_dim, h);
  p.head_b = VectorXd::Zero(layout.head_dim);

  Rng rng = make_rng(seed, 0x4e37);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (MatrixXd* w : {&p.enc.w1, &p.enc.wr, &p.enc.w2,
                      &p.dec.w1, &p.dec.wr, &p.dec.w2}) {
    double scale = 1.0 / std::sqrt(static_cast<double>(w->cols()));
    for (long r = 0; r < w->rows(); ++r)
      for (long c = 0; c < w->cols(); ++c) (*w)(r, c) = scale * normal(rng);
  }
  return p;
}

inline Params zero_like(const Params& src) {
  Params g = src;
  for (TensorRef& t : tensor_refs(g))
    std::fill(t.data, t.data + t.size(), 0.0);
  return g;
}

// Per-trajectory perturbation of the decoder output layer (exploration).
struct Perturb {
  const MatrixXd* sign_mask = nullptr;  // hidden x columns, entries +-1
  const std::vector<MatrixXd>* w2_noise = nullptr;  // per-column delta on dec.w2
};

namespace detail {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

struct StageCache {
  MatrixXd x_in;
  MatrixXd n1, l1, c1, h1; RowVectorXd is1;
  MatrixXd nr, lr, cr, tr; RowVectorXd isr;
  MatrixXd r;
  MatrixXd n2, l2, c2, z; RowVectorXd is2;
};

inline void layer_norm(const MatrixXd& a, MatrixXd& n, RowVectorXd& istd) {
  RowVectorXd mu = a.colwise().mean();
  n = a.rowwise() - mu;
  RowVectorXd var = n.array().square().colwise().mean();
  istd = (var.array() + kLnEps).rsqrt();
  n = n.array().rowwise() * istd.array();
}

inline MatrixXd gelu_cdf(const MatrixXd& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  });
}

inline MatrixXd gelu_deriv(const MatrixXd& l, const MatrixXd& c) {
  return c.array() +
         l.array() * (-0.5 * l.array().square()).exp() * kInvSqrt2Pi;
}

// dL flows into the affine layer-norm output l = g (.) n + b.
inline MatrixXd ln_backward(const MatrixXd& dl, const MatrixXd& n,
                            const RowVectorXd& istd, const VectorXd& gain,
                            VectorXd* dgain, VectorXd* dbias) {
  if (dgain) {
    *dgain += (dl.array() * n.array()).rowwise().sum().matrix();
    *dbias += dl.rowwise().sum();
  }
  MatrixXd dn = dl.array().colwise() * gain.array();
  RowVectorXd mdn = dn.colwise().mean();
  RowVectorXd mdnn = (dn.array() * n.array()).colwise().mean();
  MatrixXd da = ((dn.array().rowwise() - mdn.array()) -
                 n.array().rowwise() * mdnn.array())
                    .rowwise() * istd.array();
  return da;
}

// Consumes c.x_in, which the caller fills in place.
inline void stage_forward(const StageParams& s, bool final_tanh,
                          StageCache& c,
                          const std::vector<MatrixXd>* w2_noise = nullptr,
                          long noise_col0 = 0) {
  MatrixXd a = (s.w1 * c.x_in).colwise() + s.b1;
  layer_norm(a, c.n1, c.is1);
  c.l1 = (c.n1.array().colwise() * s.ln1_g.array()).matrix().colwise() + s.ln1_b;
  c.c1 = gelu_cdf(c.l1);
  c.h1 = c.l1.array() * c.c1.array();

  a = (s.wr * c.h1).colwise() + s.br;
  layer_norm(a, c.nr, c.isr);
  c.lr = (c.nr.array().colwise() * s.lnr_g.array()).matrix().colwise() + s.lnr_b;
  c.cr = gelu_cdf(c.lr);
  c.tr = c.lr.array() * c.cr.array();

  VectorXd g = s.gate_raw.unaryExpr([](double v) {
    return 1.0 / (1.0 + std::exp(-v));
  });
  c.r = (c.h1.array().colwise() * g.array() +
         c.tr.array().colwise() * (1.0 - g.array())).matrix();

  a = (s.w2 * c.r).colwise() + s.b2;
  if (w2_noise)
    for (long j = 0; j < a.cols(); ++j)
      a.col(j) += (*w2_noise)[noise_col0 + j] * c.r.col(j);
  layer_norm(a, c.n2, c.is2);
  c.l2 = (c.n2.array().colwise() * s.ln2_g.array()).matrix().colwise() + s.ln2_b;
  if (final_tanh) {
    // tanh through the vectorized exp; saturates cleanly at +-1.
    c.z = 1.0 - 2.0 / ((2.0 * c.l2.array()).exp() + 1.0);
  } else {
    c.c2 = gelu_cdf(c.l2);
    c.z = c.l2.array() * c.c2.array();
  }
}

struct StageGrads {
  StageParams* g = nullptr;  // accumulate parameter grads when set
};

// Backward over a contiguous column range [col0, col0+cols). Returns the
// gradient with respect to the stage input over that range.
inline MatrixXd stage_backward(const StageParams& s, const StageCache& c,
                               bool final_tanh, const MatrixXd& dz, long col0,
                               long cols, StageParams* grads,
                               const std::vector<MatrixXd>* w2_noise = nullptr,
                               long noise_col0 = 0) {
  auto N1 = c.n1.middleCols(col0, cols);
  auto L1 = c.l1.middleCols(col0, cols);
  auto C1 = c.c1.middleCols(col0, cols);
  auto H1 = c.h1.middleCols(col0, cols);
  auto NR = c.nr.middleCols(col0, cols);
  auto LR = c.lr.middleCols(col0, cols);
  auto CR = c.cr.middleCols(col0, cols);
  auto TR = c.tr.middleCols(col0, cols);
  auto R = c.r.middleCols(col0, cols);
  auto N2 = c.n2.middleCols(col0, cols);
  auto L2 = c.l2.middleCols(col0, cols);
  auto Z = c.z.middleCols(col0, cols);
  auto X = c.x_in.middleCols(col0, cols);

  MatrixXd dl2;
  if (final_tanh) {
    dl2 = dz.array() * (1.0 - Z.array().square());
  } else {
    dl2 = dz.array() * gelu_deriv(L2, c.c2.middleCols(col0, cols)).array();
  }
  MatrixXd da2 = ln_backward(dl2, N2, c.is2.middleCols(col0, cols), s.ln2_g,
                             grads ? &grads->ln2_g : nullptr,
                             grads ? &grads->ln2_b : nullptr);
  if (grads) {
    grads->w2 += da2 * R.transpose();
    grads->b2 += da2.rowwise().sum();
  }
  MatrixXd dr = s.w2.transpose() * da2;
  if (w2_noise)
    for (long j = 0; j < cols; ++j)
      dr.col(j) += (*w2_noise)[noise_col0 + col0 + j].transpose() * da2.col(j);

  VectorXd g = s.gate_raw.unaryExpr([](double v) {
    return 1.0 / (1.0 + std::exp(-v));
  });
  MatrixXd dh1 = dr.array().colwise() * g.array();
  MatrixXd dtr = dr.array().colwise() * (1.0 - g.array());
  if (grads) {
    VectorXd dgate = ((H1 - TR).array() * dr.array()).rowwise().sum();
    grads->gate_raw +=
        (dgate.array() * g.array() * (1.0 - g.array())).matrix();
  }

  MatrixXd dlr = dtr.array() * gelu_deriv(LR, CR).array();
  MatrixXd dar = ln_backward(dlr, NR, c.isr.middleCols(col0, cols), s.lnr_g,
                             grads ? &grads->lnr_g : nullptr,
                             grads ? &grads->lnr_b : nullptr);
  if (grads) {
    grads->wr += dar * H1.transpose();
    grads->br += dar.rowwise().sum();
  }
  dh1 += s.wr.transpose() * dar;

  MatrixXd dl1 = dh1.array() * gelu_deriv(L1, C1).array();
  MatrixXd da1 = ln_backward(dl1, N1, c.is1.middleCols(col0, cols), s.ln1_g,
                             grads ? &grads->ln1_g : nullptr,
                             grads ? &grads->ln1_b : nullptr);
  if (grads) {
    grads->w1 += da1 * X.transpose();
    grads->b1 += da1.rowwise().sum();
  }
  return s.w1.transpose() * da1;
}

}  // namespace detail

struct Forward {
  detail::StageCache enc, dec;
  MatrixXd z1, z2;  // raw encodings before scale-shift, hidden x batch
  MatrixXd f;       // final hidden after optional sign mask, hidden x 2*batch
  MatrixXd q;       // head outputs when requested, head_dim x 2*batch
  RowVectorXd mean_value;  // mean over head outputs per column, 2*batch
  long batch = 0;
  bool perturbed = false;
};

// x1, x2: n_in x B. gamma1, gamma2: 1 x B conditioning inputs. Writing into
// a reused Forward keeps the buffers allocated across steps, which matters
// in the training loops.
inline void net_forward_into(const Params& p, const MatrixXd& x1,
                             const MatrixXd& x2, const RowVectorXd& gamma1,
                             const RowVectorXd& gamma2, const Perturb* perturb,
                             bool want_quantiles, Forward& fw) {
  const int h = p.layout.hidden;
  const long b = x1.cols();
  fw.batch = b;
  fw.perturbed = perturb && (perturb->sign_mask || perturb->w2_noise);

  fw.enc.x_in.resize(p.layout.n_in + 1, 2 * b);
  fw.enc.x_in.block(0, 0, p.layout.n_in, b) = x1;
  fw.enc.x_in.block(0, b, p.layout.n_in, b) = x2;
  fw.enc.x_in.block(p.layout.n_in, 0, 1, b) = gamma1;
  fw.enc.x_in.block(p.layout.n_in, b, 1, b) = gamma2;
  detail::stage_forward(p.enc, /*final_tanh=*/false, fw.enc);

  fw.z1 = fw.enc.z.leftCols(b);
  fw.z2 = fw.enc.z.rightCols(b);
  MatrixXd zs1 = fw.z1, zs2 = fw.z2;
  if (!p.layout.shared_players) {
    zs1 = (fw.z1.array().colwise() * p.ss_scale[0].array()).matrix().colwise() +
          p.ss_shift[0];
    zs2 = (fw.z2.array().colwise() * p.ss_scale[1].array()).matrix().colwise() +
          p.ss_shift[1];
  }
  fw.dec.x_in.resize(2 * h, 2 * b);
  fw.dec.x_in.block(0, 0, h, b) = zs1;
  fw.dec.x_in.block(h, 0, h, b) = zs2;
  fw.dec.x_in.block(0, b, h, b) = zs2;
  fw.dec.x_in.block(h, b, h, b) = zs1;
  detail::stage_forward(p.dec, p.layout.final_tanh, fw.dec,
                        perturb ? perturb->w2_noise : nullptr, 0);

  if (perturb && perturb->sign_mask)
    fw.f = fw.dec.z.array() * perturb->sign_mask->array();
  else
    fw.f = fw.dec.z;

  VectorXd u = p.head_w.colwise().mean();
  fw.mean_value = (u.transpose() * fw.f).array() + p.head_b.mean();
  if (want_quantiles) fw.q = (p.head_w * fw.f).colwise() + p.head_b;
}

inline Forward net_forward(const Params& p, const MatrixXd& x1,
                           const MatrixXd& x2, const RowVectorXd& gamma1,
                           const RowVectorXd& gamma2,
                           const Perturb* perturb = nullptr,
                           bool want_quantiles = false) {
  Forward fw;
  net_forward_into(p, x1, x2, gamma1, gamma2, perturb, want_quantiles, fw);
  return fw;
}

// Gradient of each player's mean head output with respect to its own policy
// input: d mean_i / d x_i, n_in x B per requested player.
inline void net_input_grad(const Params& p, const Forward& fw,
                           const Perturb* perturb, bool need_p1, bool need_p2,
                           MatrixXd* dx1, MatrixXd* dx2) {
  const int h = p.layout.hidden;
  const long b = fw.batch;
  const long col0 = need_p1 ? 0 : b;
  const long cols = (need_p1 ? b : 0) + (need_p2 ? b : 0);
  if (cols == 0) return;

  VectorXd u = p.head_w.colwise().mean();
  MatrixXd df = u.replicate(1, cols);
  if (perturb && perturb->sign_mask)
    df.array() *= perturb->sign_mask->middleCols(col0, cols).array();

  MatrixXd ddec_in = detail::stage_backward(
      p.dec, fw.dec, p.layout.final_tanh, df, col0, cols, nullptr,
      perturb ? perturb->w2_noise : nullptr, 0);

  // Own encoding sits in the top half of each player's decoder input.
  MatrixXd dz(h, cols);
  dz = ddec_in.topRows(h);
  if (!p.layout.shared_players) {
    long off = 0;
    if (need_p1) {
      dz.middleCols(0, b).array().colwise() *= p.ss_scale[0].array();
      off = b;
    }
    if (need_p2)
      dz.middleCols(off, b).array().colwise() *= p.ss_scale[1].array();
  }
  MatrixXd denc_in = detail::stage_backward(p.enc, fw.enc, false, dz, col0,
                                            cols, nullptr);
  long off = 0;
  if (need_p1 && dx1) {
    *dx1 = denc_in.block(0, 0, p.layout.n_in, b);
    off = b;
  } else if (need_p1) {
    off = b;
  }
  if (need_p2 && dx2) *dx2 = denc_in.block(0, off, p.layout.n_in, b);
}

// Parameter gradients for a loss with upstream gradient dq on the head
// outputs (head_dim x 2*batch). States are constants: nothing flows into x.
inline void net_param_grad(const Params& p, const Forward& fw,
                           const MatrixXd& dq, Params& grads) {
  if (fw.perturbed)
    throw NumericError("param_grad on a perturbed forward pass");
  const int h = p.layout.hidden;
  const long b = fw.batch;

  grads.head_w += dq * fw.f.transpose();
  grads.head_b += dq.rowwise().sum();
  MatrixXd df = p.head_w.transpose() * dq;

  MatrixXd ddec_in = detail::stage_backward(p.dec, fw.dec, p.layout.final_tanh,
                                            df, 0, 2 * b, &grads.dec);

  MatrixXd dzs1 = ddec_in.block(0, 0, h, b) + ddec_in.block(h, b, h, b);
  MatrixXd dzs2 = ddec_in.block(h, 0, h, b) + ddec_in.block(0, b, h, b);
  MatrixXd dz(h, 2 * b);
  if (!p.layout.shared_players) {
    grads.ss_scale[0] += (dzs1.array() * fw.z1.array()).rowwise().sum().matrix();
    grads.ss_shift[0] += dzs1.rowwise().sum();
    grads.ss_scale[1] += (dzs2.array() * fw.z2.array()).rowwise().sum().matrix();
    grads.ss_shift[1] += dzs2.rowwise().sum();
    dz.leftCols(b) = dzs1.array().colwise() * p.ss_scale[0].array();
    dz.rightCols(b) = dzs2.array().colwise() * p.ss_scale[1].array();
  } else {
    dz.leftCols(b) = dzs1;
    dz.rightCols(b) = dzs2;
  }
  detail::stage_backward(p.enc, fw.enc, false, dz, 0, 2 * b, &grads.enc);
}

// Decoupled-weight-decay adaptive optimizer; beta = (0.9, 0.999), eps 1e-8.
struct AdamW {
  std::vector<double> m, v;
  long t = 0;

  void step(Params& p, Params& grads, double lr, double weight_decay) {
    auto prefs = tensor_refs(p);
    auto grefs = tensor_refs(grads);
    long total = 0;
    for (const TensorRef& r : prefs) total += r.size();
    if (m.empty()) { m.assign(total, 0.0); v.assign(total, 0.0); }
    ++t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    long off = 0;
    for (size_t k = 0; k < prefs.size(); ++k) {
      double* w = prefs[k].data;
      const double* g = grefs[k].data;
      for (long i = 0; i < prefs[k].size(); ++i) {
        m[off + i] = b1 * m[off + i] + (1 - b1) * g[i];
        v[off + i] = b2 * v[off + i] + (1 - b2) * g[i] * g[i];
        double mhat = m[off + i] / c1;
        double vhat = v[off + i] / c2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
      }
      off += prefs[k].size();
    }
  }
};

// target <- target + (1 - rho) (params - target)
inline void ema_update(Params& target, const Params& params, double rho) {
  auto trefs = tensor_refs(target);
  Params& mut = const_cast<Params&>(params);
  auto prefs = tensor_refs(mut);
  for (size_t k = 0; k < trefs.size(); ++k)
    for (long i = 0; i < trefs[k].size(); ++i)
      trefs[k].data[i] += (1.0 - rho) * (prefs[k].data[i] - trefs[k].data[i]);
}

// Independent per-unit sign flips; held fixed for a whole exploration
// trajectory.
inline MatrixXd make_sign_mask(int hidden, long cols, double flip_prob,
                               Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  MatrixXd mask(hidden, cols);
  for (long j = 0; j < cols; ++j)
    for (int i = 0; i < hidden; ++i)
      mask(i, j) = unif(rng) < flip_prob ? -1.0 : 1.0;
  return mask;
}

inline std::vector<MatrixXd> make_w2_noise(int hidden, long cols, double sigma,
                                           Rng& rng) {
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<MatrixXd> noise(cols);
  for (long j = 0; j < cols; ++j) {
    noise[j] = MatrixXd(hidden, hidden);
    for (int r = 0; r < hidden; ++r)
      for (int c = 0; c < hidden; ++c) noise[j](r, c) = normal(rng);
  }
  return noise;
}

}  // namespace meva
