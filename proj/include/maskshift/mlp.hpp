// Small dense MLPs with reverse-mode gradients and an Adam optimizer.
//
// Parameters live in one flat vector (per layer: row-major weight matrix,
// then bias). The flat layout keeps Adam updates and finite-difference
// probing trivial. Hidden layers use the rectifier; the output layer is
// affine.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "maskshift/linalg.hpp"
#include "maskshift/rng.hpp"

namespace maskshift {

enum class Activation { Rectifier };

struct MlpParams {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation activation = Activation::Rectifier;
  Vector theta;

  std::size_t layer_count() const { return widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
};

inline std::size_t mlp_param_count(const std::vector<std::size_t>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    n += widths[l + 1] * widths[l] + widths[l + 1];
  return n;
}

// Offset of layer l's weight block; biases follow the weights.
inline std::size_t mlp_layer_offset(const std::vector<std::size_t>& widths,
                                    std::size_t layer) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l)
    off += widths[l + 1] * widths[l] + widths[l + 1];
  return off;
}

// Uniform init on +-sqrt(6 / (fan_in + fan_out)); zero biases.
inline MlpParams make_mlp(std::vector<std::size_t> widths, Rng& rng) {
  if (widths.size() < 2) throw DimensionError("make_mlp: need at least two widths");
  for (std::size_t w : widths)
    if (w == 0) throw DimensionError("make_mlp: zero-width layer");
  MlpParams p;
  p.widths = std::move(widths);
  p.theta.assign(mlp_param_count(p.widths), 0.0);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < p.widths.size(); ++l) {
    const std::size_t fan_in = p.widths[l];
    const std::size_t fan_out = p.widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_out * fan_in; ++i)
      p.theta[off + i] = rng.uniform(-bound, bound);
    off += fan_out * fan_in + fan_out;  // biases stay zero
  }
  return p;
}

// Per-sample forward cache, reusable across calls to avoid allocation churn.
struct MlpWorkspace {
  std::vector<Vector> pre;    // pre-activation per layer
  std::vector<Vector> post;   // post-activation per layer; post[0] is the input
  std::vector<Vector> delta;  // scratch for backward
};

inline void mlp_forward_cached(const MlpParams& p, const Vector& input,
                               MlpWorkspace& ws) {
  if (input.size() != p.input_width())
    throw DimensionError("mlp_forward: input width mismatch");
  const std::size_t layers = p.layer_count();
  ws.pre.resize(layers);
  ws.post.resize(layers + 1);
  ws.post[0] = input;
  std::size_t off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in_w = p.widths[l];
    const std::size_t out_w = p.widths[l + 1];
    const double* w = p.theta.data() + off;
    const double* b = w + out_w * in_w;
    ws.pre[l].assign(out_w, 0.0);
    const Vector& x = ws.post[l];
    for (std::size_t i = 0; i < out_w; ++i) {
      const double* row = w + i * in_w;
      double acc = b[i];
      for (std::size_t j = 0; j < in_w; ++j) acc += row[j] * x[j];
      ws.pre[l][i] = acc;
    }
    ws.post[l + 1] = ws.pre[l];
    if (l + 1 < layers)
      for (double& v : ws.post[l + 1]) v = v > 0.0 ? v : 0.0;
    off += out_w * in_w + out_w;
  }
}

inline Vector mlp_forward(const MlpParams& p, const Vector& input) {
  MlpWorkspace ws;
  mlp_forward_cached(p, input, ws);
  return ws.post.back();
}

// Accumulates dLoss/dtheta into grad (+=) given dLoss/doutput for the sample
// most recently run through mlp_forward_cached with this workspace.
inline void mlp_backward(const MlpParams& p, MlpWorkspace& ws,
                         const Vector& dout, Vector& grad) {
  const std::size_t layers = p.layer_count();
  ws.delta.resize(layers);
  ws.delta[layers - 1] = dout;
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in_w = p.widths[l];
    const std::size_t out_w = p.widths[l + 1];
    const std::size_t off = mlp_layer_offset(p.widths, l);
    const Vector& d = ws.delta[l];
    const Vector& x = ws.post[l];
    double* gw = grad.data() + off;
    double* gb = gw + out_w * in_w;
    for (std::size_t i = 0; i < out_w; ++i) {
      const double di = d[i];
      if (di != 0.0) {
        double* grow = gw + i * in_w;
        for (std::size_t j = 0; j < in_w; ++j) grow[j] += di * x[j];
      }
      gb[i] += di;
    }
    if (l > 0) {
      const double* w = p.theta.data() + off;
      Vector& dprev = ws.delta[l - 1];
      dprev.assign(in_w, 0.0);
      for (std::size_t i = 0; i < out_w; ++i) {
        const double di = d[i];
        if (di == 0.0) continue;
        const double* row = w + i * in_w;
        for (std::size_t j = 0; j < in_w; ++j) dprev[j] += di * row[j];
      }
      const Vector& pre_prev = ws.pre[l - 1];
      for (std::size_t j = 0; j < in_w; ++j)
        if (pre_prev[j] <= 0.0) dprev[j] = 0.0;
    }
  }
}

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState make_adam(std::size_t n, double lr = 0.001) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

inline void adam_step(Vector& theta, AdamState& s, const Vector& grad) {
  if (theta.size() != s.m.size() || grad.size() != theta.size())
    throw DimensionError("adam_step: shape mismatch");
  s.step += 1;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grad[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
    theta[i] -= s.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.eps);
  }
}

// Weighted mean squared error: sum_i w_i |y_i - yhat_i|^2 / sum_i w_i.
inline double weighted_mse_loss(const MlpParams& p, const Matrix& inputs,
                                const Matrix& targets, const Vector& weights) {
  if (inputs.rows() == 0) throw DegenerateError("weighted_mse: empty batch");
  if (inputs.rows() != targets.rows() || weights.size() != inputs.rows())
    throw DimensionError("weighted_mse: batch size mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw DegenerateError("weighted_mse: negative weight");
    wsum += w;
  }
  if (wsum == 0.0) throw DegenerateError("weighted_mse: all-zero weights");
  MlpWorkspace ws;
  double loss = 0.0;
  Vector x(inputs.cols());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    x.assign(inputs.row(i), inputs.row(i) + inputs.cols());
    mlp_forward_cached(p, x, ws);
    const Vector& out = ws.post.back();
    double e = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double d = out[k] - targets(i, k);
      e += d * d;
    }
    loss += weights[i] * e;
  }
  return loss / wsum;
}

// Gradient of the loss above w.r.t. the flat parameter vector.
inline Vector weighted_mse_gradient(const MlpParams& p, const Matrix& inputs,
                                    const Matrix& targets, const Vector& weights,
                                    double* loss_out = nullptr) {
  if (inputs.rows() == 0) throw DegenerateError("weighted_mse: empty batch");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw DegenerateError("weighted_mse: negative weight");
    wsum += w;
  }
  if (wsum == 0.0) throw DegenerateError("weighted_mse: all-zero weights");
  Vector grad(p.theta.size(), 0.0);
  MlpWorkspace ws;
  Vector x(inputs.cols());
  Vector dout;
  double loss = 0.0;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    if (weights[i] == 0.0) continue;
    x.assign(inputs.row(i), inputs.row(i) + inputs.cols());
    mlp_forward_cached(p, x, ws);
    const Vector& out = ws.post.back();
    dout.resize(out.size());
    double e = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double d = out[k] - targets(i, k);
      e += d * d;
      dout[k] = 2.0 * weights[i] * d / wsum;
    }
    loss += weights[i] * e;
    mlp_backward(p, ws, dout, grad);
  }
  if (loss_out) *loss_out = loss / wsum;
  return grad;
}

// One Adam step on the weighted MSE of the batch; returns the pre-step loss.
inline double weighted_mse_step(MlpParams& p, AdamState& s, const Matrix& inputs,
                                const Matrix& targets, const Vector& weights) {
  double loss = 0.0;
  const Vector grad = weighted_mse_gradient(p, inputs, targets, weights, &loss);
  adam_step(p.theta, s, grad);
  return loss;
}

// Max over parameters of |analytic - central difference| / (|a| + |fd| + eps).
inline double gradient_check(const MlpParams& p, const Matrix& inputs,
                             const Matrix& targets, const Vector& weights,
                             double h) {
  if (!(h > 0.0)) throw std::invalid_argument("gradient_check: h must be > 0");
  const Vector analytic = weighted_mse_gradient(p, inputs, targets, weights);
  MlpParams probe = p;
  double worst = 0.0;
  for (std::size_t i = 0; i < p.theta.size(); ++i) {
    const double orig = probe.theta[i];
    probe.theta[i] = orig + h;
    const double up = weighted_mse_loss(probe, inputs, targets, weights);
    probe.theta[i] = orig - h;
    const double down = weighted_mse_loss(probe, inputs, targets, weights);
    probe.theta[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double rel =
        std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + std::abs(fd) + 1e-12);
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace maskshift
