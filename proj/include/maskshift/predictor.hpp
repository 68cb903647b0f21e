// The double-parameterized predictor g_{phi(m)}(x .* m) with two heads:
//  - LinearHead: an MLP maps the augmented mask [1, m] to head coefficients
//    [phi_0..phi_n]; the prediction is phi_0 + sum_i phi_i (x .* m)_i.
//  - QuadraticTheta: the explicit tensor head
//    yhat = sum_{i,j,k} theta_ijk x_k m_i m_j m_k with x_0 = m_0 = 1,
//    which makes phi(m) quadratic in the mask.
// Plus weighted mini-batch training and exact population-loss enumeration on
// finite-support instances (rational arithmetic available for exact checks).
#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "maskshift/linalg.hpp"
#include "maskshift/mask.hpp"
#include "maskshift/mlp.hpp"
#include "maskshift/rng.hpp"

namespace maskshift {

using Rational = boost::multiprecision::cpp_rational;

enum class HeadKind { LinearHead, QuadraticTheta };

struct PredictorModel {
  HeadKind head = HeadKind::LinearHead;
  std::size_t dim = 0;
  MlpParams phi_net;  // LinearHead only
  Vector theta;       // QuadraticTheta only, (n+1)^3 flat [i][j][k]
};

inline PredictorModel make_linear_head_model(std::size_t n, std::size_t depth,
                                             std::size_t width, Rng& rng) {
  PredictorModel m;
  m.head = HeadKind::LinearHead;
  m.dim = n;
  std::vector<std::size_t> widths;
  widths.push_back(n + 1);
  for (std::size_t l = 0; l < depth; ++l) widths.push_back(width);
  widths.push_back(n + 1);
  m.phi_net = make_mlp(widths, rng);
  return m;
}

inline PredictorModel make_quadratic_model(std::size_t n) {
  PredictorModel m;
  m.head = HeadKind::QuadraticTheta;
  m.dim = n;
  m.theta.assign((n + 1) * (n + 1) * (n + 1), 0.0);
  return m;
}

inline Vector& model_params(PredictorModel& m) {
  return m.head == HeadKind::LinearHead ? m.phi_net.theta : m.theta;
}
inline const Vector& model_params(const PredictorModel& m) {
  return m.head == HeadKind::LinearHead ? m.phi_net.theta : m.theta;
}

template <typename T>
inline T quadratic_predict_impl(const T* theta, std::size_t n, const T* x_aug,
                                const std::uint8_t* m_aug) {
  const std::size_t d = n + 1;
  T out = 0;
  for (std::size_t k = 0; k < d; ++k) {
    if (!m_aug[k]) continue;
    T phi_k = 0;
    for (std::size_t i = 0; i < d; ++i) {
      if (!m_aug[i]) continue;
      const T* slice = theta + (i * d) * d + k;
      T row = 0;
      for (std::size_t j = 0; j < d; ++j)
        if (m_aug[j]) row += slice[j * d];
      phi_k += row;
    }
    out += phi_k * x_aug[k];
  }
  return out;
}

// yhat = sum_{i,j,k} theta_ijk x_k m_i m_j m_k, with x_0 = m_0 = 1.
inline double quadratic_predict(const Vector& theta, std::size_t n, const Vector& x,
                                const Mask& m) {
  if (theta.size() != (n + 1) * (n + 1) * (n + 1) || x.size() != n || m.size() != n)
    throw DimensionError("quadratic_predict: shape mismatch");
  std::vector<std::uint8_t> m_aug(n + 1, 1);
  Vector x_aug(n + 1, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    m_aug[i + 1] = m[i];
    x_aug[i + 1] = m[i] ? x[i] : 0.0;
  }
  return quadratic_predict_impl(theta.data(), n, x_aug.data(), m_aug.data());
}

// Head coefficients phi(m) in R^{n+1}.
inline Vector phi_of_mask(const PredictorModel& model, const Mask& m) {
  if (m.size() != model.dim) throw DimensionError("phi_of_mask: mask width mismatch");
  const std::size_t d = model.dim + 1;
  if (model.head == HeadKind::LinearHead) {
    Vector in(d, 1.0);
    for (std::size_t i = 0; i < model.dim; ++i) in[i + 1] = m[i];
    return mlp_forward(model.phi_net, in);
  }
  Vector phi(d, 0.0);
  std::vector<std::uint8_t> m_aug(d, 1);
  for (std::size_t i = 0; i < model.dim; ++i) m_aug[i + 1] = m[i];
  for (std::size_t k = 0; k < d; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (!m_aug[i]) continue;
      for (std::size_t j = 0; j < d; ++j)
        if (m_aug[j]) acc += model.theta[(i * d + j) * d + k];
    }
    phi[k] = acc;
  }
  return phi;
}

// x must be zero-imputed; masked coordinates cannot influence the output
// (they are multiplied by the mask either way).
inline double predict(const PredictorModel& model, const Vector& x, const Mask& m) {
  if (x.size() != model.dim || m.size() != model.dim)
    throw DimensionError("predict: shape mismatch");
  if (model.head == HeadKind::QuadraticTheta)
    return quadratic_predict(model.theta, model.dim, x, m);
  const Vector phi = phi_of_mask(model, m);
  double out = phi[0];
  for (std::size_t i = 0; i < model.dim; ++i)
    if (m[i]) out += phi[i + 1] * x[i];
  return out;
}

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 64;
  double lr = 0.001;
};

struct TrainResult {
  Vector epoch_loss;
};

namespace detail {

// Reusable per-sample buffers for training.
struct PredictScratch {
  MlpWorkspace ws;
  Vector in;                       // augmented input [1, ...]
  Vector dout;                     // output gradient for the phi network
  std::vector<std::uint8_t> m_aug; // augmented mask
};

// Forward pass; leaves state in the scratch for a following gradient call.
inline double predict_forward(const PredictorModel& model, const double* x_row,
                              const std::uint8_t* m_row, PredictScratch& s) {
  const std::size_t n = model.dim;
  const std::size_t d = n + 1;
  s.in.resize(d);
  s.in[0] = 1.0;
  if (model.head == HeadKind::LinearHead) {
    for (std::size_t i = 0; i < n; ++i) s.in[i + 1] = m_row[i];
    mlp_forward_cached(model.phi_net, s.in, s.ws);
    const Vector& phi = s.ws.post.back();
    double yhat = phi[0];
    for (std::size_t i = 0; i < n; ++i)
      if (m_row[i]) yhat += phi[i + 1] * x_row[i];
    return yhat;
  }
  s.m_aug.assign(d, 1);
  for (std::size_t i = 0; i < n; ++i) {
    s.m_aug[i + 1] = m_row[i];
    s.in[i + 1] = m_row[i] ? x_row[i] : 0.0;
  }
  return quadratic_predict_impl(model.theta.data(), n, s.in.data(), s.m_aug.data());
}

// Accumulates scale * dyhat/dparams into grad, using the forward state above.
inline void accumulate_grad(const PredictorModel& model, const double* x_row,
                            const std::uint8_t* m_row, double scale,
                            PredictScratch& s, Vector& grad) {
  const std::size_t n = model.dim;
  const std::size_t d = n + 1;
  if (model.head == HeadKind::LinearHead) {
    s.dout.assign(d, 0.0);
    s.dout[0] = scale;
    for (std::size_t i = 0; i < n; ++i)
      if (m_row[i]) s.dout[i + 1] = scale * x_row[i];
    mlp_backward(model.phi_net, s.ws, s.dout, grad);
    return;
  }
  // QuadraticTheta: dyhat/dtheta_ijk = x_k m_i m_j m_k with augmented entries.
  for (std::size_t i = 0; i < d; ++i) {
    if (!s.m_aug[i]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      if (!s.m_aug[j]) continue;
      double* g = grad.data() + (i * d + j) * d;
      for (std::size_t k = 0; k < d; ++k)
        if (s.m_aug[k]) g[k] += scale * s.in[k];
    }
  }
}

}  // namespace detail

// Full-batch weighted loss sum_i w_i (y_i - yhat_i)^2 / sum_i w_i and, when
// grad is non-null, its gradient w.r.t. the flat parameter vector.
inline double predictor_loss(const PredictorModel& model, const MaskedDataset& data,
                             const Vector& weights, Vector* grad = nullptr) {
  if (weights.size() != data.size())
    throw DimensionError("predictor_loss: weight length mismatch");
  if (data.size() == 0) throw DegenerateError("predictor_loss: empty dataset");
  double total_w = 0.0;
  for (double w : weights) total_w += w;
  if (total_w <= 0.0) throw DegenerateError("predictor_loss: all-zero weights");
  if (grad) grad->assign(model_params(model).size(), 0.0);
  detail::PredictScratch scratch;
  const std::size_t n = data.dim();
  double sse = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double yhat =
        detail::predict_forward(model, data.x.row(i), &data.m[i * n], scratch);
    const double resid = yhat - data.y[i];
    sse += weights[i] * resid * resid;
    if (grad && weights[i] != 0.0)
      detail::accumulate_grad(model, data.x.row(i), &data.m[i * n],
                              2.0 * weights[i] * resid / total_w, scratch, *grad);
  }
  return sse / total_w;
}

// Weighted mini-batch regression: minimizes sum_i w_i (y_i - yhat_i)^2
// normalized by the batch weight sum; batch order reshuffled per epoch from
// the caller's stream. Returns the per-epoch loss trace (pre-step losses).
inline TrainResult train_predictor(PredictorModel& model, const MaskedDataset& data,
                                   const Vector& weights, const TrainConfig& cfg,
                                   Rng& rng) {
  if (weights.size() != data.size())
    throw DimensionError("train_predictor: weight length mismatch");
  if (cfg.batch_size <= 0) throw std::invalid_argument("train_predictor: batch size");
  TrainResult result;
  if (cfg.epochs <= 0) return result;
  if (data.size() == 0) throw DegenerateError("train_predictor: empty dataset");

  Vector& params = model_params(model);
  AdamState adam = make_adam(params.size(), cfg.lr);
  Vector grad(params.size(), 0.0);
  detail::PredictScratch scratch;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double total_w = 0.0;
  for (double w : weights) total_w += w;
  if (total_w <= 0.0) throw DegenerateError("train_predictor: all-zero weights");

  const std::size_t n = data.dim();
  result.epoch_loss.reserve(cfg.epochs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_sse = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      double batch_w = 0.0;
      for (std::size_t p = start; p < stop; ++p) batch_w += weights[order[p]];
      if (batch_w <= 0.0) continue;
      grad.assign(params.size(), 0.0);
      double batch_sse = 0.0;
      for (std::size_t p = start; p < stop; ++p) {
        const std::size_t i = order[p];
        const double wi = weights[i];
        const double yhat =
            detail::predict_forward(model, data.x.row(i), &data.m[i * n], scratch);
        const double resid = yhat - data.y[i];
        batch_sse += wi * resid * resid;
        if (wi != 0.0) {
          const double scale = 2.0 * wi * resid / batch_w;
          detail::accumulate_grad(model, data.x.row(i), &data.m[i * n], scale,
                                  scratch, grad);
        }
      }
      if (!std::isfinite(batch_sse))
        throw NumericalError("train_predictor: non-finite loss at epoch " +
                             std::to_string(epoch));
      epoch_sse += batch_sse;
      adam_step(params, adam, grad);
    }
    result.epoch_loss.push_back(epoch_sse / total_w);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite-support instances and exact population loss.

struct DiscreteInstance {
  std::size_t dim = 0;
  struct FeaturePoint {
    std::vector<Rational> x;
    Rational prob;
    Rational y;
  };
  struct MaskPoint {
    Mask m;
    Rational prob;
  };
  std::vector<FeaturePoint> support;
  std::vector<MaskPoint> train_masks;
  std::vector<MaskPoint> test_masks;
};

enum class Split { Train, Test };

namespace detail {

inline void validate_instance(const DiscreteInstance& inst) {
  if (inst.support.empty() || inst.train_masks.empty() || inst.test_masks.empty())
    throw std::invalid_argument("DiscreteInstance: empty support");
  Rational s = 0;
  for (const auto& p : inst.support) s += p.prob;
  if (s != 1) throw std::invalid_argument("DiscreteInstance: feature probs must sum to 1");
  for (const auto* masks : {&inst.train_masks, &inst.test_masks}) {
    Rational t = 0;
    for (const auto& mp : *masks) t += mp.prob;
    if (t != 1) throw std::invalid_argument("DiscreteInstance: mask probs must sum to 1");
  }
}

}  // namespace detail

// Exact expectation sum_{x,m} p(x) p(m) (y(x) - yhat(x .* m, m))^2 in
// rational arithmetic.
inline Rational enumerate_population_loss(const std::vector<Rational>& theta,
                                          const DiscreteInstance& inst, Split split) {
  detail::validate_instance(inst);
  const std::size_t n = inst.dim;
  const std::size_t d = n + 1;
  if (theta.size() != d * d * d)
    throw DimensionError("enumerate_population_loss: theta size mismatch");
  const auto& masks = split == Split::Train ? inst.train_masks : inst.test_masks;
  Rational loss = 0;
  std::vector<std::uint8_t> m_aug(d, 1);
  std::vector<Rational> x_aug(d, Rational(1));
  for (const auto& mp : masks) {
    for (std::size_t i = 0; i < n; ++i) m_aug[i + 1] = mp.m[i];
    for (const auto& fp : inst.support) {
      for (std::size_t i = 0; i < n; ++i)
        x_aug[i + 1] = mp.m[i] ? fp.x[i] : Rational(0);
      const Rational yhat =
          quadratic_predict_impl(theta.data(), n, x_aug.data(), m_aug.data());
      const Rational err = fp.y - yhat;
      loss += fp.prob * mp.prob * err * err;
    }
  }
  return loss;
}

// Double-precision route for arbitrary predictor models.
inline double enumerate_population_loss(const PredictorModel& model,
                                        const DiscreteInstance& inst, Split split) {
  detail::validate_instance(inst);
  const std::size_t n = inst.dim;
  const auto& masks = split == Split::Train ? inst.train_masks : inst.test_masks;
  double loss = 0.0;
  Vector x(n);
  for (const auto& mp : masks) {
    for (const auto& fp : inst.support) {
      for (std::size_t i = 0; i < n; ++i)
        x[i] = mp.m[i] ? static_cast<double>(fp.x[i]) : 0.0;
      const double err = static_cast<double>(fp.y) - predict(model, x, mp.m);
      loss += static_cast<double>(fp.prob) * static_cast<double>(mp.prob) * err * err;
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpointing: versioned text serialization of shapes + parameters.

inline void save_model(const PredictorModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << "maskshift-model v1\n";
  out << "head " << (model.head == HeadKind::LinearHead ? "linear" : "quadratic")
      << "\ndim " << model.dim << '\n';
  char buf[40];
  if (model.head == HeadKind::LinearHead) {
    out << "widths " << model.phi_net.widths.size();
    for (std::size_t w : model.phi_net.widths) out << ' ' << w;
    out << '\n';
  }
  const Vector& params = model_params(model);
  out << "params " << params.size() << '\n';
  for (double v : params) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf << '\n';
  }
}

inline PredictorModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "maskshift-model v1")
    throw std::runtime_error("load_model: unrecognized version tag");
  PredictorModel model;
  std::string tag, kind;
  in >> tag >> kind;
  if (tag != "head" || (kind != "linear" && kind != "quadratic"))
    throw std::runtime_error("load_model: bad head line");
  model.head = kind == "linear" ? HeadKind::LinearHead : HeadKind::QuadraticTheta;
  in >> tag >> model.dim;
  if (tag != "dim") throw std::runtime_error("load_model: bad dim line");
  if (model.head == HeadKind::LinearHead) {
    std::size_t count = 0;
    in >> tag >> count;
    if (tag != "widths" || count < 2) throw std::runtime_error("load_model: bad widths");
    model.phi_net.widths.resize(count);
    for (auto& w : model.phi_net.widths) in >> w;
  }
  std::size_t n_params = 0;
  in >> tag >> n_params;
  if (tag != "params") throw std::runtime_error("load_model: bad params line");
  Vector params(n_params);
  for (double& v : params) in >> v;
  if (!in) throw std::runtime_error("load_model: truncated parameter block");
  if (model.head == HeadKind::LinearHead) {
    if (n_params != mlp_param_count(model.phi_net.widths))
      throw std::runtime_error("load_model: parameter count mismatch");
    model.phi_net.theta = std::move(params);
  } else {
    const std::size_t d = model.dim + 1;
    if (n_params != d * d * d)
      throw std::runtime_error("load_model: parameter count mismatch");
    model.theta = std::move(params);
  }
  return model;
}

inline void write_loss_trace_csv(const Vector& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_loss_trace_csv: cannot open " + path);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e)
    out << e << ',' << format_double(trace[e]) << '\n';
}

}  // namespace maskshift
