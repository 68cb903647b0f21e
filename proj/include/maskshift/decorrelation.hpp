// Dependence measurement and sample reweighting.
//
// Dependence between feature entries, mask entries, and feature-mask pairs is
// measured by partial cross-covariance matrices of Random Fourier Features,
// with the sample-selection rules adapted to incomplete data:
//   X_k,X_l : summed over samples observing both, inner means over the
//             samples observing each variable respectively;
//   X_k,M_l : summed over samples observing X_k, mask-side mean over all;
//   M_k,M_l : summed over all samples.
// Per-sample weights are optimized (Adam on softplus free parameters,
// analytic gradients) to minimize the squared Frobenius norms of these
// matrices plus a weight-dispersion regularizer.
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskshift/linalg.hpp"
#include "maskshift/mask.hpp"
#include "maskshift/mlp.hpp"
#include "maskshift/rng.hpp"

namespace maskshift {

struct RffBank {
  Vector omega;  // ~ N(0,1)
  Vector beta;   // ~ Uniform[0, 2pi)
};

struct RffBanks {
  std::size_t q = 5;
  std::vector<RffBank> feature;  // one bank per feature variable
  std::vector<RffBank> mask;     // one bank per mask variable
};

inline RffBank make_rff_bank(std::size_t q, Rng& rng) {
  RffBank b;
  b.omega.resize(q);
  b.beta.resize(q);
  for (double& v : b.omega) v = rng.normal();
  for (double& v : b.beta) v = rng.uniform(0.0, 6.283185307179586476925286766559);
  return b;
}

inline RffBanks make_rff_banks(std::size_t n, std::size_t q, Rng& rng) {
  RffBanks banks;
  banks.q = q;
  banks.feature.reserve(n);
  banks.mask.reserve(n);
  for (std::size_t i = 0; i < n; ++i) banks.feature.push_back(make_rff_bank(q, rng));
  for (std::size_t i = 0; i < n; ++i) banks.mask.push_back(make_rff_bank(q, rng));
  return banks;
}

// sqrt(2) cos(omega z + beta), componentwise.
inline Vector rff_apply(const RffBank& bank, double z) {
  Vector out(bank.omega.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = 1.4142135623730950488 * std::cos(bank.omega[j] * z + bank.beta[j]);
  return out;
}

// Observed-entry mean/scale per feature; masks stay raw in {0,1}.
struct Standardization {
  Vector mean;
  Vector scale;  // 1/sd, or 1 when the observed column is constant
};

inline Standardization compute_standardization(const MaskedDataset& d) {
  const std::size_t n = d.dim();
  Standardization s;
  s.mean.assign(n, 0.0);
  s.scale.assign(n, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (d.count_obs[k] == 0) continue;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.mask(i, k)) {
        sum += d.x(i, k);
        sumsq += d.x(i, k) * d.x(i, k);
      }
    const double inv = 1.0 / static_cast<double>(d.count_obs[k]);
    s.mean[k] = sum * inv;
    const double var = sumsq * inv - s.mean[k] * s.mean[k];
    s.scale[k] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return s;
}

enum class DecorrMode { Full, IntraOnly, InterOnly, None };

enum class VarKind { Feature, MaskEntry };

struct VarRef {
  VarKind kind;
  std::size_t index;
};

// Precomputed RFF liftings; the weight optimizer re-evaluates the objective
// many times against a fixed dataset and bank, so everything that does not
// depend on the weights is built once here.
struct DecorrContext {
  const MaskedDataset* data = nullptr;
  std::size_t q = 0;
  std::vector<std::vector<std::size_t>> obs_idx;  // S_k per feature
  std::vector<std::vector<int>> obs_pos;          // position of sample in S_k, -1 if missing
  std::vector<Matrix> feat_u;                     // per feature: |S_k| x q
  std::vector<Matrix> mask_u;                     // per mask var: 2 x q (value 0, value 1)

  std::size_t size() const { return data->size(); }
  std::size_t dim() const { return data->dim(); }
  const double* mask_row(std::size_t k, std::uint8_t bit) const {
    return mask_u[k].row(bit);
  }
};

inline DecorrContext make_decorr_context(const MaskedDataset& d,
                                         const RffBanks& banks) {
  if (banks.feature.size() != d.dim() || banks.mask.size() != d.dim())
    throw DimensionError("make_decorr_context: bank count mismatch");
  DecorrContext ctx;
  ctx.data = &d;
  ctx.q = banks.q;
  const std::size_t n = d.dim();
  const Standardization std_ = compute_standardization(d);
  ctx.obs_idx.resize(n);
  ctx.obs_pos.assign(n, std::vector<int>(d.size(), -1));
  ctx.feat_u.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& idx = ctx.obs_idx[k];
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.mask(i, k)) {
        ctx.obs_pos[k][i] = static_cast<int>(idx.size());
        idx.push_back(i);
      }
    ctx.feat_u[k] = Matrix(idx.size(), banks.q);
    for (std::size_t p = 0; p < idx.size(); ++p) {
      const double z = (d.x(idx[p], k) - std_.mean[k]) * std_.scale[k];
      const Vector u = rff_apply(banks.feature[k], z);
      for (std::size_t j = 0; j < banks.q; ++j) ctx.feat_u[k](p, j) = u[j];
    }
  }
  ctx.mask_u.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    ctx.mask_u[k] = Matrix(2, banks.q);
    for (int bit = 0; bit < 2; ++bit) {
      const Vector u = rff_apply(banks.mask[k], static_cast<double>(bit));
      for (std::size_t j = 0; j < banks.q; ++j) ctx.mask_u[k](bit, j) = u[j];
    }
  }
  return ctx;
}

namespace detail {

// One side of a pair: iterate the selection set and expose the q-vector of the
// sample at a given position, plus the weighted mean over the mean-set.
struct PairSide {
  bool is_feature;
  std::size_t var;
  const DecorrContext* ctx;

  // Selection for means: S_k for features, all samples for masks.
  std::size_t mean_count() const {
    return is_feature ? ctx->obs_idx[var].size() : ctx->size();
  }
  const double* value(std::size_t sample) const {
    if (is_feature)
      return ctx->feat_u[var].row(static_cast<std::size_t>(ctx->obs_pos[var][sample]));
    return ctx->mask_row(var, ctx->data->mask(sample, var));
  }
  bool defined(std::size_t sample) const {
    return !is_feature || ctx->obs_pos[var][sample] >= 0;
  }
  Vector weighted_mean(const Vector& w) const {
    const std::size_t q = ctx->q;
    Vector mean(q, 0.0);
    if (is_feature) {
      const auto& idx = ctx->obs_idx[var];
      for (std::size_t p = 0; p < idx.size(); ++p) {
        const double* u = ctx->feat_u[var].row(p);
        const double wi = w[idx[p]];
        for (std::size_t j = 0; j < q; ++j) mean[j] += wi * u[j];
      }
      for (double& v : mean) v /= static_cast<double>(idx.size());
    } else {
      double w0 = 0.0, w1 = 0.0;
      for (std::size_t i = 0; i < ctx->size(); ++i)
        (ctx->data->mask(i, var) ? w1 : w0) += w[i];
      const double* u0 = ctx->mask_row(var, 0);
      const double* u1 = ctx->mask_row(var, 1);
      for (std::size_t j = 0; j < q; ++j)
        mean[j] = (w0 * u0[j] + w1 * u1[j]) / static_cast<double>(ctx->size());
    }
    return mean;
  }
};

struct PairSpec {
  PairSide a, b;
  // Samples the pair sum runs over (the joint selection).
  std::size_t joint_count;
};

inline std::optional<PairSpec> make_pair(const DecorrContext& ctx, VarRef va,
                                         VarRef vb) {
  const std::size_t n = ctx.dim();
  if (va.index >= n || vb.index >= n)
    throw DimensionError("partial_cov: variable index out of range");
  if (va.kind == vb.kind && va.index == vb.index)
    throw std::invalid_argument("partial_cov: same-kind pair needs distinct indices");
  PairSpec p{{va.kind == VarKind::Feature, va.index, &ctx},
             {vb.kind == VarKind::Feature, vb.index, &ctx},
             0};
  if (p.a.is_feature && p.b.is_feature)
    p.joint_count = static_cast<std::size_t>(ctx.data->pair_count(va.index, vb.index));
  else if (p.a.is_feature)
    p.joint_count = static_cast<std::size_t>(ctx.data->count_obs[va.index]);
  else if (p.b.is_feature)
    p.joint_count = static_cast<std::size_t>(ctx.data->count_obs[vb.index]);
  else
    p.joint_count = ctx.size();
  if (p.joint_count < 2) return std::nullopt;  // PairSkipped
  return p;
}

// Accumulates A = norm * sum (w_i u_i - ubar)(w_i v_i - vbar)^T over the joint
// set, plus the row/column sums needed by the gradient.
struct PairEval {
  Matrix a;       // q x q partial cross-covariance
  Vector sum_u;   // sum over joint set of (w_i u_i - ubar)
  Vector sum_v;
  Vector ubar, vbar;
  double norm = 0.0;
};

inline PairEval eval_pair(const DecorrContext& ctx, const PairSpec& p,
                          const Vector& w, bool want_sums) {
  const std::size_t q = ctx.q;
  PairEval e;
  e.ubar = p.a.weighted_mean(w);
  e.vbar = p.b.weighted_mean(w);
  e.a = Matrix(q, q);
  e.norm = 1.0 / static_cast<double>(p.joint_count - 1);
  if (want_sums) {
    e.sum_u.assign(q, 0.0);
    e.sum_v.assign(q, 0.0);
  }
  Vector au(q), bv(q);
  auto accumulate = [&](std::size_t i) {
    const double wi = w[i];
    const double* u = p.a.value(i);
    const double* v = p.b.value(i);
    for (std::size_t j = 0; j < q; ++j) au[j] = wi * u[j] - e.ubar[j];
    for (std::size_t j = 0; j < q; ++j) bv[j] = wi * v[j] - e.vbar[j];
    for (std::size_t r = 0; r < q; ++r) {
      double* row = e.a.row(r);
      const double ar = au[r];
      for (std::size_t c = 0; c < q; ++c) row[c] += ar * bv[c];
    }
    if (want_sums)
      for (std::size_t j = 0; j < q; ++j) {
        e.sum_u[j] += au[j];
        e.sum_v[j] += bv[j];
      }
  };
  if (p.a.is_feature) {
    for (std::size_t i : ctx.obs_idx[p.a.var])
      if (p.b.defined(i)) accumulate(i);
  } else if (p.b.is_feature) {
    for (std::size_t i : ctx.obs_idx[p.b.var]) accumulate(i);
  } else {
    for (std::size_t i = 0; i < ctx.size(); ++i) accumulate(i);
  }
  for (double& v : e.a.data()) v *= e.norm;
  return e;
}

inline double frobenius_sq(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return s;
}

// d ||A||_F^2 / d w, accumulated into grad.
inline void pair_gradient(const DecorrContext& ctx, const PairSpec& p,
                          const Vector& w, const PairEval& e, Vector& grad) {
  const std::size_t q = ctx.q;
  // r1 = A vbar, r2 = A^T ubar, gu = A * sum_v, gv = A^T * sum_u
  Vector r1(q, 0.0), r2(q, 0.0), gu(q, 0.0), gv(q, 0.0);
  for (std::size_t r = 0; r < q; ++r) {
    const double* row = e.a.row(r);
    for (std::size_t c = 0; c < q; ++c) {
      r1[r] += row[c] * e.vbar[c];
      gu[r] += row[c] * e.sum_v[c];
      r2[c] += row[c] * e.ubar[r];
      gv[c] += row[c] * e.sum_u[r];
    }
  }
  const double two_norm = 2.0 * e.norm;
  // Joint-set term: 2 norm (u_t^T A b_t + a_t^T A v_t)
  auto joint_term = [&](std::size_t i) {
    const double* u = p.a.value(i);
    const double* v = p.b.value(i);
    double bilinear = 0.0;
    for (std::size_t r = 0; r < q; ++r) {
      const double* row = e.a.row(r);
      double acc = 0.0;
      for (std::size_t c = 0; c < q; ++c) acc += row[c] * v[c];
      bilinear += u[r] * acc;
    }
    double du = 0.0, dv = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      du += u[j] * r1[j];
      dv += v[j] * r2[j];
    }
    grad[i] += two_norm * (2.0 * w[i] * bilinear - du - dv);
  };
  if (p.a.is_feature) {
    for (std::size_t i : ctx.obs_idx[p.a.var])
      if (p.b.defined(i)) joint_term(i);
  } else if (p.b.is_feature) {
    for (std::size_t i : ctx.obs_idx[p.b.var]) joint_term(i);
  } else {
    for (std::size_t i = 0; i < ctx.size(); ++i) joint_term(i);
  }
  // Mean-set terms: -2 norm / |M| * (u_t^T A sum_v) over the u mean-set, and
  // likewise for the v side.
  const double cu = two_norm / static_cast<double>(p.a.mean_count());
  if (p.a.is_feature) {
    const auto& idx = ctx.obs_idx[p.a.var];
    for (std::size_t pos = 0; pos < idx.size(); ++pos) {
      const double* u = ctx.feat_u[p.a.var].row(pos);
      double s = 0.0;
      for (std::size_t j = 0; j < q; ++j) s += u[j] * gu[j];
      grad[idx[pos]] -= cu * s;
    }
  } else {
    double s_bit[2];
    for (int bit = 0; bit < 2; ++bit) {
      const double* u = ctx.mask_row(p.a.var, static_cast<std::uint8_t>(bit));
      double s = 0.0;
      for (std::size_t j = 0; j < q; ++j) s += u[j] * gu[j];
      s_bit[bit] = s;
    }
    for (std::size_t i = 0; i < ctx.size(); ++i)
      grad[i] -= cu * s_bit[ctx.data->mask(i, p.a.var)];
  }
  const double cv = two_norm / static_cast<double>(p.b.mean_count());
  if (p.b.is_feature) {
    const auto& idx = ctx.obs_idx[p.b.var];
    for (std::size_t pos = 0; pos < idx.size(); ++pos) {
      const double* v = ctx.feat_u[p.b.var].row(pos);
      double s = 0.0;
      for (std::size_t j = 0; j < q; ++j) s += v[j] * gv[j];
      grad[idx[pos]] -= cv * s;
    }
  } else {
    double s_bit[2];
    for (int bit = 0; bit < 2; ++bit) {
      const double* v = ctx.mask_row(p.b.var, static_cast<std::uint8_t>(bit));
      double s = 0.0;
      for (std::size_t j = 0; j < q; ++j) s += v[j] * gv[j];
      s_bit[bit] = s;
    }
    for (std::size_t i = 0; i < ctx.size(); ++i)
      grad[i] -= cv * s_bit[ctx.data->mask(i, p.b.var)];
  }
}

template <typename PairFn>
inline void for_each_pair(std::size_t n, DecorrMode mode, PairFn&& fn) {
  const bool intra = mode == DecorrMode::Full || mode == DecorrMode::IntraOnly;
  const bool inter = mode == DecorrMode::Full || mode == DecorrMode::InterOnly;
  if (intra) {
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = k + 1; l < n; ++l) {
        fn(VarRef{VarKind::Feature, k}, VarRef{VarKind::Feature, l});
        fn(VarRef{VarKind::MaskEntry, k}, VarRef{VarKind::MaskEntry, l});
      }
  }
  if (inter) {
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = 0; l < n; ++l)
        fn(VarRef{VarKind::Feature, k}, VarRef{VarKind::MaskEntry, l});
  }
}

}  // namespace detail

// Partial cross-covariance of one variable pair; nullopt when the pair's
// selection count is below 2 (the caller excludes skipped pairs).
inline std::optional<Matrix> partial_cov(const DecorrContext& ctx, const Vector& w,
                                         VarRef a, VarRef b) {
  if (w.size() != ctx.size()) throw DimensionError("partial_cov: weight length mismatch");
  if (a.kind == VarKind::MaskEntry && b.kind == VarKind::Feature) {
    // The selection rule is driven by the feature side; compute transposed.
    auto t = partial_cov(ctx, w, b, a);
    if (!t) return std::nullopt;
    Matrix out(t->cols(), t->rows());
    for (std::size_t i = 0; i < t->rows(); ++i)
      for (std::size_t j = 0; j < t->cols(); ++j) out(j, i) = (*t)(i, j);
    return out;
  }
  const auto pair = detail::make_pair(ctx, a, b);
  if (!pair) return std::nullopt;
  return detail::eval_pair(ctx, *pair, w, false).a;
}

inline std::optional<Matrix> partial_cov(const MaskedDataset& d, const Vector& w,
                                         VarRef a, VarRef b, const RffBanks& banks) {
  return partial_cov(make_decorr_context(d, banks), w, a, b);
}

struct ObjectiveValue {
  double covariance = 0.0;
  double regularizer = 0.0;
  double total() const { return covariance + regularizer; }
};

namespace detail {

inline double weight_mean(const Vector& w) {
  double s = 0.0;
  for (double v : w) s += v;
  return s / static_cast<double>(w.size());
}

inline double weight_std(const Vector& w, double mean) {
  double s = 0.0;
  for (double v : w) s += (v - mean) * (v - mean);
  return std::sqrt(s / static_cast<double>(w.size()));
}

}  // namespace detail

inline ObjectiveValue decorrelation_objective(const DecorrContext& ctx,
                                              const Vector& w, DecorrMode mode,
                                              double gamma,
                                              Vector* grad_w = nullptr) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("decorrelation_objective: gamma < 0");
  if (w.size() != ctx.size())
    throw DimensionError("decorrelation_objective: weight length mismatch");
  ObjectiveValue obj;
  if (grad_w) grad_w->assign(w.size(), 0.0);
  detail::for_each_pair(ctx.dim(), mode, [&](VarRef a, VarRef b) {
    const auto pair = detail::make_pair(ctx, a, b);
    if (!pair) return;
    const detail::PairEval e = detail::eval_pair(ctx, *pair, w, grad_w != nullptr);
    obj.covariance += detail::frobenius_sq(e.a);
    if (grad_w) detail::pair_gradient(ctx, *pair, w, e, *grad_w);
  });
  const double mean = detail::weight_mean(w);
  const double sd = detail::weight_std(w, mean);
  obj.regularizer = gamma * sd / mean;
  if (grad_w && sd > 1e-15) {
    const double n = static_cast<double>(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      (*grad_w)[i] += gamma * ((w[i] - mean) / (n * sd * mean) - sd / (n * mean * mean));
  }
  return obj;
}

inline ObjectiveValue decorrelation_objective(const MaskedDataset& d, const Vector& w,
                                              DecorrMode mode, double gamma,
                                              const RffBanks& banks) {
  return decorrelation_objective(make_decorr_context(d, banks), w, mode, gamma);
}

// Free-parameter weights: w_i = softplus(v_i), renormalized to mean 1.
struct WeightVector {
  Vector free;
  Vector w;
};

inline double softplus(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }

inline Vector weights_from_free(const Vector& free) {
  Vector w(free.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = softplus(free[i]);
    sum += w[i];
  }
  const double mean = sum / static_cast<double>(w.size());
  for (double& v : w) v /= mean;
  return w;
}

inline WeightVector uniform_weights(std::size_t n) {
  WeightVector wv;
  wv.free.assign(n, 0.54132485461292165);  // softplus^-1(1)
  wv.w.assign(n, 1.0);
  return wv;
}

struct WeightOptConfig {
  int iterations = 500;
  double lr = 0.01;
};

struct WeightOptResult {
  WeightVector weights;
  ObjectiveValue initial;
  ObjectiveValue final_value;
};

// Gradient of the objective w.r.t. the free parameters, through softplus and
// the mean-1 renormalization.
inline Vector chain_to_free(const Vector& free, const Vector& w,
                            const Vector& grad_w) {
  const std::size_t n = free.size();
  double mean_s = 0.0;
  for (double v : free) mean_s += softplus(v);
  mean_s /= static_cast<double>(n);
  double coupled = 0.0;
  for (std::size_t i = 0; i < n; ++i) coupled += grad_w[i] * w[i];
  coupled /= static_cast<double>(n);
  Vector grad_v(n);
  for (std::size_t i = 0; i < n; ++i)
    grad_v[i] = sigmoid(free[i]) / mean_s * (grad_w[i] - coupled);
  return grad_v;
}

inline WeightOptResult optimize_weights_traced(const MaskedDataset& d,
                                               DecorrMode mode, double gamma,
                                               const WeightOptConfig& cfg,
                                               const RffBanks& banks) {
  if (d.size() == 0) throw DegenerateError("optimize_weights: empty dataset");
  const DecorrContext ctx = make_decorr_context(d, banks);
  WeightVector cur = uniform_weights(d.size());
  Vector grad_w, grad_v;
  WeightOptResult res;
  res.initial = decorrelation_objective(ctx, cur.w, mode, gamma);
  res.final_value = res.initial;
  res.weights = cur;
  double best = res.initial.total();
  AdamState adam = make_adam(d.size(), cfg.lr);
  for (int it = 0; it < cfg.iterations; ++it) {
    const ObjectiveValue obj = decorrelation_objective(ctx, cur.w, mode, gamma, &grad_w);
    if (!std::isfinite(obj.total()))
      throw NumericalError("optimize_weights: non-finite objective at iteration " +
                           std::to_string(it));
    if (obj.total() < best) {
      best = obj.total();
      res.weights = cur;
      res.final_value = obj;
    }
    grad_v = chain_to_free(cur.free, cur.w, grad_w);
    adam_step(cur.free, adam, grad_v);
    cur.w = weights_from_free(cur.free);
  }
  const ObjectiveValue last = decorrelation_objective(ctx, cur.w, mode, gamma);
  if (last.total() < best) {
    res.weights = cur;
    res.final_value = last;
  }
  return res;
}

inline WeightVector optimize_weights(const MaskedDataset& d, DecorrMode mode,
                                     double gamma, const WeightOptConfig& cfg,
                                     const RffBanks& banks) {
  return optimize_weights_traced(d, mode, gamma, cfg, banks).weights;
}

inline void write_weights_csv(const Vector& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_weights_csv: cannot open " + path);
  out << "sample_index,weight\n";
  for (std::size_t i = 0; i < w.size(); ++i)
    out << i << ',' << format_double(w[i]) << '\n';
}

}  // namespace maskshift
