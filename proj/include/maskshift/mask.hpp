// Mask generation under the three missing patterns (independent MCAR,
// windowed MCAR, anchored MAR) over the nine-level missing grid, plus the
// MaskedDataset view the learner sees (zero-imputed features, masks, labels,
// and per-feature / per-pair observation counts).
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskshift/linalg.hpp"
#include "maskshift/rng.hpp"
#include "maskshift/synthetic.hpp"

namespace maskshift {

inline constexpr std::array<double, 9> kMissingLevels = {0.1, 0.2, 0.3, 0.4, 0.5,
                                                         0.6, 0.7, 0.8, 0.9};

inline std::size_t level_index(double r) {
  for (std::size_t i = 0; i < kMissingLevels.size(); ++i)
    if (std::abs(r - kMissingLevels[i]) < 1e-9) return i;
  throw std::invalid_argument("missing level must lie on the 0.1..0.9 grid");
}

// The sample missing rate: the nominal level with probability 0.8, each of
// the other eight levels with probability 0.025.
inline double sample_missing_rate(double level, Rng& rng) {
  const std::size_t base = level_index(level);
  const double u = rng.uniform();
  if (u < 0.8) return kMissingLevels[base];
  std::size_t other = static_cast<std::size_t>((u - 0.8) / 0.025);
  if (other > 7) other = 7;
  return kMissingLevels[other + (other >= base ? 1 : 0)];
}

using Mask = std::vector<std::uint8_t>;

inline Mask mcar_ind_mask(std::size_t n, double r_s, Rng& rng) {
  if (!(r_s >= 0.0 && r_s <= 1.0))
    throw std::invalid_argument("mcar_ind_mask: rate outside [0,1]");
  Mask m(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    if (rng.uniform() < r_s) m[i] = 0;
  return m;
}

// Exactly floor(n * r_s) consecutive entries missing, start uniform, no wrap.
inline Mask mcar_window_mask(std::size_t n, double r_s, Rng& rng) {
  if (!(r_s >= 0.0 && r_s <= 1.0))
    throw std::invalid_argument("mcar_window_mask: rate outside [0,1]");
  const std::size_t len = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r_s));
  Mask m(n, 1);
  if (len == 0) return m;
  const std::size_t start = rng.uniform_index(n - len + 1);
  for (std::size_t i = start; i < start + len; ++i) m[i] = 0;
  return m;
}

// Anchored MAR: floor(0.1 n) anchor features are always observed; every other
// feature goes missing with probability sigmoid(w_i . x_anchors + b_i + c),
// where c is a per-level offset calibrated against the feature distribution.
struct MarModel {
  std::size_t dim = 0;
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> modeled;        // non-anchor feature indices
  Matrix weights;                          // modeled x anchors
  Vector bias;                             // modeled
  std::array<double, 9> level_offset{};
  std::array<bool, 9> level_calibrated{};
};

inline MarModel make_mar_model(std::size_t n, Rng& rng) {
  if (n < 10) throw std::invalid_argument("make_mar_model: need n >= 10 for a nonempty anchor set");
  const std::size_t n_anchor = n / 10;
  MarModel model;
  model.dim = n;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < n_anchor; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(perm[i], perm[j]);
  }
  model.anchors.assign(perm.begin(), perm.begin() + static_cast<long>(n_anchor));
  std::vector<bool> is_anchor(n, false);
  for (std::size_t a : model.anchors) is_anchor[a] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!is_anchor[i]) model.modeled.push_back(i);
  model.weights = Matrix(model.modeled.size(), n_anchor);
  for (double& v : model.weights.data()) v = rng.normal();
  model.bias.resize(model.modeled.size());
  for (double& v : model.bias) v = rng.normal();
  return model;
}

inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

namespace detail {

// Anchor projections w_i . x_A + b_i for a Monte Carlo draw of x, flattened
// over (sample, modeled feature).
inline Vector mar_projections(const MarModel& model, const FeatureSpec& spec,
                              std::size_t n_draws, Rng& rng) {
  LabelModel dummy;
  dummy.coef.assign(spec.dim, 0.0);
  const CompleteDataset draws = sample_dataset(spec, dummy, n_draws, rng);
  Vector proj;
  proj.reserve(n_draws * model.modeled.size());
  for (std::size_t s = 0; s < n_draws; ++s) {
    const double* row = draws.x.row(s);
    for (std::size_t f = 0; f < model.modeled.size(); ++f) {
      double t = model.bias[f];
      for (std::size_t a = 0; a < model.anchors.size(); ++a)
        t += model.weights(f, a) * row[model.anchors[a]];
      proj.push_back(t);
    }
  }
  return proj;
}

inline double calibrate_offset(const Vector& proj, double target) {
  auto rate = [&](double c) {
    double s = 0.0;
    for (double t : proj) s += sigmoid(t + c);
    return s / static_cast<double>(proj.size());
  };
  double lo = -60.0, hi = 60.0;
  if (rate(lo) > target || rate(hi) < target)
    throw NumericalError("calibrate_mar: target rate not bracketed");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = rate(mid);
    if (std::abs(r - target) <= 0.005) return mid;
    (r < target ? lo : hi) = mid;
  }
  throw NumericalError("calibrate_mar: bisection did not converge");
}

}  // namespace detail

// Calibrates the shared offset for one missing level (10^4 Monte Carlo draws
// of the feature distribution).
inline MarModel calibrate_mar(MarModel model, const FeatureSpec& spec, double r_s,
                              Rng& rng, std::size_t n_draws = 10000) {
  const std::size_t idx = level_index(r_s);
  const Vector proj = detail::mar_projections(model, spec, n_draws, rng);
  model.level_offset[idx] = detail::calibrate_offset(proj, r_s);
  model.level_calibrated[idx] = true;
  return model;
}

// Calibrates all nine levels from one shared Monte Carlo draw.
inline MarModel calibrate_mar_all(MarModel model, const FeatureSpec& spec, Rng& rng,
                                  std::size_t n_draws = 10000) {
  const Vector proj = detail::mar_projections(model, spec, n_draws, rng);
  for (std::size_t idx = 0; idx < kMissingLevels.size(); ++idx) {
    model.level_offset[idx] = detail::calibrate_offset(proj, kMissingLevels[idx]);
    model.level_calibrated[idx] = true;
  }
  return model;
}

// Per-feature missing probabilities for one sample (anchors get 0).
inline Vector mar_missing_probs(const MarModel& model, const double* x, double r_s) {
  const std::size_t idx = level_index(r_s);
  if (!model.level_calibrated[idx])
    throw std::invalid_argument("mar_missing_probs: level not calibrated");
  const double offset = model.level_offset[idx];
  Vector p(model.dim, 0.0);
  for (std::size_t f = 0; f < model.modeled.size(); ++f) {
    double t = model.bias[f] + offset;
    for (std::size_t a = 0; a < model.anchors.size(); ++a)
      t += model.weights(f, a) * x[model.anchors[a]];
    p[model.modeled[f]] = sigmoid(t);
  }
  return p;
}

inline Mask mar_mask(const MarModel& model, const double* x, double r_s, Rng& rng) {
  const Vector p = mar_missing_probs(model, x, r_s);
  Mask m(model.dim, 1);
  for (std::size_t i = 0; i < model.dim; ++i)
    if (p[i] > 0.0 && rng.uniform() < p[i]) m[i] = 0;
  return m;
}

enum class MaskPattern { McarInd, McarWindow, Mar };

// Zero-imputed view plus cached observation counts N^k and N^{kl}.
struct MaskedDataset {
  Matrix x;                      // zero-imputed, N x n
  std::vector<std::uint8_t> m;   // N x n, 1 = observed
  Vector y;
  std::vector<long> count_obs;   // N^k
  std::vector<long> count_pair;  // N^{kl}, row-major n x n

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
  std::uint8_t mask(std::size_t i, std::size_t k) const { return m[i * dim() + k]; }
  long pair_count(std::size_t k, std::size_t l) const { return count_pair[k * dim() + l]; }
};

inline void rebuild_counts(MaskedDataset& d) {
  const std::size_t n = d.dim();
  d.count_obs.assign(n, 0);
  d.count_pair.assign(n * n, 0);
  std::vector<std::size_t> obs;
  for (std::size_t i = 0; i < d.size(); ++i) {
    obs.clear();
    for (std::size_t k = 0; k < n; ++k)
      if (d.mask(i, k)) obs.push_back(k);
    for (std::size_t a : obs) {
      d.count_obs[a] += 1;
      for (std::size_t b : obs) d.count_pair[a * n + b] += 1;
    }
  }
}

inline MaskedDataset make_masked_dataset(const CompleteDataset& data,
                                         std::vector<Mask> masks) {
  if (masks.size() != data.size())
    throw DimensionError("make_masked_dataset: mask count mismatch");
  const std::size_t n = data.dim();
  MaskedDataset d;
  d.x = Matrix(data.size(), n);
  d.m.assign(data.size() * n, 1);
  d.y = data.y;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (masks[i].size() != n)
      throw DimensionError("make_masked_dataset: mask width mismatch");
    for (std::size_t k = 0; k < n; ++k) {
      d.m[i * n + k] = masks[i][k];
      d.x(i, k) = masks[i][k] ? data.x(i, k) : 0.0;
    }
  }
  rebuild_counts(d);
  return d;
}

// Applies the pattern with a per-sample rate drawn from the level grid.
// When fixed_rate >= 0 the draw is skipped and that rate is used for every
// sample (MAR then requires a calibrated grid level, 0, or 1).
inline MaskedDataset apply_masks(const CompleteDataset& data, MaskPattern pattern,
                                 double level, Rng& rng,
                                 const MarModel* mar = nullptr,
                                 double fixed_rate = -1.0) {
  if (pattern == MaskPattern::Mar) {
    if (!mar) throw std::invalid_argument("apply_masks: MAR pattern needs a MarModel");
    if (mar->dim != data.dim())
      throw DimensionError("apply_masks: MarModel dimension mismatch");
  }
  if (fixed_rate < 0.0) level_index(level);  // validate grid membership
  const std::size_t n = data.dim();
  std::vector<Mask> masks;
  masks.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r_s = fixed_rate >= 0.0 ? fixed_rate : sample_missing_rate(level, rng);
    switch (pattern) {
      case MaskPattern::McarInd:
        masks.push_back(mcar_ind_mask(n, r_s, rng));
        break;
      case MaskPattern::McarWindow:
        masks.push_back(mcar_window_mask(n, r_s, rng));
        break;
      case MaskPattern::Mar: {
        if (r_s == 0.0) {
          masks.emplace_back(n, 1);
        } else if (r_s == 1.0) {
          Mask m(n, 0);
          for (std::size_t a : mar->anchors) m[a] = 1;
          masks.push_back(std::move(m));
        } else {
          masks.push_back(mar_mask(*mar, data.x.row(i), r_s, rng));
        }
        break;
      }
    }
  }
  return make_masked_dataset(data, std::move(masks));
}

inline void write_csv(const MaskedDataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t j = 0; j < d.dim(); ++j) out << "x_" << (j + 1) << ',';
  for (std::size_t j = 0; j < d.dim(); ++j) out << "m_" << (j + 1) << ',';
  out << "y\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.dim(); ++j) out << format_double(d.x(i, j)) << ',';
    for (std::size_t j = 0; j < d.dim(); ++j) out << int(d.mask(i, j)) << ',';
    out << format_double(d.y[i]) << '\n';
  }
}

}  // namespace maskshift
