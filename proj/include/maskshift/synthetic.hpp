// Synthetic benchmark generation: (mixtures of) Gaussian features and a
// linear label process with a calibrated signal-to-noise ratio.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "maskshift/linalg.hpp"
#include "maskshift/rng.hpp"

namespace maskshift {

enum class FeatureKind { GaussianGeneral, GaussianInd, GaussianMix };

struct GaussianComponent {
  Vector mean;
  Matrix cov;
  double weight = 1.0;
};

struct FeatureSpec {
  FeatureKind kind = FeatureKind::GaussianGeneral;
  std::size_t dim = 0;
  std::vector<GaussianComponent> components;
};

struct LabelModel {
  double intercept = 0.0;
  Vector coef;
  double noise_sd = 0.0;
};

struct CompleteDataset {
  Matrix x;  // N x n
  Vector y;  // N
  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
};

// Column count of the low-rank factor B in Sigma = B B^T + D.
inline std::size_t b_column_count(std::size_t n) {
  return static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(n)));
}

namespace detail {

// Sigma = B B^T + D with B (n x floor(0.7 n)) standard normal and D diagonal
// uniform on [1e-2, 1e-1]; the independent kind keeps D only.
inline GaussianComponent random_component(std::size_t n, bool independent, Rng& rng) {
  GaussianComponent c;
  c.mean.resize(n);
  for (double& v : c.mean) v = rng.normal();
  c.cov = Matrix(n, n);
  if (!independent) {
    const std::size_t k = b_column_count(n);
    Matrix b(n, k);
    for (double& v : b.data()) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < k; ++t) s += b(i, t) * b(j, t);
        c.cov(i, j) = s;
        c.cov(j, i) = s;
      }
  }
  for (std::size_t i = 0; i < n; ++i) c.cov(i, i) += rng.uniform(1e-2, 1e-1);
  return c;
}

}  // namespace detail

inline FeatureSpec make_gaussian_spec(std::size_t n, FeatureKind kind, Rng& rng) {
  if (n == 0) throw DimensionError("make_gaussian_spec: dimension must be >= 1");
  if (kind == FeatureKind::GaussianMix)
    throw std::invalid_argument("make_gaussian_spec: use make_mixture_spec");
  FeatureSpec spec;
  spec.kind = kind;
  spec.dim = n;
  spec.components.push_back(
      detail::random_component(n, kind == FeatureKind::GaussianInd, rng));
  spec.components[0].weight = 1.0;
  return spec;
}

inline FeatureSpec make_mixture_spec(std::size_t n, Rng& rng) {
  if (n == 0) throw DimensionError("make_mixture_spec: dimension must be >= 1");
  FeatureSpec spec;
  spec.kind = FeatureKind::GaussianMix;
  spec.dim = n;
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    spec.components.push_back(detail::random_component(n, false, rng));
    spec.components.back().weight = rng.uniform();
    total += spec.components.back().weight;
  }
  for (auto& c : spec.components) c.weight /= total;
  // Pin the proportions to an exact unit sum.
  spec.components.back().weight =
      1.0 - spec.components[0].weight - spec.components[1].weight;
  return spec;
}

// Var(a^T X) under the spec; mixtures use the law of total variance.
inline double linear_form_variance(const FeatureSpec& spec, const Vector& a) {
  double var = 0.0;
  double mean_sq = 0.0;
  double mean = 0.0;
  for (const auto& c : spec.components) {
    const double quad = dot(a, matvec(c.cov, a));
    const double mu = dot(a, c.mean);
    var += c.weight * (quad + mu * mu);
    mean += c.weight * mu;
  }
  mean_sq = mean * mean;
  return var - mean_sq;
}

// alpha_0 and alpha_i standard normal; sigma = sqrt(Var(alpha^T X) / snr).
inline LabelModel make_label_model(const FeatureSpec& spec, double snr, Rng& rng) {
  if (!(snr > 0.0)) throw std::invalid_argument("make_label_model: snr must be > 0");
  LabelModel m;
  m.intercept = rng.normal();
  m.coef.resize(spec.dim);
  for (double& v : m.coef) v = rng.normal();
  const double signal_var = linear_form_variance(spec, m.coef);
  if (!(signal_var > 0.0))
    throw DegenerateError("make_label_model: Var(alpha^T X) is zero");
  m.noise_sd = std::sqrt(signal_var / snr);
  return m;
}

// Draws N rows; mixture components chosen by weight, then Cholesky sampling.
// Optionally records the chosen component per row.
inline CompleteDataset sample_dataset(const FeatureSpec& spec,
                                      const LabelModel& label, std::size_t n_rows,
                                      Rng& rng,
                                      std::vector<int>* components_out = nullptr) {
  const std::size_t n = spec.dim;
  std::vector<Matrix> chol;
  chol.reserve(spec.components.size());
  for (const auto& c : spec.components) chol.push_back(cholesky_jitter(c.cov));

  CompleteDataset data;
  data.x = Matrix(n_rows, n);
  data.y.resize(n_rows);
  if (components_out) components_out->assign(n_rows, 0);
  Vector z(n);
  for (std::size_t r = 0; r < n_rows; ++r) {
    std::size_t comp = 0;
    if (spec.components.size() > 1) {
      const double u = rng.uniform();
      double acc = 0.0;
      for (std::size_t c = 0; c < spec.components.size(); ++c) {
        acc += spec.components[c].weight;
        if (u < acc || c + 1 == spec.components.size()) {
          comp = c;
          break;
        }
      }
    }
    if (components_out) (*components_out)[r] = static_cast<int>(comp);
    for (double& v : z) v = rng.normal();
    const Matrix& l = chol[comp];
    const Vector& mu = spec.components[comp].mean;
    double* row = data.x.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = mu[i];
      for (std::size_t k = 0; k <= i; ++k) acc += l(i, k) * z[k];
      row[i] = acc;
    }
    double yv = label.intercept;
    for (std::size_t i = 0; i < n; ++i) yv += label.coef[i] * row[i];
    if (label.noise_sd > 0.0) yv += label.noise_sd * rng.normal();
    data.y[r] = yv;
  }
  return data;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline void write_csv(const CompleteDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  for (std::size_t j = 0; j < data.dim(); ++j) out << "x_" << (j + 1) << ',';
  out << "y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j)
      out << format_double(data.x(i, j)) << ',';
    out << format_double(data.y[i]) << '\n';
  }
}

}  // namespace maskshift
