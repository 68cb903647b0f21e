// Analytic ground truth: conditional-Gaussian moments, the optimal predictor
// E[Y | x_m, m] for Gaussian and Gaussian-mixture features under a linear
// label process, its analytic residual variance (single Gaussian), the
// closed-form head coefficients of the duplicated-feature example, and the
// exact finite-support instance in which two train-equivalent parameter
// tensors diverge under mask shift.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "maskshift/linalg.hpp"
#include "maskshift/mask.hpp"
#include "maskshift/predictor.hpp"
#include "maskshift/synthetic.hpp"

namespace maskshift {

struct ConditionalMoments {
  std::vector<std::size_t> observed;
  std::vector<std::size_t> missing;
  Vector mean;  // E[X_missing | x_observed]
  Matrix cov;   // Cov[X_missing | x_observed]
};

// Schur-complement conditioning via Cholesky of the observed block.
// x carries values at observed positions (other entries ignored).
inline ConditionalMoments gaussian_conditional_moments(const Vector& mu,
                                                       const Matrix& cov,
                                                       const Vector& x,
                                                       const Mask& m) {
  const std::size_t n = mu.size();
  if (cov.rows() != n || cov.cols() != n || x.size() != n || m.size() != n)
    throw DimensionError("gaussian_conditional_moments: shape mismatch");
  ConditionalMoments out;
  for (std::size_t i = 0; i < n; ++i)
    (m[i] ? out.observed : out.missing).push_back(i);
  const std::size_t o = out.observed.size();
  const std::size_t u = out.missing.size();
  out.mean.resize(u);
  out.cov = Matrix(u, u);
  if (o == 0) {
    for (std::size_t i = 0; i < u; ++i) out.mean[i] = mu[out.missing[i]];
    for (std::size_t i = 0; i < u; ++i)
      for (std::size_t j = 0; j < u; ++j)
        out.cov(i, j) = cov(out.missing[i], out.missing[j]);
    return out;
  }
  Matrix sigma_oo(o, o);
  for (std::size_t i = 0; i < o; ++i)
    for (std::size_t j = 0; j < o; ++j)
      sigma_oo(i, j) = cov(out.observed[i], out.observed[j]);
  const Matrix l = cholesky_jitter(sigma_oo);
  Vector resid(o);
  for (std::size_t i = 0; i < o; ++i)
    resid[i] = x[out.observed[i]] - mu[out.observed[i]];
  const Vector t = cholesky_solve(l, resid);  // Sigma_oo^{-1} (x_o - mu_o)
  for (std::size_t i = 0; i < u; ++i) {
    double acc = mu[out.missing[i]];
    for (std::size_t j = 0; j < o; ++j)
      acc += cov(out.missing[i], out.observed[j]) * t[j];
    out.mean[i] = acc;
  }
  // cov = Sigma_uu - Sigma_uo Sigma_oo^{-1} Sigma_ou
  Vector col(o), solved(o);
  for (std::size_t j = 0; j < u; ++j) {
    for (std::size_t i = 0; i < o; ++i) col[i] = cov(out.observed[i], out.missing[j]);
    solved = cholesky_solve(l, col);
    for (std::size_t i = 0; i < u; ++i) {
      double acc = cov(out.missing[i], out.missing[j]);
      for (std::size_t k = 0; k < o; ++k)
        acc -= cov(out.missing[i], out.observed[k]) * solved[k];
      out.cov(i, j) = acc;
    }
  }
  return out;
}

// Log density of the observed block under one Gaussian component.
inline double observed_log_density(const GaussianComponent& c, const Vector& x,
                                   const std::vector<std::size_t>& observed) {
  const std::size_t o = observed.size();
  if (o == 0) return 0.0;
  Matrix sigma_oo(o, o);
  for (std::size_t i = 0; i < o; ++i)
    for (std::size_t j = 0; j < o; ++j)
      sigma_oo(i, j) = c.cov(observed[i], observed[j]);
  const Matrix l = cholesky_jitter(sigma_oo);
  Vector resid(o);
  for (std::size_t i = 0; i < o; ++i) resid[i] = x[observed[i]] - c.mean[observed[i]];
  const Vector z = solve_lower(l, resid);
  double quad = 0.0;
  for (double v : z) quad += v * v;
  return -0.5 * (quad + log_det_from_cholesky(l) +
                 static_cast<double>(o) * 1.8378770664093454836);  // log(2 pi)
}

// Component responsibilities given the observed block, in log-space with
// log-sum-exp; the empty mask falls back to the mixture proportions.
inline Vector mixture_responsibilities(const FeatureSpec& spec, const Vector& x,
                                       const Mask& m) {
  std::vector<std::size_t> observed;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) observed.push_back(i);
  Vector logp(spec.components.size());
  for (std::size_t c = 0; c < spec.components.size(); ++c)
    logp[c] = std::log(spec.components[c].weight) +
              observed_log_density(spec.components[c], x, observed);
  double mx = logp[0];
  for (double v : logp) mx = std::max(mx, v);
  double total = 0.0;
  for (double& v : logp) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : logp) v /= total;
  return logp;
}

// E[Y | x_m, m] = alpha_0 + alpha_obs . x_obs + alpha_miss . E[X_miss | x_obs],
// mixture components aggregated by their responsibilities.
inline double optimal_predict(const FeatureSpec& spec, const LabelModel& label,
                              const Vector& x, const Mask& m) {
  if (x.size() != spec.dim || m.size() != spec.dim)
    throw DimensionError("optimal_predict: shape mismatch");
  const Vector resp = spec.components.size() > 1
                          ? mixture_responsibilities(spec, x, m)
                          : Vector{1.0};
  double yhat = label.intercept;
  for (std::size_t i = 0; i < spec.dim; ++i)
    if (m[i]) yhat += label.coef[i] * x[i];
  for (std::size_t c = 0; c < spec.components.size(); ++c) {
    if (resp[c] == 0.0) continue;
    const ConditionalMoments cm =
        gaussian_conditional_moments(spec.components[c].mean, spec.components[c].cov, x, m);
    double miss_part = 0.0;
    for (std::size_t j = 0; j < cm.missing.size(); ++j)
      miss_part += label.coef[cm.missing[j]] * cm.mean[j];
    yhat += resp[c] * miss_part;
  }
  return yhat;
}

// alpha_miss^T (Sigma_uu - Sigma_uo Sigma_oo^{-1} Sigma_ou) alpha_miss + sigma^2.
// Single-Gaussian specs only.
inline double optimal_residual_variance(const FeatureSpec& spec,
                                        const LabelModel& label, const Mask& m) {
  if (spec.components.size() != 1)
    throw std::invalid_argument("optimal_residual_variance: Gaussian specs only");
  Vector dummy(spec.dim, 0.0);
  const ConditionalMoments cm =
      gaussian_conditional_moments(spec.components[0].mean, spec.components[0].cov,
                                   dummy, m);
  double quad = 0.0;
  for (std::size_t i = 0; i < cm.missing.size(); ++i)
    for (std::size_t j = 0; j < cm.missing.size(); ++j)
      quad += label.coef[cm.missing[i]] * cm.cov(i, j) * label.coef[cm.missing[j]];
  return quad + label.noise_sd * label.noise_sd;
}

// Closed-form head coefficients for the duplicated-feature example
// (X_2 = X_1, all other entries independent):
//   phi_0 = mbar_1 mbar_2 (a_1 E X_1 + a_2 E X_2) + sum_{i>=3} mbar_i a_i E X_i
//   phi_1 = (a_1 + a_2 mbar_2) m_1,  phi_2 = (a_2 + a_1 mbar_1) m_2
//   phi_i = a_i m_i for i >= 3.
inline Vector example_phi(const Mask& m, const Vector& alpha, const Vector& means) {
  const std::size_t n = alpha.size();
  if (m.size() != n || means.size() != n || n < 2)
    throw DimensionError("example_phi: need n >= 2 matching shapes");
  Vector phi(n + 1, 0.0);
  const double mb1 = 1.0 - m[0];
  const double mb2 = 1.0 - m[1];
  phi[0] = mb1 * mb2 * (alpha[0] * means[0] + alpha[1] * means[1]);
  for (std::size_t i = 2; i < n; ++i)
    phi[0] += (1.0 - m[i]) * alpha[i] * means[i];
  phi[1] = (alpha[0] + alpha[1] * mb2) * m[0];
  phi[2] = (alpha[1] + alpha[0] * mb1) * m[1];
  for (std::size_t i = 2; i < n; ++i) phi[i + 1] = alpha[i] * m[i];
  return phi;
}

struct Counterexample {
  DiscreteInstance instance;
  std::vector<Rational> theta_star;
  std::vector<Rational> theta_hat;
};

// The exact two-feature instance: Y = X_1 + 2 X_2 with X_i iid Bernoulli(1/2);
// training masks are (0,1) and (1,0) with probability 1/2 each, testing masks
// are iid Bernoulli(1/2) per entry. theta_star realizes the optimal head;
// theta_hat matches it on the training mask support but not under the
// testing mask distribution.
inline Counterexample counterexample_instance() {
  Counterexample ce;
  DiscreteInstance& inst = ce.instance;
  inst.dim = 2;
  const Rational half(1, 2);
  const Rational quarter(1, 4);
  for (int x1 = 0; x1 <= 1; ++x1)
    for (int x2 = 0; x2 <= 1; ++x2)
      inst.support.push_back({{Rational(x1), Rational(x2)},
                              quarter,
                              Rational(x1) + 2 * Rational(x2)});
  inst.train_masks.push_back({{0, 1}, half});
  inst.train_masks.push_back({{1, 0}, half});
  for (int m1 = 0; m1 <= 1; ++m1)
    for (int m2 = 0; m2 <= 1; ++m2)
      inst.test_masks.push_back(
          {{static_cast<std::uint8_t>(m1), static_cast<std::uint8_t>(m2)}, quarter});

  auto at = [](std::vector<Rational>& t, int i, int j, int k) -> Rational& {
    return t[(i * 3 + j) * 3 + k];
  };
  ce.theta_star.assign(27, Rational(0));
  at(ce.theta_star, 0, 0, 0) = Rational(3, 2);
  at(ce.theta_star, 0, 1, 0) = Rational(-1, 2);
  at(ce.theta_star, 0, 2, 0) = -1;
  at(ce.theta_star, 0, 1, 1) = 1;
  at(ce.theta_star, 0, 2, 2) = 2;

  ce.theta_hat.assign(27, Rational(0));
  at(ce.theta_hat, 0, 0, 0) = Rational(3, 2);
  at(ce.theta_hat, 0, 1, 0) = -1;
  at(ce.theta_hat, 0, 2, 0) = Rational(-3, 2);
  at(ce.theta_hat, 1, 0, 0) = Rational(-1, 2);
  at(ce.theta_hat, 1, 1, 0) = 1;
  at(ce.theta_hat, 2, 0, 0) = Rational(-1, 2);
  at(ce.theta_hat, 2, 2, 0) = 1;
  at(ce.theta_hat, 0, 1, 1) = Rational(3, 2);
  at(ce.theta_hat, 0, 2, 1) = Rational(1, 2);
  at(ce.theta_hat, 1, 0, 1) = Rational(1, 2);
  at(ce.theta_hat, 1, 1, 1) = -1;
  at(ce.theta_hat, 2, 0, 1) = Rational(1, 2);
  at(ce.theta_hat, 2, 2, 1) = -1;
  at(ce.theta_hat, 0, 1, 2) = 1;
  at(ce.theta_hat, 0, 2, 2) = 2;
  at(ce.theta_hat, 1, 0, 2) = 1;
  at(ce.theta_hat, 1, 1, 2) = 1;
  at(ce.theta_hat, 1, 2, 2) = 1;
  at(ce.theta_hat, 2, 1, 2) = 1;
  return ce;
}

}  // namespace maskshift
