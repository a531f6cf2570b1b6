#ifndef EVIDENCE_DISTS_HPP
#define EVIDENCE_DISTS_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "evidence/rng.hpp"

// Small log-density and sampling helpers shared by the samplers and
// estimators. Parametrizations are spelled out in each name or comment;
// gamma densities are shape/rate, inverse-gamma shape/scale.

namespace evidence {

inline constexpr double kLogTwoPi = 1.8378770664093454836;

inline double log_normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLogTwoPi + std::log(var) + d * d / var);
}

// X ~ Gamma(shape a, rate b): log p = a log b - lgamma(a) + (a-1) log x - b x
inline double log_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) +
         (shape - 1.0) * std::log(x) - rate * x;
}

// X ~ InvGamma(shape a, scale b): log p = a log b - lgamma(a) - (a+1) log x - b/x
inline double log_inv_gamma_pdf(double x, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - scale / x;
}

inline double log_beta_pdf(double x, double a, double b) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
         (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

inline double log_dirichlet_pdf(std::span<const double> w, std::span<const double> alpha) {
  double asum = 0.0, out = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    asum += alpha[j];
    out += (alpha[j] - 1.0) * std::log(w[j]) - std::lgamma(alpha[j]);
  }
  return out + std::lgamma(asum);
}

// Student-t with dof nu, location mu, scale s (density of mu + s * t_nu).
inline double log_student_t_pdf(double x, double nu, double mu, double s) {
  const double z = (x - mu) / s;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * std::numbers::pi) - std::log(s) -
         0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

inline double log_sigmoid(double u) {
  return u < 0.0 ? u - std::log1p(std::exp(u)) : -std::log1p(std::exp(-u));
}

inline double sample_gamma_shape_rate(Rng& rng, double shape, double rate) {
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  return g(rng);
}

// sigma2 ~ InvGamma(shape, scale) as 1 / Gamma(shape, rate=scale)
inline double sample_inv_gamma(Rng& rng, double shape, double scale) {
  return 1.0 / sample_gamma_shape_rate(rng, shape, scale);
}

inline double sample_beta(Rng& rng, double a, double b) {
  const double x = sample_gamma_shape_rate(rng, a, 1.0);
  const double y = sample_gamma_shape_rate(rng, b, 1.0);
  return x / (x + y);
}

inline std::vector<double> sample_dirichlet(Rng& rng, std::span<const double> alpha) {
  std::vector<double> w(alpha.size());
  double total = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    w[j] = sample_gamma_shape_rate(rng, alpha[j], 1.0);
    total += w[j];
  }
  if (total <= 0.0) {  // all gammas underflowed (tiny alphas); fall back to uniform
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(alpha.size()));
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

// Index draw proportional to exp(logw_k); max-shifted, single uniform.
inline int sample_categorical_from_log(Rng& rng, std::span<const double> logw) {
  double m = logw[0];
  for (double v : logw) m = std::max(m, v);
  double total = 0.0;
  for (double v : logw) total += std::exp(v - m);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng) * total;
  for (std::size_t k = 0; k + 1 < logw.size(); ++k) {
    u -= std::exp(logw[k] - m);
    if (u <= 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(logw.size()) - 1;
}

}  // namespace evidence

#endif
