#include "evidence/conjugate.hpp"

#include <algorithm>
#include <cmath>

#include "evidence/dists.hpp"
#include "evidence/errors.hpp"

namespace evidence {

namespace {

// Within-cluster sum of squared deviations; clamped against cancellation.
double ssd(const ClusterStats& s) {
  if (s.n() <= 0) return 0.0;
  const double v = s.sumsq() - s.sum() * s.sum() / static_cast<double>(s.n());
  return std::max(0.0, v);
}

}  // namespace

void NigPrior::validate() const {
  if (!std::isfinite(mu0) || !std::isfinite(lambda0) || !std::isfinite(a0) || !std::isfinite(b0))
    throw invalid_input("NigPrior: non-finite hyperparameter");
  if (lambda0 <= 0.0 || a0 <= 0.0 || b0 <= 0.0)
    throw invalid_input("NigPrior: lambda0, a0, b0 must be positive");
}

ClusterStats make_stats(std::span<const double> ys) {
  ClusterStats s;
  for (double y : ys) s.add(y);
  return s;
}

NigParams nig_posterior(const ClusterStats& stats, const NigPrior& prior) {
  const double n = static_cast<double>(stats.n());
  if (stats.n() < 0) throw invalid_input("nig_posterior: negative count");
  if (stats.n() == 0) return {prior.mu0, prior.lambda0, prior.a0, prior.b0};
  const double lam_n = prior.lambda0 + n;
  const double ybar = stats.sum() / n;
  const double d = ybar - prior.mu0;
  const double b_n = prior.b0 + 0.5 * (ssd(stats) + prior.lambda0 * n * d * d / lam_n);
  return {(prior.lambda0 * prior.mu0 + stats.sum()) / lam_n, lam_n,
          prior.a0 + 0.5 * n, b_n};
}

double nig_log_density(double mu, double sigma2, const NigParams& p) {
  return log_inv_gamma_pdf(sigma2, p.a, p.b) +
         log_normal_pdf(mu, p.mu, sigma2 / p.lambda);
}

double cluster_log_marginal(const ClusterStats& stats, const NigPrior& prior) {
  if (stats.n() < 0) throw invalid_input("cluster_log_marginal: negative count");
  if (!std::isfinite(stats.sum()) || !std::isfinite(stats.sumsq()))
    throw invalid_input("cluster_log_marginal: non-finite sufficient statistics");
  if (stats.n() == 0) return 0.0;
  const double n = static_cast<double>(stats.n());
  const NigParams post = nig_posterior(stats, prior);
  return -0.5 * n * kLogTwoPi + 0.5 * (std::log(prior.lambda0) - std::log(post.lambda)) +
         std::lgamma(post.a) - std::lgamma(prior.a0) +
         prior.a0 * std::log(prior.b0) - post.a * std::log(post.b);
}

double cluster_log_marginal(std::span<const double> ys, const NigPrior& prior) {
  return cluster_log_marginal(make_stats(ys), prior);
}

double predictive_log_ratio(const ClusterStats& stats, double y, const NigPrior& prior) {
  if (!std::isfinite(y)) throw invalid_input("predictive_log_ratio: non-finite observation");
  const NigParams p = nig_posterior(stats, prior);
  // Student-t with dof 2a, location mu, squared scale b(lam+1)/(a lam)
  const double s = std::sqrt(p.b * (p.lambda + 1.0) / (p.a * p.lambda));
  return log_student_t_pdf(y, 2.0 * p.a, p.mu, s);
}

PredictiveTable::PredictiveTable(const NigPrior& prior, long long n_max) : prior_(prior) {
  prior.validate();
  if (n_max < 0) throw invalid_input("PredictiveTable: negative n_max");
  const std::size_t count = static_cast<std::size_t>(n_max) + 1;
  const_term_.resize(count);
  a_n_.resize(count);
  lam_n_.resize(count);
  for (std::size_t n = 0; n < count; ++n) {
    const double a_n = prior.a0 + 0.5 * static_cast<double>(n);
    const double lam_n = prior.lambda0 + static_cast<double>(n);
    a_n_[n] = a_n;
    lam_n_[n] = lam_n;
    const_term_[n] = std::lgamma(a_n + 0.5) - std::lgamma(a_n) -
                     0.5 * std::log(2.0 * a_n * std::numbers::pi) -
                     0.5 * std::log((lam_n + 1.0) / (a_n * lam_n));
  }
}

double PredictiveTable::operator()(const ClusterStats& stats, double y) const {
  const std::size_t n = static_cast<std::size_t>(stats.n());
  if (n >= a_n_.size()) throw invalid_input("PredictiveTable: cluster larger than n_max");
  const double a_n = a_n_[n];
  const double lam_n = lam_n_[n];
  double mu_n, b_n;
  if (n == 0) {
    mu_n = prior_.mu0;
    b_n = prior_.b0;
  } else {
    const double nf = static_cast<double>(n);
    const double ybar = stats.sum() / nf;
    const double d = ybar - prior_.mu0;
    mu_n = (prior_.lambda0 * prior_.mu0 + stats.sum()) / lam_n;
    b_n = prior_.b0 + 0.5 * (ssd(stats) + prior_.lambda0 * nf * d * d / lam_n);
  }
  const double dev = y - mu_n;
  return const_term_[n] - 0.5 * std::log(b_n) -
         (a_n + 0.5) * std::log1p(lam_n * dev * dev / (2.0 * b_n * (lam_n + 1.0)));
}

NigPrior hyperparams_from_data(std::span<const double> y) {
  if (y.size() < 2) throw degenerate_data("hyperparams_from_data: need at least 2 observations");
  double sum = 0.0, sumsq = 0.0;
  double lo = y[0], hi = y[0];
  for (double v : y) {
    if (!std::isfinite(v)) throw degenerate_data("hyperparams_from_data: non-finite observation");
    sum += v;
    sumsq += v * v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) throw degenerate_data("hyperparams_from_data: constant sample, range rule undefined");
  const double n = static_cast<double>(y.size());
  const double mean = sum / n;
  const double var = std::max(0.0, sumsq / n - mean * mean);  // population variance
  if (!(var > 0.0)) throw degenerate_data("hyperparams_from_data: zero variance");
  NigPrior p;
  p.mu0 = mean;
  p.lambda0 = 2.6 / (hi - lo);
  p.a0 = 1.28;
  p.b0 = 0.36 * var;
  return p;
}

}  // namespace evidence
