#ifndef EVIDENCE_CONJUGATE_HPP
#define EVIDENCE_CONJUGATE_HPP

#include <cstdint>
#include <span>
#include <vector>

// Normal / inverse-gamma conjugate machinery for one Gaussian cluster:
//   sigma^2 ~ InvGamma(a0, b0)   (shape/scale)
//   mu | sigma^2 ~ N(mu0, sigma^2 / lambda0)
// Everything downstream (partition likelihoods, predictive ratios, collapsed
// samplers) reduces to the closed-form cluster marginal implemented here.

namespace evidence {

struct NigPrior {
  double mu0 = 0.0;
  double lambda0 = 1.0;
  double a0 = 1.0;
  double b0 = 1.0;
  void validate() const;  // throws invalid_input
};

// Prior-or-posterior parameter quadruple of the same family.
struct NigParams {
  double mu;
  double lambda;
  double a;
  double b;
};

// Sufficient statistics (n, sum, sum of squares) of one cluster, with
// compensated accumulation so add/remove round trips stay at 1e-10 scale.
class ClusterStats {
 public:
  void add(double y) {
    n_ += 1;
    kahan_add(sum_, sum_c_, y);
    kahan_add(sumsq_, sumsq_c_, y * y);
  }
  void remove(double y) {
    n_ -= 1;
    kahan_add(sum_, sum_c_, -y);
    kahan_add(sumsq_, sumsq_c_, -(y * y));
  }
  long long n() const { return n_; }
  double sum() const { return sum_; }
  double sumsq() const { return sumsq_; }

 private:
  static void kahan_add(double& s, double& c, double v) {
    const double y = v - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  long long n_ = 0;
  double sum_ = 0.0, sum_c_ = 0.0;
  double sumsq_ = 0.0, sumsq_c_ = 0.0;
};

ClusterStats make_stats(std::span<const double> ys);

// Posterior NIG parameters given the cluster; empty cluster returns the prior.
NigParams nig_posterior(const ClusterStats& stats, const NigPrior& prior);

// log NIG density of (mu, sigma2) under the given parameter quadruple.
double nig_log_density(double mu, double sigma2, const NigParams& p);

// log m(C) = log integral of prod N(y|mu,sigma2) against the NIG prior.
// Empty cluster -> 0 (m(empty) = 1).
double cluster_log_marginal(const ClusterStats& stats, const NigPrior& prior);
double cluster_log_marginal(std::span<const double> ys, const NigPrior& prior);

// log m(C + y) - log m(C): the posterior-predictive (Student-t) density of y
// given the cluster contents. Empty cluster gives the prior predictive.
double predictive_log_ratio(const ClusterStats& stats, double y, const NigPrior& prior);

// predictive_log_ratio with per-cluster-size constants precomputed up to
// n_max; used in the sequential-imputation and urn inner loops.
class PredictiveTable {
 public:
  PredictiveTable(const NigPrior& prior, long long n_max);
  double operator()(const ClusterStats& stats, double y) const;
  const NigPrior& prior() const { return prior_; }

 private:
  NigPrior prior_;
  // indexed by cluster size n: lgamma/lambda pieces that only depend on n
  std::vector<double> const_term_;  // lgamma(a_n + 1/2) - lgamma(a_n) - 0.5 log(2 a_n pi) - 0.5 log((lam_n+1)/(a_n lam_n))
  std::vector<double> a_n_, lam_n_;
};

// Range/variance-based default hyperparameters from the observed sample:
// a0 = 1.28, b0 = 0.36 * (population variance), mu0 = mean,
// lambda0 = 2.6 / range. Requires at least two distinct values.
NigPrior hyperparams_from_data(std::span<const double> y);

}  // namespace evidence

#endif
