#ifndef EVIDENCE_MCSTATS_HPP
#define EVIDENCE_MCSTATS_HPP

#include <cstdint>
#include <span>
#include <vector>

namespace evidence::stats {

// log(sum_i exp(x_i)) with max-shift; deterministic fixed-order pairwise
// summation, exact for single-element input. Empty input -> -inf.
double log_sum_exp(std::span<const double> x);
double log_add_exp(double a, double b);
// log(exp(a) - exp(b)); requires a >= b (returns -inf when equal).
double log_sub_exp(double a, double b);
double log_mean_exp(std::span<const double> x);

// Delta-method (i.i.d.) standard error of log-mean-exp:
// sd(w) / (sqrt(T) * mean(w)) computed entirely from the log values.
double se_log_mean_exp(std::span<const double> logw);
// Leave-one-out jackknife standard error of log-mean-exp.
double jackknife_se_log_mean_exp(std::span<const double> logw);
// Nonparametric bootstrap standard error of log-mean-exp.
double bootstrap_se_log_mean_exp(std::span<const double> logw, int replicates,
                                 std::uint64_t seed);

// Bartlett-kernel long-run variance of the sample mean of an autocorrelated
// series: (1/T) * (c0 + 2 * sum_{s<=q} (1 - s/(q+1)) c_s), with c_s the lag-s
// autocovariance about the sample mean (1/T normalization). q = 0 reduces to
// (population variance)/T. Nonnegative by the kernel's positive
// semidefiniteness; clamped at 0 against roundoff.
double newey_west_variance(std::span<const double> series, int q);

// Default truncation lag floor(T^(1/3)).
int newey_west_default_lag(std::size_t t);

// se(log p) = sqrt(var_p) / p_hat.
double delta_method_se_log(double p_hat, double var_p);

// Effective sample size by non-overlapping batch means with floor(sqrt(T))
// batches; clamped to [1, T]. Constant chains return 1.
double ess_batch_means(std::span<const double> chain);

}  // namespace evidence::stats

#endif
