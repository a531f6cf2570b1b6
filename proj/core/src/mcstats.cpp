#include "evidence/mcstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evidence/errors.hpp"
#include "evidence/rng.hpp"

namespace evidence::stats {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fixed-order pairwise sum: deterministic and low error growth for long
// reductions, independent of how the caller produced the values.
double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

}  // namespace

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return kNegInf;
  double m = kNegInf;
  for (double v : x)
    if (v > m) m = v;
  if (!std::isfinite(m)) return m;  // all -inf, or a NaN/inf dominates
  if (x.size() == 1) return x[0];
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) e[i] = std::exp(x[i] - m);
  return m + std::log(pairwise_sum(e.data(), e.size()));
}

double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

double log_sub_exp(double a, double b) {
  if (b == kNegInf) return a;
  if (a < b) throw invalid_input("log_sub_exp: first argument smaller than second");
  const double d = b - a;
  const double r = -std::expm1(d);  // 1 - exp(b-a), in [0,1]
  return r <= 0.0 ? kNegInf : a + std::log(r);
}

double log_mean_exp(std::span<const double> x) {
  if (x.empty()) throw invalid_input("log_mean_exp: empty input");
  return log_sum_exp(x) - std::log(static_cast<double>(x.size()));
}

double se_log_mean_exp(std::span<const double> logw) {
  const std::size_t t = logw.size();
  if (t < 2) throw invalid_input("se_log_mean_exp: need at least 2 values");
  const double l1 = log_sum_exp(logw);
  if (l1 == kNegInf) return std::numeric_limits<double>::infinity();
  std::vector<double> twice(logw.begin(), logw.end());
  for (double& v : twice) v *= 2.0;
  const double l2 = log_sum_exp(twice);
  // se^2 = (T exp(l2 - 2 l1) - 1) / (T - 1)
  const double ratio = std::expm1(l2 - 2.0 * l1 + std::log(static_cast<double>(t)));
  return std::sqrt(std::max(0.0, ratio / static_cast<double>(t - 1)));
}

double jackknife_se_log_mean_exp(std::span<const double> logw) {
  const std::size_t t = logw.size();
  if (t < 2) throw invalid_input("jackknife_se_log_mean_exp: need at least 2 values");
  const double lse = log_sum_exp(logw);
  const double logtm1 = std::log(static_cast<double>(t - 1));
  std::vector<double> loo(t);
  for (std::size_t i = 0; i < t; ++i) loo[i] = log_sub_exp(lse, logw[i]) - logtm1;
  double mean = 0.0;
  for (double v : loo) mean += v;
  mean /= static_cast<double>(t);
  double ss = 0.0;
  for (double v : loo) ss += (v - mean) * (v - mean);
  return std::sqrt(ss * static_cast<double>(t - 1) / static_cast<double>(t));
}

double bootstrap_se_log_mean_exp(std::span<const double> logw, int replicates,
                                 std::uint64_t seed) {
  const std::size_t t = logw.size();
  if (t < 2) throw invalid_input("bootstrap_se_log_mean_exp: need at least 2 values");
  if (replicates < 2) throw invalid_input("bootstrap_se_log_mean_exp: need >= 2 replicates");
  Rng rng = make_rng(seed, 0x626f6f74);
  std::uniform_int_distribution<std::size_t> pick(0, t - 1);
  std::vector<double> resample(t), est(static_cast<std::size_t>(replicates));
  for (int b = 0; b < replicates; ++b) {
    for (std::size_t i = 0; i < t; ++i) resample[i] = logw[pick(rng)];
    est[static_cast<std::size_t>(b)] = log_mean_exp(resample);
  }
  double mean = 0.0;
  for (double v : est) mean += v;
  mean /= static_cast<double>(replicates);
  double ss = 0.0;
  for (double v : est) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(replicates - 1));
}

double newey_west_variance(std::span<const double> series, int q) {
  const std::size_t t = series.size();
  if (t == 0) throw invalid_input("newey_west_variance: empty series");
  if (q < 0 || static_cast<std::size_t>(q) >= t)
    throw invalid_input("newey_west_variance: need 0 <= q < T");
  const double tf = static_cast<double>(t);
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= tf;
  auto autocov = [&](int s) {
    double c = 0.0;
    for (std::size_t i = static_cast<std::size_t>(s); i < t; ++i)
      c += (series[i] - mean) * (series[i - static_cast<std::size_t>(s)] - mean);
    return c / tf;
  };
  double lrv = autocov(0);
  for (int s = 1; s <= q; ++s)
    lrv += 2.0 * (1.0 - static_cast<double>(s) / (q + 1.0)) * autocov(s);
  return std::max(0.0, lrv / tf);
}

int newey_west_default_lag(std::size_t t) {
  const int q = static_cast<int>(std::floor(std::cbrt(static_cast<double>(t))));
  return std::max(0, std::min(q, static_cast<int>(t) - 1));
}

double delta_method_se_log(double p_hat, double var_p) {
  if (!(p_hat > 0.0)) throw invalid_input("delta_method_se_log: p_hat must be positive");
  if (var_p < 0.0) throw invalid_input("delta_method_se_log: negative variance");
  return std::sqrt(var_p) / p_hat;
}

double ess_batch_means(std::span<const double> chain) {
  const std::size_t t = chain.size();
  if (t < 16) throw invalid_input("ess_batch_means: need at least 16 points");
  const std::size_t nb = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(t))));
  const std::size_t m = t / nb;
  const std::size_t used = nb * m;
  double mean = 0.0;
  for (std::size_t i = 0; i < used; ++i) mean += chain[i];
  mean /= static_cast<double>(used);
  double s2 = 0.0;
  for (std::size_t i = 0; i < used; ++i) s2 += (chain[i] - mean) * (chain[i] - mean);
  s2 /= static_cast<double>(used - 1);
  if (s2 == 0.0) return 1.0;  // constant chain carries one sample of information
  double s2_bm = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    double bm = 0.0;
    for (std::size_t i = b * m; i < (b + 1) * m; ++i) bm += chain[i];
    bm = bm / static_cast<double>(m) - mean;
    s2_bm += bm * bm;
  }
  s2_bm /= static_cast<double>(nb - 1);
  const double longrun = static_cast<double>(m) * s2_bm;
  if (longrun <= 0.0) return static_cast<double>(t);
  const double ess = static_cast<double>(used) * s2 / longrun;
  return std::clamp(ess, 1.0, static_cast<double>(t));
}

}  // namespace evidence::stats
