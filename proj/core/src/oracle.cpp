#include "evidence/oracle.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"
#include "evidence/partitions.hpp"

namespace evidence::oracle {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Streaming log-sum-exp accumulator: running max with rescaled partial sum.
class StreamingLse {
 public:
  void add(double logv) {
    if (logv == kNegInf) return;
    if (logv <= mx_) {
      sum_ += std::exp(logv - mx_);
    } else {
      sum_ = sum_ * std::exp(mx_ - logv) + 1.0;
      mx_ = logv;
    }
  }
  double value() const { return sum_ > 0.0 ? mx_ + std::log(sum_) : kNegInf; }

 private:
  double mx_ = kNegInf;
  double sum_ = 0.0;
};

double pow_ll(int base, int exp) {
  double v = 1.0;
  for (int i = 0; i < exp; ++i) v *= static_cast<double>(base);
  return v;
}

}  // namespace

double fm_exact_evidence(std::span<const double> data, int k, const NigPrior& prior,
                         std::span<const double> alpha) {
  prior.validate();
  if (k < 1) throw invalid_input("fm_exact_evidence: k must be >= 1");
  if (alpha.size() != static_cast<std::size_t>(k))
    throw invalid_input("fm_exact_evidence: alpha size mismatch");
  const int n = static_cast<int>(data.size());
  if (pow_ll(k, n) > 1e7) {
    std::ostringstream msg;
    msg << "fm_exact_evidence: K^n = " << k << "^" << n << " exceeds the 1e7 enumeration guard";
    throw size_guard(msg.str());
  }
  if (n == 0) return 0.0;

  double alpha_sum = 0.0;
  for (double a : alpha) alpha_sum += a;
  const PredictiveTable pred(prior, n);

  // Depth-first walk over all K^n allocations. The joint mass telescopes into
  // per-step factors (alpha_j + n_j)/(alpha_sum + i) x predictive ratio, so
  // each tree edge costs one predictive evaluation.
  StreamingLse total;
  std::vector<ClusterStats> st(static_cast<std::size_t>(k));
  const auto rec = [&](auto&& self, int i, double acc) -> void {
    if (i == n) {
      total.add(acc);
      return;
    }
    const double y = data[static_cast<std::size_t>(i)];
    const double log_denom = std::log(alpha_sum + static_cast<double>(i));
    for (int j = 0; j < k; ++j) {
      ClusterStats& s = st[static_cast<std::size_t>(j)];
      const double step =
          pred(s, y) + std::log(alpha[static_cast<std::size_t>(j)] + static_cast<double>(s.n())) - log_denom;
      s.add(y);
      self(self, i + 1, acc + step);
      s.remove(y);
    }
  };
  rec(rec, 0, 0.0);
  return total.value();
}

double fm_exact_evidence_partition(std::span<const double> data, int k, const NigPrior& prior,
                                   std::span<const double> alpha) {
  prior.validate();
  if (k < 1) throw invalid_input("fm_exact_evidence_partition: k must be >= 1");
  if (alpha.size() != static_cast<std::size_t>(k))
    throw invalid_input("fm_exact_evidence_partition: alpha size mismatch");
  const int n = static_cast<int>(data.size());
  if (pow_ll(k, n) > 1e7)
    throw size_guard("fm_exact_evidence_partition: K^n exceeds the 1e7 enumeration guard");
  if (n == 0) return 0.0;

  StreamingLse total;
  for_each_set_partition(n, k, [&](std::span<const int> labels, int) {
    Allocation a{std::vector<int>(labels.begin(), labels.end()), k};
    total.add(log_partition_prior(a, alpha) + log_partition_likelihood(a, data, prior));
  });
  return total.value();
}

namespace {

// One enumeration pass shared by the fixed-M and integrated-M oracles:
// log-sum-exp of [sum_j lgamma(n_j) + sum_j log m(block_j)] collected per
// block count, so every later M evaluation is O(n) instead of O(Bell(n)).
std::vector<double> collect_block_terms(std::span<const double> data, const NigPrior& prior) {
  const int n = static_cast<int>(data.size());
  if (n > 14) {
    std::ostringstream msg;
    msg << "dpm oracle: n = " << n << " exceeds the n <= 14 set-partition enumeration guard";
    throw size_guard(msg.str());
  }
  std::vector<StreamingLse> acc(static_cast<std::size_t>(n) + 1);
  std::vector<ClusterStats> st;
  for_each_set_partition(n, n, [&](std::span<const int> labels, int blocks) {
    st.assign(static_cast<std::size_t>(blocks), ClusterStats{});
    for (int i = 0; i < n; ++i)
      st[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].add(
          data[static_cast<std::size_t>(i)]);
    double v = 0.0;
    for (const ClusterStats& s : st)
      v += std::lgamma(static_cast<double>(s.n())) + cluster_log_marginal(s, prior);
    acc[static_cast<std::size_t>(blocks)].add(v);
  });
  std::vector<double> out(acc.size());
  for (std::size_t j = 0; j < acc.size(); ++j) out[j] = acc[j].value();
  return out;
}

// log sum over partitions of exp(prior(z|M) + loglik(z)) given the collected
// per-block-count terms.
double inner_log_evidence(const std::vector<double>& block_terms, long long n, double m) {
  std::vector<double> terms;
  terms.reserve(block_terms.size());
  const double log_m = std::log(m);
  for (std::size_t j = 1; j < block_terms.size(); ++j)
    if (block_terms[j] != kNegInf)
      terms.push_back(block_terms[j] + static_cast<double>(j) * log_m);
  return std::lgamma(m) - std::lgamma(m + static_cast<double>(n)) + stats::log_sum_exp(terms);
}

// Gamma(a,b)-weighted integral of exp(f(M)) over M > 0 by generalized
// Gauss-Laguerre quadrature, doubling nodes until two successive grids agree.
template <typename F>
double gamma_weighted_log_integral(const dpm::GammaPrior& g, int nodes_start, F&& log_f) {
  gsl_set_error_handler_off();
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int nodes = nodes_start; nodes <= 8 * nodes_start; nodes *= 2) {
    gsl_integration_fixed_workspace* ws = gsl_integration_fixed_alloc(
        gsl_integration_fixed_laguerre, static_cast<std::size_t>(nodes), 0.0, g.b, g.a - 1.0, 0.0);
    if (ws == nullptr) throw convergence_failure("dpm oracle: quadrature workspace allocation failed");
    const double* x = gsl_integration_fixed_nodes(ws);
    const double* w = gsl_integration_fixed_weights(ws);
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(nodes));
    for (int i = 0; i < nodes; ++i)
      if (w[i] > 0.0 && x[i] > 0.0) terms.push_back(std::log(w[i]) + log_f(x[i]));
    gsl_integration_fixed_free(ws);
    const double value =
        g.a * std::log(g.b) - std::lgamma(g.a) + stats::log_sum_exp(terms);
    if (std::isfinite(prev) && std::abs(value - prev) < 1e-8) return value;
    prev = value;
  }
  std::ostringstream msg;
  msg << "dpm oracle: quadrature did not stabilize to 1e-8 by " << 8 * nodes_start << " nodes";
  throw convergence_failure(msg.str());
}

}  // namespace

double dpm_fixed_m_log_evidence(std::span<const double> data, double m_conc,
                                const NigPrior& prior) {
  prior.validate();
  if (!(m_conc > 0.0)) throw invalid_input("dpm_fixed_m_log_evidence: concentration must be positive");
  if (data.empty()) return 0.0;
  const std::vector<double> block_terms = collect_block_terms(data, prior);
  return inner_log_evidence(block_terms, static_cast<long long>(data.size()), m_conc);
}

double dpm_exact_evidence(std::span<const double> data, const NigPrior& prior,
                          const dpm::GammaPrior& gprior, int quad_nodes) {
  prior.validate();
  gprior.validate();
  if (quad_nodes < 2) throw invalid_input("dpm_exact_evidence: need at least 2 quadrature nodes");
  if (data.empty()) return 0.0;
  const std::vector<double> block_terms = collect_block_terms(data, prior);
  const long long n = static_cast<long long>(data.size());
  return gamma_weighted_log_integral(gprior, quad_nodes, [&](double m) {
    return inner_log_evidence(block_terms, n, m);
  });
}

double dpm_exact_posterior_mean_m(std::span<const double> data, const NigPrior& prior,
                                  const dpm::GammaPrior& gprior, int quad_nodes) {
  prior.validate();
  gprior.validate();
  if (quad_nodes < 2) throw invalid_input("dpm_exact_posterior_mean_m: need at least 2 quadrature nodes");
  if (data.empty()) return gprior.a / gprior.b;  // posterior = prior
  const std::vector<double> block_terms = collect_block_terms(data, prior);
  const long long n = static_cast<long long>(data.size());
  const double log_evidence = gamma_weighted_log_integral(gprior, quad_nodes, [&](double m) {
    return inner_log_evidence(block_terms, n, m);
  });
  const double log_first_moment = gamma_weighted_log_integral(gprior, quad_nodes, [&](double m) {
    return std::log(m) + inner_log_evidence(block_terms, n, m);
  });
  return std::exp(log_first_moment - log_evidence);
}

}  // namespace evidence::oracle
