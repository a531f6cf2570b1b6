#ifndef EVIDENCE_DPM_MODEL_HPP
#define EVIDENCE_DPM_MODEL_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evidence/conjugate.hpp"
#include "evidence/rng.hpp"

// Dirichlet-process Gaussian mixture with concentration M ~ Gamma(a, b):
// allocation prior, collapsed Gibbs sweep (urn conditionals + the exact
// two-Gamma concentration update), and the sequential imputation sampler.

namespace evidence::dpm {

struct GammaPrior {
  double a = 1.0;
  double b = 1.0;  // rate
  void validate() const;  // throws invalid_input
};

// Markov chain state: allocation labels (contiguous, first-appearance
// canonical after each sweep), concentration M, and the Beta auxiliary
// variable of the concentration update.
struct DpmState {
  std::vector<int> z;
  double m_conc = 1.0;
  double eta = 0.5;
};

// Exchangeable allocation prior:
// lgamma(M) - lgamma(M+n) + K+ log M + sum_j lgamma(n_j).
double dpm_log_prior_z(std::span<const int> z, double m_conc);

// sum over blocks of cluster_log_marginal.
double dpm_log_likelihood_z(std::span<const int> z, std::span<const double> data,
                            const NigPrior& prior);

// One collapsed sweep: every z_i from its urn conditional (existing cluster
// proportional to size x predictive, new cluster proportional to M x prior
// predictive), then eta ~ Beta(M+1, n), then M from the exact two-Gamma
// mixture given (eta, K+). Labels are garbage-collected and canonicalized.
void dpm_gibbs_sweep(DpmState& state, std::span<const double> data,
                     const NigPrior& prior, const GammaPrior& gprior, Rng& rng);

// Sequential allocation draw from the prior urn (no data).
std::vector<int> dpm_sample_urn(int n, double m_conc, Rng& rng);

struct DpmSisResult {
  std::vector<int> z;       // first-appearance canonical by construction
  double log_weight;        // log prod of predictive normalizers
  double log_proposal;      // log prob of the realized allocation under the draw
};
// One sequential imputation at fixed M: z_i drawn from its prequential
// conditional given y_1..y_i; exp(log_weight) is unbiased for the fixed-M
// evidence.
DpmSisResult dpm_sis_impute(std::span<const double> data, double m_conc,
                            const NigPrior& prior, Rng& rng);
DpmSisResult dpm_sis_impute(std::span<const double> data, double m_conc,
                            const PredictiveTable& pred, Rng& rng);

// Log-probability that the sequential imputation sampler produces exactly
// this (first-appearance canonical) allocation at fixed M.
double dpm_sis_log_proposal(std::span<const double> data, std::span<const int> z,
                            double m_conc, const NigPrior& prior);

struct DpmChainOptions {
  long long sweeps = 10000;  // stored sweeps after burn-in
  long long burnin = 1000;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  bool store_allocs = false;
  std::optional<DpmState> init;
};

struct DpmChain {
  std::vector<double> m_trace, eta_trace;
  std::vector<int> kplus_trace;
  std::vector<std::vector<int>> allocs;  // when stored
};

DpmChain dpm_run_chain(std::span<const double> data, const NigPrior& prior,
                       const GammaPrior& gprior, const DpmChainOptions& opt);

}  // namespace evidence::dpm

#endif
