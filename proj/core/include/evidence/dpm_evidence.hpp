#ifndef EVIDENCE_DPM_EVIDENCE_HPP
#define EVIDENCE_DPM_EVIDENCE_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "evidence/dpm_model.hpp"
#include "evidence/estimate.hpp"

// Evidence estimators for the Dirichlet-process mixture: the candidate-value
// identity at a fixed concentration M*, and reverse logistic regression with
// a sequential-imputation or prior adversarial distribution.

namespace evidence::dpm {

enum class MstarRule { posterior_mean, posterior_median, fixed };

struct ChibDpmOptions {
  long long t1 = 30000;   // Gibbs sweeps after burn-in (posterior ordinate)
  long long burnin = 2000;
  long long t2 = 2000;    // independent sequential imputations at M*
  MstarRule mstar_rule = MstarRule::posterior_mean;
  double m_fixed = 1.0;   // used when mstar_rule == fixed
  int nw_lag = -1;
  std::uint64_t seed = 0, stream = 0;
};
// log evidence = log L(y | M*, G0) + log prior(M*) - log posterior(M*|y),
// with the likelihood ordinate from t2 sequential imputations and the
// posterior ordinate Rao-Blackwellized over the chain's two-Gamma
// conditionals.
EvidenceEstimate chib_dpm(std::span<const double> data, const NigPrior& prior,
                          const GammaPrior& gprior, const ChibDpmOptions& opt);

enum class RlrAdversarial { sis, prior };

// One pooled sample for the two-population membership regression.
struct RlrSample {
  enum class Source { adversarial, posterior };
  Source source;
  double log_pi1;        // normalized adversarial log density
  double log_pi2_tilde;  // unnormalized posterior log density
};

struct RlrSolution {
  double log_c2;
  double se_log;
  int iterations;
  double is_forward;   // bracket endpoint: importance-sampling estimate
  double is_reverse;   // bracket endpoint: reciprocal estimate
};
// Maximizes the membership quasi-likelihood over log c2 (strictly concave;
// safeguarded Newton inside a bracket grown from the two IS endpoints).
// t2_eff replaces the posterior sample size in the variance formula only.
RlrSolution rlr_solve(std::span<const RlrSample> samples, double t2_eff,
                      double tol = 1e-10, int max_iter = 200);

struct RlrOptions {
  RlrAdversarial adversarial = RlrAdversarial::sis;
  long long t1 = 30000;   // adversarial draws
  long long t2 = 2000;    // posterior sweeps (after burn-in)
  long long burnin = 2000;
  double tol = 1e-10;
  int max_iter = 200;
  std::uint64_t seed = 0, stream = 0;
};
EvidenceEstimate rlr_evidence(std::span<const double> data, const NigPrior& prior,
                              const GammaPrior& gprior, const RlrOptions& opt);

}  // namespace evidence::dpm

#endif
