#ifndef EVIDENCE_ORACLE_HPP
#define EVIDENCE_ORACLE_HPP

#include <span>

#include "evidence/conjugate.hpp"
#include "evidence/dpm_model.hpp"

// Exact brute-force evidences for tiny instances: ground truth for the
// estimator tests. Enumeration guards throw size_guard.

namespace evidence::oracle {

// Exact finite-mixture evidence by summing over all K^n labeled allocations
// (Dirichlet-multinomial mass x product of cluster marginals). Guard:
// K^n <= 1e7.
double fm_exact_evidence(std::span<const double> data, int k, const NigPrior& prior,
                         std::span<const double> alpha);

// Same value via the canonical-partition route (partition prior x partition
// likelihood, at most k blocks); symmetric alpha only. Cross-checks the
// allocation route.
double fm_exact_evidence_partition(std::span<const double> data, int k,
                                   const NigPrior& prior,
                                   std::span<const double> alpha);

// Exact DPM evidence at fixed concentration M: sum over all set partitions.
// Guard: n <= 14.
double dpm_fixed_m_log_evidence(std::span<const double> data, double m_conc,
                                const NigPrior& prior);

// Exact DPM evidence with M ~ Gamma(a,b), by one partition enumeration pass
// (collected per block count) and Gamma-weighted Gauss-Laguerre quadrature
// over M; nodes doubled from `quad_nodes` until successive values agree to
// 1e-8. Guard: n <= 14.
double dpm_exact_evidence(std::span<const double> data, const NigPrior& prior,
                          const dpm::GammaPrior& gprior, int quad_nodes = 200);

// Posterior moments of M on enumerable instances (same machinery); used to
// validate the concentration update of the collapsed sampler.
double dpm_exact_posterior_mean_m(std::span<const double> data, const NigPrior& prior,
                                  const dpm::GammaPrior& gprior, int quad_nodes = 200);

}  // namespace evidence::oracle

#endif
