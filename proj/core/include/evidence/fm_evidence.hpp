#ifndef EVIDENCE_FM_EVIDENCE_HPP
#define EVIDENCE_FM_EVIDENCE_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evidence/estimate.hpp"
#include "evidence/fm_model.hpp"

// The eight finite-mixture evidence estimators. All work in the log domain,
// consume an explicit (seed, stream) pair, and report their effective tuning
// in EvidenceEstimate::tuning.

namespace evidence::fm {

struct AmOptions {
  long long draws = 100000;
  std::uint64_t seed = 0, stream = 0;
};
// Prior-sample average of the likelihood (log-mean-exp); jackknife-free
// delta-method se. Unbiased in the linear domain.
EvidenceEstimate arithmetic_mean(std::span<const double> data, int k,
                                 const NigPrior& prior, std::span<const double> alpha,
                                 const AmOptions& opt);

struct HmOptions {
  long long sweeps = 10000, burnin = 1000;
  std::uint64_t seed = 0, stream = 0;
  int nw_lag = -1;  // -1: floor(T^(1/3))
};
// Posterior-sample harmonic mean of the likelihood. Known to be unstable;
// reported for reference.
EvidenceEstimate harmonic_mean(std::span<const double> data, int k,
                               const NigPrior& prior, std::span<const double> alpha,
                               const HmOptions& opt);

struct ChibOptions {
  long long sweeps = 10000, burnin = 1000;
  std::uint64_t seed = 0, stream = 0;
  std::optional<std::vector<int>> init_alloc;
  int nw_lag = -1;
};
// Candidate-point identity: loglik + logprior - log(average Rao-Blackwell
// ordinate) at the chain's MAP state. Biased when the chain fails to visit
// all K! labelings of the high-density region.
EvidenceEstimate chib(std::span<const double> data, int k, const NigPrior& prior,
                      std::span<const double> alpha, const ChibOptions& opt);

struct ChibPermOptions {
  long long sweeps = 10000, burnin = 1000;
  std::uint64_t seed = 0, stream = 0;
  std::optional<std::vector<int>> init_alloc;
  int nw_lag = -1;
  bool full = true;  // full: average the ordinate over all k! relabelings
  int r = 100;       // random mode: i.i.d. uniform permutations, drawn once
};
// Permutation-symmetrized ordinate. Full mode guarded at k <= 6; random mode
// with r >= k! (and k <= 6) enumerates exhaustively instead of sampling.
EvidenceEstimate chib_permutation(std::span<const double> data, int k,
                                  const NigPrior& prior, std::span<const double> alpha,
                                  const ChibPermOptions& opt);

struct ChibPartitionOptions {
  long long sweeps = 10000, burnin = 1000;
  std::uint64_t seed = 0, stream = 0;
  int nw_lag = -1;    // -1: floor(T^(1/3))
  int min_count = 10; // occupancy floor for the modal partition
};
// Label-free candidate identity: score(C0) - log(visit frequency of C0),
// where C0 maximizes prior x likelihood over visited canonical partitions.
// se via Bartlett long-run variance of the indicator series + delta method.
EvidenceEstimate chib_partition(std::span<const double> data, int k,
                                const NigPrior& prior, std::span<const double> alpha,
                                const ChibPartitionOptions& opt);

struct BridgeOptions {
  long long t0 = 100;      // allocations resampled into the proposal mixture
  long long t1 = 12000;    // proposal draws
  long long t2 = 12000;    // posterior sweeps (after burn-in)
  long long burnin = 5000;
  double tol = 1e-10;
  int max_iter = 500;
  std::uint64_t seed = 0, stream = 0;
  std::optional<double> init_log_m;  // default: importance-sampling estimate
};
// Iterative bridge estimator between the posterior sample and a
// permutation-symmetrized mixture of conditional posteriors built from t0
// resampled allocations. Guarded at k <= 6 (cost grows with k!).
EvidenceEstimate bridge_sampling(std::span<const double> data, int k,
                                 const NigPrior& prior, std::span<const double> alpha,
                                 const BridgeOptions& opt);

struct SmcOptions {
  int particles = 10000;
  int moves = 10;            // random-walk MH sweeps per particle per stage
  double ess_target = 0.5;   // fraction of N
  double bisect_tol = 1e-6;  // on the tempering exponent
  std::uint64_t seed = 0, stream = 0;
};
// Adaptive likelihood-tempered sampler: exponents chosen by bisection so each
// incremental-weight ESS hits ess_target*N, multinomial resampling, and
// scaled-covariance random-walk moves on unconstrained coordinates. The
// product of incremental-weight means is unbiased for the evidence.
EvidenceEstimate smc_evidence(std::span<const double> data, int k,
                              const NigPrior& prior, std::span<const double> alpha,
                              const SmcOptions& opt);

struct SisOptions {
  long long draws = 10000;
  std::uint64_t seed = 0, stream = 0;
};
// Sequential imputation: allocations drawn one observation at a time from
// their prequential conditionals; the product of predictive normalizers is
// an unbiased evidence estimate. se = sd(w) / (sqrt(T) mean(w)).
EvidenceEstimate sis_evidence(std::span<const double> data, int k,
                              const NigPrior& prior, std::span<const double> alpha,
                              const SisOptions& opt);

}  // namespace evidence::fm

#endif
