#ifndef EVIDENCE_FM_MODEL_HPP
#define EVIDENCE_FM_MODEL_HPP

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "evidence/conjugate.hpp"
#include "evidence/partitions.hpp"
#include "evidence/rng.hpp"

// Finite Gaussian mixture with Dirichlet(alpha) weights and one shared
// normal/inverse-gamma base prior on the K component parameters: model
// definition, prior sampling, data-augmentation Gibbs sweep, and the
// Rao-Blackwell posterior ordinate that the candidate-point estimators need.

namespace evidence::fm {

struct Component {
  double mu = 0.0;
  double sigma2 = 1.0;
};

struct FmParams {
  std::vector<double> weights;    // on the simplex
  std::vector<Component> comps;
  int k() const { return static_cast<int>(comps.size()); }
  void validate() const;  // throws invalid_input
};

// sum_i log sum_k w_k N(y_i | mu_k, sigma2_k); 0 for empty data.
double fm_log_likelihood(const FmParams& p, std::span<const double> data);

// log Dirichlet(weights | alpha) + sum_k log NIG(mu_k, sigma2_k | prior).
double fm_log_prior_density(const FmParams& p, const NigPrior& prior,
                            std::span<const double> alpha);

FmParams fm_sample_prior(int k, const NigPrior& prior,
                         std::span<const double> alpha, Rng& rng);

// One systematic sweep: z_i | params for all i, then weights | z, then
// component parameters | z (empty clusters drawn from the prior).
void fm_gibbs_sweep(FmParams& params, std::vector<int>& z,
                    std::span<const double> data, const NigPrior& prior,
                    std::span<const double> alpha, Rng& rng);

// Rao-Blackwell ordinate: log Dirichlet(w0 | alpha + counts) +
// sum_k log NIG(theta0_k | posterior of cluster k). `stats_by_label` has one
// entry per label (empty clusters condition on the prior).
double fm_posterior_ordinate(const FmParams& params0,
                             std::span<const ClusterStats> stats_by_label,
                             const NigPrior& prior, std::span<const double> alpha);
double fm_posterior_ordinate(const FmParams& params0, const Allocation& a,
                             std::span<const double> data, const NigPrior& prior,
                             std::span<const double> alpha);

struct ChainOptions {
  long long sweeps = 10000;   // stored sweeps after burn-in
  long long burnin = 1000;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::optional<std::vector<int>> init_alloc;  // default: params from the prior
  bool store_stats = true;   // per-sweep per-label cluster statistics
  bool store_canon = false;  // per-sweep canonical partition ids
  bool store_params = false; // per-sweep parameter draws
};

// Stored output of one Gibbs run. Per-sweep cluster statistics live in a flat
// row-major array (sweeps x k). Canonical partitions are hash-consed into
// `canon_pool`; `canon_id[t]` indexes it. The maximum-a-posteriori state is
// tracked over the stored portion of the chain.
struct FmChain {
  int k = 0;
  long long sweeps = 0;
  std::vector<double> loglik;                // mixture log likelihood per sweep
  std::vector<ClusterStats> stats_flat;      // sweeps*k when stored
  std::vector<std::uint32_t> canon_id;
  std::vector<CanonicalPartition> canon_pool;
  std::vector<FmParams> params;              // when stored
  FmParams map_params;
  std::vector<int> map_alloc;
  double map_log_aug = -std::numeric_limits<double>::infinity();

  std::span<const ClusterStats> stats_row(long long t) const {
    return {stats_flat.data() + static_cast<std::size_t>(t) * static_cast<std::size_t>(k),
            static_cast<std::size_t>(k)};
  }
};

FmChain fm_run_chain(std::span<const double> data, int k, const NigPrior& prior,
                     std::span<const double> alpha, const ChainOptions& opt);

}  // namespace evidence::fm

#endif
