#include "evidence/fm_model.hpp"

#include <cmath>

#include "evidence/dists.hpp"
#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"

namespace evidence::fm {

void FmParams::validate() const {
  if (comps.empty() || weights.size() != comps.size())
    throw invalid_input("FmParams: weights/components size mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw invalid_input("FmParams: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-12) throw invalid_input("FmParams: weights must sum to 1");
  for (const Component& c : comps)
    if (!(c.sigma2 > 0.0) || !std::isfinite(c.mu))
      throw invalid_input("FmParams: invalid component parameters");
}

double fm_log_likelihood(const FmParams& p, std::span<const double> data) {
  const int k = p.k();
  std::vector<double> logw(static_cast<std::size_t>(k));
  std::vector<double> terms(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    logw[static_cast<std::size_t>(j)] = std::log(p.weights[static_cast<std::size_t>(j)]);
  double total = 0.0;
  for (double y : data) {
    for (int j = 0; j < k; ++j) {
      const Component& c = p.comps[static_cast<std::size_t>(j)];
      terms[static_cast<std::size_t>(j)] = logw[static_cast<std::size_t>(j)] + log_normal_pdf(y, c.mu, c.sigma2);
    }
    total += stats::log_sum_exp(terms);
  }
  return total;
}

double fm_log_prior_density(const FmParams& p, const NigPrior& prior,
                            std::span<const double> alpha) {
  double out = log_dirichlet_pdf(p.weights, alpha);
  const NigParams base{prior.mu0, prior.lambda0, prior.a0, prior.b0};
  for (const Component& c : p.comps) out += nig_log_density(c.mu, c.sigma2, base);
  return out;
}

FmParams fm_sample_prior(int k, const NigPrior& prior, std::span<const double> alpha, Rng& rng) {
  if (k < 1) throw invalid_input("fm_sample_prior: k must be >= 1");
  if (alpha.size() != static_cast<std::size_t>(k))
    throw invalid_input("fm_sample_prior: alpha size mismatch");
  FmParams p;
  p.weights = sample_dirichlet(rng, alpha);
  p.comps.resize(static_cast<std::size_t>(k));
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  for (Component& c : p.comps) {
    c.sigma2 = sample_inv_gamma(rng, prior.a0, prior.b0);
    c.mu = prior.mu0 + stdnorm(rng) * std::sqrt(c.sigma2 / prior.lambda0);
  }
  return p;
}

namespace {

void draw_params_given_alloc(FmParams& params, const std::vector<ClusterStats>& stats,
                             const NigPrior& prior, std::span<const double> alpha, Rng& rng) {
  const int k = static_cast<int>(stats.size());
  std::vector<double> apost(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    apost[static_cast<std::size_t>(j)] =
        alpha[static_cast<std::size_t>(j)] + static_cast<double>(stats[static_cast<std::size_t>(j)].n());
  params.weights = sample_dirichlet(rng, apost);
  params.comps.resize(static_cast<std::size_t>(k));
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  for (int j = 0; j < k; ++j) {
    // empty clusters fall back to the prior via the n=0 posterior
    const NigParams post = nig_posterior(stats[static_cast<std::size_t>(j)], prior);
    Component& c = params.comps[static_cast<std::size_t>(j)];
    c.sigma2 = sample_inv_gamma(rng, post.a, post.b);
    c.mu = post.mu + stdnorm(rng) * std::sqrt(c.sigma2 / post.lambda);
  }
}

std::vector<ClusterStats> stats_from_alloc(std::span<const int> z, std::span<const double> data,
                                           int k) {
  std::vector<ClusterStats> stats(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < data.size(); ++i)
    stats[static_cast<std::size_t>(z[i])].add(data[i]);
  return stats;
}

}  // namespace

void fm_gibbs_sweep(FmParams& params, std::vector<int>& z, std::span<const double> data,
                    const NigPrior& prior, std::span<const double> alpha, Rng& rng) {
  const int k = params.k();
  if (z.size() != data.size()) throw invalid_input("fm_gibbs_sweep: allocation size mismatch");
  std::vector<double> logw(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    logw[static_cast<std::size_t>(j)] = std::log(params.weights[static_cast<std::size_t>(j)]);
  std::vector<double> lp(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < k; ++j) {
      const Component& c = params.comps[static_cast<std::size_t>(j)];
      lp[static_cast<std::size_t>(j)] = logw[static_cast<std::size_t>(j)] + log_normal_pdf(data[i], c.mu, c.sigma2);
    }
    z[i] = sample_categorical_from_log(rng, lp);
  }
  const std::vector<ClusterStats> stats = stats_from_alloc(z, data, k);
  draw_params_given_alloc(params, stats, prior, alpha, rng);
}

double fm_posterior_ordinate(const FmParams& params0,
                             std::span<const ClusterStats> stats_by_label,
                             const NigPrior& prior, std::span<const double> alpha) {
  const int k = params0.k();
  if (stats_by_label.size() != static_cast<std::size_t>(k) || alpha.size() != static_cast<std::size_t>(k))
    throw invalid_input("fm_posterior_ordinate: size mismatch");
  std::vector<double> apost(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    apost[static_cast<std::size_t>(j)] =
        alpha[static_cast<std::size_t>(j)] + static_cast<double>(stats_by_label[static_cast<std::size_t>(j)].n());
  double out = log_dirichlet_pdf(params0.weights, apost);
  for (int j = 0; j < k; ++j) {
    const NigParams post = nig_posterior(stats_by_label[static_cast<std::size_t>(j)], prior);
    const Component& c = params0.comps[static_cast<std::size_t>(j)];
    out += nig_log_density(c.mu, c.sigma2, post);
  }
  return out;
}

double fm_posterior_ordinate(const FmParams& params0, const Allocation& a,
                             std::span<const double> data, const NigPrior& prior,
                             std::span<const double> alpha) {
  a.validate();
  if (a.k != params0.k()) throw invalid_input("fm_posterior_ordinate: label budget mismatch");
  if (a.z.size() != data.size()) throw invalid_input("fm_posterior_ordinate: allocation size mismatch");
  const std::vector<ClusterStats> stats = stats_from_alloc(a.z, data, a.k);
  return fm_posterior_ordinate(params0, stats, prior, alpha);
}

FmChain fm_run_chain(std::span<const double> data, int k, const NigPrior& prior,
                     std::span<const double> alpha, const ChainOptions& opt) {
  prior.validate();
  if (k < 1) throw invalid_input("fm_run_chain: k must be >= 1");
  if (alpha.size() != static_cast<std::size_t>(k)) throw invalid_input("fm_run_chain: alpha size mismatch");
  if (opt.sweeps < 1) throw invalid_input("fm_run_chain: need at least one stored sweep");
  if (opt.burnin < 0) throw invalid_input("fm_run_chain: negative burn-in");

  Rng rng = make_rng(opt.seed, opt.stream);
  const std::size_t n = data.size();
  std::vector<int> z(n, 0);
  FmParams params;
  if (opt.init_alloc) {
    if (opt.init_alloc->size() != n) throw invalid_input("fm_run_chain: init allocation size mismatch");
    z = *opt.init_alloc;
    for (int zi : z)
      if (zi < 0 || zi >= k) throw invalid_input("fm_run_chain: init allocation label out of range");
    draw_params_given_alloc(params, stats_from_alloc(z, data, k), prior, alpha, rng);
  } else {
    params = fm_sample_prior(k, prior, alpha, rng);
  }

  FmChain chain;
  chain.k = k;
  chain.sweeps = opt.sweeps;
  chain.loglik.reserve(static_cast<std::size_t>(opt.sweeps));
  if (opt.store_stats)
    chain.stats_flat.reserve(static_cast<std::size_t>(opt.sweeps) * static_cast<std::size_t>(k));
  if (opt.store_canon) chain.canon_id.reserve(static_cast<std::size_t>(opt.sweeps));
  if (opt.store_params) chain.params.reserve(static_cast<std::size_t>(opt.sweeps));
  std::unordered_map<CanonicalPartition, std::uint32_t, CanonicalPartitionHash> canon_index;

  for (long long t = 0; t < opt.burnin + opt.sweeps; ++t) {
    fm_gibbs_sweep(params, z, data, prior, alpha, rng);
    if (t < opt.burnin) continue;

    const std::vector<ClusterStats> stats = stats_from_alloc(z, data, k);
    chain.loglik.push_back(fm_log_likelihood(params, data));
    if (opt.store_stats)
      chain.stats_flat.insert(chain.stats_flat.end(), stats.begin(), stats.end());
    if (opt.store_canon) {
      CanonicalPartition c = canonicalize(z);
      auto [it, inserted] = canon_index.try_emplace(std::move(c),
                                                    static_cast<std::uint32_t>(chain.canon_pool.size()));
      if (inserted) chain.canon_pool.push_back(it->first);
      chain.canon_id.push_back(it->second);
    }
    if (opt.store_params) chain.params.push_back(params);

    // augmented posterior at the visited (params, z) pair, for the MAP point
    double aug = fm_log_prior_density(params, prior, alpha);
    for (std::size_t i = 0; i < n; ++i) {
      const Component& c = params.comps[static_cast<std::size_t>(z[i])];
      aug += std::log(params.weights[static_cast<std::size_t>(z[i])]) +
             log_normal_pdf(data[i], c.mu, c.sigma2);
    }
    if (aug > chain.map_log_aug) {
      chain.map_log_aug = aug;
      chain.map_params = params;
      chain.map_alloc = z;
    }
  }
  return chain;
}

}  // namespace evidence::fm
