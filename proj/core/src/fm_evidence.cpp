#include "evidence/fm_evidence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "evidence/dists.hpp"
#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"

namespace evidence::fm {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

long long factorial_ll(int k) {
  long long f = 1;
  for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

// Newey-West long-run variance of mean(exp(logv)) plus the delta method,
// computed under a max shift so the scale cancels in sqrt(var)/mean.
double nw_delta_se_log(std::span<const double> logv, int lag) {
  const std::size_t t = logv.size();
  const int q = lag >= 0 ? lag : stats::newey_west_default_lag(t);
  const double mx = *std::max_element(logv.begin(), logv.end());
  if (!std::isfinite(mx)) return std::numeric_limits<double>::infinity();
  std::vector<double> v(t);
  double mean = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    v[i] = std::exp(logv[i] - mx);
    mean += v[i];
  }
  mean /= static_cast<double>(t);
  const double var = stats::newey_west_variance(v, q);
  return stats::delta_method_se_log(mean, var);
}

// ---------------------------------------------------------------------------
// Permutation-symmetrized ordinate machinery.
//
// For a fixed candidate point (w0, theta0) and per-label cluster statistics,
// the ordinate under the label permutation that assigns the stats of label j
// to component slot k decomposes as C + sum_k M[k][j(k)], with
//   M[k][j] = n_j log w0_k - lgamma(alpha_k + n_j) + log NIG(theta0_k | post_j)
//   C       = lgamma(sum alpha + n) + sum_k (alpha_k - 1) log w0_k.
// Averaging over a set of permutations is then a LSE over assignment sums.
// ---------------------------------------------------------------------------

struct PermSet {
  int k = 1;
  std::vector<int> flat;  // rows of k labels (the assignment slot -> label map)
  std::size_t count() const { return flat.size() / static_cast<std::size_t>(k); }
};

PermSet make_full_permset(int k) {
  PermSet ps;
  ps.k = k;
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    ps.flat.insert(ps.flat.end(), perm.begin(), perm.end());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return ps;
}

PermSet make_random_permset(int k, int r, Rng& rng) {
  PermSet ps;
  ps.k = k;
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 0; i < r; ++i) {
    std::shuffle(perm.begin(), perm.end(), rng);
    ps.flat.insert(ps.flat.end(), perm.begin(), perm.end());
  }
  return ps;
}

double ordinate_const(const FmParams& p0, std::span<const double> alpha, long long n) {
  double asum = 0.0, c = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    asum += alpha[k];
    c += (alpha[k] - 1.0) * std::log(p0.weights[k]);
  }
  return c + std::lgamma(asum + static_cast<double>(n));
}

void fill_assignment_matrix(const FmParams& p0, std::span<const ClusterStats> st,
                            const NigPrior& prior, std::span<const double> alpha,
                            std::vector<double>& m) {
  const int k = p0.k();
  m.resize(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
  std::vector<NigParams> post(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) post[static_cast<std::size_t>(j)] = nig_posterior(st[static_cast<std::size_t>(j)], prior);
  for (int kk = 0; kk < k; ++kk) {
    const double logw = std::log(p0.weights[static_cast<std::size_t>(kk)]);
    const Component& c = p0.comps[static_cast<std::size_t>(kk)];
    for (int j = 0; j < k; ++j) {
      const double nj = static_cast<double>(st[static_cast<std::size_t>(j)].n());
      m[static_cast<std::size_t>(kk) * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] =
          nj * logw - std::lgamma(alpha[static_cast<std::size_t>(kk)] + nj) +
          nig_log_density(c.mu, c.sigma2, post[static_cast<std::size_t>(j)]);
    }
  }
}

// log mean over the permutation set of exp(C + sum_k M[k][p[k]]).
double ordinate_sym(double c, const std::vector<double>& m, const PermSet& ps,
                    std::vector<double>& terms) {
  const int k = ps.k;
  const std::size_t np = ps.count();
  terms.resize(np);
  for (std::size_t r = 0; r < np; ++r) {
    const int* p = ps.flat.data() + r * static_cast<std::size_t>(k);
    double s = 0.0;
    for (int kk = 0; kk < k; ++kk)
      s += m[static_cast<std::size_t>(kk) * static_cast<std::size_t>(k) + static_cast<std::size_t>(p[kk])];
    terms[r] = s;
  }
  return c + stats::log_sum_exp(terms) - std::log(static_cast<double>(np));
}

ChainOptions chain_options(long long sweeps, long long burnin, std::uint64_t seed,
                           std::uint64_t stream, const std::optional<std::vector<int>>& init) {
  ChainOptions c;
  c.sweeps = sweeps;
  c.burnin = burnin;
  c.seed = seed;
  c.stream = stream;
  c.init_alloc = init;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic mean of the likelihood over prior draws.
// ---------------------------------------------------------------------------
EvidenceEstimate arithmetic_mean(std::span<const double> data, int k, const NigPrior& prior,
                                 std::span<const double> alpha, const AmOptions& opt) {
  prior.validate();
  if (opt.draws < 1) throw invalid_input("arithmetic_mean: draws must be >= 1");
  Rng rng = make_rng(opt.seed, opt.stream);
  std::vector<double> ll(static_cast<std::size_t>(opt.draws));
  for (long long t = 0; t < opt.draws; ++t) {
    const FmParams p = fm_sample_prior(k, prior, alpha, rng);
    ll[static_cast<std::size_t>(t)] = fm_log_likelihood(p, data);
  }
  EvidenceEstimate est;
  est.estimator = "am";
  est.log_evidence = stats::log_mean_exp(ll);
  est.se_log = stats::se_log_mean_exp(ll);
  est.tuning = {{"draws", opt.draws}, {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Harmonic mean of the likelihood over posterior draws.
// ---------------------------------------------------------------------------
EvidenceEstimate harmonic_mean(std::span<const double> data, int k, const NigPrior& prior,
                               std::span<const double> alpha, const HmOptions& opt) {
  prior.validate();
  ChainOptions copt = chain_options(opt.sweeps, opt.burnin, opt.seed, opt.stream, std::nullopt);
  copt.store_stats = false;
  const FmChain chain = fm_run_chain(data, k, prior, alpha, copt);
  std::vector<double> neg(chain.loglik.size());
  for (std::size_t t = 0; t < neg.size(); ++t) neg[t] = -chain.loglik[t];
  EvidenceEstimate est;
  est.estimator = "hm";
  est.log_evidence = -stats::log_mean_exp(neg);
  est.se_log = nw_delta_se_log(neg, opt.nw_lag);
  est.tuning = {{"sweeps", opt.sweeps}, {"burnin", opt.burnin},
                {"nw_lag", opt.nw_lag >= 0 ? opt.nw_lag : stats::newey_west_default_lag(neg.size())},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Candidate-point (Chib) estimator at the chain MAP.
// ---------------------------------------------------------------------------
EvidenceEstimate chib(std::span<const double> data, int k, const NigPrior& prior,
                      std::span<const double> alpha, const ChibOptions& opt) {
  prior.validate();
  if (opt.sweeps < 100) throw invalid_input("chib: need at least 100 stored sweeps");
  ChainOptions copt = chain_options(opt.sweeps, opt.burnin, opt.seed, opt.stream, opt.init_alloc);
  const FmChain chain = fm_run_chain(data, k, prior, alpha, copt);
  const FmParams& p0 = chain.map_params;

  std::vector<double> ord(chain.loglik.size());
  for (long long t = 0; t < chain.sweeps; ++t)
    ord[static_cast<std::size_t>(t)] = fm_posterior_ordinate(p0, chain.stats_row(t), prior, alpha);
  const double log_ord = stats::log_mean_exp(ord);
  if (!std::isfinite(log_ord))
    throw degenerate_estimate("chib: zero estimated ordinate at the candidate point");

  EvidenceEstimate est;
  est.estimator = "chib";
  est.log_evidence = fm_log_likelihood(p0, data) + fm_log_prior_density(p0, prior, alpha) - log_ord;
  est.se_log = nw_delta_se_log(ord, opt.nw_lag);
  est.tuning = {{"sweeps", opt.sweeps}, {"burnin", opt.burnin},
                {"nw_lag", opt.nw_lag >= 0 ? opt.nw_lag : stats::newey_west_default_lag(ord.size())},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Permutation-symmetrized Chib estimator.
// ---------------------------------------------------------------------------
EvidenceEstimate chib_permutation(std::span<const double> data, int k, const NigPrior& prior,
                                  std::span<const double> alpha, const ChibPermOptions& opt) {
  prior.validate();
  if (opt.sweeps < 100) throw invalid_input("chib_permutation: need at least 100 stored sweeps");
  bool full = opt.full;
  if (!full) {
    if (opt.r < 1) throw invalid_input("chib_permutation: random mode needs r >= 1");
    if (k <= 6 && static_cast<long long>(opt.r) >= factorial_ll(k)) full = true;
  }
  if (full && k > 6)
    throw size_guard("chib_permutation: full mode costs T * k! ordinate terms; refused for k > 6 "
                     "(use the random-permutation mode)");

  ChainOptions copt = chain_options(opt.sweeps, opt.burnin, opt.seed, opt.stream, opt.init_alloc);
  const FmChain chain = fm_run_chain(data, k, prior, alpha, copt);
  const FmParams& p0 = chain.map_params;

  PermSet ps;
  if (full) {
    ps = make_full_permset(k);
  } else {
    Rng prng = make_rng(opt.seed, opt.stream + 1);
    ps = make_random_permset(k, opt.r, prng);
  }

  std::vector<double> ord(chain.loglik.size());
  std::vector<double> m, terms;
  const long long n = static_cast<long long>(data.size());
  for (long long t = 0; t < chain.sweeps; ++t) {
    fill_assignment_matrix(p0, chain.stats_row(t), prior, alpha, m);
    ord[static_cast<std::size_t>(t)] = ordinate_sym(ordinate_const(p0, alpha, n), m, ps, terms);
  }
  const double log_ord = stats::log_mean_exp(ord);
  if (!std::isfinite(log_ord))
    throw degenerate_estimate("chib_permutation: zero estimated ordinate at the candidate point");

  EvidenceEstimate est;
  est.estimator = "chib-perm";
  est.log_evidence = fm_log_likelihood(p0, data) + fm_log_prior_density(p0, prior, alpha) - log_ord;
  est.se_log = nw_delta_se_log(ord, opt.nw_lag);
  est.tuning = {{"sweeps", opt.sweeps}, {"burnin", opt.burnin},
                {"mode", full ? "full" : "random"},
                {"permutations", static_cast<long long>(ps.count())},
                {"nw_lag", opt.nw_lag >= 0 ? opt.nw_lag : stats::newey_west_default_lag(ord.size())},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Partition-space candidate estimator.
// ---------------------------------------------------------------------------
EvidenceEstimate chib_partition(std::span<const double> data, int k, const NigPrior& prior,
                                std::span<const double> alpha, const ChibPartitionOptions& opt) {
  prior.validate();
  if (opt.sweeps < 100) throw invalid_input("chib_partition: need at least 100 stored sweeps");
  ChainOptions copt = chain_options(opt.sweeps, opt.burnin, opt.seed, opt.stream, std::nullopt);
  copt.store_stats = false;
  copt.store_canon = true;
  const FmChain chain = fm_run_chain(data, k, prior, alpha, copt);

  // Score every distinct visited partition; modal candidate = argmax of
  // prior x marginal likelihood, ties broken by first appearance.
  std::size_t best = 0;
  double best_score = kNegInf;
  std::vector<double> scores(chain.canon_pool.size());
  for (std::size_t c = 0; c < chain.canon_pool.size(); ++c) {
    Allocation a{chain.canon_pool[c].labels, k};
    scores[c] = log_partition_prior(a, alpha) + log_partition_likelihood(a, data, prior);
    if (scores[c] > best_score) {
      best_score = scores[c];
      best = c;
    }
  }

  long long hits = 0;
  for (std::uint32_t id : chain.canon_id)
    if (id == static_cast<std::uint32_t>(best)) ++hits;
  if (hits < opt.min_count) {
    std::ostringstream msg;
    msg << "chib_partition: candidate partition visited " << hits << " < " << opt.min_count
        << " times over " << chain.sweeps << " sweeps; run a longer chain";
    throw degenerate_estimate(msg.str());
  }

  const double t = static_cast<double>(chain.sweeps);
  const double p_hat = static_cast<double>(hits) / t;
  std::vector<double> indicator(chain.canon_id.size());
  for (std::size_t i = 0; i < indicator.size(); ++i)
    indicator[i] = chain.canon_id[i] == static_cast<std::uint32_t>(best) ? 1.0 : 0.0;
  const int q = opt.nw_lag >= 0 ? opt.nw_lag : stats::newey_west_default_lag(indicator.size());
  const double var = stats::newey_west_variance(indicator, q);

  EvidenceEstimate est;
  est.estimator = "chib-partition";
  est.log_evidence = best_score - std::log(p_hat);
  est.se_log = stats::delta_method_se_log(p_hat, var);
  est.tuning = {{"sweeps", opt.sweeps}, {"burnin", opt.burnin}, {"nw_lag", q},
                {"min_count", opt.min_count}, {"candidate_hits", hits},
                {"distinct_partitions", static_cast<long long>(chain.canon_pool.size())},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Iterative bridge sampling against a permutation-symmetrized mixture of
// conditional posteriors.
// ---------------------------------------------------------------------------
namespace {

// The proposal q(theta) = (1/(k! t0)) sum_{l,s} pi(theta | s(z_l), y): per
// retained allocation l we keep the per-label posteriors and counts.
struct BridgeMixture {
  int k = 1;
  long long t0 = 0;
  long long n = 0;
  std::vector<NigParams> post;   // t0 x k
  std::vector<double> counts;    // t0 x k
  PermSet perms;                 // full permutation set
  double log_norm = 0.0;         // log(k! * t0)
};

double bridge_eval_q(const BridgeMixture& mix, const FmParams& p,
                     std::span<const double> alpha, std::vector<double>& m,
                     std::vector<double>& terms, std::vector<double>& per_l) {
  const int k = mix.k;
  const double c = ordinate_const(p, alpha, mix.n);
  per_l.resize(static_cast<std::size_t>(mix.t0));
  m.resize(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
  for (long long l = 0; l < mix.t0; ++l) {
    const NigParams* post = mix.post.data() + static_cast<std::size_t>(l) * static_cast<std::size_t>(k);
    const double* cnt = mix.counts.data() + static_cast<std::size_t>(l) * static_cast<std::size_t>(k);
    for (int kk = 0; kk < k; ++kk) {
      const double logw = std::log(p.weights[static_cast<std::size_t>(kk)]);
      const Component& comp = p.comps[static_cast<std::size_t>(kk)];
      for (int j = 0; j < k; ++j)
        m[static_cast<std::size_t>(kk) * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] =
            cnt[j] * logw - std::lgamma(alpha[static_cast<std::size_t>(kk)] + cnt[j]) +
            nig_log_density(comp.mu, comp.sigma2, post[j]);
    }
    const std::size_t np = mix.perms.count();
    terms.resize(np);
    for (std::size_t r = 0; r < np; ++r) {
      const int* pp = mix.perms.flat.data() + r * static_cast<std::size_t>(k);
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk)
        s += m[static_cast<std::size_t>(kk) * static_cast<std::size_t>(k) + static_cast<std::size_t>(pp[kk])];
      terms[r] = s;
    }
    per_l[static_cast<std::size_t>(l)] = stats::log_sum_exp(terms);
  }
  return c - mix.log_norm + stats::log_sum_exp(per_l);
}

FmParams bridge_sample_q(const BridgeMixture& mix, std::span<const double> alpha, Rng& rng,
                         std::vector<int>& perm) {
  const int k = mix.k;
  std::uniform_int_distribution<long long> pick(0, mix.t0 - 1);
  const long long l = pick(rng);
  perm.resize(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const NigParams* post = mix.post.data() + static_cast<std::size_t>(l) * static_cast<std::size_t>(k);
  const double* cnt = mix.counts.data() + static_cast<std::size_t>(l) * static_cast<std::size_t>(k);
  std::vector<double> dir(static_cast<std::size_t>(k));
  for (int kk = 0; kk < k; ++kk)
    dir[static_cast<std::size_t>(kk)] = alpha[static_cast<std::size_t>(kk)] + cnt[perm[static_cast<std::size_t>(kk)]];
  FmParams p;
  p.weights = sample_dirichlet(rng, dir);
  p.comps.resize(static_cast<std::size_t>(k));
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  for (int kk = 0; kk < k; ++kk) {
    const NigParams& q = post[perm[static_cast<std::size_t>(kk)]];
    Component& c = p.comps[static_cast<std::size_t>(kk)];
    c.sigma2 = sample_inv_gamma(rng, q.a, q.b);
    c.mu = q.mu + stdnorm(rng) * std::sqrt(c.sigma2 / q.lambda);
  }
  return p;
}

}  // namespace

EvidenceEstimate bridge_sampling(std::span<const double> data, int k, const NigPrior& prior,
                                 std::span<const double> alpha, const BridgeOptions& opt) {
  prior.validate();
  if (k > 6)
    throw size_guard("bridge_sampling: the symmetrized proposal costs k! * t0 terms per density "
                     "evaluation; refused for k > 6");
  if (opt.t0 < 1 || opt.t1 < 2) throw invalid_input("bridge_sampling: t0 >= 1 and t1 >= 2 required");
  if (opt.t2 < 16) throw invalid_input("bridge_sampling: t2 >= 16 required for the ESS estimate");

  // Posterior sample (parameters + per-sweep cluster statistics).
  ChainOptions copt = chain_options(opt.t2, opt.burnin, opt.seed, opt.stream, std::nullopt);
  copt.store_params = true;
  const FmChain chain = fm_run_chain(data, k, prior, alpha, copt);

  // Build the proposal mixture from t0 allocations resampled from the chain.
  Rng rng = make_rng(opt.seed, opt.stream + 1);
  BridgeMixture mix;
  mix.k = k;
  mix.t0 = opt.t0;
  mix.n = static_cast<long long>(data.size());
  mix.perms = make_full_permset(k);
  mix.log_norm = std::log(static_cast<double>(factorial_ll(k)) * static_cast<double>(opt.t0));
  mix.post.reserve(static_cast<std::size_t>(opt.t0) * static_cast<std::size_t>(k));
  mix.counts.reserve(mix.post.capacity());
  std::uniform_int_distribution<long long> pick(0, chain.sweeps - 1);
  for (long long l = 0; l < opt.t0; ++l) {
    const auto st = chain.stats_row(pick(rng));
    for (int j = 0; j < k; ++j) {
      mix.post.push_back(nig_posterior(st[static_cast<std::size_t>(j)], prior));
      mix.counts.push_back(static_cast<double>(st[static_cast<std::size_t>(j)].n()));
    }
  }

  // Proposal draws and both unnormalized-log-density columns.
  std::vector<double> l1(static_cast<std::size_t>(opt.t1)), q1(static_cast<std::size_t>(opt.t1));
  std::vector<double> m, terms, per_l;
  std::vector<int> perm;
  for (long long t = 0; t < opt.t1; ++t) {
    const FmParams p = bridge_sample_q(mix, alpha, rng, perm);
    l1[static_cast<std::size_t>(t)] = fm_log_prior_density(p, prior, alpha) + fm_log_likelihood(p, data);
    q1[static_cast<std::size_t>(t)] = bridge_eval_q(mix, p, alpha, m, terms, per_l);
  }
  std::vector<double> l2(static_cast<std::size_t>(opt.t2)), q2(static_cast<std::size_t>(opt.t2));
  for (long long t = 0; t < opt.t2; ++t) {
    const FmParams& p = chain.params[static_cast<std::size_t>(t)];
    l2[static_cast<std::size_t>(t)] = chain.loglik[static_cast<std::size_t>(t)] +
                                      fm_log_prior_density(p, prior, alpha);
    q2[static_cast<std::size_t>(t)] = bridge_eval_q(mix, p, alpha, m, terms, per_l);
  }

  // Optimal-bridge fixed-point iteration in the log domain. The effective
  // posterior sample size replaces t2 to account for autocorrelation.
  const double n2_eff = stats::ess_batch_means(chain.loglik);
  const double log_n1 = std::log(static_cast<double>(opt.t1));
  const double log_n2 = std::log(n2_eff);

  std::vector<double> is_terms(static_cast<std::size_t>(opt.t1));
  for (std::size_t t = 0; t < is_terms.size(); ++t) is_terms[t] = l1[t] - q1[t];
  double log_m = opt.init_log_m ? *opt.init_log_m : stats::log_mean_exp(is_terms);

  std::vector<double> num(static_cast<std::size_t>(opt.t1)), den(static_cast<std::size_t>(opt.t2));
  std::vector<double> trace;
  trace.push_back(log_m);
  int iter = 0;
  bool converged = false;
  for (; iter < opt.max_iter; ++iter) {
    for (std::size_t t = 0; t < num.size(); ++t)
      num[t] = l1[t] - stats::log_add_exp(log_n1 + q1[t], log_n2 + l1[t] - log_m);
    for (std::size_t t = 0; t < den.size(); ++t)
      den[t] = q2[t] - stats::log_add_exp(log_n1 + q2[t], log_n2 + l2[t] - log_m);
    const double next = stats::log_mean_exp(num) - stats::log_mean_exp(den);
    const double delta = std::abs(next - log_m);
    log_m = next;
    trace.push_back(log_m);
    if (delta < opt.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "bridge_sampling: no fixed point after " << opt.max_iter << " iterations; trace tail:";
    for (std::size_t i = trace.size() > 6 ? trace.size() - 6 : 0; i < trace.size(); ++i)
      msg << ' ' << trace[i];
    throw convergence_failure(msg.str());
  }

  EvidenceEstimate est;
  est.estimator = "bridge";
  est.log_evidence = log_m;
  est.tuning = {{"t0", opt.t0}, {"t1", opt.t1}, {"t2", opt.t2}, {"burnin", opt.burnin},
                {"iterations", iter + 1}, {"n2_eff", n2_eff}, {"tol", opt.tol},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Adaptive likelihood-tempered sequential Monte Carlo.
// ---------------------------------------------------------------------------
namespace {

// Unconstrained coordinates: (mu_1..K, log sigma2_1..K, log(w_k/w_K) for k<K).
int smc_dim(int k) { return 3 * k - 1; }

void smc_pack(const FmParams& p, double* x) {
  const int k = p.k();
  for (int j = 0; j < k; ++j) x[j] = p.comps[static_cast<std::size_t>(j)].mu;
  for (int j = 0; j < k; ++j) x[k + j] = std::log(p.comps[static_cast<std::size_t>(j)].sigma2);
  const double wlast = std::max(p.weights[static_cast<std::size_t>(k) - 1], 1e-300);
  for (int j = 0; j + 1 < k; ++j)
    x[2 * k + j] = std::log(std::max(p.weights[static_cast<std::size_t>(j)], 1e-300) / wlast);
}

void smc_unpack(const double* x, int k, FmParams& p) {
  p.comps.resize(static_cast<std::size_t>(k));
  p.weights.resize(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    p.comps[static_cast<std::size_t>(j)].mu = x[j];
    p.comps[static_cast<std::size_t>(j)].sigma2 = std::exp(x[k + j]);
  }
  double mx = 0.0;  // the implicit last coordinate is 0
  for (int j = 0; j + 1 < k; ++j) mx = std::max(mx, x[2 * k + j]);
  double denom = std::exp(-mx);
  for (int j = 0; j + 1 < k; ++j) denom += std::exp(x[2 * k + j] - mx);
  for (int j = 0; j + 1 < k; ++j)
    p.weights[static_cast<std::size_t>(j)] = std::exp(x[2 * k + j] - mx) / denom;
  p.weights[static_cast<std::size_t>(k) - 1] = std::exp(-mx) / denom;
}

// log prior + log |Jacobian| of the transform, the lambda-independent part of
// the tempered target on unconstrained coordinates.
double smc_log_prior_jac(const FmParams& p, const NigPrior& prior, std::span<const double> alpha) {
  double v = fm_log_prior_density(p, prior, alpha);
  for (const Component& c : p.comps) v += std::log(c.sigma2);
  if (p.k() >= 2)
    for (double w : p.weights) v += std::log(w);
  return v;
}

double smc_ess(std::span<const double> ll, double delta) {
  double mx = kNegInf;
  for (double l : ll) mx = std::max(mx, delta * l);
  double s = 0.0, s2 = 0.0;
  for (double l : ll) {
    const double w = std::exp(delta * l - mx);
    s += w;
    s2 += w * w;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

// Lower-triangular Cholesky factor of a copy of `a` (d x d, row major) with
// escalating diagonal jitter; returns the factor in place of the copy.
std::vector<double> cholesky_with_jitter(std::vector<double> a, int d) {
  double scale = 0.0;
  for (int i = 0; i < d; ++i) scale = std::max(scale, std::abs(a[static_cast<std::size_t>(i) * d + i]));
  if (scale <= 0.0) scale = 1.0;
  for (double eps = 1e-10 * scale;; eps *= 100.0) {
    std::vector<double> l = a;
    for (int i = 0; i < d; ++i) l[static_cast<std::size_t>(i) * d + i] += eps;
    bool ok = true;
    for (int i = 0; i < d && ok; ++i) {
      for (int j = 0; j <= i; ++j) {
        double s = l[static_cast<std::size_t>(i) * d + j];
        for (int m = 0; m < j; ++m)
          s -= l[static_cast<std::size_t>(i) * d + m] * l[static_cast<std::size_t>(j) * d + m];
        if (i == j) {
          if (s <= 0.0) {
            ok = false;
            break;
          }
          l[static_cast<std::size_t>(i) * d + j] = std::sqrt(s);
        } else {
          l[static_cast<std::size_t>(i) * d + j] = s / l[static_cast<std::size_t>(j) * d + j];
        }
      }
    }
    if (ok) {
      for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) l[static_cast<std::size_t>(i) * d + j] = 0.0;
      return l;
    }
    if (eps > 1e6 * scale) throw degenerate_estimate("smc_evidence: particle covariance is numerically singular");
  }
}

}  // namespace

EvidenceEstimate smc_evidence(std::span<const double> data, int k, const NigPrior& prior,
                              std::span<const double> alpha, const SmcOptions& opt) {
  prior.validate();
  if (opt.particles < 100) throw invalid_input("smc_evidence: need at least 100 particles");
  if (!(opt.ess_target > 0.0 && opt.ess_target < 1.0))
    throw invalid_input("smc_evidence: ess_target must lie in (0,1)");
  const int n_part = opt.particles;
  const int d = smc_dim(k);
  Rng rng = make_rng(opt.seed, opt.stream);

  std::vector<double> xs(static_cast<std::size_t>(n_part) * static_cast<std::size_t>(d));
  std::vector<double> ll(static_cast<std::size_t>(n_part));
  std::vector<double> lpj(static_cast<std::size_t>(n_part));
  FmParams scratch;
  for (int i = 0; i < n_part; ++i) {
    const FmParams p = fm_sample_prior(k, prior, alpha, rng);
    smc_pack(p, xs.data() + static_cast<std::size_t>(i) * d);
    ll[static_cast<std::size_t>(i)] = fm_log_likelihood(p, data);
    lpj[static_cast<std::size_t>(i)] = smc_log_prior_jac(p, prior, alpha);
  }

  double lambda = 0.0;
  double log_z = 0.0;
  double var_accum = 0.0;
  std::vector<double> schedule;
  std::vector<double> accept_rates;
  std::vector<double> incr(static_cast<std::size_t>(n_part)), weights(static_cast<std::size_t>(n_part));
  std::vector<double> mean(static_cast<std::size_t>(d)), cov(static_cast<std::size_t>(d) * d);
  std::vector<double> prop(static_cast<std::size_t>(d)), noise(static_cast<std::size_t>(d));
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double target = opt.ess_target * static_cast<double>(n_part);
  int stage = 0;

  while (lambda < 1.0) {
    ++stage;
    if (stage > 100000) throw convergence_failure("smc_evidence: temperature schedule failed to reach 1");

    // Choose the increment by bisection on the incremental-weight ESS.
    double delta = 1.0 - lambda;
    if (smc_ess(ll, delta) < target) {
      double lo = 0.0, hi = delta;
      while (hi - lo > opt.bisect_tol) {
        const double mid = 0.5 * (lo + hi);
        if (smc_ess(ll, mid) >= target)
          lo = mid;
        else
          hi = mid;
      }
      delta = std::max(0.5 * (lo + hi), opt.bisect_tol);
      delta = std::min(delta, 1.0 - lambda);
    }
    const double ess_here = smc_ess(ll, delta);
    if (ess_here < 2.0) {
      std::ostringstream msg;
      msg << "smc_evidence: ESS collapsed to " << ess_here << " at stage " << stage
          << "; temperatures so far:";
      for (double s : schedule) msg << ' ' << s;
      msg << ' ' << lambda + delta;
      throw degenerate_estimate(msg.str());
    }

    for (int i = 0; i < n_part; ++i) incr[static_cast<std::size_t>(i)] = delta * ll[static_cast<std::size_t>(i)];
    log_z += stats::log_mean_exp(incr);
    const double se_stage = stats::bootstrap_se_log_mean_exp(
        incr, 200, opt.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(stage)));
    var_accum += se_stage * se_stage;
    lambda = (1.0 - lambda - delta < 1e-12) ? 1.0 : lambda + delta;
    schedule.push_back(lambda);

    // Multinomial resampling proportional to the incremental weights.
    {
      const double mx = *std::max_element(incr.begin(), incr.end());
      for (int i = 0; i < n_part; ++i) weights[static_cast<std::size_t>(i)] = std::exp(incr[static_cast<std::size_t>(i)] - mx);
      std::discrete_distribution<int> resample(weights.begin(), weights.end());
      std::vector<double> xs2(xs.size());
      std::vector<double> ll2(ll.size()), lpj2(lpj.size());
      for (int i = 0; i < n_part; ++i) {
        const int j = resample(rng);
        std::copy_n(xs.data() + static_cast<std::size_t>(j) * d, d, xs2.data() + static_cast<std::size_t>(i) * d);
        ll2[static_cast<std::size_t>(i)] = ll[static_cast<std::size_t>(j)];
        lpj2[static_cast<std::size_t>(i)] = lpj[static_cast<std::size_t>(j)];
      }
      xs.swap(xs2);
      ll.swap(ll2);
      lpj.swap(lpj2);
    }

    // Scaled-covariance random-walk moves targeting the new tempered target.
    std::fill(mean.begin(), mean.end(), 0.0);
    for (int i = 0; i < n_part; ++i)
      for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += xs[static_cast<std::size_t>(i) * d + j];
    for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] /= static_cast<double>(n_part);
    std::fill(cov.begin(), cov.end(), 0.0);
    for (int i = 0; i < n_part; ++i)
      for (int a = 0; a < d; ++a) {
        const double da = xs[static_cast<std::size_t>(i) * d + a] - mean[static_cast<std::size_t>(a)];
        for (int b = 0; b <= a; ++b)
          cov[static_cast<std::size_t>(a) * d + b] +=
              da * (xs[static_cast<std::size_t>(i) * d + b] - mean[static_cast<std::size_t>(b)]);
      }
    const double scale = 2.38 * 2.38 / static_cast<double>(d) / static_cast<double>(n_part - 1);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b <= a; ++b) {
        cov[static_cast<std::size_t>(a) * d + b] *= scale;
        cov[static_cast<std::size_t>(b) * d + a] = cov[static_cast<std::size_t>(a) * d + b];
      }
    const std::vector<double> chol = cholesky_with_jitter(cov, d);

    long long accepted = 0;
    for (int i = 0; i < n_part; ++i) {
      double* x = xs.data() + static_cast<std::size_t>(i) * d;
      double cur = lpj[static_cast<std::size_t>(i)] + lambda * ll[static_cast<std::size_t>(i)];
      for (int move = 0; move < opt.moves; ++move) {
        for (int j = 0; j < d; ++j) noise[static_cast<std::size_t>(j)] = stdnorm(rng);
        for (int a = 0; a < d; ++a) {
          double step = 0.0;
          for (int b = 0; b <= a; ++b) step += chol[static_cast<std::size_t>(a) * d + b] * noise[static_cast<std::size_t>(b)];
          prop[static_cast<std::size_t>(a)] = x[a] + step;
        }
        smc_unpack(prop.data(), k, scratch);
        const double ll_new = fm_log_likelihood(scratch, data);
        const double lpj_new = smc_log_prior_jac(scratch, prior, alpha);
        const double cand = lpj_new + lambda * ll_new;
        if (std::isfinite(cand) && std::log(unif(rng)) < cand - cur) {
          std::copy(prop.begin(), prop.end(), x);
          ll[static_cast<std::size_t>(i)] = ll_new;
          lpj[static_cast<std::size_t>(i)] = lpj_new;
          cur = cand;
          ++accepted;
        }
      }
    }
    accept_rates.push_back(static_cast<double>(accepted) /
                           (static_cast<double>(n_part) * static_cast<double>(opt.moves)));
  }

  EvidenceEstimate est;
  est.estimator = "smc";
  est.log_evidence = log_z;
  est.se_log = std::sqrt(var_accum);
  est.tuning = {{"particles", opt.particles}, {"moves", opt.moves}, {"ess_target", opt.ess_target},
                {"stages", stage}, {"lambda_schedule", schedule}, {"accept_rates", accept_rates},
                {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

// ---------------------------------------------------------------------------
// Sequential importance sampling over allocations.
// ---------------------------------------------------------------------------
EvidenceEstimate sis_evidence(std::span<const double> data, int k, const NigPrior& prior,
                              std::span<const double> alpha, const SisOptions& opt) {
  prior.validate();
  if (opt.draws < 2) throw invalid_input("sis_evidence: need at least 2 replicates");
  if (alpha.size() != static_cast<std::size_t>(k)) throw invalid_input("sis_evidence: alpha size mismatch");
  const std::size_t n = data.size();
  const PredictiveTable table(prior, static_cast<long long>(n));
  double alpha_sum = 0.0;
  for (double a : alpha) alpha_sum += a;

  std::vector<double> logw(static_cast<std::size_t>(opt.draws));
  std::vector<double> lg(static_cast<std::size_t>(k));
  std::vector<ClusterStats> st(static_cast<std::size_t>(k));
  for (long long t = 0; t < opt.draws; ++t) {
    Rng rng = make_rng(opt.seed, opt.stream + static_cast<std::uint64_t>(t));
    std::fill(st.begin(), st.end(), ClusterStats{});
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double denom = std::log(alpha_sum + static_cast<double>(i));
      for (int j = 0; j < k; ++j)
        lg[static_cast<std::size_t>(j)] = table(st[static_cast<std::size_t>(j)], data[i]) +
                                          std::log(alpha[static_cast<std::size_t>(j)] +
                                                   static_cast<double>(st[static_cast<std::size_t>(j)].n())) -
                                          denom;
      w += stats::log_sum_exp(lg);
      st[static_cast<std::size_t>(sample_categorical_from_log(rng, lg))].add(data[i]);
    }
    logw[static_cast<std::size_t>(t)] = w;
  }

  EvidenceEstimate est;
  est.estimator = "sis";
  est.log_evidence = stats::log_mean_exp(logw);
  est.se_log = stats::se_log_mean_exp(logw);
  est.tuning = {{"draws", opt.draws}, {"seed", opt.seed}, {"stream", opt.stream}};
  return est;
}

}  // namespace evidence::fm
