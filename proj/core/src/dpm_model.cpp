#include "evidence/dpm_model.hpp"

#include <algorithm>
#include <cmath>

#include "evidence/dists.hpp"
#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"
#include "evidence/partitions.hpp"

namespace evidence::dpm {

void GammaPrior::validate() const {
  if (!(a > 0.0) || !(b > 0.0)) throw invalid_input("GammaPrior: shape and rate must be positive");
}

namespace {

std::vector<ClusterStats> stats_by_label(std::span<const int> z, std::span<const double> data) {
  int k = 0;
  for (int zi : z) k = std::max(k, zi + 1);
  std::vector<ClusterStats> st(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] < 0) throw invalid_input("allocation labels must be nonnegative");
    st[static_cast<std::size_t>(z[i])].add(data[i]);
  }
  return st;
}

}  // namespace

double dpm_log_prior_z(std::span<const int> z, double m_conc) {
  if (!(m_conc > 0.0)) throw invalid_input("dpm_log_prior_z: concentration must be positive");
  const std::size_t n = z.size();
  if (n == 0) return 0.0;
  int k = 0;
  for (int zi : z) {
    if (zi < 0) throw invalid_input("dpm_log_prior_z: negative label");
    k = std::max(k, zi + 1);
  }
  std::vector<long long> counts(static_cast<std::size_t>(k), 0);
  for (int zi : z) ++counts[static_cast<std::size_t>(zi)];
  double out = std::lgamma(m_conc) - std::lgamma(m_conc + static_cast<double>(n));
  for (long long c : counts) {
    if (c == 0) continue;
    out += std::log(m_conc) + std::lgamma(static_cast<double>(c));
  }
  return out;
}

double dpm_log_likelihood_z(std::span<const int> z, std::span<const double> data,
                            const NigPrior& prior) {
  if (z.size() != data.size()) throw invalid_input("dpm_log_likelihood_z: size mismatch");
  double out = 0.0;
  for (const ClusterStats& st : stats_by_label(z, data))
    if (st.n() > 0) out += cluster_log_marginal(st, prior);
  return out;
}

namespace {

// Collapsed allocation pass + the exact two-Gamma concentration update, with
// predictive-ratio constants shared across calls via the table.
void sweep_with_table(DpmState& state, std::span<const double> data, const PredictiveTable& pred,
                      const GammaPrior& gprior, Rng& rng) {
  const std::size_t n = data.size();
  if (state.z.size() != n) throw invalid_input("dpm_gibbs_sweep: allocation size mismatch");
  if (!(state.m_conc > 0.0)) throw invalid_input("dpm_gibbs_sweep: concentration must be positive");

  std::vector<ClusterStats> st = stats_by_label(state.z, data);
  const double log_m = std::log(state.m_conc);
  std::vector<double> logw;
  const ClusterStats empty;

  for (std::size_t i = 0; i < n; ++i) {
    const double y = data[i];
    int zi = state.z[i];
    st[static_cast<std::size_t>(zi)].remove(y);
    if (st[static_cast<std::size_t>(zi)].n() == 0) {
      // delete the dead cluster by moving the last one into its slot
      const int last = static_cast<int>(st.size()) - 1;
      if (zi != last) {
        st[static_cast<std::size_t>(zi)] = st[static_cast<std::size_t>(last)];
        for (int& zj : state.z)
          if (zj == last) zj = zi;
      }
      st.pop_back();
    }

    const int k = static_cast<int>(st.size());
    logw.resize(static_cast<std::size_t>(k) + 1);
    for (int c = 0; c < k; ++c)
      logw[static_cast<std::size_t>(c)] =
          std::log(static_cast<double>(st[static_cast<std::size_t>(c)].n())) + pred(st[static_cast<std::size_t>(c)], y);
    logw[static_cast<std::size_t>(k)] = log_m + pred(empty, y);

    const int choice = sample_categorical_from_log(rng, logw);
    if (choice == k) st.emplace_back();
    st[static_cast<std::size_t>(choice)].add(y);
    state.z[i] = choice;
  }

  // eta | M, n then M | eta, K+ (two-Gamma mixture).
  const double kplus = static_cast<double>(st.size());
  state.eta = sample_beta(rng, state.m_conc + 1.0, static_cast<double>(n));
  const double rate = gprior.b - std::log(state.eta);
  const double shape_hi = gprior.a + kplus;
  const double omega = (shape_hi - 1.0) / (static_cast<double>(n) * rate + shape_hi - 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  state.m_conc = unif(rng) < omega ? sample_gamma_shape_rate(rng, shape_hi, rate)
                                   : sample_gamma_shape_rate(rng, shape_hi - 1.0, rate);

  state.z = canonicalize(state.z).labels;
}

}  // namespace

void dpm_gibbs_sweep(DpmState& state, std::span<const double> data, const NigPrior& prior,
                     const GammaPrior& gprior, Rng& rng) {
  prior.validate();
  gprior.validate();
  const PredictiveTable pred(prior, static_cast<long long>(data.size()));
  sweep_with_table(state, data, pred, gprior, rng);
}

std::vector<int> dpm_sample_urn(int n, double m_conc, Rng& rng) {
  if (n < 0) throw invalid_input("dpm_sample_urn: negative n");
  if (!(m_conc > 0.0)) throw invalid_input("dpm_sample_urn: concentration must be positive");
  std::vector<int> z;
  z.reserve(static_cast<std::size_t>(n));
  std::vector<double> counts;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double total = m_conc + static_cast<double>(i);
    double u = unif(rng) * total;
    int pick = static_cast<int>(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (u < counts[c]) {
        pick = static_cast<int>(c);
        break;
      }
      u -= counts[c];
    }
    if (pick == static_cast<int>(counts.size()))
      counts.push_back(1.0);
    else
      counts[static_cast<std::size_t>(pick)] += 1.0;
    z.push_back(pick);
  }
  return z;
}

DpmSisResult dpm_sis_impute(std::span<const double> data, double m_conc, const NigPrior& prior,
                            Rng& rng) {
  const PredictiveTable pred(prior, static_cast<long long>(data.size()));
  return dpm_sis_impute(data, m_conc, pred, rng);
}

DpmSisResult dpm_sis_impute(std::span<const double> data, double m_conc,
                            const PredictiveTable& pred, Rng& rng) {
  if (!(m_conc > 0.0)) throw invalid_input("dpm_sis_impute: concentration must be positive");
  const std::size_t n = data.size();
  DpmSisResult out;
  out.z.reserve(n);
  out.log_weight = 0.0;
  out.log_proposal = 0.0;
  const double log_m = std::log(m_conc);
  std::vector<ClusterStats> st;
  std::vector<double> logw;
  const ClusterStats empty;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = data[i];
    const int k = static_cast<int>(st.size());
    const double log_denom = std::log(m_conc + static_cast<double>(i));
    logw.resize(static_cast<std::size_t>(k) + 1);
    for (int c = 0; c < k; ++c)
      logw[static_cast<std::size_t>(c)] =
          std::log(static_cast<double>(st[static_cast<std::size_t>(c)].n())) - log_denom +
          pred(st[static_cast<std::size_t>(c)], y);
    logw[static_cast<std::size_t>(k)] = log_m - log_denom + pred(empty, y);
    const double norm = stats::log_sum_exp(logw);
    const int choice = sample_categorical_from_log(rng, logw);
    out.log_weight += norm;
    out.log_proposal += logw[static_cast<std::size_t>(choice)] - norm;
    if (choice == k) st.emplace_back();
    st[static_cast<std::size_t>(choice)].add(y);
    out.z.push_back(choice);
  }
  return out;
}

double dpm_sis_log_proposal(std::span<const double> data, std::span<const int> z, double m_conc,
                            const NigPrior& prior) {
  if (z.size() != data.size()) throw invalid_input("dpm_sis_log_proposal: size mismatch");
  if (!(m_conc > 0.0)) throw invalid_input("dpm_sis_log_proposal: concentration must be positive");
  const PredictiveTable pred(prior, static_cast<long long>(data.size()));
  const double log_m = std::log(m_conc);
  std::vector<ClusterStats> st;
  std::vector<double> logw;
  const ClusterStats empty;
  double out = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double y = data[i];
    const int k = static_cast<int>(st.size());
    const int zi = z[i];
    if (zi < 0 || zi > k)
      throw invalid_input("dpm_sis_log_proposal: allocation is not first-appearance canonical");
    const double log_denom = std::log(m_conc + static_cast<double>(i));
    logw.resize(static_cast<std::size_t>(k) + 1);
    for (int c = 0; c < k; ++c)
      logw[static_cast<std::size_t>(c)] =
          std::log(static_cast<double>(st[static_cast<std::size_t>(c)].n())) - log_denom +
          pred(st[static_cast<std::size_t>(c)], y);
    logw[static_cast<std::size_t>(k)] = log_m - log_denom + pred(empty, y);
    out += logw[static_cast<std::size_t>(zi)] - stats::log_sum_exp(logw);
    if (zi == k) st.emplace_back();
    st[static_cast<std::size_t>(zi)].add(y);
  }
  return out;
}

DpmChain dpm_run_chain(std::span<const double> data, const NigPrior& prior,
                       const GammaPrior& gprior, const DpmChainOptions& opt) {
  prior.validate();
  gprior.validate();
  if (opt.sweeps < 1) throw invalid_input("dpm_run_chain: need at least one stored sweep");
  if (opt.burnin < 0) throw invalid_input("dpm_run_chain: negative burn-in");
  Rng rng = make_rng(opt.seed, opt.stream);
  DpmState state;
  if (opt.init) {
    state = *opt.init;
    if (state.z.size() != data.size()) throw invalid_input("dpm_run_chain: init allocation size mismatch");
  } else {
    state.z.assign(data.size(), 0);  // all points in one cluster
    state.m_conc = gprior.a / gprior.b;
    state.eta = 0.5;
  }

  const PredictiveTable pred(prior, static_cast<long long>(data.size()));
  DpmChain chain;
  chain.m_trace.reserve(static_cast<std::size_t>(opt.sweeps));
  chain.eta_trace.reserve(static_cast<std::size_t>(opt.sweeps));
  chain.kplus_trace.reserve(static_cast<std::size_t>(opt.sweeps));
  for (long long t = 0; t < opt.burnin + opt.sweeps; ++t) {
    sweep_with_table(state, data, pred, gprior, rng);
    if (t < opt.burnin) continue;
    chain.m_trace.push_back(state.m_conc);
    chain.eta_trace.push_back(state.eta);
    int kplus = 0;
    for (int zi : state.z) kplus = std::max(kplus, zi + 1);
    chain.kplus_trace.push_back(kplus);
    if (opt.store_allocs) chain.allocs.push_back(state.z);
  }
  return chain;
}

}  // namespace evidence::dpm
