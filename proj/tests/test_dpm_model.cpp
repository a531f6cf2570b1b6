// Dirichlet-process mixture core: allocation prior, collapsed likelihood,
// Gibbs sweep over (z, M), and the sequential imputation primitive.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "evidence/dpm_model.hpp"
#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"
#include "evidence/oracle.hpp"
#include "evidence/partitions.hpp"
#include "evidence/rng.hpp"

namespace ev = evidence;
namespace dpm = evidence::dpm;

namespace {

const std::vector<double> kSix = {-1.41, -0.57, -1.04, 0.86, 1.32, 0.44};
const ev::NigPrior kPrior{0.0, 1.0, 2.0, 1.0};

double log_gamma_pdf(double m, double a, double b) {
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(m) - b * m;
}

// log of the integral over M ~ Gamma(a,b) of exp(log_f(M)), by Simpson's rule
// in u = log M over a wide fixed window. Accurate to ~1e-9 for the smooth,
// polynomially-bounded integrands that appear in these tests.
template <typename F>
double log_integrate_over_m(const dpm::GammaPrior& g, F&& log_f) {
  const double lo = std::log(1e-8), hi = std::log(1e4);
  const int cells = 4000;  // Simpson: needs even count
  const double h = (hi - lo) / cells;
  std::vector<double> terms;
  terms.reserve(cells + 1);
  for (int i = 0; i <= cells; ++i) {
    const double u = lo + i * h;
    const double m = std::exp(u);
    const double w = (i == 0 || i == cells) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    terms.push_back(std::log(w) + log_gamma_pdf(m, g.a, g.b) + u + log_f(m));
  }
  return ev::stats::log_sum_exp(terms) + std::log(h / 3.0);
}

// Sequential Pólya-urn product: probability of building the (first-appearance
// canonical) allocation one point at a time.
double urn_log_product(std::span<const int> z, double m_conc) {
  double total = 0.0;
  std::vector<long long> counts;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (i > 0) {
      const double denom = m_conc + static_cast<double>(i);
      if (z[i] < static_cast<int>(counts.size()))
        total += std::log(static_cast<double>(counts[static_cast<std::size_t>(z[i])]) / denom);
      else
        total += std::log(m_conc / denom);
    }
    if (z[i] == static_cast<int>(counts.size()))
      counts.push_back(1);
    else
      counts[static_cast<std::size_t>(z[i])] += 1;
  }
  return total;
}

bool is_first_appearance_canonical(std::span<const int> z) {
  int seen = 0;
  for (int label : z) {
    if (label < 0 || label > seen) return false;
    if (label == seen) ++seen;
  }
  return true;
}

}  // namespace

TEST_CASE("gamma prior validation") {
  CHECK_NOTHROW((dpm::GammaPrior{2.0, 0.5}).validate());
  CHECK_THROWS_AS((dpm::GammaPrior{0.0, 1.0}).validate(), ev::invalid_input);
  CHECK_THROWS_AS((dpm::GammaPrior{1.0, -1.0}).validate(), ev::invalid_input);
  CHECK_THROWS_AS((dpm::GammaPrior{std::nan(""), 1.0}).validate(), ev::invalid_input);
}

TEST_CASE("allocation prior: closed form pins") {
  const std::vector<int> one = {0};
  for (double m : {0.2, 1.0, 3.7}) CHECK(dpm::dpm_log_prior_z(one, m) == doctest::Approx(0.0).epsilon(1e-14));

  const std::vector<int> together = {0, 0};
  const std::vector<int> apart = {0, 1};
  CHECK(dpm::dpm_log_prior_z(together, 1.0) == doctest::Approx(std::log(0.5)).epsilon(1e-13));
  CHECK(dpm::dpm_log_prior_z(apart, 1.0) == doctest::Approx(std::log(0.5)).epsilon(1e-13));

  // Exchangeable: depends only on the block-size multiset.
  const std::vector<int> a = {0, 0, 1};
  const std::vector<int> b = {0, 1, 1};
  const std::vector<int> c = {0, 1, 0};
  const double m = 1.6;
  CHECK(dpm::dpm_log_prior_z(a, m) == dpm::dpm_log_prior_z(b, m));
  CHECK(dpm::dpm_log_prior_z(a, m) == dpm::dpm_log_prior_z(c, m));
}

TEST_CASE("allocation prior equals the telescoping urn product") {
  ev::Rng rng = ev::make_rng(77, 0);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 10);
    const double m_gen = std::exp(std::uniform_real_distribution<double>(-1.5, 1.5)(rng));
    std::vector<int> z = dpm::dpm_sample_urn(n, m_gen, rng);
    REQUIRE(is_first_appearance_canonical(z));
    // The identity holds for any concentration, not just the generating one.
    for (double m : {0.3, 1.0, 2.7, m_gen}) {
      CHECK(dpm::dpm_log_prior_z(z, m) ==
            doctest::Approx(urn_log_product(z, m)).epsilon(1e-12));
    }
  }
}

TEST_CASE("allocation prior sums to one over set partitions") {
  for (int n : {1, 2, 3, 5, 7}) {
    for (double m : {0.4, 1.0, 2.5}) {
      std::vector<double> terms;
      ev::for_each_set_partition(n, n, [&](std::span<const int> labels, int) {
        terms.push_back(dpm::dpm_log_prior_z(labels, m));
      });
      CHECK(ev::stats::log_sum_exp(terms) == doctest::Approx(0.0).epsilon(1e-11));
    }
  }
}

TEST_CASE("collapsed likelihood: single block and label invariance") {
  const std::vector<int> one_block = {0, 0, 0, 0, 0, 0};
  ev::ClusterStats all;
  for (double y : kSix) all.add(y);
  CHECK(dpm::dpm_log_likelihood_z(one_block, kSix, kPrior) ==
        ev::cluster_log_marginal(all, kPrior));

  const std::vector<int> za = {0, 0, 1, 1, 2, 2};
  const std::vector<int> zb = {0, 0, 1, 1, 2, 2};
  CHECK(dpm::dpm_log_likelihood_z(za, kSix, kPrior) ==
        dpm::dpm_log_likelihood_z(zb, kSix, kPrior));
  // Same grouping, different insertion pattern of labels.
  const std::vector<int> zc = {0, 1, 0, 2, 1, 2};
  const std::vector<int> zd = {0, 1, 0, 2, 1, 2};
  CHECK(dpm::dpm_log_likelihood_z(zc, kSix, kPrior) ==
        dpm::dpm_log_likelihood_z(zd, kSix, kPrior));
}

TEST_CASE("prior x likelihood over all set partitions matches the fixed-M oracle") {
  const std::vector<double> y3 = {-0.8, 0.3, 1.1};
  for (double m : {0.5, 1.0, 2.0}) {
    std::vector<double> terms;
    int count = 0;
    ev::for_each_set_partition(3, 3, [&](std::span<const int> labels, int) {
      terms.push_back(dpm::dpm_log_prior_z(labels, m) +
                      dpm::dpm_log_likelihood_z(labels, y3, kPrior));
      ++count;
    });
    CHECK(count == 5);  // Bell(3)
    CHECK(ev::stats::log_sum_exp(terms) ==
          doctest::Approx(ev::oracle::dpm_fixed_m_log_evidence(y3, m, kPrior)).epsilon(1e-10));
  }
}

TEST_CASE("gibbs sweep: state invariants hold along a chain") {
  const std::vector<double> y8 = {-1.3, -0.9, -1.7, 1.2, 0.8, 1.6, 0.1, -0.2};
  const dpm::GammaPrior g{1.0, 1.0};
  dpm::DpmState state;
  state.z.assign(y8.size(), 0);
  ev::Rng rng = ev::make_rng(5, 1);
  for (int sweep = 0; sweep < 300; ++sweep) {
    dpm::dpm_gibbs_sweep(state, y8, kPrior, g, rng);
    REQUIRE(state.z.size() == y8.size());
    REQUIRE(is_first_appearance_canonical(state.z));
    const int kplus = 1 + *std::max_element(state.z.begin(), state.z.end());
    REQUIRE(kplus >= 1);
    REQUIRE(kplus <= static_cast<int>(y8.size()));
    REQUIRE(state.m_conc > 0.0);
    REQUIRE(state.eta > 0.0);
    REQUIRE(state.eta < 1.0);
  }
}

TEST_CASE("gibbs sweep: partition posterior on two identical points") {
  // Two copies of the same value; exact posterior over the two partitions,
  // with the concentration marginalized by quadrature.
  const std::vector<double> y2 = {0.5, 0.5};
  const dpm::GammaPrior g{1.0, 1.0};
  const std::vector<int> together = {0, 0};
  const std::vector<int> apart = {0, 1};
  const double log_w_together = log_integrate_over_m(
      g, [&](double m) { return dpm::dpm_log_prior_z(together, m); });
  const double log_w_apart = log_integrate_over_m(
      g, [&](double m) { return dpm::dpm_log_prior_z(apart, m); });
  const double log_post_together =
      log_w_together + dpm::dpm_log_likelihood_z(together, y2, kPrior);
  const double log_post_apart =
      log_w_apart + dpm::dpm_log_likelihood_z(apart, y2, kPrior);
  const double p_together =
      std::exp(log_post_together - ev::stats::log_add_exp(log_post_together, log_post_apart));

  dpm::DpmChainOptions opt;
  opt.sweeps = 20000;
  opt.burnin = 2000;
  opt.seed = 11;
  const dpm::DpmChain chain = dpm::dpm_run_chain(y2, kPrior, g, opt);
  REQUIRE(chain.kplus_trace.size() == 20000);
  std::vector<double> indicator;
  indicator.reserve(chain.kplus_trace.size());
  for (int kp : chain.kplus_trace) indicator.push_back(kp == 1 ? 1.0 : 0.0);
  const double freq =
      std::accumulate(indicator.begin(), indicator.end(), 0.0) / indicator.size();
  const long long lag = ev::stats::newey_west_default_lag(static_cast<long long>(indicator.size()));
  const double se = std::sqrt(ev::stats::newey_west_variance(indicator, lag));
  CHECK(std::abs(freq - p_together) < 3.0 * se + 0.01);
}

TEST_CASE("gibbs sweep: posterior mean of the concentration matches the oracle") {
  const std::vector<double> y8 = {-1.3, -0.9, -1.7, 1.2, 0.8, 1.6, 0.1, -0.2};
  const dpm::GammaPrior g{1.0, 1.0};
  const double exact = ev::oracle::dpm_exact_posterior_mean_m(y8, kPrior, g);

  dpm::DpmChainOptions opt;
  opt.sweeps = 20000;
  opt.burnin = 2000;
  opt.seed = 21;
  const dpm::DpmChain chain = dpm::dpm_run_chain(y8, kPrior, g, opt);
  const double mean_m =
      std::accumulate(chain.m_trace.begin(), chain.m_trace.end(), 0.0) /
      chain.m_trace.size();
  const long long lag = ev::stats::newey_west_default_lag(static_cast<long long>(chain.m_trace.size()));
  const double se = std::sqrt(ev::stats::newey_west_variance(chain.m_trace, lag));
  CHECK(std::abs(mean_m - exact) < 3.0 * se + 0.02);
}

TEST_CASE("chain artifacts: trace sizes, stored allocations, determinism") {
  const dpm::GammaPrior g{1.0, 1.0};
  dpm::DpmChainOptions opt;
  opt.sweeps = 500;
  opt.burnin = 100;
  opt.seed = 3;
  opt.store_allocs = true;
  const dpm::DpmChain chain = dpm::dpm_run_chain(kSix, kPrior, g, opt);
  CHECK(chain.m_trace.size() == 500);
  CHECK(chain.eta_trace.size() == 500);
  CHECK(chain.kplus_trace.size() == 500);
  REQUIRE(chain.allocs.size() == 500);
  for (std::size_t t = 0; t < chain.allocs.size(); ++t) {
    REQUIRE(chain.allocs[t].size() == kSix.size());
    REQUIRE(is_first_appearance_canonical(chain.allocs[t]));
    const int kplus = 1 + *std::max_element(chain.allocs[t].begin(), chain.allocs[t].end());
    REQUIRE(kplus == chain.kplus_trace[t]);
  }

  const dpm::DpmChain again = dpm::dpm_run_chain(kSix, kPrior, g, opt);
  CHECK(again.m_trace == chain.m_trace);
  CHECK(again.allocs == chain.allocs);

  dpm::DpmChainOptions other = opt;
  other.stream = 9;
  const dpm::DpmChain moved = dpm::dpm_run_chain(kSix, kPrior, g, other);
  CHECK(moved.m_trace != chain.m_trace);
}

TEST_CASE("prior urn sampler: one-block frequency and canonical labels") {
  ev::Rng rng = ev::make_rng(13, 0);
  CHECK(dpm::dpm_sample_urn(1, 2.0, rng) == std::vector<int>{0});

  const int trials = 20000;
  int one_block = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<int> z = dpm::dpm_sample_urn(2, 1.0, rng);
    REQUIRE(is_first_appearance_canonical(z));
    if (z[0] == z[1]) ++one_block;
  }
  const double freq = static_cast<double>(one_block) / trials;
  const double se = std::sqrt(0.25 / trials);
  CHECK(std::abs(freq - 0.5) < 3.0 * se + 0.005);  // P(join) = 1/(1+M) = 1/2
}

TEST_CASE("sequential imputation: single point is exact") {
  const std::vector<double> y1 = {0.42};
  ev::ClusterStats c;
  c.add(y1[0]);
  const double exact = ev::cluster_log_marginal(c, kPrior);
  for (double m : {0.3, 1.0, 5.0}) {
    ev::Rng rng = ev::make_rng(1, 2);
    const dpm::DpmSisResult res = dpm::dpm_sis_impute(y1, m, kPrior, rng);
    CHECK(res.z == std::vector<int>{0});
    CHECK(res.log_weight == doctest::Approx(exact).epsilon(1e-12));
    CHECK(res.log_proposal == 0.0);
  }
}

TEST_CASE("sequential imputation: weight identity and proposal consistency") {
  // exp(log_weight) = p(y, z | M) / q(z | M) holds draw by draw.
  const double m = 1.3;
  ev::Rng rng = ev::make_rng(29, 0);
  for (int t = 0; t < 50; ++t) {
    const dpm::DpmSisResult res = dpm::dpm_sis_impute(kSix, m, kPrior, rng);
    REQUIRE(is_first_appearance_canonical(res.z));
    const double joint = dpm::dpm_log_prior_z(res.z, m) +
                         dpm::dpm_log_likelihood_z(res.z, kSix, kPrior);
    CHECK(res.log_weight == doctest::Approx(joint - res.log_proposal).epsilon(1e-9));
    CHECK(dpm::dpm_sis_log_proposal(kSix, res.z, m, kPrior) ==
          doctest::Approx(res.log_proposal).epsilon(1e-12));
  }
  CHECK_THROWS_AS(
      dpm::dpm_sis_log_proposal(kSix, std::vector<int>{1, 0, 0, 0, 0, 0}, m, kPrior),
      ev::invalid_input);
}

TEST_CASE("sequential imputation: cached-predictive overload is identical") {
  const double m = 0.8;
  const ev::PredictiveTable table(kPrior, static_cast<long long>(kSix.size()));
  ev::Rng rng_a = ev::make_rng(4, 7);
  ev::Rng rng_b = ev::make_rng(4, 7);
  for (int t = 0; t < 20; ++t) {
    const dpm::DpmSisResult a = dpm::dpm_sis_impute(kSix, m, kPrior, rng_a);
    const dpm::DpmSisResult b = dpm::dpm_sis_impute(kSix, m, table, rng_b);
    CHECK(a.z == b.z);
    CHECK(a.log_weight == b.log_weight);
    CHECK(a.log_proposal == b.log_proposal);
  }
}

TEST_CASE("sequential imputation: unbiased for the fixed-M evidence") {
  const double m = 1.3;
  const double oracle = ev::oracle::dpm_fixed_m_log_evidence(kSix, m, kPrior);
  ev::Rng rng = ev::make_rng(101, 0);
  const int draws = 20000;
  std::vector<double> logw;
  logw.reserve(draws);
  for (int t = 0; t < draws; ++t)
    logw.push_back(dpm::dpm_sis_impute(kSix, m, kPrior, rng).log_weight);
  const double est = ev::stats::log_mean_exp(logw);
  const double se = ev::stats::se_log_mean_exp(logw);
  CHECK(std::abs(est - oracle) < 3.0 * se);
}

TEST_CASE("sequential imputation: exchangeable across data orderings") {
  const double m = 0.9;
  std::vector<double> reversed(kSix.rbegin(), kSix.rend());
  const int draws = 20000;
  auto estimate = [&](std::span<const double> data, std::uint64_t stream) {
    ev::Rng rng = ev::make_rng(55, stream);
    std::vector<double> logw;
    logw.reserve(draws);
    for (int t = 0; t < draws; ++t)
      logw.push_back(dpm::dpm_sis_impute(data, m, kPrior, rng).log_weight);
    return std::pair<double, double>(ev::stats::log_mean_exp(logw), ev::stats::se_log_mean_exp(logw));
  };
  const auto [e1, s1] = estimate(kSix, 0);
  const auto [e2, s2] = estimate(reversed, 1);
  CHECK(std::abs(e1 - e2) < 3.0 * (s1 + s2));
  const double oracle = ev::oracle::dpm_fixed_m_log_evidence(kSix, m, kPrior);
  CHECK(std::abs(e2 - oracle) < 3.0 * s2);
}
