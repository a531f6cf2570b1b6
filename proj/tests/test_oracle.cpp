// Brute-force evidence oracles: exact finite-mixture evidence by allocation
// and partition enumeration, and exact DPM evidence at fixed or Gamma-mixed
// concentration. These are the ground truth for every estimator test, so they
// are themselves cross-checked against independent routes computed here.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "evidence/conjugate.hpp"
#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"
#include "evidence/oracle.hpp"
#include "evidence/partitions.hpp"

namespace ev = evidence;
namespace oracle = evidence::oracle;

namespace {

const std::vector<double> kSix = {-1.41, -0.57, -1.04, 0.86, 1.32, 0.44};
const ev::NigPrior kPrior{0.0, 1.0, 2.0, 1.0};

double log_marginal_of(std::span<const double> block, const ev::NigPrior& prior) {
  ev::ClusterStats s;
  for (double y : block) s.add(y);
  return ev::cluster_log_marginal(s, prior);
}

double log_gamma_pdf(double m, double a, double b) {
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(m) - b * m;
}

// Independent integration route: Simpson's rule in u = log M over a wide
// window, against which the Gauss-Laguerre oracle is checked.
template <typename F>
double simpson_log_integral_over_m(const ev::dpm::GammaPrior& g, F&& log_f) {
  const double lo = std::log(1e-8), hi = std::log(1e4);
  const int cells = 4000;
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

}  // namespace

TEST_CASE("finite-mixture oracle: hand-computed two-point case") {
  // n=2, K=2, alpha=1: P(together) = 2/3, P(apart) = 1/3.
  const std::vector<double> y = {-0.7, 0.9};
  const std::vector<double> alpha = {1.0, 1.0};
  const double m12 = log_marginal_of(y, kPrior);
  const double m1 = log_marginal_of(std::span<const double>(y.data(), 1), kPrior);
  const double m2 = log_marginal_of(std::span<const double>(y.data() + 1, 1), kPrior);
  const double expected = ev::stats::log_add_exp(std::log(2.0 / 3.0) + m12,
                                                 std::log(1.0 / 3.0) + m1 + m2);
  CHECK(oracle::fm_exact_evidence(y, 2, kPrior, alpha) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("finite-mixture oracle: K=1 reduces to the single-cluster marginal") {
  const std::vector<double> alpha = {2.3};
  CHECK(oracle::fm_exact_evidence(kSix, 1, kPrior, alpha) ==
        doctest::Approx(log_marginal_of(kSix, kPrior)).epsilon(1e-12));
}

TEST_CASE("finite-mixture oracle: empty data has unit evidence") {
  const std::vector<double> alpha = {1.0, 1.0};
  CHECK(oracle::fm_exact_evidence({}, 2, kPrior, alpha) == 0.0);
  CHECK(oracle::fm_exact_evidence_partition({}, 2, kPrior, alpha) == 0.0);
}

TEST_CASE("finite-mixture oracle: allocation and partition routes agree") {
  for (int n : {1, 3, 5, 7}) {
    const std::span<const double> y(kSix.data(), static_cast<std::size_t>(std::min(n, 6)));
    std::vector<double> data(y.begin(), y.end());
    if (n == 7) data.push_back(2.2);
    for (int k : {1, 2, 3}) {
      for (double a : {0.5, 1.0, 2.0}) {
        const std::vector<double> alpha(static_cast<std::size_t>(k), a);
        CHECK(oracle::fm_exact_evidence(data, k, kPrior, alpha) ==
              doctest::Approx(oracle::fm_exact_evidence_partition(data, k, kPrior, alpha))
                  .epsilon(1e-11));
      }
    }
  }
}

TEST_CASE("finite-mixture oracle: asymmetric weights against direct enumeration") {
  // Independent route: Dirichlet-multinomial mass x product of block
  // marginals, summed over all K^n labeled allocations by explicit loops.
  const std::vector<double> y = {-1.2, 0.4, 1.7};
  const std::vector<double> alpha = {2.0, 0.7};
  const double alpha_sum = alpha[0] + alpha[1];
  std::vector<double> terms;
  for (int z0 = 0; z0 < 2; ++z0)
    for (int z1 = 0; z1 < 2; ++z1)
      for (int z2 = 0; z2 < 2; ++z2) {
        const int z[3] = {z0, z1, z2};
        ev::ClusterStats st[2];
        int counts[2] = {0, 0};
        for (int i = 0; i < 3; ++i) {
          st[z[i]].add(y[static_cast<std::size_t>(i)]);
          counts[z[i]] += 1;
        }
        double v = std::lgamma(alpha_sum) - std::lgamma(alpha_sum + 3.0);
        for (int j = 0; j < 2; ++j)
          v += std::lgamma(alpha[static_cast<std::size_t>(j)] + counts[j]) -
               std::lgamma(alpha[static_cast<std::size_t>(j)]) +
               ev::cluster_log_marginal(st[j], kPrior);
        terms.push_back(v);
      }
  CHECK(oracle::fm_exact_evidence(y, 2, kPrior, alpha) ==
        doctest::Approx(ev::stats::log_sum_exp(terms)).epsilon(1e-12));

  // The partition route is defined for symmetric weights only.
  CHECK_THROWS_AS(oracle::fm_exact_evidence_partition(y, 2, kPrior, alpha),
                  ev::invalid_input);
}

TEST_CASE("finite-mixture oracle: enumeration guard and input validation") {
  const std::vector<double> y8(8, 0.1);
  const std::vector<double> alpha10(10, 1.0);
  CHECK_THROWS_AS(oracle::fm_exact_evidence(y8, 10, kPrior, alpha10), ev::size_guard);
  const std::vector<double> y24(24, 0.1);
  const std::vector<double> alpha2 = {1.0, 1.0};
  CHECK_THROWS_AS(oracle::fm_exact_evidence(y24, 2, kPrior, alpha2), ev::size_guard);
  CHECK_THROWS_AS(oracle::fm_exact_evidence_partition(y24, 2, kPrior, alpha2),
                  ev::size_guard);
  CHECK_THROWS_AS(oracle::fm_exact_evidence(y8, 2, kPrior, alpha10), ev::invalid_input);
  CHECK_THROWS_AS(oracle::fm_exact_evidence(y8, 0, kPrior, {}), ev::invalid_input);
}

TEST_CASE("dpm fixed-M oracle: concentration limits hold") {
  // M -> 0: everything in one cluster. M -> infinity: all singletons.
  const double merged = log_marginal_of(kSix, kPrior);
  CHECK(oracle::dpm_fixed_m_log_evidence(kSix, 1e-8, kPrior) ==
        doctest::Approx(merged).epsilon(1e-6));

  double singletons = 0.0;
  for (double y : kSix)
    singletons += log_marginal_of(std::span<const double>(&y, 1), kPrior);
  CHECK(oracle::dpm_fixed_m_log_evidence(kSix, 1e8, kPrior) ==
        doctest::Approx(singletons).epsilon(1e-5));

  CHECK(oracle::dpm_fixed_m_log_evidence({}, 1.0, kPrior) == 0.0);
  CHECK_THROWS_AS(oracle::dpm_fixed_m_log_evidence(kSix, 0.0, kPrior), ev::invalid_input);
}

TEST_CASE("dpm integrated oracle: agrees with direct Simpson integration") {
  for (const ev::dpm::GammaPrior& g :
       {ev::dpm::GammaPrior{1.0, 1.0}, ev::dpm::GammaPrior{2.0, 0.5},
        ev::dpm::GammaPrior{0.7, 1.3}}) {
    const double laguerre = oracle::dpm_exact_evidence(kSix, kPrior, g);
    const double simpson = simpson_log_integral_over_m(
        g, [&](double m) { return oracle::dpm_fixed_m_log_evidence(kSix, m, kPrior); });
    CHECK(laguerre == doctest::Approx(simpson).epsilon(1e-6));
  }
}

TEST_CASE("dpm integrated oracle: insensitive to the starting node count") {
  const ev::dpm::GammaPrior g{1.0, 1.0};
  const double coarse = oracle::dpm_exact_evidence(kSix, kPrior, g, 25);
  const double fine = oracle::dpm_exact_evidence(kSix, kPrior, g, 400);
  CHECK(coarse == doctest::Approx(fine).epsilon(5e-8));
}

TEST_CASE("dpm integrated oracle: single point is concentration-free") {
  const std::vector<double> y1 = {0.42};
  const double exact = log_marginal_of(y1, kPrior);
  for (const ev::dpm::GammaPrior& g :
       {ev::dpm::GammaPrior{1.0, 1.0}, ev::dpm::GammaPrior{3.0, 0.2}}) {
    CHECK(oracle::dpm_exact_evidence(y1, kPrior, g) ==
          doctest::Approx(exact).epsilon(1e-9));
  }
}

TEST_CASE("dpm posterior mean of M: agrees with direct Simpson ratio") {
  const ev::dpm::GammaPrior g{1.0, 1.0};
  const double log_num = simpson_log_integral_over_m(g, [&](double m) {
    return std::log(m) + oracle::dpm_fixed_m_log_evidence(kSix, m, kPrior);
  });
  const double log_den = simpson_log_integral_over_m(
      g, [&](double m) { return oracle::dpm_fixed_m_log_evidence(kSix, m, kPrior); });
  CHECK(oracle::dpm_exact_posterior_mean_m(kSix, kPrior, g) ==
        doctest::Approx(std::exp(log_num - log_den)).epsilon(1e-6));

  // No data: posterior moments are the prior moments.
  CHECK(oracle::dpm_exact_posterior_mean_m({}, kPrior, ev::dpm::GammaPrior{3.0, 2.0}) ==
        doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("dpm oracle guards") {
  const std::vector<double> y15(15, 0.3);
  const ev::dpm::GammaPrior g{1.0, 1.0};
  CHECK_THROWS_AS(oracle::dpm_fixed_m_log_evidence(y15, 1.0, kPrior), ev::size_guard);
  CHECK_THROWS_AS(oracle::dpm_exact_evidence(y15, kPrior, g), ev::size_guard);
  CHECK_THROWS_AS(oracle::dpm_exact_posterior_mean_m(y15, kPrior, g), ev::size_guard);
  CHECK_THROWS_AS(oracle::dpm_exact_evidence(kSix, kPrior, g, 1), ev::invalid_input);
}
