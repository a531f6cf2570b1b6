// Micro-benchmarks for the hot kernels: cluster marginals, cached predictive
// evaluation, one sequential-imputation replicate, and one Gibbs sweep.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "evidence/conjugate.hpp"
#include "evidence/fm_evidence.hpp"
#include "evidence/fm_model.hpp"
#include "evidence/rng.hpp"

namespace {

std::vector<double> bench_data(std::size_t n) {
  evidence::Rng rng = evidence::make_rng(7, 0);
  std::normal_distribution<double> left(-1.0, 1.0), right(1.0, 1.0);
  std::vector<double> y;
  y.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    y.push_back(i % 2 == 0 ? left(rng) : right(rng));
  return y;
}

const evidence::NigPrior kPrior{0.0, 1.0, 1.0, 1.0};

void BM_cluster_log_marginal(benchmark::State& state) {
  const std::vector<double> y = bench_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    evidence::ClusterStats st;
    for (double v : y) st.add(v);
    benchmark::DoNotOptimize(evidence::cluster_log_marginal(st, kPrior));
  }
}
BENCHMARK(BM_cluster_log_marginal)->Arg(8)->Arg(82)->Arg(1000);

void BM_predictive_cached(benchmark::State& state) {
  const std::vector<double> y = bench_data(82);
  evidence::PredictiveTable table(kPrior, y.size());
  evidence::ClusterStats st;
  for (std::size_t i = 0; i < 40; ++i) st.add(y[i]);
  double x = 0.25;
  for (auto _ : state) {
    benchmark::DoNotOptimize(table(st, x));
    x += 1e-9;  // defeat constant folding
  }
}
BENCHMARK(BM_predictive_cached);

void BM_sis_replicate(benchmark::State& state) {
  const std::vector<double> y = bench_data(82);
  const int k = static_cast<int>(state.range(0));
  const std::vector<double> alpha(static_cast<std::size_t>(k), 1.0);
  evidence::fm::SisOptions opt;
  opt.draws = 2;  // minimum; one replicate is the unit of work
  std::uint64_t seed = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(evidence::fm::sis_evidence(y, k, kPrior, alpha, opt));
    opt.seed = ++seed;
  }
}
BENCHMARK(BM_sis_replicate)->Arg(3)->Arg(5)->Arg(8);

void BM_gibbs_sweep(benchmark::State& state) {
  const std::vector<double> y = bench_data(82);
  const int k = static_cast<int>(state.range(0));
  const std::vector<double> alpha(static_cast<std::size_t>(k), 1.0);
  evidence::Rng rng = evidence::make_rng(11, 0);
  evidence::fm::FmParams params = evidence::fm::fm_sample_prior(k, kPrior, alpha, rng);
  std::vector<int> z(y.size(), 0);
  for (auto _ : state) {
    evidence::fm::fm_gibbs_sweep(params, z, y, kPrior, alpha, rng);
    benchmark::DoNotOptimize(params);
  }
}
BENCHMARK(BM_gibbs_sweep)->Arg(3)->Arg(5);

}  // namespace

BENCHMARK_MAIN();
