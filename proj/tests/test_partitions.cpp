#include "doctest.h"

#include <cmath>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "evidence/errors.hpp"
#include "evidence/mcstats.hpp"
#include "evidence/partitions.hpp"

using namespace evidence;

TEST_CASE("canonicalize relabels by first appearance") {
  const std::vector<int> a{0, 1, 0, 2};
  const std::vector<int> b{1, 0, 1, 2};
  CHECK(canonicalize(a) == canonicalize(b));
  CHECK(canonicalize(a).labels == std::vector<int>{0, 1, 0, 2});
  const std::vector<int> ones{4, 4, 4};
  CHECK(canonicalize(ones).labels == std::vector<int>{0, 0, 0});
  // Idempotent.
  CHECK(canonicalize(canonicalize(b).labels).labels == canonicalize(b).labels);
  CHECK(canonicalize(a).blocks() == 3);
  CHECK(canonicalize(a).block_sizes() == std::vector<int>{1, 1, 2});
}

TEST_CASE("enumerating 2^4 allocations yields 8 distinct canonical forms") {
  std::unordered_set<CanonicalPartition, CanonicalPartitionHash> seen;
  for_each_allocation(4, 2, [&](std::span<const int> z) { seen.insert(canonicalize(z)); });
  CHECK(seen.size() == 8);  // S(4,1) + S(4,2) = 1 + 7
}

TEST_CASE("set-partition enumeration matches allocation-derived canonical forms") {
  for (int n = 1; n <= 6; ++n) {
    for (int k = 1; k <= 3; ++k) {
      std::set<std::vector<int>> from_alloc;
      for_each_allocation(n, k, [&](std::span<const int> z) {
        from_alloc.insert(canonicalize(z).labels);
      });
      std::set<std::vector<int>> from_rgs;
      long long visits = 0;
      for_each_set_partition(n, k, [&](std::span<const int> labels, int blocks) {
        CHECK(blocks >= 1);
        CHECK(blocks <= k);
        from_rgs.insert(std::vector<int>(labels.begin(), labels.end()));
        ++visits;
      });
      CHECK(from_alloc == from_rgs);
      CHECK(static_cast<std::size_t>(visits) == from_rgs.size());  // no duplicates
    }
  }
}

TEST_CASE("partitions_count pinned values") {
  CHECK(partitions_count(4, 2) == "8");
  CHECK(partitions_count(7, 1) == "1");
  CHECK(partitions_count(3, 3) == "5");    // Bell(3)
  CHECK(partitions_count(12, 12) == "4213597");  // Bell(12)
  CHECK(round_scientific(partitions_count(82, 8), 3) == "2.80e69");
}

TEST_CASE("partitions_count equals brute force for n <= 10, k <= 4") {
  for (int n = 1; n <= 10; ++n) {
    for (int k = 1; k <= 4; ++k) {
      long long count = 0;
      for_each_set_partition(n, k, [&](std::span<const int>, int) { ++count; });
      CHECK(partitions_count(n, k) == std::to_string(count));
    }
  }
}

TEST_CASE("partitions_count equals Bell numbers when k >= n") {
  // Bell numbers via the triangle recurrence, independent of the library.
  std::vector<std::vector<long long>> tri{{1}};
  for (int r = 1; r <= 12; ++r) {
    std::vector<long long> row{tri.back().back()};
    for (long long v : tri.back()) row.push_back(row.back() + v);
    tri.push_back(row);
  }
  for (int n = 1; n <= 12; ++n)
    CHECK(partitions_count(n, n) == std::to_string(tri[static_cast<std::size_t>(n)][0]));
}

TEST_CASE("round_scientific") {
  CHECK(round_scientific("123456", 3) == "1.23e5");
  CHECK(round_scientific("129999", 3) == "1.30e5");
  CHECK(round_scientific("999951", 3) == "1.00e6");  // carry across the mantissa
  CHECK(round_scientific("5", 3) == "5.00e0");
}

TEST_CASE("partition prior pinned small cases") {
  const std::vector<double> alpha{1.0, 1.0};
  Allocation together{{0, 0}, 2};
  Allocation apart{{0, 1}, 2};
  CHECK(log_partition_prior(together, alpha) ==
        doctest::Approx(std::log(2.0 / 3.0)).epsilon(1e-12));
  CHECK(log_partition_prior(apart, alpha) == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-12));
  // n=1: the only partition has probability one.
  for (int k = 1; k <= 4; ++k) {
    const std::vector<double> sym(static_cast<std::size_t>(k), 0.7);
    Allocation lone{{0}, k};
    CHECK(log_partition_prior(lone, sym) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("partition prior is label-invariant and rejects asymmetric alpha") {
  const std::vector<double> alpha{0.5, 0.5, 0.5};
  Allocation a{{0, 1, 0, 2}, 3};
  Allocation relabeled{{2, 0, 2, 1}, 3};
  CHECK(log_partition_prior(a, alpha) ==
        doctest::Approx(log_partition_prior(relabeled, alpha)).epsilon(1e-14));
  const std::vector<double> asym{0.5, 1.0, 0.5};
  CHECK_THROWS_AS(log_partition_prior(a, asym), invalid_input);
  const std::vector<double> bad{0.5, -1.0, 0.5};
  CHECK_THROWS_AS(log_partition_prior(a, bad), invalid_input);
}

TEST_CASE("partition prior sums to one over canonical partitions") {
  for (int n = 1; n <= 8; ++n) {
    for (int k = 1; k <= 3; ++k) {
      for (double a : {0.5, 1.0, 2.0}) {
        const std::vector<double> alpha(static_cast<std::size_t>(k), a);
        std::vector<double> terms;
        for_each_set_partition(n, k, [&](std::span<const int> labels, int) {
          Allocation alloc{std::vector<int>(labels.begin(), labels.end()), k};
          terms.push_back(log_partition_prior(alloc, alpha));
        });
        const double total = std::exp(stats::log_sum_exp(terms));
        CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("partition likelihood reduces to the full-data marginal for one block") {
  const std::vector<double> y{0.4, -0.2, 1.7, 0.9};
  const NigPrior prior{0.0, 1.0, 1.0, 1.0};
  Allocation one{{0, 0, 0, 0}, 3};
  CHECK(log_partition_likelihood(one, y, prior) ==
        doctest::Approx(cluster_log_marginal(y, prior)).epsilon(1e-12));
}

TEST_CASE("partition likelihood is label-invariant") {
  const std::vector<double> y{0.4, -0.2, 1.7, 0.9, -1.1};
  const NigPrior prior{0.5, 0.9, 1.3, 2.0};
  Allocation a{{0, 1, 0, 2, 1}, 3};
  Allocation b{{1, 2, 1, 0, 2}, 3};
  CHECK(log_partition_likelihood(a, y, prior) == log_partition_likelihood(b, y, prior));
}

TEST_CASE("allocation validation") {
  Allocation bad{{0, 3}, 2};
  CHECK_THROWS_AS(bad.validate(), invalid_input);
  Allocation neg{{0, -1}, 2};
  CHECK_THROWS_AS(neg.validate(), invalid_input);
  Allocation ok{{0, 1, 1}, 2};
  CHECK_NOTHROW(ok.validate());
  CHECK(label_counts(ok) == std::vector<int>{1, 2});
}
