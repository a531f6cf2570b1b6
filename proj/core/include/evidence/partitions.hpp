#ifndef EVIDENCE_PARTITIONS_HPP
#define EVIDENCE_PARTITIONS_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evidence/conjugate.hpp"

// Allocation vectors, label-free canonical partitions, exact partition
// counting, and the symmetric-Dirichlet partition prior / conjugate partition
// likelihood they weight.

namespace evidence {

// Component labels z_i in {0..k-1} with an explicit label budget k (labels
// may be unused; k matters to the prior).
struct Allocation {
  std::vector<int> z;
  int k = 1;
  void validate() const;  // throws invalid_input
};

// First-appearance relabeling of an allocation: the label-free equivalence
// class. Two allocations group the data identically iff they canonicalize
// to the same labels vector.
struct CanonicalPartition {
  std::vector<int> labels;  // labels[i] in {0..blocks-1}, first appearance increasing
  int blocks() const { return labels.empty() ? 0 : 1 + *std::max_element(labels.begin(), labels.end()); }
  std::vector<int> block_sizes() const;
  bool operator==(const CanonicalPartition& o) const { return labels == o.labels; }
};

struct CanonicalPartitionHash {
  std::size_t operator()(const CanonicalPartition& c) const;
};

CanonicalPartition canonicalize(std::span<const int> z);

// Per-label occupancy counts (length a.k).
std::vector<int> label_counts(const Allocation& a);

// Number of partitions of n items into at most k nonempty blocks,
// sum_{j<=k} S(n,j) with S the Stirling numbers of the second kind, computed
// exactly in arbitrary precision; returned as a decimal string.
std::string partitions_count(int n, int k);

// Round an exact decimal integer string to "d.ddEexp" scientific notation.
std::string round_scientific(const std::string& digits, int significant);

// Allocation-level Dirichlet-multinomial mass: probability that a labeled
// allocation with these per-label counts arises from weights integrated
// against Dirichlet(alpha).
double log_dirichlet_multinomial(std::span<const int> counts, std::span<const double> alpha);

// Partition-level prior: k!/(k-k+)! x Dirichlet-multinomial mass of the
// counts. Well-defined on label-free partitions only under symmetric alpha;
// asymmetric alpha is rejected rather than silently symmetrized.
double log_partition_prior(const Allocation& a, std::span<const double> alpha);

// log p(y | partition) = sum over occupied blocks of cluster_log_marginal.
double log_partition_likelihood(const Allocation& a, std::span<const double> data,
                                const NigPrior& prior);

// Enumeration drivers (used by the exact oracles and tests).
// Visits every allocation z in {0..k-1}^n in lexicographic order.
template <typename F>
void for_each_allocation(int n, int k, F&& visit) {
  std::vector<int> z(static_cast<std::size_t>(n), 0);
  for (;;) {
    visit(std::span<const int>(z));
    int i = n - 1;
    while (i >= 0 && z[static_cast<std::size_t>(i)] == k - 1) {
      z[static_cast<std::size_t>(i)] = 0;
      --i;
    }
    if (i < 0) break;
    ++z[static_cast<std::size_t>(i)];
  }
}

// Visits every set partition of {0..n-1} with at most max_blocks blocks, as
// restricted-growth label vectors (first-appearance canonical by
// construction). Passes (labels, block_count).
template <typename F>
void for_each_set_partition(int n, int max_blocks, F&& visit) {
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  std::function<void(int, int)> rec = [&](int i, int used) {
    if (i == n) {
      visit(std::span<const int>(labels), used);
      return;
    }
    const int top = std::min(used + 1, max_blocks);
    for (int b = 0; b < top; ++b) {
      labels[static_cast<std::size_t>(i)] = b;
      rec(i + 1, std::max(used, b + 1));
    }
  };
  if (n == 0) {
    visit(std::span<const int>(labels.data(), 0), 0);
    return;
  }
  rec(0, 0);
}

}  // namespace evidence

#endif
