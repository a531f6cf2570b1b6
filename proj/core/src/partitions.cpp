#include "evidence/partitions.hpp"

#include <cmath>
#include <cstdint>

#include <gmpxx.h>

#include "evidence/errors.hpp"

namespace evidence {

void Allocation::validate() const {
  if (k < 1) throw invalid_input("Allocation: label budget must be >= 1");
  for (int zi : z)
    if (zi < 0 || zi >= k) throw invalid_input("Allocation: label out of range");
}

std::vector<int> CanonicalPartition::block_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(blocks()), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  std::sort(sizes.begin(), sizes.end());  // label-free: sizes as a sorted multiset
  return sizes;
}

std::size_t CanonicalPartitionHash::operator()(const CanonicalPartition& c) const {
  // FNV-1a over the label bytes
  std::uint64_t h = 1469598103934665603ull;
  for (int l : c.labels) {
    h ^= static_cast<std::uint64_t>(l) + 1;
    h *= 1099511628211ull;
  }
  return static_cast<std::size_t>(h);
}

CanonicalPartition canonicalize(std::span<const int> z) {
  CanonicalPartition out;
  out.labels.resize(z.size());
  std::vector<int> remap;  // original label -> canonical label
  int next_label = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const int zi = z[i];
    if (zi < 0) throw invalid_input("canonicalize: negative label");
    if (static_cast<std::size_t>(zi) >= remap.size()) remap.resize(static_cast<std::size_t>(zi) + 1, -1);
    if (remap[static_cast<std::size_t>(zi)] < 0) remap[static_cast<std::size_t>(zi)] = next_label++;
    out.labels[i] = remap[static_cast<std::size_t>(zi)];
  }
  return out;
}

std::vector<int> label_counts(const Allocation& a) {
  a.validate();
  std::vector<int> counts(static_cast<std::size_t>(a.k), 0);
  for (int zi : a.z) ++counts[static_cast<std::size_t>(zi)];
  return counts;
}

std::string partitions_count(int n, int k) {
  if (n < 0 || k < 0) throw invalid_input("partitions_count: negative arguments");
  if (n == 0) return "1";  // the empty partition
  const int kk = std::min(k, n);
  if (kk == 0) return "0";
  // Stirling-number recurrence S(n,j) = j S(n-1,j) + S(n-1,j-1), row by row.
  std::vector<mpz_class> row(static_cast<std::size_t>(kk) + 1, 0);
  row[std::min<std::size_t>(1, static_cast<std::size_t>(kk))] = 1;  // S(1,1)
  for (int m = 2; m <= n; ++m) {
    for (int j = std::min(m, kk); j >= 1; --j) {
      row[static_cast<std::size_t>(j)] =
          mpz_class(j) * row[static_cast<std::size_t>(j)] + row[static_cast<std::size_t>(j) - 1];
    }
  }
  mpz_class total = 0;
  for (int j = 1; j <= kk; ++j) total += row[static_cast<std::size_t>(j)];
  return total.get_str();
}

std::string round_scientific(const std::string& digits, int significant) {
  if (digits.empty() || significant < 1) throw invalid_input("round_scientific: bad input");
  std::string d = digits;
  int exp10 = static_cast<int>(d.size()) - 1;
  if (static_cast<int>(d.size()) > significant) {
    // round half-up at the cut
    bool carry = d[static_cast<std::size_t>(significant)] >= '5';
    d = d.substr(0, static_cast<std::size_t>(significant));
    for (int i = significant - 1; carry && i >= 0; --i) {
      if (d[static_cast<std::size_t>(i)] == '9') {
        d[static_cast<std::size_t>(i)] = '0';
      } else {
        ++d[static_cast<std::size_t>(i)];
        carry = false;
      }
    }
    if (carry) {
      d.insert(d.begin(), '1');
      d.pop_back();
      ++exp10;
    }
  } else {
    d.append(static_cast<std::size_t>(significant) - d.size(), '0');
  }
  std::string mant = d.substr(0, 1);
  if (significant > 1) mant += "." + d.substr(1);
  return mant + "e" + std::to_string(exp10);
}

double log_dirichlet_multinomial(std::span<const int> counts, std::span<const double> alpha) {
  if (counts.size() != alpha.size())
    throw invalid_input("log_dirichlet_multinomial: counts/alpha size mismatch");
  double asum = 0.0, n = 0.0, out = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] < 0) throw invalid_input("log_dirichlet_multinomial: negative count");
    if (!(alpha[j] > 0.0)) throw invalid_input("log_dirichlet_multinomial: alpha must be positive");
    asum += alpha[j];
    n += counts[j];
    if (counts[j] > 0)
      out += std::lgamma(counts[j] + alpha[j]) - std::lgamma(alpha[j]);
  }
  return out + std::lgamma(asum) - std::lgamma(asum + n);
}

double log_partition_prior(const Allocation& a, std::span<const double> alpha) {
  if (static_cast<std::size_t>(a.k) != alpha.size())
    throw invalid_input("log_partition_prior: alpha size must equal label budget");
  for (std::size_t j = 1; j < alpha.size(); ++j)
    if (alpha[j] != alpha[0])
      throw invalid_input(
          "log_partition_prior: asymmetric alpha does not induce a label-free partition "
          "prior; refusing to symmetrize silently");
  const std::vector<int> counts = label_counts(a);
  int kplus = 0;
  for (int c : counts)
    if (c > 0) ++kplus;
  // number of labeled allocations mapping to this partition: k!/(k-k+)!
  const double relabelings =
      std::lgamma(static_cast<double>(a.k) + 1.0) - std::lgamma(static_cast<double>(a.k - kplus) + 1.0);
  return relabelings + log_dirichlet_multinomial(counts, alpha);
}

double log_partition_likelihood(const Allocation& a, std::span<const double> data,
                                const NigPrior& prior) {
  a.validate();
  if (a.z.size() != data.size())
    throw invalid_input("log_partition_likelihood: allocation/data size mismatch");
  std::vector<ClusterStats> stats(static_cast<std::size_t>(a.k));
  for (std::size_t i = 0; i < data.size(); ++i)
    stats[static_cast<std::size_t>(a.z[i])].add(data[i]);
  double out = 0.0;
  for (const ClusterStats& s : stats) out += cluster_log_marginal(s, prior);
  return out;
}

}  // namespace evidence
