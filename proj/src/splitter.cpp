#include "brainage/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "brainage/error.hpp"

namespace brainage {

double quantile(std::span<const double> sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 0) throw Error(ErrorCode::DomainError, "quantile of an empty sample");
  const double h = static_cast<double>(n - 1) * p + 1.0;
  const auto lo = static_cast<std::size_t>(std::floor(h));  // 1-based
  if (lo >= n) return sorted[n - 1];
  const double frac = h - std::floor(h);
  return sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]);
}

AgeBins compute_age_bins(std::span<const double> ages) {
  std::vector<double> sorted(ages.begin(), ages.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.size() < 2 || sorted.front() == sorted.back()) {
    throw Error(ErrorCode::DegenerateAges, "need at least two distinct ages");
  }
  AgeBins bins;
  bins.edges.push_back(sorted.front());
  for (int decile = 1; decile <= 9; ++decile) {
    bins.edges.push_back(quantile(sorted, decile / 10.0));
  }
  bins.edges.push_back(sorted.back());
  bins.edges.erase(std::unique(bins.edges.begin(), bins.edges.end()), bins.edges.end());
  return bins;
}

std::size_t bin_index(const AgeBins& bins, double age) {
  const auto& e = bins.edges;
  const std::size_t count = bins.bin_count();
  if (age <= e.front()) return 0;
  if (age >= e.back()) return count - 1;
  // First edge strictly greater than age closes the bin.
  const auto it = std::upper_bound(e.begin(), e.end(), age);
  return static_cast<std::size_t>(it - e.begin()) - 1;
}

std::vector<std::size_t> histogram(const AgeBins& bins, std::span<const double> ages) {
  std::vector<std::size_t> h(bins.bin_count(), 0);
  for (double a : ages) ++h[bin_index(bins, a)];
  return h;
}

Partitions assign_partitions(const Manifest& m, const AgeBins& bins, std::uint64_t seed) {
  using Key = std::pair<std::size_t, std::string>;
  std::map<Key, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    strata[{bin_index(bins, r.age), r.project}].push_back(i);
  }

  Partitions parts;
  std::size_t ordinal = 0;
  for (auto& [key, members] : strata) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return m.records[a].id < m.records[b].id;
    });
    SplitMix64 rng(derive_seed(derive_seed(seed, "stratum"), ordinal));
    rng.shuffle(std::span<std::size_t>(members));
    const std::size_t offset = ordinal % kPartitionCount;
    for (std::size_t j = 0; j < members.size(); ++j) {
      parts[(offset + j) % kPartitionCount].push_back(members[j]);
    }
    ++ordinal;
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

double kl_divergence(std::span<const std::size_t> p_counts, std::span<const std::size_t> q_counts,
                     double eps) {
  if (p_counts.size() != q_counts.size() || p_counts.empty()) {
    throw Error(ErrorCode::MismatchedBins, "histograms must have the same nonzero bin count");
  }
  const auto smooth = [eps](std::span<const std::size_t> c) {
    const double total = static_cast<double>(std::accumulate(c.begin(), c.end(), std::size_t{0}));
    const double denom = 1.0 + static_cast<double>(c.size()) * eps;
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double p = total > 0.0 ? static_cast<double>(c[i]) / total : 0.0;
      out[i] = (p + eps) / denom;
    }
    return out;
  };
  const auto p = smooth(p_counts);
  const auto q = smooth(q_counts);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return std::max(kl, 0.0);
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Train: return "train";
    case Role::Validation: return "validation";
    case Role::Test: return "test";
  }
  return "train";
}

Role parse_role(std::string_view s) {
  if (s == "train") return Role::Train;
  if (s == "validation") return Role::Validation;
  if (s == "test") return Role::Test;
  throw Error(ErrorCode::InvalidRecord, "unknown role '" + std::string(s) + "'");
}

Role SplitAssignment::role_of_partition(std::size_t p) const noexcept {
  if (p == validation_partition) return Role::Validation;
  if (p == test_partition) return Role::Test;
  return Role::Train;
}

Role SplitAssignment::role_of(const std::string& id) const {
  const auto it = partition_of.find(id);
  if (it == partition_of.end()) {
    throw Error(ErrorCode::InvalidRecord, "record '" + id + "' is not in the split");
  }
  return role_of_partition(it->second);
}

SplitAssignment select_holdouts(const Manifest& m, const Partitions& partitions,
                                const AgeBins& bins, HoldoutOrder order) {
  std::vector<double> all_ages;
  all_ages.reserve(m.records.size());
  for (const auto& r : m.records) all_ages.push_back(r.age);
  const auto overall = histogram(bins, all_ages);

  SplitAssignment s;
  for (std::size_t p = 0; p < kPartitionCount; ++p) {
    std::vector<double> ages;
    for (std::size_t i : partitions[p]) {
      ages.push_back(m.records[i].age);
      s.partition_of[m.records[i].id] = p;
    }
    s.kl[p] = kl_divergence(histogram(bins, ages), overall);
  }

  std::array<std::size_t, kPartitionCount> rank{};
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return s.kl[a] < s.kl[b]; });
  s.validation_partition = order == HoldoutOrder::ValidationFirst ? rank[0] : rank[1];
  s.test_partition = order == HoldoutOrder::ValidationFirst ? rank[1] : rank[0];
  for (std::size_t p = 0; p < kPartitionCount; ++p) {
    if (p != s.validation_partition && p != s.test_partition) s.train_partitions.push_back(p);
  }
  return s;
}

SplitAssignment split_manifest(const Manifest& m, std::uint64_t seed, HoldoutOrder order) {
  validate(m);
  std::vector<double> ages;
  for (const auto& r : m.records) ages.push_back(r.age);
  const AgeBins bins = compute_age_bins(ages);
  return select_holdouts(m, assign_partitions(m, bins, seed), bins, order);
}

std::string split_to_json(const SplitAssignment& s) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [id, p] : s.partition_of) {
    doc[id] = {{"partition", p}, {"role", to_string(s.role_of_partition(p))}};
  }
  return doc.dump(2) + "\n";
}

SplitAssignment split_from_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  SplitAssignment s;
  bool have_val = false, have_test = false;
  for (const auto& [id, entry] : doc.items()) {
    const auto p = entry.at("partition").get<std::size_t>();
    if (p >= kPartitionCount) throw Error(ErrorCode::InvalidRecord, "partition out of range");
    s.partition_of[id] = p;
    const Role role = parse_role(entry.at("role").get<std::string>());
    if (role == Role::Validation) {
      s.validation_partition = p;
      have_val = true;
    } else if (role == Role::Test) {
      s.test_partition = p;
      have_test = true;
    }
  }
  if (!have_val || !have_test || s.validation_partition == s.test_partition) {
    throw Error(ErrorCode::InvalidRecord, "split needs distinct validation and test partitions");
  }
  for (std::size_t p = 0; p < kPartitionCount; ++p) {
    if (p != s.validation_partition && p != s.test_partition) s.train_partitions.push_back(p);
  }
  return s;
}

}  // namespace brainage
