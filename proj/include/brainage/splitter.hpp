#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "brainage/dataset.hpp"

namespace brainage {

inline constexpr std::size_t kPartitionCount = 10;

/// Age bin edges: [min, q10, ..., q90, max] with exact duplicates collapsed.
struct AgeBins {
  std::vector<double> edges;

  std::size_t bin_count() const noexcept { return edges.empty() ? 0 : edges.size() - 1; }
};

/// Quantile by linear interpolation of order statistics:
/// h = (n - 1) p + 1 (1-based), q = a[floor h] + (h - floor h)(a[floor h + 1] - a[floor h]).
double quantile(std::span<const double> sorted, double p);

AgeBins compute_age_bins(std::span<const double> ages);

/// Half-open bins [e_i, e_{i+1}), last bin closed; ages outside are clamped.
std::size_t bin_index(const AgeBins& bins, double age);

std::vector<std::size_t> histogram(const AgeBins& bins, std::span<const double> ages);

/// Record indices (into the manifest) per partition.
using Partitions = std::array<std::vector<std::size_t>, kPartitionCount>;

/// Groups records by (age bin, project), shuffles each stratum and deals
/// it round-robin starting at partition (stratum ordinal mod 10). Strata are
/// ordered by key and members by id, so the result does not depend on the
/// manifest's record order.
Partitions assign_partitions(const Manifest& m, const AgeBins& bins, std::uint64_t seed);

/// KL(p || q) in nats over count histograms. Each side is normalized, then
/// smoothed as (p_i + eps) / (1 + B eps).
double kl_divergence(std::span<const std::size_t> p_counts, std::span<const std::size_t> q_counts,
                     double eps = 1e-9);

enum class Role { Train, Validation, Test };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

enum class HoldoutOrder {
  ValidationFirst,  // smallest KL -> validation, second -> test
  TestFirst,
};

struct SplitAssignment {
  std::map<std::string, std::size_t> partition_of;
  std::vector<std::size_t> train_partitions;
  std::size_t validation_partition = 0;
  std::size_t test_partition = 1;
  std::array<double, kPartitionCount> kl{};

  Role role_of_partition(std::size_t p) const noexcept;
  Role role_of(const std::string& id) const;
};

SplitAssignment select_holdouts(const Manifest& m, const Partitions& partitions,
                                const AgeBins& bins,
                                HoldoutOrder order = HoldoutOrder::ValidationFirst);

/// Full split: bins over all ages, partitions, holdout selection.
SplitAssignment split_manifest(const Manifest& m, std::uint64_t seed,
                               HoldoutOrder order = HoldoutOrder::ValidationFirst);

/// {record_id: {partition, role}}.
std::string split_to_json(const SplitAssignment& s);
SplitAssignment split_from_json(const std::string& text);

}  // namespace brainage
