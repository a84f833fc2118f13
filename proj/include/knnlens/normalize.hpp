#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "knnlens/embedding_store.hpp"

namespace knnlens {

inline constexpr double kDefaultEpsilon = 1e-5;

/// Dataset-wise batch-normalization state: per-dimension mean and population
/// standard deviation of the training hidden states.
struct NormStats {
  std::vector<double> mu;
  std::vector<double> sigma;
  double epsilon = kDefaultEpsilon;
  std::size_t source_count = 0;

  std::size_t dim() const { return mu.size(); }
  bool operator==(const NormStats&) const = default;
};

/// Mean and population standard deviation over all rows, or over a seeded
/// uniform sample of `subset_size` rows drawn without replacement. Two-pass,
/// 64-bit, summed in ascending row order.
NormStats compute_stats(const EmbeddingStore& store, std::optional<std::size_t> subset_size = std::nullopt,
                        std::uint64_t seed = 0, double epsilon = kDefaultEpsilon);

/// (row - mu) / (sigma + epsilon), element-wise.
std::vector<double> normalize_row(std::span<const float> row, const NormStats& stats);
void normalize_row_into(std::span<const float> row, const NormStats& stats, std::span<double> out);

nlohmann::json stats_to_json(const NormStats& stats);
NormStats stats_from_json(const nlohmann::json& j);

}  // namespace knnlens
