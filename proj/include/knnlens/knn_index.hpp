#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "knnlens/embedding_store.hpp"
#include "knnlens/normalize.hpp"

namespace knnlens {

struct Neighbor {
  std::size_t index = 0;
  double squared_distance = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Ordered by (squared_distance, index) ascending; indices are distinct.
using NeighborList = std::vector<Neighbor>;

/// Exact k-nearest-neighbor index over batch-normalized training states.
///
/// Stored rows are the normalized training vectors rounded to single
/// precision. Queries go through the same normalize-then-round path, so a raw
/// query equal to a raw training row lands at distance exactly zero. Distances
/// are squared L2, accumulated in double precision in dimension order.
class KnnIndex {
 public:
  KnnIndex() = default;

  /// Wraps rows that are already normalized with `stats`.
  static KnnIndex from_normalized(NormStats stats, std::vector<float> rows, std::vector<std::uint32_t> labels,
                                  std::uint32_t num_labels);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return stats_.dim(); }
  std::uint32_t num_labels() const { return num_labels_; }
  const NormStats& stats() const { return stats_; }
  std::span<const std::uint32_t> labels() const { return labels_; }
  std::span<const float> normalized_vectors() const { return rows_; }
  std::span<const float> row(std::size_t i) const { return {rows_.data() + i * dim(), dim()}; }

  /// Normalizes a raw hidden state into the index's single-precision space.
  std::vector<float> normalize_query(std::span<const float> raw_query) const;

  NeighborList query(std::span<const float> raw_query, std::size_t k,
                     std::optional<std::size_t> exclude = std::nullopt) const;
  NeighborList query_normalized(std::span<const float> normalized_query, std::size_t k,
                                std::optional<std::size_t> exclude = std::nullopt) const;

  /// Replaces the stored labels, e.g. after noise injection.
  void set_labels(std::vector<std::uint32_t> labels);

  bool operator==(const KnnIndex&) const = default;

 private:
  NormStats stats_;
  std::vector<float> rows_;
  std::vector<std::uint32_t> labels_;
  std::uint32_t num_labels_ = 0;
};

KnnIndex build_index(const EmbeddingStore& store, const NormStats& stats);

/// result[i] == index.query(row i of `queries`, k, exclude_self_by_row ? i : none).
/// `queries` is m rows of index.dim() raw floats. Output is independent of `threads`.
std::vector<NeighborList> batch_query(const KnnIndex& index, std::span<const float> queries, std::size_t k,
                                      bool exclude_self_by_row, std::size_t threads = 0);
std::vector<NeighborList> batch_query(const KnnIndex& index, const EmbeddingStore& queries, std::size_t k,
                                      bool exclude_self_by_row, std::size_t threads = 0);

std::vector<std::uint8_t> encode_index(const KnnIndex& index);
KnnIndex decode_index(std::span<const std::uint8_t> bytes);
void write_index(const KnnIndex& index, const std::filesystem::path& path);
KnnIndex read_index(const std::filesystem::path& path);

}  // namespace knnlens
