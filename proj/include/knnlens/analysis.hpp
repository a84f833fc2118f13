#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "knnlens/embedding_store.hpp"
#include "knnlens/knn_index.hpp"

namespace knnlens {

// ---------------------------------------------------------------------------
// Mislabel detection

enum class MislabelMode {
  ProbeSet,   // flag the nearest training neighbour of each probe the model disagrees with
  SelfQuery,  // flag each training example whose non-self nearest neighbour disagrees with the model
};

std::string_view to_string(MislabelMode mode);
MislabelMode mislabel_mode_from_string(std::string_view text);

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t flagged = 0;
  std::size_t noisy = 0;

  bool operator==(const DetectionMetrics&) const = default;
};

struct MislabelReport {
  MislabelMode mode = MislabelMode::ProbeSet;
  std::vector<std::size_t> candidates;  // ascending, distinct
  std::size_t n_train = 0;
  std::size_t n_probe = 0;
  std::optional<DetectionMetrics> metrics;
};

MislabelReport detect_mislabeled(const KnnIndex& index, const EmbeddingStore& probe_store, MislabelMode mode,
                                 std::size_t threads = 0);

/// Precision, recall and F1 of `candidates` against a ground-truth noise mask.
/// Empty denominators give 0.
DetectionMetrics score_candidates(std::span<const std::size_t> candidates, const std::vector<bool>& noise_mask);

struct NoisyLabels {
  std::vector<std::uint32_t> labels;
  std::vector<bool> mask;
};

/// Replaces round(fraction * n) uniformly sampled labels with a uniformly
/// chosen different label.
NoisyLabels inject_label_noise(std::span<const std::uint32_t> labels, std::uint32_t num_labels, double fraction,
                               std::uint64_t seed);
std::pair<EmbeddingStore, std::vector<bool>> inject_label_noise(const EmbeddingStore& store, double fraction,
                                                                std::uint64_t seed);

// ---------------------------------------------------------------------------
// Highest-loss baseline

struct RecallPoint {
  double fraction = 0.0;
  std::size_t selected = 0;
  double recall = 0.0;

  bool operator==(const RecallPoint&) const = default;
};

/// Per-example loss 1 - p_model(stored label).
std::vector<double> losses_from_model_probs(const EmbeddingStore& store);

/// Indices by descending loss, ties by ascending index.
std::vector<std::size_t> rank_by_loss(std::span<const double> losses);

/// For each fraction f, recall of the ceil(f * n) highest-loss examples.
std::vector<RecallPoint> loss_baseline_curve(std::span<const double> losses, const std::vector<bool>& noise_mask,
                                             std::span<const double> fractions);

/// Smallest fraction of the loss ranking whose recall reaches `target_recall`.
double loss_fraction_for_recall(std::span<const double> losses, const std::vector<bool>& noise_mask,
                                double target_recall);

// ---------------------------------------------------------------------------
// Influence ranking

struct RemovalList {
  double percent = 0.0;
  std::vector<std::size_t> indices;

  bool operator==(const RemovalList&) const = default;
};

struct InfluenceReport {
  std::size_t k = 0;
  bool exclude_self = false;
  std::size_t probe_queries = 0;
  std::vector<std::uint64_t> frequency;
  std::vector<std::size_t> ranking;
  std::vector<RemovalList> removal_lists;

  bool operator==(const InfluenceReport&) const = default;
};

inline const std::vector<double> kDefaultRemovalPercents = {10.0, 30.0};

/// Counts how often each training row appears among the k nearest neighbours
/// of the probe rows. With `exclude_self` the probe must be the training
/// store and row i never retrieves itself.
InfluenceReport influence_ranking(const KnnIndex& index, const EmbeddingStore& probe, std::size_t k,
                                  bool exclude_self, std::span<const double> percents = kDefaultRemovalPercents,
                                  std::size_t threads = 0);

std::size_t removal_count(double percent, std::size_t n);

// ---------------------------------------------------------------------------
// Accuracy with slices and label collapse

struct SliceAccuracy {
  std::string name;
  std::size_t count = 0;
  std::optional<double> accuracy;  // absent for an empty slice
};

struct EvalReport {
  std::size_t count = 0;
  double accuracy = 0.0;
  std::vector<SliceAccuracy> slices;
};

/// `collapse`, when given, must map every label in [0, num_labels) and is
/// applied to both predictions and gold labels before comparison.
EvalReport evaluate(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> gold,
                    std::uint32_t num_labels, const std::vector<std::pair<std::string, SliceMask>>& slices = {},
                    const std::optional<std::vector<std::pair<std::uint32_t, std::uint32_t>>>& collapse = std::nullopt);

/// Parses "0:0,1:1,2:1" into (from, to) pairs.
std::vector<std::pair<std::uint32_t, std::uint32_t>> parse_collapse_map(const std::string& text);

nlohmann::json to_json(const MislabelReport& report);
nlohmann::json to_json(const InfluenceReport& report);
nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const std::vector<RecallPoint>& curve);

}  // namespace knnlens
