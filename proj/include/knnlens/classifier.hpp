#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "knnlens/embedding_store.hpp"
#include "knnlens/knn_index.hpp"

namespace knnlens {

/// Hyperparameters of the combined classifier: neighbour count k, softmax
/// temperature T, and the confidence threshold tau below which the model's
/// prediction is replaced by the kNN prediction.
struct BackoffConfig {
  std::size_t k = 16;
  double temperature = 1.0;
  double tau = 0.5;

  bool operator==(const BackoffConfig&) const = default;
};

void validate(const BackoffConfig& config);

struct LabelDistribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  bool operator==(const LabelDistribution&) const = default;
};

/// Lowest index among the maximal entries.
std::size_t argmax(std::span<const double> probs);
std::size_t argmax(std::span<const float> probs);

/// Softmax over -distance / T, accumulated per label. The exponent is shifted
/// by its maximum before exponentiation.
LabelDistribution knn_distribution(const NeighborList& neighbors, std::span<const std::uint32_t> labels,
                                   double temperature, std::uint32_t num_labels);

struct BackoffDecision {
  std::uint32_t label = 0;
  bool used_knn = false;

  bool operator==(const BackoffDecision&) const = default;
};

/// Model argmax when max(p_model) > tau, otherwise kNN argmax.
BackoffDecision backoff_predict(std::span<const double> p_model, const LabelDistribution& p_knn, double tau);
BackoffDecision backoff_predict(std::span<const float> p_model, const LabelDistribution& p_knn, double tau);

struct Prediction {
  std::uint32_t label = 0;
  bool used_knn = false;
  std::uint32_t model_argmax = 0;
  LabelDistribution p_knn;

  bool operator==(const Prediction&) const = default;
};

/// query -> knn_distribution -> backoff_predict for every row of `eval_store`.
std::vector<Prediction> predict_store(const KnnIndex& index, const EmbeddingStore& eval_store,
                                      const BackoffConfig& config, std::size_t threads = 0);

/// Fraction of predictions whose label equals the store's label.
double accuracy(const std::vector<Prediction>& predictions, const EmbeddingStore& gold);

}  // namespace knnlens
