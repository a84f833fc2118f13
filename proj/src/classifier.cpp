#include "knnlens/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "knnlens/error.hpp"
#include "knnlens/parallel.hpp"

namespace knnlens {
namespace {

template <typename T>
std::size_t argmax_impl(std::span<const T> probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

template <typename T>
BackoffDecision backoff_impl(std::span<const T> p_model, const LabelDistribution& p_knn, double tau) {
  if (p_model.size() != p_knn.size() || p_model.empty())
    fail(ErrorCode::LabelSpaceMismatch, "model distribution has " + std::to_string(p_model.size()) +
                                            " labels, kNN distribution has " + std::to_string(p_knn.size()));
  const std::size_t model_label = argmax_impl(p_model);
  if (static_cast<double>(p_model[model_label]) > tau) return {static_cast<std::uint32_t>(model_label), false};
  return {static_cast<std::uint32_t>(argmax(p_knn.probs)), true};
}

}  // namespace

void validate(const BackoffConfig& config) {
  if (config.k < 1) fail(ErrorCode::InvalidConfig, "k must be at least 1");
  if (!(config.temperature > 0.0) || !std::isfinite(config.temperature))
    fail(ErrorCode::NonPositiveTemperature, "temperature must be positive and finite");
  if (!(config.tau >= 0.0 && config.tau <= 1.0)) fail(ErrorCode::InvalidConfig, "tau must lie in [0, 1]");
}

std::size_t argmax(std::span<const double> probs) { return argmax_impl(probs); }
std::size_t argmax(std::span<const float> probs) { return argmax_impl(probs); }

LabelDistribution knn_distribution(const NeighborList& neighbors, std::span<const std::uint32_t> labels,
                                   double temperature, std::uint32_t num_labels) {
  if (neighbors.empty()) fail(ErrorCode::EmptyNeighborList, "no neighbours to weight");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    fail(ErrorCode::NonPositiveTemperature, "temperature must be positive and finite");

  double shift = -std::numeric_limits<double>::infinity();
  for (const auto& nb : neighbors) shift = std::max(shift, -nb.squared_distance / temperature);

  std::vector<double> weights(neighbors.size());
  double total = 0.0;
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    weights[j] = std::exp(-neighbors[j].squared_distance / temperature - shift);
    total += weights[j];
  }

  LabelDistribution out;
  out.probs.assign(num_labels, 0.0);
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    const std::size_t idx = neighbors[j].index;
    if (idx >= labels.size()) fail(ErrorCode::LengthMismatch, "neighbour index outside the label array");
    const std::uint32_t y = labels[idx];
    if (y >= num_labels) fail(ErrorCode::LabelOutOfRange, "neighbour label " + std::to_string(y));
    out.probs[y] += weights[j] / total;
  }
  return out;
}

BackoffDecision backoff_predict(std::span<const double> p_model, const LabelDistribution& p_knn, double tau) {
  return backoff_impl(p_model, p_knn, tau);
}

BackoffDecision backoff_predict(std::span<const float> p_model, const LabelDistribution& p_knn, double tau) {
  return backoff_impl(p_model, p_knn, tau);
}

std::vector<Prediction> predict_store(const KnnIndex& index, const EmbeddingStore& eval_store,
                                      const BackoffConfig& config, std::size_t threads) {
  validate(config);
  if (!eval_store.has_model_probs()) fail(ErrorCode::MissingModelProbs, "evaluation store lacks model probabilities");
  if (eval_store.d != index.dim()) fail(ErrorCode::DimensionMismatch, "evaluation store dimension differs from index");
  if (eval_store.num_labels != index.num_labels())
    fail(ErrorCode::LabelSpaceMismatch, "evaluation store label space differs from index");
  if (config.k > index.size()) fail(ErrorCode::KTooLarge, "k exceeds the index size");

  std::vector<Prediction> out(eval_store.n);
  parallel_for(eval_store.n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto neighbors = index.query(eval_store.row(i), config.k);
      auto p_knn = knn_distribution(neighbors, index.labels(), config.temperature, index.num_labels());
      const auto p_model = eval_store.prob_row(i);
      const auto decision = backoff_predict(p_model, p_knn, config.tau);
      out[i] = {decision.label, decision.used_knn, static_cast<std::uint32_t>(argmax(p_model)), std::move(p_knn)};
    }
  });
  return out;
}

double accuracy(const std::vector<Prediction>& predictions, const EmbeddingStore& gold) {
  if (predictions.size() != gold.n) fail(ErrorCode::LengthMismatch, "prediction count differs from gold count");
  if (predictions.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) correct += predictions[i].label == gold.labels[i];
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

}  // namespace knnlens
