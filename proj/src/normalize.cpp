#include "knnlens/normalize.hpp"

#include <cmath>
#include <numeric>

#include "knnlens/error.hpp"
#include "knnlens/rng.hpp"

namespace knnlens {
namespace {

void check_stats(const NormStats& stats) {
  if (stats.mu.size() != stats.sigma.size()) fail(ErrorCode::DimensionMismatch, "mu and sigma lengths differ");
  if (!(stats.epsilon > 0.0) || !std::isfinite(stats.epsilon)) fail(ErrorCode::InvalidConfig, "epsilon must be positive");
  for (std::size_t j = 0; j < stats.mu.size(); ++j) {
    if (!std::isfinite(stats.mu[j]) || !std::isfinite(stats.sigma[j]) || stats.sigma[j] < 0.0)
      fail(ErrorCode::NonFiniteValue, "invalid statistics at dimension " + std::to_string(j));
  }
}

}  // namespace

NormStats compute_stats(const EmbeddingStore& store, std::optional<std::size_t> subset_size, std::uint64_t seed,
                        double epsilon) {
  if (store.n == 0) fail(ErrorCode::EmptyStore, "cannot estimate statistics from an empty store");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail(ErrorCode::InvalidConfig, "epsilon must be positive");

  std::vector<std::size_t> rows;
  if (subset_size) {
    if (*subset_size < 1 || *subset_size > store.n)
      fail(ErrorCode::SubsetOutOfRange, "subset size " + std::to_string(*subset_size) + " not in [1, " +
                                            std::to_string(store.n) + "]");
    rows = Rng(seed).sample_without_replacement(store.n, *subset_size);
  } else {
    rows.resize(store.n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }

  const std::size_t d = store.d;
  const double count = static_cast<double>(rows.size());
  NormStats stats;
  stats.epsilon = epsilon;
  stats.source_count = rows.size();
  stats.mu.assign(d, 0.0);
  stats.sigma.assign(d, 0.0);

  for (std::size_t i : rows) {
    const auto r = store.row(i);
    for (std::size_t j = 0; j < d; ++j) stats.mu[j] += static_cast<double>(r[j]);
  }
  for (double& m : stats.mu) m /= count;

  for (std::size_t i : rows) {
    const auto r = store.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = static_cast<double>(r[j]) - stats.mu[j];
      stats.sigma[j] += dev * dev;
    }
  }
  for (double& s : stats.sigma) s = std::sqrt(s / count);
  return stats;
}

void normalize_row_into(std::span<const float> row, const NormStats& stats, std::span<double> out) {
  if (row.size() != stats.dim() || out.size() != stats.dim())
    fail(ErrorCode::DimensionMismatch,
         "row has " + std::to_string(row.size()) + " entries, statistics have " + std::to_string(stats.dim()));
  for (std::size_t j = 0; j < row.size(); ++j)
    out[j] = (static_cast<double>(row[j]) - stats.mu[j]) / (stats.sigma[j] + stats.epsilon);
}

std::vector<double> normalize_row(std::span<const float> row, const NormStats& stats) {
  std::vector<double> out(stats.dim());
  normalize_row_into(row, stats, out);
  return out;
}

nlohmann::json stats_to_json(const NormStats& stats) {
  return {{"d", stats.dim()},
          {"epsilon", stats.epsilon},
          {"source_count", stats.source_count},
          {"mu", stats.mu},
          {"sigma", stats.sigma}};
}

NormStats stats_from_json(const nlohmann::json& j) {
  NormStats stats;
  try {
    stats.mu = j.at("mu").get<std::vector<double>>();
    stats.sigma = j.at("sigma").get<std::vector<double>>();
    stats.epsilon = j.at("epsilon").get<double>();
    stats.source_count = j.at("source_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("malformed statistics JSON: ") + e.what());
  }
  check_stats(stats);
  if (stats.source_count < 1) fail(ErrorCode::InvalidConfig, "source_count must be at least 1");
  return stats;
}

}  // namespace knnlens
