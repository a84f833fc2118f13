#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "knnlens/classifier.hpp"

namespace knnlens {

struct GridCell {
  BackoffConfig config;
  double accuracy = 0.0;

  bool operator==(const GridCell&) const = default;
};

struct TuneReport {
  BackoffConfig best;
  double best_accuracy = 0.0;
  std::vector<GridCell> grid_results;
  double baseline_model_acc = 0.0;
  double baseline_knn_acc = 0.0;  // tau = 1 at the best (k, T)
  std::size_t n_train = 0;
  std::size_t n_val = 0;

  bool operator==(const TuneReport&) const = default;
};

struct TuneGrid {
  std::vector<std::size_t> k_candidates;
  std::vector<double> t_candidates;
  std::vector<double> tau_grid;
  bool allow_large_k = false;
};

/// 0.00, 0.01, ..., 1.00
std::vector<double> default_tau_grid();
std::vector<double> default_temperatures();
/// {1, 2, 4, ..., 64} restricted to values allowed by `k_within_one_percent`.
std::vector<std::size_t> default_k_candidates(std::size_t n_train);
TuneGrid default_grid(std::size_t n_train);

/// k is kept below one percent of the training set, except that k = 1 is always allowed.
bool k_within_one_percent(std::size_t k, std::size_t n_train);

/// Exhaustive search over k x T x tau on a labelled validation store. The
/// neighbour lists are computed once at the largest k and truncated for the
/// smaller candidates. Ties prefer smaller k, then smaller T, then smaller tau.
TuneReport tune(const KnnIndex& index, const EmbeddingStore& val_store, const TuneGrid& grid,
                std::size_t threads = 0);

nlohmann::json tune_report_to_json(const TuneReport& report);
TuneReport tune_report_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const BackoffConfig& config);
BackoffConfig config_from_json(const nlohmann::json& j);

}  // namespace knnlens
