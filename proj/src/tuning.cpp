#include "knnlens/tuning.hpp"

#include <algorithm>
#include <cmath>

#include "knnlens/error.hpp"
#include "knnlens/parallel.hpp"

namespace knnlens {
namespace {

template <typename T>
std::vector<T> sorted_unique(std::vector<T> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

}  // namespace

std::vector<double> default_tau_grid() {
  std::vector<double> grid(101);
  for (int i = 0; i <= 100; ++i) grid[static_cast<std::size_t>(i)] = i / 100.0;
  return grid;
}

std::vector<double> default_temperatures() { return {0.1, 0.5, 1.0, 2.0, 5.0, 10.0}; }

bool k_within_one_percent(std::size_t k, std::size_t n_train) {
  if (k <= 1) return true;
  const std::size_t limit = (n_train + 99) / 100;  // ceil(0.01 * n)
  return k < limit;
}

std::vector<std::size_t> default_k_candidates(std::size_t n_train) {
  std::vector<std::size_t> out;
  for (std::size_t k : {1, 2, 4, 8, 16, 32, 64}) {
    if (k <= n_train && k_within_one_percent(k, n_train)) out.push_back(k);
  }
  return out;
}

TuneGrid default_grid(std::size_t n_train) {
  return {default_k_candidates(n_train), default_temperatures(), default_tau_grid(), false};
}

TuneReport tune(const KnnIndex& index, const EmbeddingStore& val_store, const TuneGrid& grid, std::size_t threads) {
  if (!val_store.has_model_probs()) fail(ErrorCode::MissingModelProbs, "validation store lacks model probabilities");
  if (val_store.n == 0) fail(ErrorCode::MissingLabels, "validation store has no labelled examples");
  if (val_store.d != index.dim()) fail(ErrorCode::DimensionMismatch, "validation store dimension differs from index");
  if (val_store.num_labels != index.num_labels())
    fail(ErrorCode::LabelSpaceMismatch, "validation store label space differs from index");
  if (grid.k_candidates.empty() || grid.t_candidates.empty() || grid.tau_grid.empty())
    fail(ErrorCode::EmptyGrid, "every grid axis needs at least one value");

  const auto ks = sorted_unique(grid.k_candidates);
  const auto temps = sorted_unique(grid.t_candidates);
  const auto taus = sorted_unique(grid.tau_grid);
  for (std::size_t k : ks) {
    validate(BackoffConfig{k, 1.0, 0.0});
    if (k > index.size()) fail(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " exceeds the index size");
    if (!grid.allow_large_k && !k_within_one_percent(k, index.size()))
      fail(ErrorCode::KExceedsOnePercentRule,
           "k=" + std::to_string(k) + " is not below 1% of " + std::to_string(index.size()) + " training rows");
  }
  for (double t : temps) validate(BackoffConfig{1, t, 0.0});
  for (double tau : taus) validate(BackoffConfig{1, 1.0, tau});

  const std::size_t m = val_store.n;
  // Neighbour lists are independent of T and tau, and a shorter list is a
  // prefix of a longer one.
  const auto neighbors = batch_query(index, val_store, ks.back(), false, threads);

  std::vector<double> model_max(m);
  std::vector<char> model_correct(m);
  std::size_t model_hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto p = val_store.prob_row(i);
    const std::size_t y = argmax(p);
    model_max[i] = static_cast<double>(p[y]);
    model_correct[i] = y == val_store.labels[i];
    model_hits += static_cast<std::size_t>(model_correct[i]);
  }

  const std::size_t cells_per_pair = taus.size();
  const std::size_t pairs = ks.size() * temps.size();
  std::vector<GridCell> cells(pairs * cells_per_pair);
  std::vector<std::size_t> knn_hits(pairs, 0);

  parallel_for(pairs, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<char> knn_correct(m);
    NeighborList prefix;
    for (std::size_t pair = begin; pair < end; ++pair) {
      const std::size_t k = ks[pair / temps.size()];
      const double t = temps[pair % temps.size()];
      std::size_t hits = 0;
      for (std::size_t i = 0; i < m; ++i) {
        prefix.assign(neighbors[i].begin(), neighbors[i].begin() + static_cast<std::ptrdiff_t>(k));
        const auto p_knn = knn_distribution(prefix, index.labels(), t, index.num_labels());
        knn_correct[i] = argmax(p_knn.probs) == val_store.labels[i];
        hits += static_cast<std::size_t>(knn_correct[i]);
      }
      knn_hits[pair] = hits;
      for (std::size_t c = 0; c < taus.size(); ++c) {
        const double tau = taus[c];
        std::size_t correct = 0;
        for (std::size_t i = 0; i < m; ++i) correct += static_cast<std::size_t>(model_max[i] > tau ? model_correct[i] : knn_correct[i]);
        cells[pair * cells_per_pair + c] = {{k, t, tau}, static_cast<double>(correct) / static_cast<double>(m)};
      }
    }
  });

  TuneReport report;
  report.n_train = index.size();
  report.n_val = m;
  report.baseline_model_acc = static_cast<double>(model_hits) / static_cast<double>(m);
  // Cells are ordered by (k, T, tau) ascending, so the first maximum wins ties.
  std::size_t best = 0;
  for (std::size_t c = 1; c < cells.size(); ++c) {
    if (cells[c].accuracy > cells[best].accuracy) best = c;
  }
  report.best = cells[best].config;
  report.best_accuracy = cells[best].accuracy;
  report.baseline_knn_acc = static_cast<double>(knn_hits[best / cells_per_pair]) / static_cast<double>(m);
  report.grid_results = std::move(cells);
  return report;
}

nlohmann::json config_to_json(const BackoffConfig& config) {
  return {{"k", config.k}, {"temperature", config.temperature}, {"tau", config.tau}};
}

BackoffConfig config_from_json(const nlohmann::json& j) {
  BackoffConfig config;
  try {
    config.k = j.at("k").get<std::size_t>();
    config.temperature = j.at("temperature").get<double>();
    config.tau = j.at("tau").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("malformed configuration JSON: ") + e.what());
  }
  validate(config);
  return config;
}

nlohmann::json tune_report_to_json(const TuneReport& report) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& cell : report.grid_results) {
    auto entry = config_to_json(cell.config);
    entry["accuracy"] = cell.accuracy;
    grid.push_back(std::move(entry));
  }
  return {{"best", config_to_json(report.best)},
          {"best_accuracy", report.best_accuracy},
          {"baseline_model_acc", report.baseline_model_acc},
          {"baseline_knn_acc", report.baseline_knn_acc},
          {"n_train", report.n_train},
          {"n_val", report.n_val},
          {"grid_results", std::move(grid)}};
}

TuneReport tune_report_from_json(const nlohmann::json& j) {
  TuneReport report;
  try {
    report.best = config_from_json(j.at("best"));
    report.best_accuracy = j.at("best_accuracy").get<double>();
    report.baseline_model_acc = j.at("baseline_model_acc").get<double>();
    report.baseline_knn_acc = j.at("baseline_knn_acc").get<double>();
    report.n_train = j.value("n_train", std::size_t{0});
    report.n_val = j.value("n_val", std::size_t{0});
    if (j.contains("grid_results")) {
      for (const auto& entry : j.at("grid_results"))
        report.grid_results.push_back({config_from_json(entry), entry.at("accuracy").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("malformed tune report: ") + e.what());
  }
  return report;
}

}  // namespace knnlens
