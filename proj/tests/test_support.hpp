#pragma once

// Shared fixtures and independent reference implementations for the test
// suites. Nothing here calls into the library code path it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "knnlens/embedding_store.hpp"
#include "knnlens/error.hpp"
#include "knnlens/knn_index.hpp"
#include "knnlens/normalize.hpp"

#define EXPECT_KNN_ERROR(stmt, expected_code)                                         \
  do {                                                                                \
    try {                                                                             \
      stmt;                                                                           \
      ADD_FAILURE() << "expected " << ::knnlens::to_string(expected_code);            \
    } catch (const ::knnlens::Error& e) {                                             \
      EXPECT_EQ(e.code(), expected_code) << e.what();                                 \
    }                                                                                 \
  } while (0)

namespace knnlens::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("knnlens_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Random store; vectors are N(offset_by_label, 1), probability rows random.
inline EmbeddingStore random_store(std::size_t n, std::size_t d, std::uint32_t num_labels, std::uint64_t seed,
                                   bool with_probs = true) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  EmbeddingStore s;
  s.n = n;
  s.d = d;
  s.num_labels = num_labels;
  s.vectors.resize(n * d);
  s.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.labels[i] = static_cast<std::uint32_t>(gen() % num_labels);
    for (std::size_t j = 0; j < d; ++j) s.vectors[i * d + j] = normal(gen) + 2.0f * static_cast<float>(s.labels[i] == j % num_labels);
  }
  if (with_probs) {
    s.model_probs.emplace(n * num_labels);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> w(num_labels);
      double total = 0.0;
      for (auto& x : w) total += (x = unit(gen));
      for (std::uint32_t l = 0; l < num_labels; ++l) (*s.model_probs)[i * num_labels + l] = static_cast<float>(w[l] / total);
    }
  }
  return s;
}

/// (x - mu) / (sigma + eps) evaluated in double, rounded to float.
inline std::vector<float> oracle_normalize(std::span<const float> row, const NormStats& stats) {
  std::vector<float> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j)
    out[j] = static_cast<float>((static_cast<double>(row[j]) - stats.mu[j]) / (stats.sigma[j] + stats.epsilon));
  return out;
}

/// All n distances, stable-sorted by (distance, index), first k kept.
inline NeighborList oracle_knn(std::span<const float> rows, std::size_t d, std::span<const float> query, std::size_t k,
                               std::optional<std::size_t> exclude = std::nullopt) {
  const std::size_t n = rows.size() / d;
  NeighborList all;
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(query[j]) - static_cast<double>(rows[i * d + j]);
      acc += diff * diff;
    }
    all.push_back({i, acc});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.squared_distance < b.squared_distance; });
  all.resize(std::min(k, all.size()));
  return all;
}

/// Unshifted softmax in long double, the textbook form of the kNN label distribution.
inline std::vector<double> oracle_distribution(const NeighborList& nbs, std::span<const std::uint32_t> labels,
                                               double temperature, std::uint32_t num_labels) {
  long double z = 0.0L;
  for (const auto& nb : nbs) z += std::exp(-static_cast<long double>(nb.squared_distance) / temperature);
  std::vector<long double> acc(num_labels, 0.0L);
  for (const auto& nb : nbs)
    acc[labels[nb.index]] += std::exp(-static_cast<long double>(nb.squared_distance) / temperature) / z;
  return {acc.begin(), acc.end()};
}

template <typename T>
std::size_t oracle_argmax(const std::vector<T>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Straight-line backoff prediction for one example.
struct OracleModel {
  std::vector<float> rows;  // normalized training rows
  std::vector<std::uint32_t> labels;
  std::size_t d = 0;
  std::uint32_t num_labels = 0;
  NormStats stats;

  OracleModel(const EmbeddingStore& train, const NormStats& s) : labels(train.labels), d(train.d), num_labels(train.num_labels), stats(s) {
    for (std::size_t i = 0; i < train.n; ++i) {
      const auto r = oracle_normalize(train.row(i), stats);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  }

  NeighborList neighbors(std::span<const float> raw, std::size_t k) const {
    const auto q = oracle_normalize(raw, stats);
    return oracle_knn(rows, d, q, k);
  }

  std::uint32_t knn_label(const NeighborList& nbs, double temperature) const {
    return static_cast<std::uint32_t>(oracle_argmax(oracle_distribution(nbs, labels, temperature, num_labels)));
  }

  std::uint32_t predict(std::span<const float> raw, std::span<const float> p_model, std::size_t k, double temperature,
                        double tau) const {
    const std::vector<float> pm(p_model.begin(), p_model.end());
    const std::size_t m = oracle_argmax(pm);
    if (static_cast<double>(pm[m]) > tau) return static_cast<std::uint32_t>(m);
    return knn_label(neighbors(raw, k), temperature);
  }
};

}  // namespace knnlens::testing
