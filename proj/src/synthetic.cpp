#include "knnlens/synthetic.hpp"

#include <cmath>
#include <limits>

#include "knnlens/classifier.hpp"
#include "knnlens/error.hpp"
#include "knnlens/rng.hpp"

namespace knnlens {
namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix cluster_means(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t L = spec.num_labels;
  Matrix means(L, std::vector<double>(spec.d));
  for (auto& m : means) {
    for (double& v : m) v = rng.normal();
  }

  if (L <= spec.d) {
    // Gram-Schmidt; a degenerate draw is redrawn.
    for (std::size_t c = 0; c < L; ++c) {
      for (;;) {
        for (std::size_t p = 0; p < c; ++p) {
          double dot = 0.0;
          for (std::size_t j = 0; j < spec.d; ++j) dot += means[c][j] * means[p][j];
          for (std::size_t j = 0; j < spec.d; ++j) means[c][j] -= dot * means[p][j];
        }
        double norm = 0.0;
        for (double v : means[c]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 1e-6) {
          for (double& v : means[c]) v /= norm;
          break;
        }
        for (double& v : means[c]) v = rng.normal();
      }
    }
    const double scale = spec.cluster_separation / std::sqrt(2.0);
    for (auto& m : means) {
      for (double& v : m) v *= scale;
    }
    return means;
  }

  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = a + 1; b < L; ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < spec.d; ++j) s += (means[a][j] - means[b][j]) * (means[a][j] - means[b][j]);
      min_dist = std::min(min_dist, std::sqrt(s));
    }
  }
  if (!(min_dist > 0.0)) fail(ErrorCode::InvalidSpec, "cluster means collapsed; use a larger dimension");
  const double scale = spec.cluster_separation / min_dist;
  for (auto& m : means) {
    for (double& v : m) v *= scale;
  }
  return means;
}

std::vector<float> simulated_model_row(std::uint32_t target, std::uint32_t num_labels, Rng& rng) {
  std::vector<float> row(num_labels);
  std::vector<double> weights(num_labels);
  for (;;) {
    const double peak = 1.0 - 0.5 * rng.uniform01();  // (0.5, 1]
    double total = 0.0;
    for (std::uint32_t l = 0; l < num_labels; ++l) {
      if (l == target) continue;
      double u = rng.uniform01();
      while (u <= 0.0) u = rng.uniform01();
      weights[l] = -std::log(u);
      total += weights[l];
    }
    for (std::uint32_t l = 0; l < num_labels; ++l)
      row[l] = static_cast<float>(l == target ? peak : (1.0 - peak) * weights[l] / total);
    // Single-precision rounding could in principle tie the peak with another entry.
    if (argmax(std::span<const float>(row)) == target) return row;
  }
}

EmbeddingStore make_split(const SyntheticSpec& spec, const Matrix& means, std::size_t n, Rng rng) {
  EmbeddingStore store;
  store.n = n;
  store.d = spec.d;
  store.num_labels = spec.num_labels;
  store.vectors.resize(n * spec.d);
  store.labels.resize(n);
  store.model_probs.emplace();
  store.model_probs->reserve(n * spec.num_labels);

  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint32_t>(rng.uniform_index(spec.num_labels));
    store.labels[i] = label;
    for (std::size_t j = 0; j < spec.d; ++j)
      store.vectors[i * spec.d + j] = static_cast<float>(means[label][j] + rng.normal());

    std::uint32_t target = label;
    if (rng.uniform01() < spec.model_noise) {
      const auto r = static_cast<std::uint32_t>(rng.uniform_index(spec.num_labels - 1));
      target = r < label ? r : r + 1;
    }
    const auto row = simulated_model_row(target, spec.num_labels, rng);
    store.model_probs->insert(store.model_probs->end(), row.begin(), row.end());
  }
  return store;
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  if (spec.d == 0) fail(ErrorCode::InvalidSpec, "dimension must be positive");
  if (spec.num_labels < 2 || spec.num_labels > kMaxLabels) fail(ErrorCode::InvalidSpec, "label count must be in [2, 65536]");
  if (!(spec.cluster_separation > 0.0) || !std::isfinite(spec.cluster_separation))
    fail(ErrorCode::InvalidSpec, "cluster separation must be positive");
  if (!(spec.model_noise >= 0.0 && spec.model_noise < 1.0)) fail(ErrorCode::InvalidSpec, "model noise must lie in [0, 1)");
}

SyntheticSplits gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng root(spec.seed);
  Rng mean_rng = root.split(0);
  const auto means = cluster_means(spec, mean_rng);
  SyntheticSplits splits{make_split(spec, means, spec.n_train, root.split(1)),
                         make_split(spec, means, spec.n_val, root.split(2)),
                         make_split(spec, means, spec.n_test, root.split(3))};
  return splits;
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  return {{"n_train", spec.n_train},
          {"n_val", spec.n_val},
          {"n_test", spec.n_test},
          {"d", spec.d},
          {"num_labels", spec.num_labels},
          {"cluster_separation", spec.cluster_separation},
          {"model_noise", spec.model_noise},
          {"seed", spec.seed}};
}

}  // namespace knnlens
