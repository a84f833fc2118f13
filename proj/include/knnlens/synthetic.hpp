#pragma once

#include <cstddef>
#include <cstdint>

#include <json.hpp>

#include "knnlens/embedding_store.hpp"

namespace knnlens {

/// Gaussian-cluster stand-in for a fine-tuned encoder: one isotropic
/// unit-variance cluster per label plus a simulated model probability row for
/// every example.
struct SyntheticSpec {
  std::size_t n_train = 1500;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::size_t d = 32;
  std::uint32_t num_labels = 3;
  double cluster_separation = 10.0;  // distance between cluster means, in cluster standard deviations
  double model_noise = 0.0;          // probability the simulated model's argmax is wrong
  std::uint64_t seed = 0;
};

struct SyntheticSplits {
  EmbeddingStore train;
  EmbeddingStore val;
  EmbeddingStore test;
};

void validate(const SyntheticSpec& spec);

/// Cluster means sit at pairwise distance exactly `cluster_separation` when
/// num_labels <= d (scaled random orthonormal directions), and at least that
/// otherwise. Simulated model rows put a mass drawn uniformly from (0.5, 1] on
/// the true label with probability 1 - model_noise, else on a uniformly chosen
/// wrong label; the remainder is spread over the other labels with flat
/// Dirichlet weights.
SyntheticSplits gen_synthetic(const SyntheticSpec& spec);

nlohmann::json to_json(const SyntheticSpec& spec);

}  // namespace knnlens
