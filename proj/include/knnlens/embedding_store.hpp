#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace knnlens {

inline constexpr std::uint32_t kMaxLabels = 1u << 16;
inline constexpr std::size_t kStoreHeaderBytes = 32;
inline constexpr std::uint16_t kStoreVersion = 1;

/// Labeled hidden states of a frozen classifier, optionally with the
/// classifier's own probability rows.
///
/// Rows are stored row-major in single precision. The container is immutable
/// once validated; everything downstream takes it by const reference.
struct EmbeddingStore {
  std::size_t n = 0;
  std::size_t d = 0;
  std::uint32_t num_labels = 0;
  std::vector<float> vectors;                    // n * d
  std::vector<std::uint32_t> labels;             // n
  std::optional<std::vector<float>> model_probs;  // n * num_labels

  std::span<const float> row(std::size_t i) const { return {vectors.data() + i * d, d}; }
  std::span<const float> prob_row(std::size_t i) const {
    return {model_probs->data() + i * num_labels, num_labels};
  }
  bool has_model_probs() const { return model_probs.has_value(); }

  bool operator==(const EmbeddingStore&) const = default;
};

/// Throws the matching typed Error when `store` breaks a container invariant.
void validate(const EmbeddingStore& store);

std::vector<std::uint8_t> encode_store(const EmbeddingStore& store);
EmbeddingStore decode_store(std::span<const std::uint8_t> bytes);

EmbeddingStore read_store(const std::filesystem::path& path);
void write_store(const EmbeddingStore& store, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sidecar metadata and slices

/// One JSON object per example, read from `<stem>.meta.jsonl`. An optional
/// leading object carrying a "label_vocabulary" key is kept as the header.
struct Sidecar {
  std::optional<nlohmann::json> header;
  std::vector<nlohmann::json> rows;
};

std::filesystem::path sidecar_path_for(const std::filesystem::path& store_path);

/// Returns nullopt when no sidecar file exists next to the store.
std::optional<Sidecar> read_sidecar(const std::filesystem::path& path, std::size_t expected_rows);
void write_sidecar(const Sidecar& sidecar, const std::filesystem::path& path);

struct SliceMask {
  std::vector<bool> member;

  std::size_t size() const { return member.size(); }
  std::size_t count() const;
};

/// Evaluates a slice rule over a store. Supported rules:
///   label == N / label != N
///   <field> contains '<text>'
///   <field> == '<text>' / <field> != '<text>'
/// Field rules read the sidecar and fail with MissingSidecar if it is absent.
SliceMask build_slice(const EmbeddingStore& store, const std::string& rule,
                      const Sidecar* sidecar = nullptr);

}  // namespace knnlens
