#include "knnlens/knn_index.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "byte_io.hpp"
#include "knnlens/error.hpp"
#include "knnlens/parallel.hpp"

namespace knnlens {
namespace {

constexpr char kMagic[4] = {'K', 'N', 'N', 'I'};
constexpr std::uint16_t kIndexVersion = 1;
constexpr std::size_t kTile = 8;

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.squared_distance < b.squared_distance ||
         (a.squared_distance == b.squared_distance && a.index < b.index);
}

// Squared distances from `query` to rows [begin, end). Rows are processed in
// tiles with one accumulator per row; each accumulator still sums its
// dimensions in ascending order, so the result matches a scalar loop bit for bit.
void distances_to_rows(std::span<const float> query, std::span<const float> rows, std::size_t d,
                       std::size_t begin, std::size_t end, double* out) {
  std::size_t i = begin;
  for (; i + kTile <= end; i += kTile) {
    std::array<double, kTile> acc{};
    const float* base = rows.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double q = query[j];
      for (std::size_t t = 0; t < kTile; ++t) {
        const double diff = q - static_cast<double>(base[t * d + j]);
        acc[t] += diff * diff;
      }
    }
    std::copy(acc.begin(), acc.end(), out + (i - begin));
  }
  for (; i < end; ++i) {
    const float* r = rows.data() + i * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(query[j]) - static_cast<double>(r[j]);
      acc += diff * diff;
    }
    out[i - begin] = acc;
  }
}

void check_k(std::size_t k, std::size_t n, std::optional<std::size_t> exclude) {
  if (k == 0) fail(ErrorCode::InvalidConfig, "k must be at least 1");
  if (exclude && *exclude >= n) fail(ErrorCode::InvalidConfig, "excluded index out of range");
  const std::size_t available = exclude ? n - 1 : n;
  if (k > available)
    fail(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " exceeds the " + std::to_string(available) +
                                   " searchable rows");
}

}  // namespace

KnnIndex KnnIndex::from_normalized(NormStats stats, std::vector<float> rows, std::vector<std::uint32_t> labels,
                                   std::uint32_t num_labels) {
  if (labels.empty()) fail(ErrorCode::EmptyStore, "an index needs at least one row");
  if (stats.dim() == 0 || stats.sigma.size() != stats.dim() || rows.size() != labels.size() * stats.dim())
    fail(ErrorCode::DimensionMismatch, "row block does not match n * d");
  for (float v : rows) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "non-finite normalized entry");
  }
  for (std::uint32_t y : labels) {
    if (y >= num_labels) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
  }
  KnnIndex index;
  index.stats_ = std::move(stats);
  index.rows_ = std::move(rows);
  index.labels_ = std::move(labels);
  index.num_labels_ = num_labels;
  return index;
}

std::vector<float> KnnIndex::normalize_query(std::span<const float> raw_query) const {
  std::vector<double> scratch(dim());
  normalize_row_into(raw_query, stats_, scratch);
  std::vector<float> out(dim());
  for (std::size_t j = 0; j < dim(); ++j) out[j] = static_cast<float>(scratch[j]);
  return out;
}

NeighborList KnnIndex::query(std::span<const float> raw_query, std::size_t k, std::optional<std::size_t> exclude) const {
  if (raw_query.size() != dim())
    fail(ErrorCode::DimensionMismatch, "query has " + std::to_string(raw_query.size()) + " entries, index has " +
                                           std::to_string(dim()));
  return query_normalized(normalize_query(raw_query), k, exclude);
}

NeighborList KnnIndex::query_normalized(std::span<const float> normalized_query, std::size_t k,
                                        std::optional<std::size_t> exclude) const {
  if (normalized_query.size() != dim()) fail(ErrorCode::DimensionMismatch, "query dimension differs from index");
  const std::size_t n = size();
  check_k(k, n, exclude);

  std::vector<double> dist(n);
  distances_to_rows(normalized_query, rows_, dim(), 0, n, dist.data());

  NeighborList candidates;
  candidates.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    candidates.push_back({i, dist[i]});
  }
  if (k < candidates.size()) {
    std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                     neighbor_less);
    candidates.resize(k);
  }
  std::sort(candidates.begin(), candidates.end(), neighbor_less);
  return candidates;
}

void KnnIndex::set_labels(std::vector<std::uint32_t> labels) {
  if (labels.size() != size()) fail(ErrorCode::LengthMismatch, "label count differs from index size");
  for (std::uint32_t y : labels) {
    if (y >= num_labels_) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
  }
  labels_ = std::move(labels);
}

KnnIndex build_index(const EmbeddingStore& store, const NormStats& stats) {
  if (store.n == 0) fail(ErrorCode::EmptyStore, "cannot index an empty store");
  if (stats.dim() != store.d)
    fail(ErrorCode::DimensionMismatch, "statistics have dimension " + std::to_string(stats.dim()) + ", store has " +
                                           std::to_string(store.d));
  std::vector<float> rows(store.n * store.d);
  std::vector<double> scratch(store.d);
  for (std::size_t i = 0; i < store.n; ++i) {
    normalize_row_into(store.row(i), stats, scratch);
    for (std::size_t j = 0; j < store.d; ++j) rows[i * store.d + j] = static_cast<float>(scratch[j]);
  }
  return KnnIndex::from_normalized(stats, std::move(rows), store.labels, store.num_labels);
}

std::vector<NeighborList> batch_query(const KnnIndex& index, std::span<const float> queries, std::size_t k,
                                      bool exclude_self_by_row, std::size_t threads) {
  const std::size_t d = index.dim();
  if (queries.size() % d != 0) fail(ErrorCode::DimensionMismatch, "query block is not a multiple of d");
  const std::size_t m = queries.size() / d;
  if (exclude_self_by_row && m != index.size())
    fail(ErrorCode::DimensionMismatch, "self-exclusion needs one query per indexed row");
  if (m == 0) return {};
  check_k(k, index.size(), exclude_self_by_row ? std::optional<std::size_t>(0) : std::nullopt);

  std::vector<NeighborList> results(m);
  parallel_for(m, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      results[i] = index.query(queries.subspan(i * d, d), k,
                               exclude_self_by_row ? std::optional<std::size_t>(i) : std::nullopt);
    }
  });
  return results;
}

std::vector<NeighborList> batch_query(const KnnIndex& index, const EmbeddingStore& queries, std::size_t k,
                                      bool exclude_self_by_row, std::size_t threads) {
  if (queries.d != index.dim()) fail(ErrorCode::DimensionMismatch, "query store dimension differs from index");
  if (queries.n == 0) {
    if (exclude_self_by_row) fail(ErrorCode::DimensionMismatch, "self-exclusion needs one query per indexed row");
    return {};
  }
  return batch_query(index, std::span<const float>(queries.vectors), k, exclude_self_by_row, threads);
}

// ---------------------------------------------------------------------------
// Snapshot: "KNNI" | version u16 | n u64 | d u32 | L u32 | eps f64 | mu d*f64 |
//           sigma d*f64 | vectors n*d*f32 | labels n*u32

std::vector<std::uint8_t> encode_index(const KnnIndex& index) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  detail::ByteWriter w(out);
  w.put<std::uint16_t>(kIndexVersion);
  w.put<std::uint64_t>(index.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(index.dim()));
  w.put<std::uint32_t>(index.num_labels());
  w.put<double>(index.stats().epsilon);
  for (double m : index.stats().mu) w.put(m);
  for (double s : index.stats().sigma) w.put(s);
  for (float v : index.normalized_vectors()) w.put(v);
  for (std::uint32_t y : index.labels()) w.put(y);
  return out;
}

KnnIndex decode_index(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorCode::MagicMismatch, "not a KNNI snapshot");
  detail::ByteReader r(bytes);
  if (bytes.size() < 4) fail(ErrorCode::TruncatedFile, "snapshot shorter than its magic");
  r.skip(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kIndexVersion) fail(ErrorCode::VersionUnsupported, "snapshot version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>();
  const auto d = r.get<std::uint32_t>();
  const auto num_labels = r.get<std::uint32_t>();
  if (d == 0 || n == 0) fail(ErrorCode::InvalidHeader, "snapshot must hold at least one row of positive dimension");
  if (num_labels < 2 || num_labels > kMaxLabels) fail(ErrorCode::InvalidHeader, "label count must be in [2, 65536]");

  // Each row costs d*4 + 4 bytes; reject sizes the buffer cannot hold before allocating.
  const std::uint64_t per_row = static_cast<std::uint64_t>(d) * 4 + 4;
  const std::uint64_t fixed = 8 + static_cast<std::uint64_t>(d) * 16;
  if (r.remaining() < fixed || n > (r.remaining() - fixed) / per_row)
    fail(ErrorCode::TruncatedFile, "snapshot body shorter than the header declares");
  if (r.remaining() != fixed + n * per_row) fail(ErrorCode::TrailingData, "bytes after the declared snapshot body");

  NormStats stats;
  stats.epsilon = r.get<double>();
  stats.mu.resize(d);
  stats.sigma.resize(d);
  for (double& m : stats.mu) m = r.get<double>();
  for (double& s : stats.sigma) s = r.get<double>();
  if (!(stats.epsilon > 0.0) || !std::isfinite(stats.epsilon)) fail(ErrorCode::InvalidHeader, "epsilon must be positive");
  for (std::size_t j = 0; j < d; ++j) {
    if (!std::isfinite(stats.mu[j]) || !std::isfinite(stats.sigma[j]) || stats.sigma[j] < 0.0)
      fail(ErrorCode::NonFiniteValue, "invalid statistics at dimension " + std::to_string(j));
  }
  // The snapshot does not carry the estimation sample size.
  stats.source_count = static_cast<std::size_t>(n);

  std::vector<float> rows(static_cast<std::size_t>(n) * d);
  for (float& v : rows) v = r.get<float>();
  std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
  for (std::uint32_t& y : labels) y = r.get<std::uint32_t>();
  return KnnIndex::from_normalized(std::move(stats), std::move(rows), std::move(labels), num_labels);
}

void write_index(const KnnIndex& index, const std::filesystem::path& path) {
  const auto bytes = encode_index(index);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoFailure, "write error on " + path.string());
}

KnnIndex read_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_index(bytes);
}

}  // namespace knnlens
