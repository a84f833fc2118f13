#include "knnlens/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <regex>

#include "byte_io.hpp"
#include "knnlens/error.hpp"

namespace knnlens {
namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr char kMagic[4] = {'K', 'N', 'N', 'C'};
constexpr std::uint16_t kFlagModelProbs = 0x1;
constexpr double kProbRowTolerance = 1e-4;
constexpr double kProbEntrySlack = 1e-6;

// Byte count of the body, or nullopt on overflow.
std::optional<std::uint64_t> body_bytes(std::uint64_t n, std::uint64_t d, std::uint64_t labels, bool probs) {
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  if (d != 0 && n > kMax / d / 4) return std::nullopt;
  std::uint64_t total = n * d * 4;
  if (total > kMax - n * 4) return std::nullopt;
  total += n * 4;
  if (probs) {
    if (n > kMax / labels / 4) return std::nullopt;
    if (total > kMax - n * labels * 4) return std::nullopt;
    total += n * labels * 4;
  }
  return total;
}

}  // namespace

void validate(const EmbeddingStore& store) {
  if (store.d == 0) fail(ErrorCode::InvalidHeader, "embedding dimension must be positive");
  if (store.num_labels < 2 || store.num_labels > kMaxLabels)
    fail(ErrorCode::InvalidHeader, "label count must be in [2, 65536]");
  if (store.vectors.size() != store.n * store.d)
    fail(ErrorCode::DimensionMismatch, "vector block does not hold n*d entries");
  if (store.labels.size() != store.n) fail(ErrorCode::DimensionMismatch, "label block does not hold n entries");

  for (std::size_t i = 0; i < store.vectors.size(); ++i) {
    if (!std::isfinite(store.vectors[i]))
      fail(ErrorCode::NonFiniteValue, "non-finite vector entry at row " + std::to_string(i / store.d));
  }
  for (std::size_t i = 0; i < store.n; ++i) {
    if (store.labels[i] >= store.num_labels)
      fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(store.labels[i]) + " at row " + std::to_string(i));
  }
  if (!store.model_probs) return;

  if (store.model_probs->size() != store.n * store.num_labels)
    fail(ErrorCode::DimensionMismatch, "probability block does not hold n*L entries");
  for (std::size_t i = 0; i < store.n; ++i) {
    double sum = 0.0;
    for (float p : store.prob_row(i)) {
      if (!std::isfinite(p)) fail(ErrorCode::NonFiniteValue, "non-finite probability at row " + std::to_string(i));
      if (p < 0.0f || static_cast<double>(p) > 1.0 + kProbEntrySlack)
        fail(ErrorCode::ProbRowNotNormalized, "probability outside [0, 1] at row " + std::to_string(i));
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbRowTolerance)
      fail(ErrorCode::ProbRowNotNormalized, "probability row " + std::to_string(i) + " sums to " + std::to_string(sum));
  }
}

std::vector<std::uint8_t> encode_store(const EmbeddingStore& store) {
  validate(store);
  std::vector<std::uint8_t> out;
  out.reserve(kStoreHeaderBytes + *body_bytes(store.n, store.d, store.num_labels, store.has_model_probs()));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  ByteWriter w(out);
  w.put<std::uint16_t>(kStoreVersion);
  w.put<std::uint16_t>(store.has_model_probs() ? kFlagModelProbs : 0);
  w.put<std::uint64_t>(store.n);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.d));
  w.put<std::uint32_t>(store.num_labels);
  w.put<std::uint64_t>(0);  // reserved
  for (float v : store.vectors) w.put(v);
  for (std::uint32_t y : store.labels) w.put(y);
  if (store.model_probs) {
    for (float p : *store.model_probs) w.put(p);
  }
  return out;
}

EmbeddingStore decode_store(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorCode::MagicMismatch, "not a KNNC container");
  if (bytes.size() < kStoreHeaderBytes) fail(ErrorCode::TruncatedFile, "header shorter than 32 bytes");

  ByteReader r(bytes);
  r.skip(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kStoreVersion) fail(ErrorCode::VersionUnsupported, "container version " + std::to_string(version));
  const auto flags = r.get<std::uint16_t>();
  if ((flags & ~kFlagModelProbs) != 0) fail(ErrorCode::InvalidHeader, "unknown flag bits set");
  const auto n = r.get<std::uint64_t>();
  const auto d = r.get<std::uint32_t>();
  const auto num_labels = r.get<std::uint32_t>();
  if (r.get<std::uint64_t>() != 0) fail(ErrorCode::InvalidHeader, "reserved header bytes are not zero");
  if (d == 0) fail(ErrorCode::InvalidHeader, "embedding dimension must be positive");
  if (num_labels < 2 || num_labels > kMaxLabels) fail(ErrorCode::InvalidHeader, "label count must be in [2, 65536]");

  const bool has_probs = (flags & kFlagModelProbs) != 0;
  const auto body = body_bytes(n, d, num_labels, has_probs);
  if (!body || *body > bytes.size() - kStoreHeaderBytes)
    fail(ErrorCode::TruncatedFile, "body shorter than the header declares");
  if (*body < bytes.size() - kStoreHeaderBytes) fail(ErrorCode::TrailingData, "bytes after the declared body");

  EmbeddingStore store;
  store.n = static_cast<std::size_t>(n);
  store.d = d;
  store.num_labels = num_labels;
  store.vectors.resize(store.n * store.d);
  for (float& v : store.vectors) v = r.get<float>();
  store.labels.resize(store.n);
  for (std::uint32_t& y : store.labels) y = r.get<std::uint32_t>();
  if (has_probs) {
    store.model_probs.emplace(store.n * num_labels);
    for (float& p : *store.model_probs) p = r.get<float>();
  }
  validate(store);
  return store;
}

EmbeddingStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::IoFailure, "read error on " + path.string());
  return decode_store(bytes);
}

void write_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  const auto bytes = encode_store(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoFailure, "write error on " + path.string());
}

// ---------------------------------------------------------------------------

std::filesystem::path sidecar_path_for(const std::filesystem::path& store_path) {
  auto out = store_path;
  out.replace_extension(".meta.jsonl");
  return out;
}

std::optional<Sidecar> read_sidecar(const std::filesystem::path& path, std::size_t expected_rows) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());

  Sidecar sidecar;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::IoFailure, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) fail(ErrorCode::IoFailure, path.string() + ":" + std::to_string(line_no) + ": not an object");
    if (sidecar.rows.empty() && !sidecar.header && obj.contains("label_vocabulary")) {
      sidecar.header = std::move(obj);
      continue;
    }
    sidecar.rows.push_back(std::move(obj));
  }
  if (sidecar.rows.size() != expected_rows)
    fail(ErrorCode::LengthMismatch, "sidecar has " + std::to_string(sidecar.rows.size()) + " rows, store has " +
                                        std::to_string(expected_rows));
  return sidecar;
}

void write_sidecar(const Sidecar& sidecar, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  if (sidecar.header) out << sidecar.header->dump() << '\n';
  for (const auto& row : sidecar.rows) out << row.dump() << '\n';
  if (!out) fail(ErrorCode::IoFailure, "write error on " + path.string());
}

std::size_t SliceMask::count() const { return static_cast<std::size_t>(std::count(member.begin(), member.end(), true)); }

SliceMask build_slice(const EmbeddingStore& store, const std::string& rule, const Sidecar* sidecar) {
  static const std::regex kRule(R"(^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(==|!=|contains)\s*(.*?)\s*$)");
  std::smatch m;
  if (!std::regex_match(rule, m, kRule)) fail(ErrorCode::InvalidRule, "cannot parse slice rule '" + rule + "'");
  const std::string field = m[1];
  const std::string op = m[2];
  std::string value = m[3];

  const bool quoted = value.size() >= 2 && (value.front() == '\'' || value.front() == '"') && value.back() == value.front();
  if (quoted) value = value.substr(1, value.size() - 2);

  SliceMask mask;
  mask.member.resize(store.n, false);

  if (field == "label") {
    if (op == "contains") fail(ErrorCode::InvalidRule, "'contains' does not apply to labels");
    std::uint64_t target = 0;
    try {
      std::size_t used = 0;
      target = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidRule, "label rule needs an integer, got '" + value + "'");
    }
    for (std::size_t i = 0; i < store.n; ++i) mask.member[i] = (store.labels[i] == target) == (op == "==");
    return mask;
  }

  if (sidecar == nullptr) fail(ErrorCode::MissingSidecar, "rule on field '" + field + "' needs a sidecar");
  if (sidecar->rows.size() != store.n) fail(ErrorCode::LengthMismatch, "sidecar row count differs from store");

  nlohmann::json literal;
  if (!quoted && op != "contains") {
    try {
      literal = nlohmann::json::parse(value);
    } catch (const nlohmann::json::parse_error&) {
      fail(ErrorCode::InvalidRule, "cannot parse value '" + value + "'");
    }
  } else {
    literal = value;
  }

  for (std::size_t i = 0; i < store.n; ++i) {
    const auto& row = sidecar->rows[i];
    const auto it = row.find(field);
    if (it == row.end()) fail(ErrorCode::UnknownField, "sidecar row " + std::to_string(i) + " lacks field '" + field + "'");
    if (op == "contains") {
      const std::string text = it->is_string() ? it->get<std::string>() : it->dump();
      mask.member[i] = text.find(value) != std::string::npos;
    } else {
      mask.member[i] = (*it == literal) == (op == "==");
    }
  }
  return mask;
}

}  // namespace knnlens
