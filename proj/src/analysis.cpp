#include "knnlens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "knnlens/classifier.hpp"
#include "knnlens/error.hpp"
#include "knnlens/parallel.hpp"
#include "knnlens/rng.hpp"

namespace knnlens {
namespace {

// True when `store` normalizes onto exactly the rows held by `index`.
bool is_indexed_store(const KnnIndex& index, const EmbeddingStore& store) {
  if (store.n != index.size() || store.d != index.dim()) return false;
  for (std::size_t i = 0; i < store.n; ++i) {
    const auto normalized = index.normalize_query(store.row(i));
    if (!std::equal(normalized.begin(), normalized.end(), index.row(i).begin())) return false;
  }
  return true;
}

// ceil(x) for a product of decimal inputs, absorbing their representation error.
std::size_t ceil_count(double x) {
  return static_cast<std::size_t>(std::ceil(x * (1.0 - 1e-12)));
}

}  // namespace

std::string_view to_string(MislabelMode mode) {
  return mode == MislabelMode::ProbeSet ? "probe-set" : "self-query";
}

MislabelMode mislabel_mode_from_string(std::string_view text) {
  if (text == "probe-set") return MislabelMode::ProbeSet;
  if (text == "self-query") return MislabelMode::SelfQuery;
  fail(ErrorCode::InvalidConfig, "unknown mislabel mode '" + std::string(text) + "'");
}

MislabelReport detect_mislabeled(const KnnIndex& index, const EmbeddingStore& probe_store, MislabelMode mode,
                                 std::size_t threads) {
  if (!probe_store.has_model_probs()) fail(ErrorCode::MissingModelProbs, "probe store lacks model probabilities");
  if (probe_store.d != index.dim()) fail(ErrorCode::DimensionMismatch, "probe dimension differs from index");
  if (probe_store.num_labels != index.num_labels())
    fail(ErrorCode::LabelSpaceMismatch, "probe label space differs from index");

  const bool self = mode == MislabelMode::SelfQuery;
  if (self && !is_indexed_store(index, probe_store))
    fail(ErrorCode::ModeStoreMismatch, "self-query mode needs the training store that built the index");

  MislabelReport report;
  report.mode = mode;
  report.n_train = index.size();
  report.n_probe = probe_store.n;
  if (probe_store.n == 0) return report;

  const auto neighbors = batch_query(index, probe_store, 1, self, threads);
  std::set<std::size_t> flagged;
  for (std::size_t i = 0; i < probe_store.n; ++i) {
    const std::size_t nearest = neighbors[i].front().index;
    const std::size_t model_label = argmax(probe_store.prob_row(i));
    // With k = 1 the kNN distribution is one-hot at the neighbour's label.
    if (model_label != index.labels()[nearest]) flagged.insert(self ? i : nearest);
  }
  report.candidates.assign(flagged.begin(), flagged.end());
  return report;
}

DetectionMetrics score_candidates(std::span<const std::size_t> candidates, const std::vector<bool>& noise_mask) {
  DetectionMetrics m;
  m.flagged = candidates.size();
  m.noisy = static_cast<std::size_t>(std::count(noise_mask.begin(), noise_mask.end(), true));
  for (std::size_t c : candidates) {
    if (c >= noise_mask.size()) fail(ErrorCode::LengthMismatch, "candidate index outside the noise mask");
    m.true_positives += noise_mask[c] ? 1 : 0;
  }
  m.precision = m.flagged ? static_cast<double>(m.true_positives) / static_cast<double>(m.flagged) : 0.0;
  m.recall = m.noisy ? static_cast<double>(m.true_positives) / static_cast<double>(m.noisy) : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

NoisyLabels inject_label_noise(std::span<const std::uint32_t> labels, std::uint32_t num_labels, double fraction,
                               std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) fail(ErrorCode::FractionOutOfRange, "noise fraction must lie in (0, 1)");
  if (num_labels < 2) fail(ErrorCode::InvalidConfig, "noise injection needs at least two labels");

  NoisyLabels out{{labels.begin(), labels.end()}, std::vector<bool>(labels.size(), false)};
  const auto flips = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(labels.size())));
  Rng rng(seed);
  const auto chosen = rng.sample_without_replacement(labels.size(), flips);
  Rng relabel = rng.split(1);
  for (std::size_t i : chosen) {
    const auto old_label = out.labels[i];
    if (old_label >= num_labels) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(old_label));
    const auto r = static_cast<std::uint32_t>(relabel.uniform_index(num_labels - 1));
    out.labels[i] = r < old_label ? r : r + 1;
    out.mask[i] = true;
  }
  return out;
}

std::pair<EmbeddingStore, std::vector<bool>> inject_label_noise(const EmbeddingStore& store, double fraction,
                                                                std::uint64_t seed) {
  auto noisy = inject_label_noise(store.labels, store.num_labels, fraction, seed);
  EmbeddingStore out = store;
  out.labels = std::move(noisy.labels);
  return {std::move(out), std::move(noisy.mask)};
}

// ---------------------------------------------------------------------------

std::vector<double> losses_from_model_probs(const EmbeddingStore& store) {
  if (!store.has_model_probs()) fail(ErrorCode::MissingModelProbs, "store lacks model probabilities");
  std::vector<double> losses(store.n);
  for (std::size_t i = 0; i < store.n; ++i)
    losses[i] = std::max(0.0, 1.0 - static_cast<double>(store.prob_row(i)[store.labels[i]]));
  return losses;
}

std::vector<std::size_t> rank_by_loss(std::span<const double> losses) {
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  return order;
}

namespace {

void check_losses(std::span<const double> losses, const std::vector<bool>& noise_mask) {
  if (losses.size() != noise_mask.size()) fail(ErrorCode::LengthMismatch, "losses and noise mask differ in length");
  for (double l : losses) {
    if (!std::isfinite(l) || l < 0.0) fail(ErrorCode::InvalidConfig, "losses must be finite and non-negative");
  }
}

}  // namespace

std::vector<RecallPoint> loss_baseline_curve(std::span<const double> losses, const std::vector<bool>& noise_mask,
                                             std::span<const double> fractions) {
  check_losses(losses, noise_mask);
  const auto order = rank_by_loss(losses);
  const std::size_t n = losses.size();
  const auto noisy = static_cast<std::size_t>(std::count(noise_mask.begin(), noise_mask.end(), true));

  // hits[c] = noisy examples among the c highest-loss indices
  std::vector<std::size_t> hits(n + 1, 0);
  for (std::size_t c = 0; c < n; ++c) hits[c + 1] = hits[c] + (noise_mask[order[c]] ? 1 : 0);

  std::vector<RecallPoint> curve;
  curve.reserve(fractions.size());
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) fail(ErrorCode::FractionOutOfRange, "curve fractions must lie in (0, 1]");
    const std::size_t selected = std::min(n, ceil_count(f * static_cast<double>(n)));
    const double recall = noisy ? static_cast<double>(hits[selected]) / static_cast<double>(noisy) : 0.0;
    curve.push_back({f, selected, recall});
  }
  return curve;
}

double loss_fraction_for_recall(std::span<const double> losses, const std::vector<bool>& noise_mask,
                                double target_recall) {
  check_losses(losses, noise_mask);
  const std::size_t n = losses.size();
  const auto noisy = static_cast<std::size_t>(std::count(noise_mask.begin(), noise_mask.end(), true));
  if (n == 0 || noisy == 0 || target_recall <= 0.0) return 0.0;
  const auto order = rank_by_loss(losses);
  std::size_t found = 0;
  for (std::size_t c = 0; c < n; ++c) {
    found += noise_mask[order[c]] ? 1 : 0;
    if (static_cast<double>(found) / static_cast<double>(noisy) >= target_recall)
      return static_cast<double>(c + 1) / static_cast<double>(n);
  }
  return 1.0;
}

// ---------------------------------------------------------------------------

std::size_t removal_count(double percent, std::size_t n) {
  if (!(percent > 0.0 && percent <= 100.0)) fail(ErrorCode::FractionOutOfRange, "removal percent must lie in (0, 100]");
  return std::min(n, ceil_count(percent * static_cast<double>(n) / 100.0));
}

InfluenceReport influence_ranking(const KnnIndex& index, const EmbeddingStore& probe, std::size_t k,
                                  bool exclude_self, std::span<const double> percents, std::size_t threads) {
  if (probe.d != index.dim()) fail(ErrorCode::DimensionMismatch, "probe dimension differs from index");
  if (exclude_self && !is_indexed_store(index, probe))
    fail(ErrorCode::ModeStoreMismatch, "self-excluded influence needs the training store that built the index");

  InfluenceReport report;
  report.k = k;
  report.exclude_self = exclude_self;
  report.probe_queries = probe.n;
  report.frequency.assign(index.size(), 0);

  const auto neighbors = batch_query(index, probe, k, exclude_self, threads);
  for (const auto& list : neighbors) {
    for (const auto& nb : list) ++report.frequency[nb.index];
  }

  report.ranking.resize(index.size());
  std::iota(report.ranking.begin(), report.ranking.end(), std::size_t{0});
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return report.frequency[a] > report.frequency[b]; });

  for (double p : percents) {
    const std::size_t count = removal_count(p, index.size());
    report.removal_lists.push_back({p, {report.ranking.begin(), report.ranking.begin() + static_cast<std::ptrdiff_t>(count)}});
  }
  return report;
}

// ---------------------------------------------------------------------------

EvalReport evaluate(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> gold,
                    std::uint32_t num_labels, const std::vector<std::pair<std::string, SliceMask>>& slices,
                    const std::optional<std::vector<std::pair<std::uint32_t, std::uint32_t>>>& collapse) {
  if (predictions.size() != gold.size()) fail(ErrorCode::LengthMismatch, "prediction and gold counts differ");
  for (const auto& [name, mask] : slices) {
    if (mask.size() != gold.size()) fail(ErrorCode::LengthMismatch, "slice '" + name + "' has the wrong length");
  }

  std::vector<std::uint32_t> mapping(num_labels);
  std::iota(mapping.begin(), mapping.end(), 0u);
  if (collapse) {
    std::vector<bool> seen(num_labels, false);
    for (const auto& [from, to] : *collapse) {
      if (from >= num_labels) fail(ErrorCode::LabelOutOfRange, "collapse source label " + std::to_string(from));
      if (seen[from] && mapping[from] != to) fail(ErrorCode::InvalidConfig, "label " + std::to_string(from) + " mapped twice");
      seen[from] = true;
      mapping[from] = to;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
      fail(ErrorCode::PartialCollapseMap, "collapse map must cover every label in [0, " + std::to_string(num_labels) + ")");
  }

  auto mapped = [&](std::uint32_t y) {
    if (y >= num_labels) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
    return mapping[y];
  };

  std::vector<char> correct(gold.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    correct[i] = mapped(predictions[i]) == mapped(gold[i]);
    hits += static_cast<std::size_t>(correct[i]);
  }

  EvalReport report;
  report.count = gold.size();
  report.accuracy = gold.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gold.size());
  for (const auto& [name, mask] : slices) {
    SliceAccuracy s{name, 0, std::nullopt};
    std::size_t slice_hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (!mask.member[i]) continue;
      ++s.count;
      slice_hits += static_cast<std::size_t>(correct[i]);
    }
    if (s.count > 0) s.accuracy = static_cast<double>(slice_hits) / static_cast<double>(s.count);
    report.slices.push_back(std::move(s));
  }
  return report;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> parse_collapse_map(const std::string& text) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string entry = text.substr(pos, comma - pos);
    const std::size_t colon = entry.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(entry);
      std::size_t used_from = 0;
      std::size_t used_to = 0;
      const std::string from_text = entry.substr(0, colon);
      const std::string to_text = entry.substr(colon + 1);
      const auto from = std::stoul(from_text, &used_from);
      const auto to = std::stoul(to_text, &used_to);
      if (used_from != from_text.size() || used_to != to_text.size()) throw std::invalid_argument(entry);
      out.emplace_back(static_cast<std::uint32_t>(from), static_cast<std::uint32_t>(to));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, "collapse entry '" + entry + "' is not FROM:TO");
    }
    pos = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const MislabelReport& report) {
  nlohmann::json j = {{"mode", to_string(report.mode)},
                      {"n_train", report.n_train},
                      {"n_probe", report.n_probe},
                      {"num_candidates", report.candidates.size()},
                      {"candidates", report.candidates}};
  if (report.metrics) {
    j["precision"] = report.metrics->precision;
    j["recall"] = report.metrics->recall;
    j["f1"] = report.metrics->f1;
    j["true_positives"] = report.metrics->true_positives;
    j["num_noisy"] = report.metrics->noisy;
  }
  return j;
}

nlohmann::json to_json(const InfluenceReport& report) {
  nlohmann::json lists = nlohmann::json::array();
  for (const auto& list : report.removal_lists) lists.push_back({{"percent", list.percent}, {"indices", list.indices}});
  return {{"k", report.k},
          {"exclude_self", report.exclude_self},
          {"probe_queries", report.probe_queries},
          {"frequency", report.frequency},
          {"ranking", report.ranking},
          {"removal_lists", std::move(lists)}};
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : report.slices) {
    nlohmann::json entry = {{"name", s.name}, {"count", s.count}};
    entry["accuracy"] = s.accuracy ? nlohmann::json(*s.accuracy) : nlohmann::json(nullptr);
    slices.push_back(std::move(entry));
  }
  return {{"count", report.count}, {"accuracy", report.accuracy}, {"slices", std::move(slices)}};
}

nlohmann::json to_json(const std::vector<RecallPoint>& curve) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : curve) out.push_back({{"fraction", p.fraction}, {"selected", p.selected}, {"recall", p.recall}});
  return out;
}

}  // namespace knnlens
