// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any selected criterion fails. Pass a criterion number to run just that one.

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "knnlens/analysis.hpp"
#include "knnlens/classifier.hpp"
#include "knnlens/embedding_store.hpp"
#include "knnlens/error.hpp"
#include "knnlens/knn_index.hpp"
#include "knnlens/normalize.hpp"
#include "knnlens/synthetic.hpp"
#include "knnlens/tuning.hpp"
#include "../test_support.hpp"

using namespace knnlens;
using namespace knnlens::testing;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------

Verdict index_oracle_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 gen(2024);
  std::size_t queries = 0;
  for (int instance = 0; instance < 200; ++instance) {
    const std::size_t n = 1 + gen() % 2000;
    const std::size_t d = 1 + gen() % 64;
    const std::size_t k = 1 + gen() % std::min<std::size_t>(32, n);
    auto store = random_store(n, d, 3, 1000 + static_cast<std::uint64_t>(instance), false);
    if (instance % 4 == 0) {
      // coarse values and duplicated rows make distance ties common
      for (auto& v : store.vectors) v = std::round(v);
      for (std::size_t i = 1; i < n; i += 3) std::copy_n(store.vectors.begin(), d, store.vectors.begin() + i * d);
    }
    const auto stats = compute_stats(store);
    const auto index = build_index(store, stats);
    const auto normalized = index.normalized_vectors();
    for (int q = 0; q < 10; ++q, ++queries) {
      std::vector<float> raw(d);
      if (q == 0) {
        std::copy_n(store.row(gen() % n).begin(), d, raw.begin());
      } else {
        std::normal_distribution<float> normal(0.0f, 2.0f);
        for (auto& v : raw) v = instance % 4 == 0 ? std::round(normal(gen)) : normal(gen);
      }
      const auto got = index.query(raw, k);
      const auto want = oracle_knn(normalized, d, oracle_normalize(raw, stats), k);
      if (got != want)
        return {false, "instance " + std::to_string(instance) + " query " + std::to_string(q) + " differs from oracle"};
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {seconds < 60.0, "200 instances, " + std::to_string(queries) + " queries identical to oracle in " +
                              fmt(seconds, 3) + " s (limit 60 s)"};
}

// ---------------------------------------------------------------------------

Verdict normalization_self_check() {
  double worst_mean = 0.0;
  double worst_std = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto store = random_store(1000, 32, 3, 200 + seed, false);
    std::mt19937_64 gen(seed);
    for (std::size_t j = 0; j < 32; ++j) {
      const float scale = static_cast<float>(std::exp2(static_cast<double>(gen() % 12) - 6.0));
      const float shift = static_cast<float>(static_cast<double>(gen() % 2001) - 1000.0);
      for (std::size_t i = 0; i < 1000; ++i) store.vectors[i * 32 + j] = store.vectors[i * 32 + j] * scale + shift;
    }
    const auto stats = compute_stats(store);
    std::vector<double> sum(32, 0.0), sq(32, 0.0), row(32);
    std::vector<std::vector<double>> columns(32);
    for (std::size_t i = 0; i < 1000; ++i) {
      normalize_row_into(store.row(i), stats, row);
      for (std::size_t j = 0; j < 32; ++j) columns[j].push_back(row[j]);
    }
    for (std::size_t j = 0; j < 32; ++j) {
      double mean = 0.0;
      for (double v : columns[j]) mean += v;
      mean /= 1000.0;
      double var = 0.0;
      for (double v : columns[j]) var += (v - mean) * (v - mean);
      const double stddev = std::sqrt(var / 1000.0);
      const double expected = stats.sigma[j] / (stats.sigma[j] + stats.epsilon);
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_std = std::max(worst_std, std::abs(stddev - expected));
    }
  }
  return {worst_mean <= 1e-9 && worst_std <= 1e-6,
          "5 stores: max |mean| " + fmt(worst_mean, 3) + " (limit 1e-9), max stddev error " + fmt(worst_std, 3) +
              " (limit 1e-6)"};
}

// ---------------------------------------------------------------------------

Verdict distribution_properties() {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> dist(0.0, 100.0);
  std::uniform_real_distribution<double> log_t(-3.0, 3.0);
  double worst_sum = 0.0, worst_uniform = 0.0, worst_sharp = 0.0;
  bool negative = false;
  for (int draw = 0; draw < 10000; ++draw) {
    const std::size_t k = 1 + gen() % 32;
    const std::uint32_t num_labels = 2 + static_cast<std::uint32_t>(gen() % 9);
    std::vector<std::uint32_t> labels(k);
    NeighborList nbs;
    for (std::size_t i = 0; i < k; ++i) {
      labels[i] = static_cast<std::uint32_t>(gen() % num_labels);
      nbs.push_back({i, draw % 10 == 0 ? std::round(dist(gen) / 25.0) : dist(gen)});
    }
    std::sort(nbs.begin(), nbs.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.squared_distance != b.squared_distance ? a.squared_distance < b.squared_distance : a.index < b.index;
    });

    const auto p = knn_distribution(nbs, labels, std::pow(10.0, log_t(gen)), num_labels).probs;
    double total = 0.0;
    for (double v : p) {
      total += v;
      negative |= v < 0.0;
    }
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));

    std::vector<double> uniform(num_labels, 0.0), sharp(num_labels, 0.0);
    const double dmin = nbs.front().squared_distance;
    std::size_t ties = 0;
    for (const auto& nb : nbs) ties += nb.squared_distance == dmin;
    for (const auto& nb : nbs) {
      uniform[labels[nb.index]] += 1.0 / static_cast<double>(k);
      if (nb.squared_distance == dmin) sharp[labels[nb.index]] += 1.0 / static_cast<double>(ties);
    }
    const auto hot = knn_distribution(nbs, labels, 1e12, num_labels).probs;
    const auto cold = knn_distribution(nbs, labels, 1e-12, num_labels).probs;
    for (std::uint32_t l = 0; l < num_labels; ++l) {
      worst_uniform = std::max(worst_uniform, std::abs(hot[l] - uniform[l]));
      worst_sharp = std::max(worst_sharp, std::abs(cold[l] - sharp[l]));
    }
  }
  return {worst_sum <= 1e-12 && !negative && worst_uniform <= 1e-9 && worst_sharp <= 1e-9,
          "10000 draws: max |sum - 1| " + fmt(worst_sum, 3) + ", negatives " + (negative ? "yes" : "none") +
              ", T=1e12 error " + fmt(worst_uniform, 3) + ", T=1e-12 error " + fmt(worst_sharp, 3)};
}

// ---------------------------------------------------------------------------

double model_only_accuracy(const EmbeddingStore& s) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.n; ++i) {
    const auto row = s.prob_row(i);
    hits += oracle_argmax(std::vector<float>(row.begin(), row.end())) == s.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(s.n);
}

double knn_only_accuracy(const OracleModel& oracle, const EmbeddingStore& s, std::size_t k, double temperature) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.n; ++i) hits += oracle.knn_label(oracle.neighbors(s.row(i), k), temperature) == s.labels[i];
  return static_cast<double>(hits) / static_cast<double>(s.n);
}

Verdict backoff_endpoints() {
  int stores = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const std::uint32_t num_labels = 2 + static_cast<std::uint32_t>(seed % 3);
    const auto train = random_store(300 + 50 * seed, 6 + seed, num_labels, 300 + seed);
    const auto val = random_store(120, 6 + seed, num_labels, 400 + seed);
    const auto stats = compute_stats(train);
    const auto index = build_index(train, stats);
    const OracleModel oracle(train, stats);
    const std::size_t k = 1 + seed;
    const double temperature = 0.5 + static_cast<double>(seed);

    const double model_acc = model_only_accuracy(val);
    const double knn_acc = knn_only_accuracy(oracle, val, k, temperature);
    const double at0 = accuracy(predict_store(index, val, {k, temperature, 0.0}), val);
    const double at1 = accuracy(predict_store(index, val, {k, temperature, 1.0}), val);
    if (at0 != model_acc) return {false, "seed " + std::to_string(seed) + ": tau=0 gives " + fmt(at0) + ", model " + fmt(model_acc)};
    if (at1 != knn_acc) return {false, "seed " + std::to_string(seed) + ": tau=1 gives " + fmt(at1) + ", kNN " + fmt(knn_acc)};

    TuneGrid grid{{k}, {temperature}, default_tau_grid(), true};
    const auto report = tune(index, val, grid);
    const auto& cells = report.grid_results;
    if (cells.front().config.tau != 0.0 || cells.front().accuracy != model_acc || report.baseline_model_acc != model_acc)
      return {false, "seed " + std::to_string(seed) + ": tune tau=0 cell disagrees with model-only accuracy"};
    if (cells.back().config.tau != 1.0 || cells.back().accuracy != knn_acc || report.baseline_knn_acc != knn_acc)
      return {false, "seed " + std::to_string(seed) + ": tune tau=1 cell disagrees with kNN-only accuracy"};
    ++stores;
  }
  return {true, std::to_string(stores) + " stores: tau=0 equals model-only and tau=1 equals kNN-only, directly and in tune"};
}

// ---------------------------------------------------------------------------

SyntheticSpec criterion_setup() {
  SyntheticSpec spec;
  spec.n_train = 1500;
  spec.n_val = 500;
  spec.n_test = 500;
  spec.d = 32;
  spec.num_labels = 3;
  spec.cluster_separation = 10.0;
  spec.seed = 0;
  return spec;
}

Verdict synthetic_backoff_gain() {
  auto spec = criterion_setup();
  spec.model_noise = 0.2;
  const auto splits = gen_synthetic(spec);
  const auto stats = compute_stats(splits.train);
  const auto index = build_index(splits.train, stats);
  const auto report = tune(index, splits.val, default_grid(splits.train.n));
  const auto& best = report.best;

  const double backoff = accuracy(predict_store(index, splits.test, best), splits.test);
  const double model = model_only_accuracy(splits.test);

  const OracleModel oracle(splits.train, stats);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < splits.test.n; ++i)
    hits += oracle.predict(splits.test.row(i), splits.test.prob_row(i), best.k, best.temperature, best.tau) ==
            splits.test.labels[i];
  const double scalar = static_cast<double>(hits) / static_cast<double>(splits.test.n);

  constexpr double kPinned = 1.000;
  const double gain = (backoff - model) * 100.0;
  const bool pass = gain >= 5.0 && backoff == scalar && std::abs(backoff - kPinned) <= 0.01;
  return {pass, "tuned k=" + std::to_string(best.k) + " T=" + fmt(best.temperature) + " tau=" + fmt(best.tau) +
                    ": backoff " + fmt(backoff, 4) + " vs model " + fmt(model, 4) + " (gain " + fmt(gain, 4) +
                    " points, need >= 5); scalar path " + fmt(scalar, 4) + ", pinned " + fmt(kPinned, 4) + " +- 0.01"};
}

// ---------------------------------------------------------------------------

Verdict synthetic_mislabel_recovery() {
  auto spec = criterion_setup();
  spec.model_noise = 0.0;
  spec.n_val = 15000;
  spec.n_test = 0;
  const auto splits = gen_synthetic(spec);
  const auto index_clean = build_index(splits.train, compute_stats(splits.train));

  double f1_sum = 0.0;
  bool baseline_larger = true;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto [noisy_train, mask] = inject_label_noise(splits.train, 0.1, seed);
    auto index = index_clean;
    index.set_labels(noisy_train.labels);
    const auto report = detect_mislabeled(index, splits.val, MislabelMode::ProbeSet);
    const auto metrics = score_candidates(report.candidates, mask);
    f1_sum += metrics.f1;

    const double candidate_fraction =
        static_cast<double>(report.candidates.size()) / static_cast<double>(noisy_train.n);
    const double loss_fraction = loss_fraction_for_recall(losses_from_model_probs(noisy_train), mask, metrics.recall);
    baseline_larger &= loss_fraction > candidate_fraction;
    per_seed << " seed " << seed << ": F1 " << fmt(metrics.f1, 4) << ", recall " << fmt(metrics.recall, 4)
             << ", candidates " << fmt(candidate_fraction, 4) << " of train, loss baseline needs "
             << fmt(loss_fraction, 4) << ";";
  }
  const double mean_f1 = f1_sum / 3.0;
  return {mean_f1 >= 0.9 && baseline_larger,
          "mean F1 " + fmt(mean_f1, 4) + " (need >= 0.9); loss baseline strictly larger on every seed: " +
              (baseline_larger ? "yes" : "no") + ";" + per_seed.str()};
}

// ---------------------------------------------------------------------------

Verdict influence_identity() {
  std::size_t runs = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto train = random_store(1500 + 166 * seed, 12, 3, 700 + seed);
    const auto probe = random_store(200 + 37 * seed, 12, 3, 800 + seed);
    const auto index = build_index(train, compute_stats(train));
    for (bool exclude_self : {false, true}) {
      const auto& queries = exclude_self ? train : probe;
      const std::size_t k = exclude_self ? 16 : 1 + seed * 7;
      const auto report = influence_ranking(index, queries, k, exclude_self);
      std::uint64_t total = 0;
      for (auto f : report.frequency) total += f;
      if (total != queries.n * k) return {false, "frequency sum " + std::to_string(total) + " != m*k"};
      for (const auto& list : report.removal_lists) {
        const auto want = static_cast<std::size_t>(std::ceil(list.percent * static_cast<double>(train.n) / 100.0 - 1e-9));
        if (list.indices.size() != want)
          return {false, "removal list for " + fmt(list.percent) + "% has " + std::to_string(list.indices.size()) +
                             " entries, expected " + std::to_string(want)};
      }
      if (report.removal_lists.size() != 2 || report.removal_lists[0].percent != 10.0 ||
          report.removal_lists[1].percent != 30.0)
        return {false, "removal lists are not the 10% and 30% lists"};
      ++runs;
    }
  }
  return {true, std::to_string(runs) + " runs: frequency sums equal m*k and removal lists hold ceil(p*n/100) rows"};
}

// ---------------------------------------------------------------------------

struct Mutant {
  std::string name;
  std::function<void(std::vector<std::uint8_t>&)> mutate;
  ErrorCode expected;
};

template <typename T>
void poke(std::vector<std::uint8_t>& bytes, std::size_t offset, T value) {
  std::memcpy(bytes.data() + offset, &value, sizeof(T));
}

Verdict format_round_trip() {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto store = random_store(seed * 7 % 60, 1 + seed % 17, 2 + static_cast<std::uint32_t>(seed % 5), 900 + seed,
                                    seed % 3 != 0);
    const auto bytes = encode_store(store);
    const auto back = decode_store(bytes);
    if (!(back == store) || encode_store(back) != bytes)
      return {false, "store " + std::to_string(seed) + " does not round-trip"};
  }

  // n=4, d=3, L=3 with probabilities: vectors at 32, labels at 80, probs at 96
  const auto base = encode_store(random_store(4, 3, 3, 77));
  constexpr std::size_t kLabels = 32 + 4 * 3 * 4;
  constexpr std::size_t kProbs = kLabels + 4 * 4;
  const std::vector<Mutant> mutants = {
      {"magic byte 0", [](auto& b) { b[0] = 'X'; }, ErrorCode::MagicMismatch},
      {"magic byte 3", [](auto& b) { b[3] = 'I'; }, ErrorCode::MagicMismatch},
      {"version 2", [](auto& b) { poke<std::uint16_t>(b, 4, 2); }, ErrorCode::VersionUnsupported},
      {"version 0", [](auto& b) { poke<std::uint16_t>(b, 4, 0); }, ErrorCode::VersionUnsupported},
      {"unknown flag", [](auto& b) { poke<std::uint16_t>(b, 6, 3); }, ErrorCode::InvalidHeader},
      {"reserved byte", [](auto& b) { b[31] = 1; }, ErrorCode::InvalidHeader},
      {"zero dimension", [](auto& b) { poke<std::uint32_t>(b, 16, 0); }, ErrorCode::InvalidHeader},
      {"one label", [](auto& b) { poke<std::uint32_t>(b, 20, 1); }, ErrorCode::InvalidHeader},
      {"header cut", [](auto& b) { b.resize(20); }, ErrorCode::TruncatedFile},
      {"body cut by one", [](auto& b) { b.pop_back(); }, ErrorCode::TruncatedFile},
      {"probability block missing", [](auto& b) { b.resize(kProbs); }, ErrorCode::TruncatedFile},
      {"huge row count", [](auto& b) { poke<std::uint64_t>(b, 8, std::uint64_t{1} << 62); }, ErrorCode::TruncatedFile},
      {"extra row count", [](auto& b) { poke<std::uint64_t>(b, 8, 5); }, ErrorCode::TruncatedFile},
      {"trailing byte", [](auto& b) { b.push_back(0); }, ErrorCode::TrailingData},
      {"probability flag cleared", [](auto& b) { poke<std::uint16_t>(b, 6, 0); }, ErrorCode::TrailingData},
      {"NaN vector", [](auto& b) { poke<float>(b, 36, std::nanf("")); }, ErrorCode::NonFiniteValue},
      {"infinite vector", [](auto& b) { poke<float>(b, 40, -INFINITY); }, ErrorCode::NonFiniteValue},
      {"label out of range", [](auto& b) { poke<std::uint32_t>(b, kLabels + 4, 3); }, ErrorCode::LabelOutOfRange},
      {"probability row sum", [](auto& b) { poke<float>(b, kProbs, 0.9f); }, ErrorCode::ProbRowNotNormalized},
      {"negative probability", [](auto& b) { poke<float>(b, kProbs + 4, -0.25f); }, ErrorCode::ProbRowNotNormalized},
  };
  for (const auto& m : mutants) {
    auto bytes = base;
    m.mutate(bytes);
    try {
      (void)decode_store(bytes);
      return {false, "mutant '" + m.name + "' decoded without error"};
    } catch (const Error& e) {
      if (e.code() != m.expected)
        return {false, "mutant '" + m.name + "' raised " + std::string(to_string(e.code())) + ", expected " +
                           std::string(to_string(m.expected))};
    }
  }
  return {true, "100 stores round-trip byte-identically; " + std::to_string(mutants.size()) +
                    " corruption mutants raise their typed errors"};
}

// ---------------------------------------------------------------------------

std::string serialize(const std::vector<NeighborList>& lists) {
  std::string out;
  for (const auto& list : lists) {
    for (const auto& nb : list) {
      out.append(reinterpret_cast<const char*>(&nb.index), sizeof(nb.index));
      out.append(reinterpret_cast<const char*>(&nb.squared_distance), sizeof(nb.squared_distance));
    }
    out.push_back('\n');
  }
  return out;
}

Verdict parallel_determinism() {
  auto spec = criterion_setup();
  spec.model_noise = 0.2;
  const auto splits = gen_synthetic(spec);
  const auto index = build_index(splits.train, compute_stats(splits.train));
  std::string queries_ref, self_ref, tune_ref;
  for (std::size_t threads : {1u, 4u, 8u}) {
    const auto queries = serialize(batch_query(index, splits.test, 16, false, threads));
    const auto self = serialize(batch_query(index, splits.train, 16, true, threads));
    const auto report = tune_report_to_json(tune(index, splits.val, default_grid(splits.train.n), threads)).dump();
    if (threads == 1) {
      queries_ref = queries;
      self_ref = self;
      tune_ref = report;
    } else if (queries != queries_ref || self != self_ref || report != tune_ref) {
      return {false, "outputs at " + std::to_string(threads) + " workers differ from 1 worker"};
    }
  }
  return {true, "batch_query (probe and self-excluded) and tune reports byte-identical at 1, 4 and 8 workers"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"1 index oracle equivalence", index_oracle_equivalence},
      {"2 normalization self-check", normalization_self_check},
      {"3 distribution properties", distribution_properties},
      {"4 backoff endpoints", backoff_endpoints},
      {"5 synthetic backoff gain", synthetic_backoff_gain},
      {"6 synthetic mislabel recovery", synthetic_mislabel_recovery},
      {"7 influence counting identity", influence_identity},
      {"8 format round-trip and corruption", format_round_trip},
      {"9 parallel determinism", parallel_determinism},
  };
  const std::string only = argc > 1 ? argv[1] : "";
  bool all_pass = true;
  bool matched = false;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && name.substr(0, name.find(' ')) != only) continue;
    matched = true;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all_pass &= v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << name << ": " << v.detail << std::endl;
  }
  if (!matched) {
    std::cerr << "unknown criterion '" << only << "'\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}
