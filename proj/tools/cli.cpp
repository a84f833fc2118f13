#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "knnlens/analysis.hpp"
#include "knnlens/classifier.hpp"
#include "knnlens/embedding_store.hpp"
#include "knnlens/error.hpp"
#include "knnlens/knn_index.hpp"
#include "knnlens/normalize.hpp"
#include "knnlens/synthetic.hpp"
#include "knnlens/tuning.hpp"

namespace knnlens::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct GlobalOptions {
  std::size_t threads = 0;
  bool human = false;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::IoFailure, path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::IoFailure, "write error on " + path.string());
}

std::string format_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) return "[" + std::to_string(v.size()) + " items]";
  if (v.is_object()) return "{" + std::to_string(v.size()) + " fields}";
  return v.dump();
}

// Human mode prints the top level of a report as aligned key/value lines.
void emit(const json& report, const GlobalOptions& global, std::ostream& out) {
  if (!global.human) {
    out << report.dump(2) << '\n';
    return;
  }
  for (const auto& [key, value] : report.items()) {
    if (value.is_object()) {
      out << key << ":\n";
      for (const auto& [sub_key, sub_value] : value.items()) out << "  " << sub_key << ": " << format_scalar(sub_value) << '\n';
    } else {
      out << key << ": " << format_scalar(value) << '\n';
    }
  }
}

json stats_report(const NormStats& stats, std::optional<std::size_t> subset, std::uint64_t seed) {
  json j = stats_to_json(stats);
  j["seed"] = seed;
  j["subset_size"] = subset ? json(*subset) : json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------

struct GenSyntheticArgs {
  SyntheticSpec spec;
  std::string out_dir;
};

void register_gen_synthetic(CLI::App& app, GenSyntheticArgs& a) {
  auto* sub = app.add_subcommand("gen-synthetic", "Write Gaussian-cluster train/val/test stores with simulated model probabilities");
  sub->add_option("--out-dir", a.out_dir, "Directory receiving train.knnc, val.knnc and test.knnc")->required();
  sub->add_option("--n-train", a.spec.n_train, "Training examples")->capture_default_str();
  sub->add_option("--n-val", a.spec.n_val, "Validation examples")->capture_default_str();
  sub->add_option("--n-test", a.spec.n_test, "Test examples")->capture_default_str();
  sub->add_option("--dim", a.spec.d, "Embedding dimension")->capture_default_str();
  sub->add_option("--labels", a.spec.num_labels, "Number of labels")->capture_default_str();
  sub->add_option("--separation", a.spec.cluster_separation, "Distance between cluster means in standard deviations")
      ->capture_default_str();
  sub->add_option("--model-noise", a.spec.model_noise, "Probability the simulated model is wrong")->capture_default_str();
  sub->add_option("--seed", a.spec.seed, "Random seed")->capture_default_str();
}

json run_gen_synthetic(const GenSyntheticArgs& a) {
  const auto splits = gen_synthetic(a.spec);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_store(splits.train, dir / "train.knnc");
  write_store(splits.val, dir / "val.knnc");
  write_store(splits.test, dir / "test.knnc");
  return {{"spec", to_json(a.spec)},
          {"files",
           {{"train", (dir / "train.knnc").string()},
            {"val", (dir / "val.knnc").string()},
            {"test", (dir / "test.knnc").string()}}}};
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  std::string store;
  double epsilon = kDefaultEpsilon;
  std::optional<std::size_t> subset;
  std::uint64_t seed = 0;
  std::string out;
};

void register_stats(CLI::App& app, StatsArgs& a) {
  auto* sub = app.add_subcommand("stats", "Estimate batch-normalization statistics from a training store");
  sub->add_option("store", a.store, "Training store (.knnc)")->required();
  sub->add_option("--epsilon", a.epsilon, "Stabilizing epsilon added to sigma")->capture_default_str();
  sub->add_option("--subset", a.subset, "Estimate from this many sampled rows");
  sub->add_option("--seed", a.seed, "Seed for subset sampling")->capture_default_str();
  sub->add_option("--out", a.out, "Also write the statistics JSON here");
}

json run_stats(const StatsArgs& a) {
  const auto store = read_store(a.store);
  const auto stats = compute_stats(store, a.subset, a.seed, a.epsilon);
  auto report = stats_report(stats, a.subset, a.seed);
  if (!a.out.empty()) write_text_file(a.out, report.dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------------------

struct BuildIndexArgs {
  std::string store;
  std::string stats;
  double epsilon = kDefaultEpsilon;
  std::optional<std::size_t> subset;
  std::uint64_t seed = 0;
  std::string out;
};

void register_build_index(CLI::App& app, BuildIndexArgs& a) {
  auto* sub = app.add_subcommand("build-index", "Normalize a training store and write an index snapshot");
  sub->add_option("store", a.store, "Training store (.knnc)")->required();
  sub->add_option("--out", a.out, "Index snapshot path (.knni)")->required();
  auto* stats = sub->add_option("--stats", a.stats, "Reuse statistics JSON from `stats`");
  sub->add_option("--epsilon", a.epsilon, "Stabilizing epsilon added to sigma")->capture_default_str()->excludes(stats);
  sub->add_option("--subset", a.subset, "Estimate statistics from this many sampled rows")->excludes(stats);
  sub->add_option("--seed", a.seed, "Seed for subset sampling")->capture_default_str();
}

json run_build_index(const BuildIndexArgs& a) {
  const auto store = read_store(a.store);
  const NormStats stats =
      a.stats.empty() ? compute_stats(store, a.subset, a.seed, a.epsilon) : stats_from_json(read_json_file(a.stats));
  const auto index = build_index(store, stats);
  write_index(index, a.out);
  return {{"out", a.out},
          {"n", index.size()},
          {"d", index.dim()},
          {"num_labels", index.num_labels()},
          {"epsilon", stats.epsilon},
          {"source_count", stats.source_count},
          {"seed", a.seed}};
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string index;
  std::string eval;
  std::string config;
  std::optional<std::size_t> k;
  std::optional<double> temperature;
  std::optional<double> tau;
  std::string out;
};

void register_predict(CLI::App& app, PredictArgs& a) {
  auto* sub = app.add_subcommand("predict", "Backoff predictions for an evaluation store as JSON lines");
  sub->add_option("--index", a.index, "Index snapshot (.knni)")->required();
  sub->add_option("--eval", a.eval, "Evaluation store with model probabilities (.knnc)")->required();
  sub->add_option("--config", a.config, "Tune report JSON supplying k, temperature and tau");
  sub->add_option("--k", a.k, "Neighbours per query (default 16)");
  sub->add_option("--temperature", a.temperature, "Softmax temperature (default 1.0)");
  sub->add_option("--tau", a.tau, "Confidence threshold (default 0.5)");
  sub->add_option("--out", a.out, "Write the JSON lines here instead of standard output");
}

BackoffConfig resolve_config(const PredictArgs& a) {
  BackoffConfig config{16, 1.0, 0.5};
  if (!a.config.empty()) {
    const auto j = read_json_file(a.config);
    config = config_from_json(j.contains("best") ? j.at("best") : j);
  }
  if (a.k) config.k = *a.k;
  if (a.temperature) config.temperature = *a.temperature;
  if (a.tau) config.tau = *a.tau;
  validate(config);
  return config;
}

void run_predict(const PredictArgs& a, const GlobalOptions& global, std::ostream& out) {
  const auto config = resolve_config(a);
  const auto index = read_index(a.index);
  const auto eval = read_store(a.eval);
  const auto predictions = predict_store(index, eval, config, global.threads);

  std::ostringstream lines;
  std::size_t knn_used = 0;
  std::size_t model_hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    knn_used += p.used_knn ? 1 : 0;
    model_hits += p.model_argmax == eval.labels[i] ? 1 : 0;
    if (global.human) {
      lines << i << "\tlabel=" << p.label << "\tmodel=" << p.model_argmax << (p.used_knn ? "\tknn" : "") << '\n';
    } else {
      lines << json{{"index", i},
                    {"label", p.label},
                    {"used_knn", p.used_knn},
                    {"p_knn", p.p_knn.probs},
                    {"model_argmax", p.model_argmax}}
                   .dump()
            << '\n';
    }
  }
  const double n = static_cast<double>(predictions.size());
  json summary = {{"summary", true},
                  {"n", predictions.size()},
                  {"config", config_to_json(config)},
                  {"knn_used", knn_used},
                  {"accuracy", predictions.empty() ? 0.0 : accuracy(predictions, eval)},
                  {"model_accuracy", predictions.empty() ? 0.0 : static_cast<double>(model_hits) / n}};
  if (global.human) {
    lines << "accuracy: " << summary["accuracy"].get<double>() << "  model_accuracy: "
          << summary["model_accuracy"].get<double>() << "  knn_used: " << knn_used << '\n';
  } else {
    lines << summary.dump() << '\n';
  }
  if (a.out.empty()) {
    out << lines.str();
  } else {
    write_text_file(a.out, lines.str());
  }
}

// ---------------------------------------------------------------------------

struct TuneArgs {
  std::string index;
  std::string val;
  std::vector<std::size_t> ks;
  std::vector<double> temperatures;
  std::vector<double> taus;
  bool allow_large_k = false;
  std::string out;
};

void register_tune(CLI::App& app, TuneArgs& a) {
  auto* sub = app.add_subcommand("tune", "Grid-search k, temperature and tau on a validation store");
  sub->add_option("--index", a.index, "Index snapshot (.knni)")->required();
  sub->add_option("--val", a.val, "Validation store with model probabilities (.knnc)")->required();
  sub->add_option("--k", a.ks, "Candidate k values (default 1,2,4,...,64 below 1% of the training size)")->delimiter(',');
  sub->add_option("--temperature", a.temperatures, "Candidate temperatures (default 0.1,0.5,1,2,5,10)")->delimiter(',');
  sub->add_option("--tau", a.taus, "Candidate thresholds (default 0.00..1.00 in steps of 0.01)")->delimiter(',');
  sub->add_flag("--allow-large-k", a.allow_large_k, "Permit k at or above 1% of the training size");
  sub->add_option("--out", a.out, "Also write the report JSON here");
}

json run_tune(const TuneArgs& a, const GlobalOptions& global) {
  const auto index = read_index(a.index);
  const auto val = read_store(a.val);
  TuneGrid grid = default_grid(index.size());
  if (!a.ks.empty()) grid.k_candidates = a.ks;
  if (!a.temperatures.empty()) grid.t_candidates = a.temperatures;
  if (!a.taus.empty()) grid.tau_grid = a.taus;
  grid.allow_large_k = a.allow_large_k;
  const auto report = tune_report_to_json(tune(index, val, grid, global.threads));
  if (!a.out.empty()) write_text_file(a.out, report.dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------------------

struct MislabelArgs {
  std::string index;
  std::string probe;
  std::string mode = "probe-set";
  std::optional<double> inject_fraction;
  std::uint64_t seed = 0;
  std::string train;
  std::vector<double> fractions;
  std::string out;
};

void register_mislabel(CLI::App& app, MislabelArgs& a) {
  auto* sub = app.add_subcommand("mislabel", "Flag training examples whose labels disagree with the model");
  sub->add_option("--index", a.index, "Index snapshot (.knni)")->required();
  sub->add_option("--probe", a.probe, "Probe store with model probabilities (.knnc)")->required();
  sub->add_option("--mode", a.mode, "probe-set or self-query")
      ->check(CLI::IsMember({"probe-set", "self-query"}))
      ->capture_default_str();
  sub->add_option("--inject-fraction", a.inject_fraction, "Flip this fraction of training labels and score recovery");
  sub->add_option("--seed", a.seed, "Seed for label-noise injection")->capture_default_str();
  sub->add_option("--train", a.train, "Training store; adds the highest-loss baseline curve when noise is injected");
  sub->add_option("--fractions", a.fractions, "Baseline curve fractions (default 0.05..1.00)")->delimiter(',');
  sub->add_option("--out", a.out, "Also write the report JSON here");
}

json run_mislabel(const MislabelArgs& a, const GlobalOptions& global) {
  auto index = read_index(a.index);
  const auto probe = read_store(a.probe);
  const auto mode = mislabel_mode_from_string(a.mode);

  std::optional<NoisyLabels> noisy;
  if (a.inject_fraction) {
    const std::vector<std::uint32_t> clean(index.labels().begin(), index.labels().end());
    noisy = inject_label_noise(clean, index.num_labels(), *a.inject_fraction, a.seed);
    index.set_labels(noisy->labels);
  }

  auto report = detect_mislabeled(index, probe, mode, global.threads);
  if (noisy) report.metrics = score_candidates(report.candidates, noisy->mask);

  json j = to_json(report);
  j["seed"] = a.seed;
  j["inject_fraction"] = a.inject_fraction ? json(*a.inject_fraction) : json(nullptr);

  if (noisy && !a.train.empty()) {
    auto train = read_store(a.train);
    if (train.n != index.size()) fail(ErrorCode::ModeStoreMismatch, "training store size differs from index");
    train.labels = noisy->labels;
    const auto losses = losses_from_model_probs(train);
    std::vector<double> fractions = a.fractions;
    if (fractions.empty()) {
      for (int i = 1; i <= 20; ++i) fractions.push_back(i / 20.0);
    }
    j["loss_curve"] = to_json(loss_baseline_curve(losses, noisy->mask, fractions));
    j["candidate_fraction"] = static_cast<double>(report.candidates.size()) / static_cast<double>(train.n);
    j["loss_fraction_for_same_recall"] = loss_fraction_for_recall(losses, noisy->mask, report.metrics->recall);
  }
  if (!a.out.empty()) write_text_file(a.out, j.dump(2) + "\n");
  return j;
}

// ---------------------------------------------------------------------------

struct InfluenceArgs {
  std::string index;
  std::string probe;
  std::size_t k = 16;
  std::vector<double> percents = kDefaultRemovalPercents;
  bool exclude_self = true;
  std::string out_dir;
};

void register_influence(CLI::App& app, InfluenceArgs& a) {
  auto* sub = app.add_subcommand("influence", "Rank training examples by how often they are retrieved");
  sub->add_option("--index", a.index, "Index snapshot (.knni)")->required();
  sub->add_option("--probe", a.probe, "Probe store; the training store itself when excluding self")->required();
  sub->add_option("--k", a.k, "Neighbours per probe query")->capture_default_str();
  sub->add_option("--percent", a.percents, "Removal-list percentages")->delimiter(',')->capture_default_str();
  sub->add_flag("--exclude-self,!--no-exclude-self", a.exclude_self, "Skip each probe row's own training index")
      ->capture_default_str();
  sub->add_option("--out-dir", a.out_dir, "Write removal_<percent>.txt index lists here");
}

std::string percent_label(double p) {
  std::ostringstream s;
  s << p;
  return s.str();
}

json run_influence(const InfluenceArgs& a, const GlobalOptions& global) {
  const auto index = read_index(a.index);
  const auto probe = read_store(a.probe);
  const auto report = influence_ranking(index, probe, a.k, a.exclude_self, a.percents, global.threads);
  json j = to_json(report);
  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    json files = json::array();
    for (const auto& list : report.removal_lists) {
      std::ostringstream text;
      for (std::size_t idx : list.indices) text << idx << '\n';
      const auto path = fs::path(a.out_dir) / ("removal_" + percent_label(list.percent) + ".txt");
      write_text_file(path, text.str());
      files.push_back(path.string());
    }
    j["removal_files"] = std::move(files);
  }
  return j;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string predictions;
  std::string gold;
  std::string slices;
  std::string collapse;
};

void register_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Accuracy overall and per slice, optionally after collapsing labels");
  sub->add_option("--predictions", a.predictions, "JSON lines written by `predict`")->required();
  sub->add_option("--gold", a.gold, "Store holding the gold labels (.knnc)")->required();
  sub->add_option("--slices", a.slices, "JSON object mapping slice names to rules, e.g. {\"neg\": \"hypothesis contains 'not'\"}");
  sub->add_option("--collapse", a.collapse, "Total label map, e.g. 0:0,1:1,2:1");
}

std::vector<std::uint32_t> read_prediction_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint32_t> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json row;
    try {
      row = json::parse(line);
      if (row.value("summary", false)) continue;
      labels.push_back(row.at("label").get<std::uint32_t>());
    } catch (const json::exception& e) {
      fail(ErrorCode::IoFailure, path.string() + ": " + e.what());
    }
  }
  return labels;
}

json run_eval(const EvalArgs& a) {
  const auto predictions = read_prediction_labels(a.predictions);
  const auto gold = read_store(a.gold);

  std::vector<std::pair<std::string, SliceMask>> slices;
  if (!a.slices.empty()) {
    const auto rules = read_json_file(a.slices);
    if (!rules.is_object()) fail(ErrorCode::InvalidRule, "slices file must hold a JSON object of name: rule");
    const auto sidecar = read_sidecar(sidecar_path_for(a.gold), gold.n);
    for (const auto& [name, rule] : rules.items()) {
      if (!rule.is_string()) fail(ErrorCode::InvalidRule, "rule for slice '" + name + "' must be a string");
      slices.emplace_back(name, build_slice(gold, rule.get<std::string>(), sidecar ? &*sidecar : nullptr));
    }
  }
  std::optional<std::vector<std::pair<std::uint32_t, std::uint32_t>>> collapse;
  if (!a.collapse.empty()) collapse = parse_collapse_map(a.collapse);

  auto j = to_json(evaluate(predictions, gold.labels, gold.num_labels, slices, collapse));
  j["collapse"] = a.collapse.empty() ? json(nullptr) : json(a.collapse);
  return j;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"kNN backoff classification and auditing over cached hidden representations", "knnlens"};
  app.require_subcommand(1);

  GlobalOptions global;
  app.add_option("--threads", global.threads, "Worker threads (0 = one per core)")
      ->envname("KNN_THREADS")
      ->capture_default_str();
  app.add_flag("--human", global.human, "Human-readable output instead of JSON");

  GenSyntheticArgs gen_args;
  StatsArgs stats_args;
  BuildIndexArgs build_args;
  PredictArgs predict_args;
  TuneArgs tune_args;
  MislabelArgs mislabel_args;
  InfluenceArgs influence_args;
  EvalArgs eval_args;
  register_stats(app, stats_args);
  register_build_index(app, build_args);
  register_predict(app, predict_args);
  register_tune(app, tune_args);
  register_mislabel(app, mislabel_args);
  register_influence(app, influence_args);
  register_eval(app, eval_args);
  register_gen_synthetic(app, gen_args);
  // Subcommand options are also accepted before the subcommand name.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == static_cast<int>(CLI::ExitCodes::Success)) return kExitOk;
    if (app.get_subcommands().empty()) {
      err << app.help();
    } else {
      err << app.get_subcommands().front()->help();
    }
    return kExitUsage;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-synthetic") {
      emit(run_gen_synthetic(gen_args), global, out);
    } else if (name == "stats") {
      emit(run_stats(stats_args), global, out);
    } else if (name == "build-index") {
      emit(run_build_index(build_args), global, out);
    } else if (name == "predict") {
      run_predict(predict_args, global, out);
    } else if (name == "tune") {
      emit(run_tune(tune_args, global), global, out);
    } else if (name == "mislabel") {
      emit(run_mislabel(mislabel_args, global), global, out);
    } else if (name == "influence") {
      emit(run_influence(influence_args, global), global, out);
    } else if (name == "eval") {
      emit(run_eval(eval_args), global, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace knnlens::cli
