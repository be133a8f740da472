// noisebal command line: data generation, noise injection, detection,
// balancing, training, fairness reports and full experiments.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <noisebal/agreement.hpp>
#include <noisebal/balance.hpp>
#include <noisebal/dataset.hpp>
#include <noisebal/error.hpp>
#include <noisebal/experiment.hpp>
#include <noisebal/fairness.hpp>
#include <noisebal/learn.hpp>
#include <noisebal/random.hpp>

namespace fs = std::filesystem;
using namespace noisebal;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2 };

struct Common {
  std::uint64_t seed = 0;
  double gamma = BalanceOptions{}.gamma;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "master seed")->capture_default_str();
  cmd->add_option("--gamma", c.gamma, "agreement-gap tolerance")->capture_default_str();
  cmd->add_option("--out-dir", c.out_dir, "directory for outputs")->capture_default_str();
}

fs::path in_out_dir(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

NeighborBackend backend_from(const std::string& s) {
  if (s == "brute") return NeighborBackend::kBruteForce;
  if (s == "kdtree") return NeighborBackend::kKdTree;
  return NeighborBackend::kAuto;
}

const std::map<std::string, std::string> kBackendChoices{{"auto", "auto"}, {"brute", "brute"}, {"kdtree", "kdtree"}};

json trace_json(const std::vector<TraceEntry>& trace) {
  json out = json::array();
  for (const auto& t : trace) out.push_back({{"unit", t.unit}, {"epsilon", t.epsilon}, {"gap", t.gap}});
  return out;
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  SyntheticConfig cfg;
  bool overlap = false;
  std::string out = "synthetic.csv";
};

void setup_synth(CLI::App& app, Common& common, SynthArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("synth", "generate a Gaussian-blob dataset");
  add_common(cmd, common);
  cmd->add_option("--n", a.cfg.n, "rows")->capture_default_str();
  cmd->add_option("--d", a.cfg.d, "features")->capture_default_str();
  cmd->add_option("--clusters", a.cfg.cluster_count, "cluster count")->capture_default_str();
  cmd->add_option("--spread", a.cfg.cluster_spread, "cluster standard deviation")->capture_default_str();
  cmd->add_option("--separation", a.cfg.separation, "minimum centre distance in spreads")->capture_default_str();
  cmd->add_option("--class-balance", a.cfg.class_balance, "P(positive) for binary data")->capture_default_str();
  cmd->add_option("--classes", a.cfg.classes, "label classes")->capture_default_str();
  cmd->add_option("--groups", a.cfg.groups, "0 or 2")->capture_default_str();
  cmd->add_option("--group-balance", a.cfg.group_balance, "P(group 1)")->capture_default_str();
  cmd->add_option("--group-shift", a.cfg.group_shift, "group-1 shift in spreads")->capture_default_str();
  cmd->add_flag("--group-feature", a.cfg.group_feature, "append group id as a feature");
  cmd->add_flag("--overlap", a.overlap, "allow separation below the clusterable floor");
  cmd->add_option("--out", a.out, "output CSV name inside --out-dir")->capture_default_str();
  cmd->callback([&] {
    run = [&] {
      a.cfg.seed = common.seed;
      const auto ds = a.overlap ? generate_blobs(a.cfg) : generate_clusterable(a.cfg);
      const auto path = in_out_dir(common, a.out);
      save_csv(ds, path);
      fmt::print("wrote {} rows to {}\n", ds.size(), path.string());
    };
  });
}

// --- inject -----------------------------------------------------------------

struct InjectArgs {
  std::string in;
  std::string out = "noisy.csv";
  std::string kind = "binary";
  double e_minus = 0.1, e_plus = 0.3, e_a = 0.2, e_b = 0.4, gap = 0.2;
};

void setup_inject(CLI::App& app, Common& common, InjectArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("inject", "corrupt the labels of a CSV");
  add_common(cmd, common);
  cmd->add_option("--in", a.in, "input CSV (label column taken as clean)")->required();
  cmd->add_option("--out", a.out, "output CSV name inside --out-dir")->capture_default_str();
  cmd->add_option("--kind", a.kind, "binary | group | matrix")
      ->check(CLI::IsMember({"binary", "group", "matrix"}))
      ->capture_default_str();
  cmd->add_option("--e-minus", a.e_minus, "P(noisy + | clean -)")->capture_default_str();
  cmd->add_option("--e-plus", a.e_plus, "P(noisy - | clean +)")->capture_default_str();
  cmd->add_option("--e-a", a.e_a, "flip rate in group 0")->capture_default_str();
  cmd->add_option("--e-b", a.e_b, "flip rate in group 1")->capture_default_str();
  cmd->add_option("--noise-gap", a.gap, "diagonal spread of a random matrix")->capture_default_str();
  cmd->callback([&] {
    run = [&] {
      CsvSchema schema;
      auto ds = load_csv(a.in, schema);
      if (!ds.has_clean()) ds.clean_labels = ds.noisy_labels;
      NoiseSpec spec = BinaryClassNoise{a.e_minus, a.e_plus};
      if (a.kind == "group") spec = GroupSymmetricNoise{a.e_a, a.e_b};
      if (a.kind == "matrix") spec = generate_noise_matrix(ds.classes, a.gap, derive_seed(common.seed, "matrix"));
      const auto noisy = inject_noise(ds, spec, derive_seed(common.seed, "noise"));
      const auto path = in_out_dir(common, a.out);
      save_csv(noisy, path, schema);
      std::size_t flipped = 0;
      for (std::size_t i = 0; i < noisy.size(); ++i) flipped += noisy.noisy_labels[i] != (*noisy.clean_labels)[i];
      fmt::print("wrote {} rows to {} ({} labels changed)\n", noisy.size(), path.string(), flipped);
    };
  });
}

// --- detect -----------------------------------------------------------------

struct DetectArgs {
  std::string in;
  std::string backend = "auto";
};

void setup_detect(CLI::App& app, Common& common, DetectArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("detect", "2-NN agreement statistics of a label-balanced resample");
  add_common(cmd, common);
  cmd->add_option("--in", a.in, "input CSV")->required();
  cmd->add_option("--backend", a.backend, "auto | brute | kdtree")->transform(CLI::IsMember(kBackendChoices));
  cmd->callback([&] {
    run = [&] {
      const auto ds = load_csv(a.in);
      const auto balanced = resample_balanced(ds, BalanceBy::kClass, derive_seed(common.seed, "resample"));
      const auto stats = estimate_agreements(balanced, build_index(balanced, backend_from(a.backend)));
      json out{{"rows", balanced.size()}};
      json ka = json::array();
      for (const auto& r : stats.per_class) {
        ka.push_back(r ? json{{"value", r->value()}, {"agree", r->numerator}, {"anchors", r->denominator}} : json());
      }
      out["per_class"] = ka;
      if (ds.classes == 2) {
        out["gap"] = stats.gap();
        out["verdict"] = std::string(to_string(detect_noisier_class(stats, common.gamma)));
      } else {
        out["ranking"] = rank_classes_by_ka(stats, common.gamma);
      }
      std::cout << out.dump(2) << "\n";
    };
  });
}

// --- balance ----------------------------------------------------------------

struct BalanceArgs {
  std::string in;
  std::string out = "balanced.csv";
  std::string mode = "auto";
  BalanceOptions opts;
  std::string backend = "auto";
};

void setup_balance(CLI::App& app, Common& common, BalanceArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("balance", "flip labels of the cleaner class or group until noise rates match");
  add_common(cmd, common);
  cmd->add_option("--in", a.in, "input CSV")->required();
  cmd->add_option("--out", a.out, "output CSV name inside --out-dir")->capture_default_str();
  cmd->add_option("--mode", a.mode, "auto | class | multiclass | group")
      ->check(CLI::IsMember({"auto", "class", "multiclass", "group"}))
      ->capture_default_str();
  cmd->add_option("--epsilon-r-init", a.opts.epsilon_r_init, "first right end of the bracket")->capture_default_str();
  cmd->add_option("--max-iterations", a.opts.max_iterations, "bisection steps")->capture_default_str();
  cmd->add_option("--backend", a.backend, "auto | brute | kdtree")->transform(CLI::IsMember(kBackendChoices));
  cmd->callback([&] {
    run = [&] {
      CsvSchema schema;
      const auto ds = load_csv(a.in, schema);
      a.opts.gamma = common.gamma;
      a.opts.seed = derive_seed(common.seed, "balance");
      a.opts.backend = backend_from(a.backend);
      std::string mode = a.mode;
      if (mode == "auto") mode = ds.classes > 2 ? "multiclass" : "class";
      const auto result = mode == "group"        ? balance_groups(ds, a.opts)
                          : mode == "multiclass" ? balance_multiclass(ds, a.opts)
                                                 : noise_plus(ds, a.opts);
      const auto path = in_out_dir(common, a.out);
      save_csv(result.balanced_dataset, path, schema);
      const json out{{"success", result.success},         {"target", result.target},
                     {"epsilon", result.epsilon_found},   {"epsilons", result.epsilons},
                     {"iterations", result.iterations},   {"final_gap", result.final_gap},
                     {"bracket", trace_json(result.bracket_trace)}, {"trace", trace_json(result.trace)},
                     {"output", path.string()}};
      std::cout << out.dump(2) << "\n";
      if (!result.success) std::cerr << "balancing did not reach the tolerance; output is unflipped\n";
    };
  });
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string in;
  std::string test;
  std::string model = "model.txt";
  std::string loss = "ce";
  double e_tilde_plus = 0.0, e_tilde_minus = 0.0, alpha = 1.0;
  TrainConfig cfg;
};

void setup_train(CLI::App& app, Common& common, TrainArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("train", "fit a linear model on noisy labels");
  add_common(cmd, common);
  cmd->add_option("--in", a.in, "training CSV")->required();
  cmd->add_option("--test", a.test, "CSV to score against its clean labels");
  cmd->add_option("--model", a.model, "model file name inside --out-dir")->capture_default_str();
  cmd->add_option("--loss", a.loss, "ce | corrected | peer")
      ->check(CLI::IsMember({"ce", "corrected", "peer"}))
      ->capture_default_str();
  cmd->add_option("--e-tilde-plus", a.e_tilde_plus, "assumed e+ for the corrected loss");
  cmd->add_option("--e-tilde-minus", a.e_tilde_minus, "assumed e- for the corrected loss");
  cmd->add_option("--alpha", a.alpha, "peer weight")->capture_default_str();
  cmd->add_option("--epochs", a.cfg.epochs)->capture_default_str();
  cmd->add_option("--batch-size", a.cfg.batch_size)->capture_default_str();
  cmd->add_option("--learning-rate", a.cfg.learning_rate)->capture_default_str();
  cmd->add_option("--l2", a.cfg.l2_penalty)->capture_default_str();
  cmd->callback([&] {
    run = [&] {
      const auto ds = load_csv(a.in);
      LossSpec loss = CrossEntropy{};
      if (a.loss == "corrected") loss = Corrected{a.e_tilde_plus, a.e_tilde_minus};
      if (a.loss == "peer") loss = Peer{a.alpha, derive_seed(common.seed, "peer")};
      a.cfg.seed = derive_seed(common.seed, "train");
      const auto result = train(ds, loss, a.cfg);
      const auto path = in_out_dir(common, a.model);
      save_model(result.model, path);
      json out{{"model", path.string()}, {"final_loss", result.epoch_losses.back()},
               {"train_accuracy_noisy", evaluate(result.model, ds, false).accuracy}};
      if (!a.test.empty()) {
        const auto test = load_csv(a.test);
        out["test_accuracy"] = evaluate(result.model, test, test.has_clean()).accuracy;
      }
      std::cout << out.dump(2) << "\n";
    };
  });
}

// --- fairness ---------------------------------------------------------------

struct FairnessArgs {
  std::string in;
  std::string model;
  std::vector<double> e_used, e_true;
  std::string csv = "fairness.csv";
};

void setup_fairness(CLI::App& app, Common& common, FairnessArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("fairness", "group TPR/FPR of a model, with optional noise correction");
  add_common(cmd, common);
  cmd->add_option("--in", a.in, "CSV with a group column")->required();
  cmd->add_option("--model", a.model, "model file")->required();
  cmd->add_option("--e-used", a.e_used, "assumed group flip rates e_a e_b for correction")->expected(2);
  cmd->add_option("--e-true", a.e_true, "true group flip rates, enables the misspecification bound")->expected(2);
  cmd->add_option("--csv", a.csv, "report CSV name inside --out-dir")->capture_default_str();
  cmd->callback([&] {
    run = [&] {
      const auto ds = load_csv(a.in);
      const auto model = load_model(a.model);
      auto pair = [](const std::vector<double>& v) -> std::optional<GroupSymmetricNoise> {
        if (v.empty()) return std::nullopt;
        return GroupSymmetricNoise{v[0], v[1]};
      };
      const auto report = make_fairness_report(measure_rates(model, ds), pair(a.e_used), pair(a.e_true));
      const auto path = in_out_dir(common, a.csv);
      std::ofstream(path) << report.to_csv();
      std::cout << report.to_text();
    };
  });
}

// --- experiment -------------------------------------------------------------

struct ExperimentArgs {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  int threads = 0;
};

void setup_experiment(CLI::App& app, Common& common, ExperimentArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("experiment", "run a full pipeline over several seeds and write reports");
  cmd->add_option("--config", a.config, "key = value config file");
  cmd->add_option("--set", a.sets, "override one key, e.g. --set train.epochs=10");
  cmd->add_option("--seeds", a.seeds, "run seeds (overrides the config list)")->delimiter(',');
  cmd->add_option("--seed", common.seed, "run a single seed");
  cmd->add_option("--gamma", common.gamma, "agreement-gap tolerance");
  cmd->add_option("--out-dir", common.out_dir, "report directory (overrides out_dir)");
  cmd->add_option("--threads", a.threads, "seeds run concurrently");
  cmd->callback([&, cmd] {
    run = [&, cmd] {
      ExperimentConfig cfg = a.config.empty() ? ExperimentConfig::parse("") : ExperimentConfig::load(a.config);
      for (const auto& s : a.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("--set expects key=value, got '{}'", s));
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
      }
      if (!a.seeds.empty()) cfg.seeds = a.seeds;
      if (cmd->count("--seed")) cfg.seeds = {common.seed};
      if (cmd->count("--gamma")) cfg.balance.gamma = common.gamma;
      if (cmd->count("--out-dir")) cfg.out_dir = common.out_dir;
      if (a.threads > 0) cfg.threads = a.threads;
      const auto report = run_experiment(cfg);
      report_emit(report, cfg.out_dir);
      std::cout << report.table();
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "reports in " << cfg.out_dir.string() << "\n";
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-rate balancing for learning with noisy labels"};
  app.require_subcommand(1);
  Common common;
  std::function<void()> run;
  SynthArgs synth;
  InjectArgs inject;
  DetectArgs detect;
  BalanceArgs balance;
  TrainArgs train_args;
  FairnessArgs fairness;
  ExperimentArgs experiment;
  setup_synth(app, common, synth, run);
  setup_inject(app, common, inject, run);
  setup_detect(app, common, detect, run);
  setup_balance(app, common, balance, run);
  setup_train(app, common, train_args, run);
  setup_fairness(app, common, fairness, run);
  setup_experiment(app, common, experiment, run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  try {
    run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
