#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "noisebal/balance.hpp"
#include "noisebal/dataset.hpp"
#include "noisebal/fairness.hpp"
#include "noisebal/learn.hpp"

namespace noisebal {

enum class Pipeline { kUnconstrained, kConstrained, kMultiClass };

enum class Method {
  kCE,
  kMisSL,  // corrected loss with perturbed, trace-preserving rates
  kEstSL,  // corrected loss with rates counted from clean labels
  kPeer,
  kCENoisePlus,
  kPeerNoisePlus,
  kLR,  // unconstrained logistic regression (constrained pipeline only)
  kCEGroupBalance,
  kPeerGroupBalance,
};

std::string to_string(Pipeline p);
std::string to_string(Method m);
Pipeline parse_pipeline(const std::string& s);
Method parse_method(const std::string& s);

enum class NoiseKind { kNone, kBinary, kGroup, kMatrix, kUniformDiagonal };

struct NoiseConfig {
  NoiseKind kind = NoiseKind::kBinary;
  double e_minus = 0.1;
  double e_plus = 0.3;
  double e_a = 0.2;
  double e_b = 0.4;
  double gap = 0.2;    ///< diagonal spread for matrix / uniform_diagonal
  double e_min = 0.1;  ///< smallest class error for uniform_diagonal
};

struct DataConfig {
  std::optional<std::filesystem::path> csv;  ///< synthetic when absent
  SyntheticConfig synthetic;                  ///< seed ignored unless data_seed is set
  std::optional<std::uint64_t> data_seed;     ///< fixed dataset across run seeds
  double test_fraction = 0.2;
};

struct ExperimentConfig {
  Pipeline pipeline = Pipeline::kUnconstrained;
  DataConfig data;
  NoiseConfig noise;
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  BalanceOptions balance;  ///< seed ignored; derived per run
  TrainConfig train;       ///< seed ignored; derived per run
  double peer_alpha = 1.0;
  std::vector<double> peer_alpha_grid{0.5, 1.0, 2.0};  ///< alpha picked per run on a noisy holdout; empty = peer_alpha
  double missl_radius = 0.15;
  double delta = 0.02;
  ConstraintOptions constraint;
  std::filesystem::path out_dir = "out";
  int threads = 1;

  /// Throws ConfigError on an empty method or seed list or an incompatible combination.
  void validate() const;

  /// Flat `key = value` lines; `#` starts a comment. Unknown keys are errors.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  /// Every key with its resolved value, one per line, in a fixed order.
  std::string resolved() const;
};

struct RunRow {
  Method method = Method::kCE;
  std::uint64_t seed = 0;
  double accuracy = 0.0;                ///< clean test labels
  std::optional<double> equal_odds_gap; ///< clean test labels, constrained pipeline
  std::optional<double> epsilon;        ///< balancing methods
  std::optional<int> iterations;
  std::optional<bool> balance_success;
  std::optional<double> peer_alpha;
  double seconds = 0.0;  ///< wall clock; kept out of raw.csv
};

struct AggregateRow {
  Method method = Method::kCE;
  int runs = 0;
  double accuracy_mean = 0.0;
  std::optional<double> accuracy_std;  ///< sample std; absent below two runs
  std::optional<double> gap_mean;
  std::optional<double> gap_std;
  std::optional<double> epsilon_mean;
  std::optional<double> iterations_mean;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<RunRow> rows;  ///< seed-major, methods in config order
  std::vector<std::string> warnings;

  std::vector<AggregateRow> aggregate() const;
  std::string raw_csv() const;
  std::string aggregate_csv() const;
  std::string timing_csv() const;
  std::string table() const;
};

RunReport run_unconstrained(const ExperimentConfig& cfg);
RunReport run_constrained(const ExperimentConfig& cfg);
RunReport run_multiclass(const ExperimentConfig& cfg);
/// Dispatches on cfg.pipeline.
RunReport run_experiment(const ExperimentConfig& cfg);

/// Writes raw.csv, aggregate.csv, table.txt, resolved.cfg and timing.csv (plus
/// warnings.txt when there are warnings) into `dir`, creating it if needed.
void report_emit(const RunReport& report, const std::filesystem::path& dir);

/// Mean and sample standard deviation of a column of raw.csv values.
double mean_of(const std::vector<double>& v);
std::optional<double> sample_std(const std::vector<double>& v);

}  // namespace noisebal
