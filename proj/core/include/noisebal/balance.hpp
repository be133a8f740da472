#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "noisebal/dataset.hpp"
#include "noisebal/neighbors.hpp"

namespace noisebal {

struct FlipParams {
  double epsilon = 0.0;
  int target = kPositive;  ///< class id for flip(), group id for flip_group()
  std::uint64_t seed = 0;
};

/// One uniform per row from the "flip" stream of `seed`. flip() flips row i
/// iff it is eligible and u[i] < epsilon, so raising epsilon only adds flips.
std::vector<double> flip_uniforms(std::size_t n, std::uint64_t seed);

/// Flips every binary noisy label equal to `target` w.p. epsilon. Rejects K > 2.
LabeledDataset flip(const LabeledDataset& ds, const FlipParams& params);

/// Flips every label (either class) of rows in group `target` w.p. epsilon.
LabeledDataset flip_group(const LabeledDataset& ds, const FlipParams& params);

/// Moves a class-k label away w.p. per_class_epsilon[k], to one of the other K-1
/// classes chosen uniformly. For K = 2 it matches flip() draw for draw.
LabeledDataset flip_multiclass(const LabeledDataset& ds, std::span<const double> per_class_epsilon,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Rate algebra for flipping the noisy-positive class

struct FlippedRates {
  double e_plus = 0.0;
  double e_minus = 0.0;
};

/// e+ -> (1 - e+) eps + e+,  e- -> (1 - eps) e-.
FlippedRates predicted_flipped_rates(double e_plus, double e_minus, double epsilon);

/// e-^ - e+^ = e- - e+ - (1 - e+ + e-) eps.
double flipped_rate_gap(double e_plus, double e_minus, double epsilon);

/// Balancing root (e- - e+) / (1 - e+ + e-). Requires e+ <= e-.
double epsilon_star(double e_plus, double e_minus);

/// Root (0.5 - e+) / (1 - e+) at which flipped positives become uninformative.
double epsilon_uninformative(double e_plus);

// ---------------------------------------------------------------------------
// Balancers

struct BalanceOptions {
  double gamma = 0.001;
  double epsilon_r_init = 0.3;
  int max_iterations = 25;
  std::uint64_t seed = 0;
  NeighborBackend backend = NeighborBackend::kAuto;
};

struct TraceEntry {
  int unit = 0;  ///< class or group whose epsilon moved
  double epsilon = 0.0;
  double gap = 0.0;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct BalanceResult {
  bool success = false;
  int target = kPositive;       ///< flipped class (binary) or group; -1 when nothing flipped
  double epsilon_found = 0.0;   ///< epsilon applied to the target
  std::vector<double> epsilons; ///< per class (multi-class) or per unit
  int iterations = 0;
  double final_gap = 0.0;
  std::vector<TraceEntry> trace;         ///< one entry per bisection step
  std::vector<TraceEntry> bracket_trace; ///< initial and right-end evaluations
  LabeledDataset balanced_dataset;
};

/// Bisection on the flip probability of the cleaner class until the agreement
/// gap of the flipped balanced resample is within gamma. The flip target is
/// chosen from the sign of the initial gap. On failure the input comes back
/// unflipped with success = false.
BalanceResult noise_plus(const LabeledDataset& ds, const BalanceOptions& opts = {});

/// Per-class bisection matching each class's KA to the lowest one. Needs K >= 2
/// and at least 30 anchors per class after resampling.
BalanceResult balance_multiclass(const LabeledDataset& ds, const BalanceOptions& opts = {});

/// Symmetric flipping inside the cleaner of two groups until the per-group
/// positive agreements match within gamma.
BalanceResult balance_groups(const LabeledDataset& ds, const BalanceOptions& opts = {});

}  // namespace noisebal
