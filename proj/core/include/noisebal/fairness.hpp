#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "noisebal/dataset.hpp"
#include "noisebal/learn.hpp"

namespace noisebal {

/// A conditional frequency kept as counts; absent when nothing conditions it.
struct RateCell {
  std::int64_t numerator = 0;
  std::int64_t denominator = 0;

  bool present() const noexcept { return denominator > 0; }
  /// Throws AbsentStatistic when the denominator is zero.
  double value() const;

  friend bool operator==(const RateCell&, const RateCell&) = default;
};

/// P(pred=+1 | label=+1) and P(pred=+1 | label=-1) for one group, against
/// clean labels (tpr, fpr) and noisy labels (tpr_noisy, fpr_noisy).
struct GroupCells {
  RateCell tpr, fpr, tpr_noisy, fpr_noisy;
};

struct GroupRates {
  std::array<GroupCells, 2> group;  ///< a = 0, b = 1
};

GroupRates measure_rates(std::span<const int> predictions, const LabeledDataset& ds);
GroupRates measure_rates(const LinearModel& model, const LabeledDataset& ds);

struct RatePair {
  double tpr = 0.0;
  double fpr = 0.0;
};

/// Rates seen through symmetric noise e with a balanced class prior.
RatePair corrupt_rates_forward(double tpr, double fpr, double e);

struct CorrectionCoeffs {
  double c1 = 0.0;  ///< 0.5 e
  double c2 = 0.0;  ///< 0.5 (1 - e)
  double e_used = 0.0;
};

CorrectionCoeffs correction_coeffs(double e);

struct CorrectedRates {
  double tpr = 0.0;
  double fpr = 0.0;
  bool out_of_range = false;  ///< either value outside [0, 1]; never clamped
};

/// Inverse of corrupt_rates_forward. Throws ConfigError when e_used >= 0.5.
CorrectedRates correct_rates(double tpr_noisy, double fpr_noisy, double e_used);

struct ViolationBound {
  double tpr_bound = 0.0;
  double fpr_bound = 0.0;
  bool degenerate = false;  ///< err_a == 0; the bound does not apply and reads 0
};

/// Lower bound on the true TPR/FPR gap left after equalising rates corrected with
/// misspecified rates `e_tilde` when the truth is `e`:
///   err_M * | R_a / ((2e_a - 1)(2e~_a - 1)) - (err_b / err_a) R_b / ((2e_b - 1)(2e~_b - 1)) |
/// with err_z = |e~_z - e_z|, err_M = min(err_a, err_b), and R the noisy rate.
ViolationBound violation_lower_bound(const std::array<RatePair, 2>& noisy, const GroupSymmetricNoise& e,
                                     const GroupSymmetricNoise& e_tilde);
ViolationBound violation_lower_bound(const GroupRates& rates, const GroupSymmetricNoise& e,
                                     const GroupSymmetricNoise& e_tilde);

enum class LabelSet { kNoisy, kClean };

/// max(|tpr_a - tpr_b|, |fpr_a - fpr_b|).
double equal_odds_gap(const RatePair& a, const RatePair& b);
double equal_odds_gap(const GroupRates& rates, LabelSet on);

struct FairnessReport {
  GroupRates rates;
  std::optional<std::array<CorrectedRates, 2>> corrected;
  std::optional<double> equal_odds_gap_true;  ///< absent without clean labels
  double equal_odds_gap_noisy = 0.0;
  std::optional<double> equal_odds_gap_corrected;
  std::optional<ViolationBound> violation_bounds;

  /// One row per group × metric.
  std::string to_csv() const;
  std::string to_text() const;
};

/// Rates and gaps; corrected rates use `e_used`, and bounds need both pairs.
FairnessReport make_fairness_report(const GroupRates& rates,
                                    const std::optional<GroupSymmetricNoise>& e_used = std::nullopt,
                                    const std::optional<GroupSymmetricNoise>& e_true = std::nullopt);

struct ConstraintOptions {
  double lambda_init = 1.0;
  double lambda_growth = 4.0;
  int max_rounds = 5;
  int refresh_steps = 20;  ///< steps between full-data refreshes of the penalty gradient
  double temperature = 0.1;  ///< soft rates use sigmoid(score / (temperature * score std))
  double dual_step = 0.5;     ///< multiplier ascent rate per refresh
  double target_fraction = 0.5;  ///< smoothed gaps are held to this fraction of delta
};

struct ConstrainedResult {
  LinearModel model;
  double lambda = 0.0;
  int rounds = 0;
  bool satisfied = false;
  double train_tpr_gap = 0.0;  ///< hard rates on the training labels
  double train_fpr_gap = 0.0;
};

/// Loss plus lambda * (max(0, |dTPR| - delta) + max(0, |dFPR| - delta)) on
/// sigmoid-smoothed group rates of the training (noisy) labels, solved as a
/// saddle point with multipliers bounded by lambda. The smoothed gaps are held
/// to target_fraction * delta. Each round that misses delta on the hard gaps
/// multiplies lambda by lambda_growth and halves the smoothed target, up to
/// max_rounds. Once the penalty engages, the returned model is the mean of the
/// last epoch's iterates.
ConstrainedResult constrained_train(const LabeledDataset& ds, const LossSpec& loss, double delta,
                                    const TrainConfig& cfg, const ConstraintOptions& opts = {});

}  // namespace noisebal
