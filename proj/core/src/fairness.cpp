#include "noisebal/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <fmt/format.h>

#include "noisebal/error.hpp"

namespace noisebal {

namespace {

void check_rate(double e, const char* name) {
  if (!(e >= 0.0 && e < 0.5)) throw ConfigError(fmt::format("{} = {} outside [0, 0.5)", name, e));
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("{} = {} outside [0, 1]", name, p));
}

void require_two_groups(const LabeledDataset& ds) {
  if (!ds.has_groups()) throw ConfigError("fairness measurement requires group tags");
  if (ds.group_count != 2) throw ConfigError(fmt::format("fairness supports two groups, got {}", ds.group_count));
  if (ds.classes != 2) throw ConfigError("fairness measurement requires binary labels");
}

RatePair pair_of(const GroupCells& c, LabelSet on) {
  if (on == LabelSet::kClean) return {c.tpr.value(), c.fpr.value()};
  return {c.tpr_noisy.value(), c.fpr_noisy.value()};
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// lambda * max(0, |g| - delta) written as max over multipliers mu in [0, lambda]
// of mu+ (g - delta) + mu- (-g - delta), for g the smoothed TPR or FPR gap. The
// multipliers move by projected ascent at each refresh, so the model sees a
// slowly varying linear penalty instead of a hinge whose sign flips with noise.
// Gaps and their gradients are recomputed on the full set every `refresh` steps.
class EqualOddsPenalty : public StepTerm {
 public:
  EqualOddsPenalty(const LabeledDataset& ds, double delta, const ConstraintOptions& opts, double lambda,
                   long average_from)
      : ds_(ds), delta_(delta), lambda_(lambda), opts_(opts), average_from_(average_from) {}

  /// Mean of the iterates seen from `average_from` on; empty if the penalty never engaged.
  std::optional<LinearModel> averaged() const {
    if (!engaged_ || averaged_count_ == 0) return std::nullopt;
    return average_;
  }

  double apply(const LinearModel& model, long global_step, LinearModel& grad) override {
    if (global_step % opts_.refresh_steps == 0) refresh(model);
    if (global_step >= average_from_) {
      if (averaged_count_++ == 0) average_ = model;
      const double w = 1.0 / static_cast<double>(averaged_count_);
      for (std::size_t i = 0; i < model.parameter_count(); ++i) {
        average_.parameter(i) += w * (model.parameter(i) - average_.parameter(i));
      }
    }
    for (std::size_t i = 0; i < grad.parameter_count(); ++i) grad.parameter(i) += cached_.parameter(i);
    return value_;
  }

 private:
  void refresh(const LinearModel& model) {
    const std::size_t d = ds_.dim();
    const auto& groups = *ds_.groups;
    scores_.resize(ds_.size());
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < ds_.size(); ++i) {
      const auto x = ds_.features.row(i);
      double f = model.bias[0];
      for (std::size_t j = 0; j < d; ++j) f += model.weights(0, j) * x[j];
      scores_[i] = f;
      mean += f;
      sq += f * f;
    }
    mean /= static_cast<double>(ds_.size());
    const double spread = std::sqrt(std::max(0.0, sq / static_cast<double>(ds_.size()) - mean * mean));
    // the smoothing width follows the score scale, held fixed within a refresh
    const double t = opts_.temperature * std::max(spread, 1e-3);

    // [group][label] sums of the soft prediction and of its derivative times (x, 1)
    double sum[2][2] = {};
    std::int64_t count[2][2] = {};
    std::vector<double> dsum[2][2];
    for (auto& g : dsum)
      for (auto& v : g) v.assign(d + 1, 0.0);

    for (std::size_t i = 0; i < ds_.size(); ++i) {
      const auto x = ds_.features.row(i);
      const double s = sigmoid(scores_[i] / t);
      const int z = groups[i], y = ds_.noisy_labels[i];
      sum[z][y] += s;
      ++count[z][y];
      const double ds = s * (1.0 - s) / t;
      auto& acc = dsum[z][y];
      for (std::size_t j = 0; j < d; ++j) acc[j] += ds * x[j];
      acc[d] += ds;
    }

    cached_ = LinearModel::zeros(d, 2);
    value_ = 0.0;
    for (int y : {kPositive, kNegative}) {
      const double gap = sum[0][y] / count[0][y] - sum[1][y] / count[1][y];
      auto& up = mu_[y][0];
      auto& down = mu_[y][1];
      up = std::clamp(up + opts_.dual_step * (gap - delta_), 0.0, lambda_);
      down = std::clamp(down + opts_.dual_step * (-gap - delta_), 0.0, lambda_);
      value_ += up * (gap - delta_) + down * (-gap - delta_);
      const double weight = up - down;
      if (up > 0.0 || down > 0.0) engaged_ = true;
      if (weight == 0.0) continue;
      for (std::size_t j = 0; j <= d; ++j) {
        cached_.parameter(j) += weight * (dsum[0][y][j] / count[0][y] - dsum[1][y][j] / count[1][y]);
      }
    }
  }

  const LabeledDataset& ds_;
  double delta_;
  double lambda_;
  ConstraintOptions opts_;
  long average_from_;
  double mu_[2][2] = {};  ///< [label][direction]
  bool engaged_ = false;
  long averaged_count_ = 0;
  LinearModel average_;
  std::vector<double> scores_;
  double value_ = 0.0;
  LinearModel cached_;
};

}  // namespace

double RateCell::value() const {
  if (denominator == 0) throw AbsentStatistic("rate cell has no conditioning rows");
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

GroupRates measure_rates(std::span<const int> predictions, const LabeledDataset& ds) {
  require_two_groups(ds);
  if (predictions.size() != ds.size()) throw ConfigError("prediction count differs from row count");
  GroupRates r;
  const auto& groups = *ds.groups;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& c = r.group[groups[i]];
    const bool pos = predictions[i] == kPositive;
    RateCell& noisy = ds.noisy_labels[i] == kPositive ? c.tpr_noisy : c.fpr_noisy;
    ++noisy.denominator;
    noisy.numerator += pos;
    if (ds.has_clean()) {
      RateCell& clean = (*ds.clean_labels)[i] == kPositive ? c.tpr : c.fpr;
      ++clean.denominator;
      clean.numerator += pos;
    }
  }
  return r;
}

GroupRates measure_rates(const LinearModel& model, const LabeledDataset& ds) {
  return measure_rates(predict(model, ds.features), ds);
}

RatePair corrupt_rates_forward(double tpr, double fpr, double e) {
  check_probability(tpr, "tpr");
  check_probability(fpr, "fpr");
  check_rate(e, "e");
  return {(1.0 - e) * tpr + e * fpr, (1.0 - e) * fpr + e * tpr};
}

CorrectionCoeffs correction_coeffs(double e) {
  check_rate(e, "e");
  return {0.5 * e, 0.5 * (1.0 - e), e};
}

CorrectedRates correct_rates(double tpr_noisy, double fpr_noisy, double e_used) {
  const auto c = correction_coeffs(e_used);
  const double denom = c.c2 - c.c1;  // 0.5 (1 - 2e)
  CorrectedRates out;
  out.tpr = (c.c2 * tpr_noisy - c.c1 * fpr_noisy) / denom;
  out.fpr = (c.c2 * fpr_noisy - c.c1 * tpr_noisy) / denom;
  out.out_of_range = out.tpr < 0.0 || out.tpr > 1.0 || out.fpr < 0.0 || out.fpr > 1.0;
  return out;
}

ViolationBound violation_lower_bound(const std::array<RatePair, 2>& noisy, const GroupSymmetricNoise& e,
                                     const GroupSymmetricNoise& e_tilde) {
  check_rate(e.e_a, "e_a");
  check_rate(e.e_b, "e_b");
  check_rate(e_tilde.e_a, "e~_a");
  check_rate(e_tilde.e_b, "e~_b");
  const double err_a = std::abs(e_tilde.e_a - e.e_a);
  const double err_b = std::abs(e_tilde.e_b - e.e_b);
  ViolationBound out;
  if (err_a == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double err_m = std::min(err_a, err_b);
  const double scale_a = (2.0 * e.e_a - 1.0) * (2.0 * e_tilde.e_a - 1.0);
  const double scale_b = (2.0 * e.e_b - 1.0) * (2.0 * e_tilde.e_b - 1.0);
  auto bound = [&](double ra, double rb) { return err_m * std::abs(ra / scale_a - (err_b / err_a) * rb / scale_b); };
  out.tpr_bound = bound(noisy[0].tpr, noisy[1].tpr);
  out.fpr_bound = bound(noisy[0].fpr, noisy[1].fpr);
  return out;
}

ViolationBound violation_lower_bound(const GroupRates& rates, const GroupSymmetricNoise& e,
                                     const GroupSymmetricNoise& e_tilde) {
  return violation_lower_bound({pair_of(rates.group[0], LabelSet::kNoisy), pair_of(rates.group[1], LabelSet::kNoisy)},
                               e, e_tilde);
}

double equal_odds_gap(const RatePair& a, const RatePair& b) {
  return std::max(std::abs(a.tpr - b.tpr), std::abs(a.fpr - b.fpr));
}

double equal_odds_gap(const GroupRates& rates, LabelSet on) {
  return equal_odds_gap(pair_of(rates.group[0], on), pair_of(rates.group[1], on));
}

FairnessReport make_fairness_report(const GroupRates& rates, const std::optional<GroupSymmetricNoise>& e_used,
                                    const std::optional<GroupSymmetricNoise>& e_true) {
  FairnessReport rep;
  rep.rates = rates;
  rep.equal_odds_gap_noisy = equal_odds_gap(rates, LabelSet::kNoisy);
  const auto& a = rates.group[0];
  const auto& b = rates.group[1];
  if (a.tpr.present() && a.fpr.present() && b.tpr.present() && b.fpr.present()) {
    rep.equal_odds_gap_true = equal_odds_gap(rates, LabelSet::kClean);
  }
  if (e_used) {
    const auto na = pair_of(a, LabelSet::kNoisy);
    const auto nb = pair_of(b, LabelSet::kNoisy);
    std::array<CorrectedRates, 2> c{correct_rates(na.tpr, na.fpr, e_used->e_a),
                                    correct_rates(nb.tpr, nb.fpr, e_used->e_b)};
    rep.corrected = c;
    rep.equal_odds_gap_corrected = equal_odds_gap(RatePair{c[0].tpr, c[0].fpr}, RatePair{c[1].tpr, c[1].fpr});
    if (e_true) rep.violation_bounds = violation_lower_bound(rates, *e_true, *e_used);
  }
  return rep;
}

std::string FairnessReport::to_csv() const {
  std::string out = "group,metric,value,numerator,denominator\n";
  auto cell = [&](char g, const char* name, const RateCell& c) {
    if (c.present()) {
      out += fmt::format("{},{},{:.17g},{},{}\n", g, name, c.value(), c.numerator, c.denominator);
    } else {
      out += fmt::format("{},{},,{},{}\n", g, name, c.numerator, c.denominator);
    }
  };
  for (int z = 0; z < 2; ++z) {
    const char g = z == 0 ? 'a' : 'b';
    const auto& c = rates.group[z];
    cell(g, "tpr", c.tpr);
    cell(g, "fpr", c.fpr);
    cell(g, "tpr_noisy", c.tpr_noisy);
    cell(g, "fpr_noisy", c.fpr_noisy);
    if (corrected) {
      out += fmt::format("{},tpr_corrected,{:.17g},,\n", g, (*corrected)[z].tpr);
      out += fmt::format("{},fpr_corrected,{:.17g},,\n", g, (*corrected)[z].fpr);
    }
  }
  if (equal_odds_gap_true) out += fmt::format("all,equal_odds_gap_true,{:.17g},,\n", *equal_odds_gap_true);
  out += fmt::format("all,equal_odds_gap_noisy,{:.17g},,\n", equal_odds_gap_noisy);
  if (equal_odds_gap_corrected) {
    out += fmt::format("all,equal_odds_gap_corrected,{:.17g},,\n", *equal_odds_gap_corrected);
  }
  if (violation_bounds) {
    out += fmt::format("all,tpr_violation_bound,{:.17g},,\n", violation_bounds->tpr_bound);
    out += fmt::format("all,fpr_violation_bound,{:.17g},,\n", violation_bounds->fpr_bound);
  }
  return out;
}

std::string FairnessReport::to_text() const {
  auto show = [](const RateCell& c) { return c.present() ? fmt::format("{:.4f}", c.value()) : std::string("-"); };
  std::string out = fmt::format("{:<6}{:>10}{:>10}{:>10}{:>10}", "group", "tpr", "fpr", "tpr~", "fpr~");
  if (corrected) out += fmt::format("{:>10}{:>10}", "tpr^c", "fpr^c");
  out += "\n";
  for (int z = 0; z < 2; ++z) {
    const auto& c = rates.group[z];
    out += fmt::format("{:<6}{:>10}{:>10}{:>10}{:>10}", z == 0 ? "a" : "b", show(c.tpr), show(c.fpr),
                       show(c.tpr_noisy), show(c.fpr_noisy));
    if (corrected) out += fmt::format("{:>10.4f}{:>10.4f}", (*corrected)[z].tpr, (*corrected)[z].fpr);
    out += "\n";
  }
  if (equal_odds_gap_true) out += fmt::format("equal-odds gap (clean)     {:.4f}\n", *equal_odds_gap_true);
  out += fmt::format("equal-odds gap (noisy)     {:.4f}\n", equal_odds_gap_noisy);
  if (equal_odds_gap_corrected) out += fmt::format("equal-odds gap (corrected) {:.4f}\n", *equal_odds_gap_corrected);
  if (violation_bounds) {
    out += fmt::format("violation bound tpr {:.4f} fpr {:.4f}{}\n", violation_bounds->tpr_bound,
                       violation_bounds->fpr_bound, violation_bounds->degenerate ? " (degenerate)" : "");
  }
  return out;
}

ConstrainedResult constrained_train(const LabeledDataset& ds, const LossSpec& loss, double delta,
                                    const TrainConfig& cfg, const ConstraintOptions& opts) {
  require_two_groups(ds);
  cfg.validate();
  if (!(delta >= 0.0)) throw ConfigError(fmt::format("delta must be >= 0, got {}", delta));
  if (opts.max_rounds < 1 || opts.refresh_steps < 1 || !(opts.lambda_init > 0.0) ||
      !(opts.temperature > 0.0) || !(opts.dual_step > 0.0) ||
      !(opts.target_fraction > 0.0 && opts.target_fraction <= 1.0) || !(opts.lambda_growth >= 1.0)) {
    throw ConfigError("invalid constraint options");
  }
  {
    std::int64_t cells[2][2] = {};
    for (std::size_t i = 0; i < ds.size(); ++i) ++cells[(*ds.groups)[i]][ds.noisy_labels[i]];
    for (int z = 0; z < 2; ++z)
      for (int y = 0; y < 2; ++y)
        if (cells[z][y] == 0) {
          throw DataError(fmt::format("group {} has no label {} rows; constraint undefined", z == 0 ? 'a' : 'b',
                                      to_signed(y)));
        }
  }

  const auto steps_per_epoch = static_cast<long>((ds.size() + cfg.batch_size - 1) / cfg.batch_size);
  ConstrainedResult out;
  double lambda = opts.lambda_init;
  double target = delta * opts.target_fraction;
  for (int round = 1; round <= opts.max_rounds; ++round) {
    // average over the last epoch
    EqualOddsPenalty penalty(ds, target, opts, lambda, steps_per_epoch * (cfg.epochs - 1));
    auto trained = train(ds, loss, cfg, &penalty);
    out.model = penalty.averaged().value_or(std::move(trained.model));
    const auto rates = measure_rates(out.model, ds);
    out.lambda = lambda;
    out.rounds = round;
    const auto a = pair_of(rates.group[0], LabelSet::kNoisy);
    const auto b = pair_of(rates.group[1], LabelSet::kNoisy);
    out.train_tpr_gap = std::abs(a.tpr - b.tpr);
    out.train_fpr_gap = std::abs(a.fpr - b.fpr);
    out.satisfied = out.train_tpr_gap <= delta && out.train_fpr_gap <= delta;
    if (out.satisfied) break;
    lambda *= opts.lambda_growth;
    target *= 0.5;
  }
  return out;
}

}  // namespace noisebal
