#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "noisebal/dataset.hpp"

namespace noisebal {

/// One-layer linear classifier. Binary models have a single output row whose
/// score is the positive-class logit; K-class models have K rows.
struct LinearModel {
  Matrix weights;            ///< outputs × d
  std::vector<double> bias;  ///< outputs
  int classes = 2;

  static LinearModel zeros(std::size_t dim, int classes);

  std::size_t dim() const noexcept { return weights.cols(); }
  std::size_t outputs() const noexcept { return weights.rows(); }
  std::size_t parameter_count() const noexcept { return weights.rows() * (weights.cols() + 1); }

  /// Flat view order: weights row-major, then bias.
  double& parameter(std::size_t i);
  double parameter(std::size_t i) const;

  friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

struct CrossEntropy {};

/// Noise-corrected loss with assumed rates (binary only).
struct Corrected {
  double e_tilde_plus = 0.0;
  double e_tilde_minus = 0.0;
};

struct Peer {
  double alpha = 1.0;
  std::uint64_t peer_seed = 0;
};

using LossSpec = std::variant<CrossEntropy, Corrected, Peer>;

/// Throws ConfigError when the loss does not fit `classes`.
void validate(const LossSpec& loss, int classes);

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.1;
  double l2_penalty = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// log(1 + exp(-margin)).
double logistic_loss(double margin);

/// (1 - e_other) l(y) - e_same l(-y) for observed sign y, where e_same is the
/// rate indexed by y's own sign. No 1/(1 - e+ - e-) normalisation.
double corrected_loss(double loss_pos, double loss_neg, int observed_sign, double e_tilde_plus,
                      double e_tilde_minus);

/// Mini-batch objective: mean per-sample loss plus 0.5 * l2 * |W|^2 (bias excluded).
/// Peer draws for (epoch, step) are fixed by the peer seed, so value and gradient
/// are a deterministic function of the parameters.
class BatchObjective {
 public:
  BatchObjective(const LabeledDataset& ds, LossSpec loss, double l2_penalty);

  /// Returns the value; when `grad` is non-null it is overwritten with the gradient.
  double evaluate(const LinearModel& model, std::span<const std::size_t> rows, int epoch, long step,
                  LinearModel* grad) const;

 private:
  const LabeledDataset& ds_;
  LossSpec loss_;
  double l2_;
};

/// Mean peer loss over `rows`; peers p1, p2 drawn uniformly from the whole set.
double peer_loss_batch(const LinearModel& model, const LabeledDataset& ds,
                       std::span<const std::size_t> rows, double alpha, std::uint64_t peer_seed,
                       int epoch = 0, long step = 0);

/// Extra objective term, evaluated at every SGD step after the data loss.
class StepTerm {
 public:
  virtual ~StepTerm() = default;
  /// Adds the term's gradient into `grad`; returns its value.
  virtual double apply(const LinearModel& model, long global_step, LinearModel& grad) = 0;
};

struct TrainResult {
  LinearModel model;
  std::vector<double> epoch_losses;
};

/// Mini-batch SGD from zero weights on the noisy labels of `ds`. Throws
/// TrainingError with epoch/step on a non-finite loss or parameter.
TrainResult train(const LabeledDataset& ds, const LossSpec& loss, const TrainConfig& cfg,
                  StepTerm* extra = nullptr);

/// Raw scores (outputs columns) for each row.
Matrix decision_function(const LinearModel& model, const Matrix& features);

std::vector<int> predict(const LinearModel& model, const Matrix& features);

struct Evaluation {
  double accuracy = 0.0;
  std::int64_t correct = 0;
  std::int64_t total = 0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::int64_t>> confusion;
};

Evaluation evaluate(const LinearModel& model, const LabeledDataset& ds, bool use_clean);
Evaluation evaluate_predictions(std::span<const int> predicted, std::span<const int> truth, int classes);

enum class RateKind { kBinaryClass, kGroupSymmetric, kMatrix };

/// Counts how often noisy labels differ from clean ones, per clean class, per
/// group, or per (noisy, clean) cell.
NoiseSpec estimate_rates_from_clean(const LabeledDataset& ds, RateKind kind);

void save_model(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace noisebal
