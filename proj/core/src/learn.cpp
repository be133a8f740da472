#include "noisebal/learn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <fmt/os.h>

#include "noisebal/error.hpp"
#include "noisebal/random.hpp"

namespace noisebal {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::uint64_t step_key(int epoch, long step) {
  return (static_cast<std::uint64_t>(epoch) << 32) ^ static_cast<std::uint64_t>(step);
}

void scores(const LinearModel& m, std::span<const double> x, std::span<double> z) {
  for (std::size_t o = 0; o < m.outputs(); ++o) {
    const auto w = m.weights.row(o);
    double s = m.bias[o];
    for (std::size_t j = 0; j < x.size(); ++j) s += w[j] * x[j];
    z[o] = s;
  }
}

void accumulate(LinearModel& g, std::span<const double> x, std::span<const double> dz, double scale) {
  for (std::size_t o = 0; o < g.outputs(); ++o) {
    const double c = dz[o] * scale;
    if (c == 0.0) continue;
    auto w = g.weights.row(o);
    for (std::size_t j = 0; j < x.size(); ++j) w[j] += c * x[j];
    g.bias[o] += c;
  }
}

// Base loss of scores z against `label`; writes d loss / d z into dz.
double base_loss(std::span<const double> z, int label, std::span<double> dz) {
  if (z.size() == 1) {
    const double y = to_signed(label);
    dz[0] = -y * sigmoid(-y * z[0]);
    return logistic_loss(y * z[0]);
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) sum += std::exp(z[k] - zmax);
  const double lse = zmax + std::log(sum);
  for (std::size_t k = 0; k < z.size(); ++k) dz[k] = std::exp(z[k] - lse);
  dz[label] -= 1.0;
  return lse - z[label];
}

}  // namespace

LinearModel LinearModel::zeros(std::size_t dim, int classes) {
  if (classes < 2) throw ConfigError("a classifier needs at least two classes");
  const std::size_t outputs = classes == 2 ? 1 : static_cast<std::size_t>(classes);
  return {Matrix(outputs, dim), std::vector<double>(outputs, 0.0), classes};
}

double& LinearModel::parameter(std::size_t i) {
  const std::size_t nw = weights.rows() * weights.cols();
  return i < nw ? weights.data()[i] : bias[i - nw];
}

double LinearModel::parameter(std::size_t i) const {
  const std::size_t nw = weights.rows() * weights.cols();
  return i < nw ? weights.data()[i] : bias[i - nw];
}

void validate(const LossSpec& loss, int classes) {
  if (const auto* c = std::get_if<Corrected>(&loss)) {
    if (classes != 2) throw ConfigError("the corrected loss is binary only");
    for (double e : {c->e_tilde_plus, c->e_tilde_minus}) {
      if (!(e >= 0.0 && e < 0.5)) throw ConfigError(fmt::format("corrected-loss rate {} outside [0, 0.5)", e));
    }
    if (!(c->e_tilde_plus + c->e_tilde_minus < 1.0)) throw ConfigError("corrected-loss rates must sum below 1");
  } else if (const auto* p = std::get_if<Peer>(&loss)) {
    if (!(p->alpha >= 0.0)) throw ConfigError(fmt::format("peer alpha must be >= 0, got {}", p->alpha));
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(l2_penalty >= 0.0)) throw ConfigError("l2_penalty must be >= 0");
}

double logistic_loss(double margin) {
  return std::max(-margin, 0.0) + std::log1p(std::exp(-std::abs(margin)));
}

double corrected_loss(double loss_pos, double loss_neg, int observed_sign, double e_tilde_plus,
                      double e_tilde_minus) {
  validate(LossSpec{Corrected{e_tilde_plus, e_tilde_minus}}, 2);
  if (observed_sign == 1) return (1.0 - e_tilde_minus) * loss_pos - e_tilde_plus * loss_neg;
  if (observed_sign == -1) return (1.0 - e_tilde_plus) * loss_neg - e_tilde_minus * loss_pos;
  throw ConfigError(fmt::format("observed label must be -1 or +1, got {}", observed_sign));
}

BatchObjective::BatchObjective(const LabeledDataset& ds, LossSpec loss, double l2_penalty)
    : ds_(ds), loss_(loss), l2_(l2_penalty) {
  validate(loss_, ds.classes);
}

double BatchObjective::evaluate(const LinearModel& model, std::span<const std::size_t> rows, int epoch,
                                long step, LinearModel* grad) const {
  if (rows.empty()) throw ConfigError("empty batch");
  if (model.dim() != ds_.dim()) {
    throw ConfigError(fmt::format("model has {} inputs, data has {}", model.dim(), ds_.dim()));
  }
  const std::size_t outputs = model.outputs();
  if (grad) *grad = LinearModel::zeros(model.dim(), model.classes);

  const double scale = 1.0 / static_cast<double>(rows.size());
  std::vector<double> z(outputs), dz(outputs), z2(outputs), dz2(outputs);
  double total = 0.0;

  const auto* corrected = std::get_if<Corrected>(&loss_);
  const auto* peer = std::get_if<Peer>(&loss_);
  Engine peer_rng = make_engine(peer ? peer->peer_seed : 0, "peer", step_key(epoch, step));

  for (std::size_t r : rows) {
    const auto x = ds_.features.row(r);
    const int y = ds_.noisy_labels[r];
    scores(model, x, z);

    if (corrected) {
      const double l_pos = base_loss(z, kPositive, dz);
      const double d_pos = dz[0];
      const double l_neg = base_loss(z, kNegative, dz);
      const double d_neg = dz[0];
      const double ep = corrected->e_tilde_plus, em = corrected->e_tilde_minus;
      double d;
      if (y == kPositive) {
        total += (1.0 - em) * l_pos - ep * l_neg;
        d = (1.0 - em) * d_pos - ep * d_neg;
      } else {
        total += (1.0 - ep) * l_neg - em * l_pos;
        d = (1.0 - ep) * d_neg - em * d_pos;
      }
      if (grad) {
        dz[0] = d;
        accumulate(*grad, x, dz, scale);
      }
      continue;
    }

    total += base_loss(z, y, dz);
    if (grad) accumulate(*grad, x, dz, scale);

    if (peer) {
      const std::size_t p1 = uniform_index(peer_rng, ds_.size());
      const std::size_t p2 = uniform_index(peer_rng, ds_.size());
      if (peer->alpha != 0.0) {
        const auto xp = ds_.features.row(p1);
        scores(model, xp, z2);
        total -= peer->alpha * base_loss(z2, ds_.noisy_labels[p2], dz2);
        if (grad) accumulate(*grad, xp, dz2, -peer->alpha * scale);
      }
    }
  }

  double value = total * scale;
  if (l2_ > 0.0) {
    double sq = 0.0;
    const auto w = model.weights.data();
    for (double v : w) sq += v * v;
    value += 0.5 * l2_ * sq;
    if (grad) {
      auto g = grad->weights.data();
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += l2_ * w[i];
    }
  }
  return value;
}

double peer_loss_batch(const LinearModel& model, const LabeledDataset& ds,
                       std::span<const std::size_t> rows, double alpha, std::uint64_t peer_seed,
                       int epoch, long step) {
  if (rows.size() < 2) throw ConfigError(fmt::format("peer loss needs a batch of at least 2, got {}", rows.size()));
  BatchObjective obj(ds, Peer{alpha, peer_seed}, 0.0);
  return obj.evaluate(model, rows, epoch, step, nullptr);
}

TrainResult train(const LabeledDataset& ds, const LossSpec& loss, const TrainConfig& cfg, StepTerm* extra) {
  cfg.validate();
  if (ds.size() == 0) throw ConfigError("cannot train on an empty dataset");
  validate(loss, ds.classes);
  if (std::holds_alternative<Peer>(loss) && std::min(cfg.batch_size, ds.size()) < 2) {
    throw ConfigError("peer loss needs batches of at least 2");
  }

  BatchObjective objective(ds, loss, cfg.l2_penalty);
  TrainResult result{LinearModel::zeros(ds.dim(), ds.classes), {}};
  LinearModel& model = result.model;
  LinearModel grad;

  std::vector<std::size_t> order(ds.size());
  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Engine shuffle_rng = make_engine(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    long steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++steps, ++global_step) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      double value = objective.evaluate(model, batch, epoch, steps, &grad);
      if (extra) value += extra->apply(model, global_step, grad);
      if (!std::isfinite(value)) {
        throw TrainingError(fmt::format("non-finite loss at epoch {}, step {}", epoch, steps), epoch, steps);
      }
      epoch_loss += value;
      for (std::size_t i = 0; i < model.parameter_count(); ++i) {
        double& p = model.parameter(i);
        p -= cfg.learning_rate * grad.parameter(i);
        if (!std::isfinite(p)) {
          throw TrainingError(fmt::format("non-finite parameter at epoch {}, step {}", epoch, steps), epoch, steps);
        }
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(steps));
  }
  return result;
}

Matrix decision_function(const LinearModel& model, const Matrix& features) {
  if (features.cols() != model.dim()) {
    throw ConfigError(fmt::format("model has {} inputs, data has {}", model.dim(), features.cols()));
  }
  Matrix out(features.rows(), model.outputs());
  for (std::size_t i = 0; i < features.rows(); ++i) scores(model, features.row(i), out.row(i));
  return out;
}

std::vector<int> predict(const LinearModel& model, const Matrix& features) {
  const Matrix z = decision_function(model, features);
  std::vector<int> out(features.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto zi = z.row(i);
    if (zi.size() == 1) {
      out[i] = zi[0] > 0.0 ? kPositive : kNegative;
    } else {
      out[i] = static_cast<int>(std::max_element(zi.begin(), zi.end()) - zi.begin());
    }
  }
  return out;
}

Evaluation evaluate_predictions(std::span<const int> predicted, std::span<const int> truth, int classes) {
  if (predicted.size() != truth.size()) throw ConfigError("prediction and label counts differ");
  Evaluation ev;
  ev.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++ev.confusion[truth[i]][predicted[i]];
    if (truth[i] == predicted[i]) ++ev.correct;
  }
  ev.total = static_cast<std::int64_t>(truth.size());
  ev.accuracy = ev.total ? static_cast<double>(ev.correct) / static_cast<double>(ev.total) : 0.0;
  return ev;
}

Evaluation evaluate(const LinearModel& model, const LabeledDataset& ds, bool use_clean) {
  if (use_clean && !ds.has_clean()) throw DataError("clean labels requested but absent");
  const auto pred = predict(model, ds.features);
  return evaluate_predictions(pred, use_clean ? *ds.clean_labels : ds.noisy_labels, ds.classes);
}

NoiseSpec estimate_rates_from_clean(const LabeledDataset& ds, RateKind kind) {
  if (!ds.has_clean()) throw DataError("rate estimation needs clean labels");
  const auto& clean = *ds.clean_labels;
  const auto& noisy = ds.noisy_labels;
  auto ratio = [](std::int64_t num, std::int64_t den, const std::string& what) {
    if (den == 0) throw DataError(fmt::format("no rows for {}", what));
    return static_cast<double>(num) / static_cast<double>(den);
  };

  switch (kind) {
    case RateKind::kBinaryClass: {
      if (ds.classes != 2) throw ConfigError("binary rates need binary labels");
      std::int64_t flips[2] = {0, 0}, counts[2] = {0, 0};
      for (std::size_t i = 0; i < clean.size(); ++i) {
        ++counts[clean[i]];
        if (noisy[i] != clean[i]) ++flips[clean[i]];
      }
      return BinaryClassNoise{ratio(flips[kNegative], counts[kNegative], "clean class -1"),
                              ratio(flips[kPositive], counts[kPositive], "clean class +1")};
    }
    case RateKind::kGroupSymmetric: {
      if (!ds.has_groups() || ds.group_count != 2) throw ConfigError("group rates need two groups");
      std::int64_t flips[2] = {0, 0}, counts[2] = {0, 0};
      const auto& groups = *ds.groups;
      for (std::size_t i = 0; i < clean.size(); ++i) {
        ++counts[groups[i]];
        if (noisy[i] != clean[i]) ++flips[groups[i]];
      }
      return GroupSymmetricNoise{ratio(flips[0], counts[0], "group a"), ratio(flips[1], counts[1], "group b")};
    }
    case RateKind::kMatrix: {
      const auto k = static_cast<std::size_t>(ds.classes);
      Matrix cells(k, k);
      std::vector<std::int64_t> counts(k, 0);
      for (std::size_t i = 0; i < clean.size(); ++i) {
        cells(noisy[i], clean[i]) += 1.0;
        ++counts[clean[i]];
      }
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t r = 0; r < k; ++r) {
          cells(r, c) = ratio(static_cast<std::int64_t>(cells(r, c)), counts[c], fmt::format("clean class {}", c));
        }
      }
      return MatrixNoise{std::move(cells)};
    }
  }
  throw ConfigError("unknown rate kind");
}

void save_model(const LinearModel& model, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("noisebal-linear-model 1\n");
  out.print("classes {}\noutputs {}\ndim {}\n", model.classes, model.outputs(), model.dim());
  for (std::size_t o = 0; o < model.outputs(); ++o) {
    out.print("w");
    for (double v : model.weights.row(o)) out.print(" {:.17g}", v);
    out.print("\nb {:.17g}\n", model.bias[o]);
  }
}

LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open model file {}", path.string()));
  auto expect = [&](const std::string& key) {
    std::string tok;
    if (!(in >> tok) || tok != key) throw DataError(fmt::format("model file: expected '{}'", key));
  };
  int version = 0, classes = 0;
  std::size_t outputs = 0, dim = 0;
  expect("noisebal-linear-model");
  in >> version;
  if (version != 1) throw DataError(fmt::format("model file version {} not supported", version));
  expect("classes");
  in >> classes;
  expect("outputs");
  in >> outputs;
  expect("dim");
  in >> dim;
  if (!in) throw DataError("model file: malformed header");
  LinearModel m = LinearModel::zeros(dim, classes);
  if (m.outputs() != outputs) throw DataError("model file: output count does not match classes");
  for (std::size_t o = 0; o < outputs; ++o) {
    expect("w");
    for (auto& v : m.weights.row(o)) in >> v;
    expect("b");
    in >> m.bias[o];
    if (!in) throw DataError(fmt::format("model file: bad parameters for output {}", o));
  }
  return m;
}

}  // namespace noisebal
