#include "noisebal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "noisebal/error.hpp"
#include "noisebal/random.hpp"

namespace noisebal {

namespace {

struct MethodName {
  Method method;
  const char* name;
};

constexpr MethodName kMethodNames[] = {
    {Method::kCE, "CE"},
    {Method::kMisSL, "MisSL"},
    {Method::kEstSL, "EstSL"},
    {Method::kPeer, "Peer"},
    {Method::kCENoisePlus, "CE+NoisePlus"},
    {Method::kPeerNoisePlus, "Peer+NoisePlus"},
    {Method::kLR, "LR"},
    {Method::kCEGroupBalance, "CE+GroupBalance"},
    {Method::kPeerGroupBalance, "Peer+GroupBalance"},
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, v));
  }
  return out;
}

template <class Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, v));
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kBinary: return "binary";
    case NoiseKind::kGroup: return "group";
    case NoiseKind::kMatrix: return "matrix";
    case NoiseKind::kUniformDiagonal: return "uniform_diagonal";
  }
  return "?";
}

NoiseKind parse_noise_kind(const std::string& s) {
  for (auto k : {NoiseKind::kNone, NoiseKind::kBinary, NoiseKind::kGroup, NoiseKind::kMatrix,
                 NoiseKind::kUniformDiagonal}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError(fmt::format("unknown noise kind '{}'", s));
}

const char* to_string(NeighborBackend b) {
  switch (b) {
    case NeighborBackend::kBruteForce: return "brute_force";
    case NeighborBackend::kKdTree: return "kd_tree";
    case NeighborBackend::kAuto: return "auto";
  }
  return "?";
}

NeighborBackend parse_backend(const std::string& s) {
  for (auto b : {NeighborBackend::kBruteForce, NeighborBackend::kKdTree, NeighborBackend::kAuto}) {
    if (s == to_string(b)) return b;
  }
  throw ConfigError(fmt::format("unknown neighbour backend '{}'", s));
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt::format("{}", v[i]);
  return out;
}

// Rethrows module errors with the run they came from prepended.
template <class F>
auto with_context(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const TrainingError& e) {
    throw TrainingError(where + ": " + e.what(), e.epoch(), e.step());
  } catch (const AbsentStatistic& e) {
    throw AbsentStatistic(where + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

bool allowed(Pipeline p, Method m) {
  switch (p) {
    case Pipeline::kUnconstrained:
      return m == Method::kCE || m == Method::kMisSL || m == Method::kEstSL || m == Method::kPeer ||
             m == Method::kCENoisePlus || m == Method::kPeerNoisePlus;
    case Pipeline::kConstrained:
      return m == Method::kLR || m == Method::kCE || m == Method::kPeer || m == Method::kCEGroupBalance ||
             m == Method::kPeerGroupBalance;
    case Pipeline::kMultiClass:
      return m == Method::kCE || m == Method::kPeer || m == Method::kCENoisePlus || m == Method::kPeerNoisePlus;
  }
  return false;
}

bool uses_peer(Method m) {
  return m == Method::kPeer || m == Method::kPeerNoisePlus || m == Method::kPeerGroupBalance;
}

// ---------------------------------------------------------------------------
// Per-seed data preparation

struct Prepared {
  LabeledDataset train_noisy;
  LabeledDataset test;
};

std::uint64_t data_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.data.data_seed ? *cfg.data.data_seed : derive_seed(seed, "data");
}

NoiseSpec noise_spec(const ExperimentConfig& cfg, int classes, std::uint64_t seed) {
  const auto& n = cfg.noise;
  switch (n.kind) {
    case NoiseKind::kNone: {
      if (cfg.pipeline == Pipeline::kConstrained) return GroupSymmetricNoise{0.0, 0.0};
      if (classes == 2) return BinaryClassNoise{0.0, 0.0};
      Matrix t(classes, classes);
      for (int k = 0; k < classes; ++k) t(k, k) = 1.0;
      return MatrixNoise{t};
    }
    case NoiseKind::kBinary: return BinaryClassNoise{n.e_minus, n.e_plus};
    case NoiseKind::kGroup: return GroupSymmetricNoise{n.e_a, n.e_b};
    case NoiseKind::kMatrix: return generate_noise_matrix(classes, n.gap, derive_seed(seed, "matrix"));
    case NoiseKind::kUniformDiagonal: {
      Matrix t(classes, classes);
      for (int k = 0; k < classes; ++k) {
        const double e = n.e_min + n.gap * k / static_cast<double>(classes - 1);
        for (int j = 0; j < classes; ++j) t(j, k) = j == k ? 1.0 - e : e / (classes - 1);
      }
      return MatrixNoise{t};
    }
  }
  throw ConfigError("unhandled noise kind");
}

Prepared prepare(const ExperimentConfig& cfg, const std::optional<LabeledDataset>& loaded, std::uint64_t seed,
                 std::vector<std::string>& warnings) {
  LabeledDataset full;
  if (loaded) {
    full = *loaded;
  } else {
    SyntheticConfig s = cfg.data.synthetic;
    s.seed = data_seed(cfg, seed);
    full = generate_blobs(s);
  }
  if (!full.has_clean()) throw DataError("experiments need clean labels for noise injection and testing");

  std::vector<std::size_t> order(full.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine rng = make_engine(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::ceil(cfg.data.test_fraction * static_cast<double>(full.size())));
  std::vector<std::size_t> test_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test_rows.begin(), test_rows.end());
  std::sort(train_rows.begin(), train_rows.end());
#ifndef NDEBUG
  {
    std::vector<char> seen(full.size(), 0);
    for (auto r : train_rows) seen[r] |= 1;
    for (auto r : test_rows) seen[r] |= 2;
    for (char s : seen) assert(s == 1 || s == 2);
  }
#endif

  const NoiseSpec spec = noise_spec(cfg, full.classes, seed);
  if (const auto* m = std::get_if<MatrixNoise>(&spec)) {
    for (std::size_t k = 0; k < m->transition.rows(); ++k) {
      if (m->transition(k, k) < 0.4) {
        warnings.push_back(fmt::format("seed {}: noise matrix diagonal {} is {:.3f} (< 0.4)", seed, k,
                                       m->transition(k, k)));
      }
    }
  }
  Prepared p;
  p.test = full.subset(test_rows);
  p.train_noisy = inject_noise(full.subset(train_rows), spec, derive_seed(seed, "noise"));
  return p;
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(seed, "train");
  return t;
}

BalanceOptions balance_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  BalanceOptions b = cfg.balance;
  b.seed = derive_seed(seed, "balance");
  return b;
}

// Best alpha on a noisy-label holdout, ties to the earlier grid entry.
double pick_alpha(const ExperimentConfig& cfg, const LabeledDataset& train_noisy, std::uint64_t seed) {
  if (cfg.peer_alpha_grid.empty()) return cfg.peer_alpha;
  std::vector<std::size_t> order(train_noisy.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine rng = make_engine(seed, "alpha-holdout");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t cut = order.size() / 5;
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(fit.begin(), fit.end());
  const auto fit_set = train_noisy.subset(fit);
  const auto hold_set = train_noisy.subset(hold);
  double best_alpha = cfg.peer_alpha_grid.front(), best = -1.0;
  for (double a : cfg.peer_alpha_grid) {
    const auto m = train(fit_set, Peer{a, derive_seed(seed, "peer")}, train_config(cfg, seed)).model;
    const double acc = evaluate(m, hold_set, false).accuracy;
    if (acc > best) {
      best = acc;
      best_alpha = a;
    }
  }
  return best_alpha;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// A balancer result computed once per seed and shared by the methods that need it.
struct CachedBalance {
  std::optional<BalanceResult> result;
  double seconds = 0.0;
};

using SeedRunner = std::function<std::vector<RunRow>(std::uint64_t, std::vector<std::string>&)>;

RunReport run_seeds(const ExperimentConfig& cfg, const SeedRunner& one_seed) {
  RunReport report;
  report.config = cfg;
  const std::size_t n = cfg.seeds.size();
  std::vector<std::vector<RunRow>> rows(n);
  std::vector<std::vector<std::string>> warnings(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      rows[i] = one_seed(cfg.seeds[i], warnings[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (cfg.threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    std::atomic<std::size_t> next{0};
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n);
    for (std::size_t t = 0; t < count; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) work(i);
      });
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    report.rows.insert(report.rows.end(), rows[i].begin(), rows[i].end());
    report.warnings.insert(report.warnings.end(), warnings[i].begin(), warnings[i].end());
  }
  return report;
}

std::optional<LabeledDataset> load_source(const ExperimentConfig& cfg) {
  if (!cfg.data.csv) return std::nullopt;
  return with_context(fmt::format("loading {}", cfg.data.csv->string()), [&] { return load_csv(*cfg.data.csv); });
}

void check_shape(const ExperimentConfig& cfg, const std::optional<LabeledDataset>& loaded) {
  const int classes = loaded ? loaded->classes : cfg.data.synthetic.classes;
  const int groups = loaded ? loaded->group_count : cfg.data.synthetic.groups;
  switch (cfg.pipeline) {
    case Pipeline::kUnconstrained:
      if (classes != 2) throw ConfigError(fmt::format("unconstrained pipeline needs binary labels, got {} classes", classes));
      break;
    case Pipeline::kConstrained:
      if (classes != 2) throw ConfigError("constrained pipeline needs binary labels");
      if (groups != 2) throw ConfigError(fmt::format("constrained pipeline needs two groups, got {}", groups));
      break;
    case Pipeline::kMultiClass:
      if (classes < 3) throw ConfigError(fmt::format("multiclass pipeline needs at least 3 classes, got {}", classes));
      break;
  }
}

// Shared by the unconstrained and multi-class pipelines; only the balancer differs.
RunReport run_balancing_pipeline(const ExperimentConfig& cfg, Pipeline expected) {
  cfg.validate();
  if (cfg.pipeline != expected) throw ConfigError("pipeline mismatch");
  const auto loaded = load_source(cfg);
  check_shape(cfg, loaded);

  return run_seeds(cfg, [&](std::uint64_t seed, std::vector<std::string>& warnings) {
    const auto data = with_context(fmt::format("seed {}", seed), [&] { return prepare(cfg, loaded, seed, warnings); });
    const TrainConfig tcfg = train_config(cfg, seed);
    const std::uint64_t peer_seed = derive_seed(seed, "peer");
    CachedBalance balanced;
    std::optional<double> alpha;
    std::vector<RunRow> rows;

    for (Method method : cfg.methods) {
      const auto where = fmt::format("seed {}, method {}", seed, to_string(method));
      rows.push_back(with_context(where, [&] {
        RunRow row;
        row.method = method;
        row.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        double extra_seconds = 0.0;
        const LabeledDataset* fit_on = &data.train_noisy;
        if (method == Method::kCENoisePlus || method == Method::kPeerNoisePlus) {
          if (!balanced.result) {
            const auto b0 = std::chrono::steady_clock::now();
            balanced.result = expected == Pipeline::kMultiClass
                                  ? balance_multiclass(data.train_noisy, balance_options(cfg, seed))
                                  : noise_plus(data.train_noisy, balance_options(cfg, seed));
            balanced.seconds = seconds_since(b0);
          } else {
            extra_seconds = balanced.seconds;
          }
          fit_on = &balanced.result->balanced_dataset;
          row.epsilon = expected == Pipeline::kMultiClass
                            ? *std::max_element(balanced.result->epsilons.begin(), balanced.result->epsilons.end())
                            : balanced.result->epsilon_found;
          row.iterations = balanced.result->iterations;
          row.balance_success = balanced.result->success;
        }

        LossSpec loss = CrossEntropy{};
        if (uses_peer(method)) {
          if (!alpha) alpha = pick_alpha(cfg, data.train_noisy, seed);
          loss = Peer{*alpha, peer_seed};
          row.peer_alpha = *alpha;
        } else if (method == Method::kMisSL) {
          const double ep = cfg.noise.e_plus, em = cfg.noise.e_minus;
          Engine rng = make_engine(seed, "missl");
          const double lo = std::max(0.0, ep - cfg.missl_radius), hi = std::min(0.49, ep + cfg.missl_radius);
          const double tilde_plus = lo + (hi - lo) * uniform01(rng);
          const double tilde_minus = std::clamp(ep + em - tilde_plus, 0.0, 0.49);
          loss = Corrected{tilde_plus, tilde_minus};
        } else if (method == Method::kEstSL) {
          const auto est = std::get<BinaryClassNoise>(estimate_rates_from_clean(data.train_noisy, RateKind::kBinaryClass));
          loss = Corrected{std::min(est.e_plus, 0.49), std::min(est.e_minus, 0.49)};
        }
        const auto model = train(*fit_on, loss, tcfg).model;
        row.accuracy = evaluate(model, data.test, true).accuracy;
        row.seconds = seconds_since(t0) + extra_seconds;
        return row;
      }));
    }
    return rows;
  });
}

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string(); }

std::string fixed4(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("-"); }

std::string mean_std(double mean, const std::optional<double>& sd) {
  return sd ? fmt::format("{:.4f} +/- {:.4f}", mean, *sd) : fmt::format("{:.4f}", mean);
}

// Left-aligned columns, two spaces apart, each as wide as its longest cell.
std::string aligned(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      line += row[c];
      if (c + 1 < row.size()) line += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out += line + "\n";
  }
  return out;
}

std::string noise_summary(const NoiseConfig& n) {
  switch (n.kind) {
    case NoiseKind::kNone: return "noise none";
    case NoiseKind::kBinary: return fmt::format("noise e-={} e+={}", n.e_minus, n.e_plus);
    case NoiseKind::kGroup: return fmt::format("noise e_a={} e_b={}", n.e_a, n.e_b);
    case NoiseKind::kMatrix: return fmt::format("noise matrix gap={}", n.gap);
    case NoiseKind::kUniformDiagonal: return fmt::format("noise uniform_diagonal e_min={} gap={}", n.e_min, n.gap);
  }
  return {};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw DataError(fmt::format("write to {} failed", path.string()));
}

}  // namespace

std::string to_string(Pipeline p) {
  switch (p) {
    case Pipeline::kUnconstrained: return "unconstrained";
    case Pipeline::kConstrained: return "constrained";
    case Pipeline::kMultiClass: return "multiclass";
  }
  return "?";
}

std::string to_string(Method m) {
  for (const auto& e : kMethodNames) {
    if (e.method == m) return e.name;
  }
  return "?";
}

Pipeline parse_pipeline(const std::string& s) {
  for (auto p : {Pipeline::kUnconstrained, Pipeline::kConstrained, Pipeline::kMultiClass}) {
    if (s == to_string(p)) return p;
  }
  throw ConfigError(fmt::format("unknown pipeline '{}'", s));
}

Method parse_method(const std::string& s) {
  for (const auto& e : kMethodNames) {
    if (s == e.name) return e.method;
  }
  throw ConfigError(fmt::format("unknown method '{}'", s));
}

// ---------------------------------------------------------------------------
// Config

namespace {

ExperimentConfig defaults() {
  ExperimentConfig c;
  auto& s = c.data.synthetic;
  s.n = 20000;
  s.d = 20;
  s.cluster_count = 8;
  s.cluster_spread = 1.0;
  s.separation = 3.5;
  return c;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto& s = data.synthetic;
  auto d = [&] { return to_double(key, value); };
  auto u = [&] { return to_int<std::uint64_t>(key, value); };
  auto i = [&] { return to_int<int>(key, value); };

  if (key == "pipeline") pipeline = parse_pipeline(value);
  else if (key == "methods") {
    methods.clear();
    for (const auto& m : split_list(value)) methods.push_back(parse_method(m));
  } else if (key == "seeds") {
    seeds.clear();
    for (const auto& v : split_list(value)) seeds.push_back(to_int<std::uint64_t>(key, v));
  } else if (key == "threads") threads = i();
  else if (key == "out_dir") out_dir = value;
  else if (key == "data.csv") data.csv = value.empty() ? std::nullopt : std::optional<std::filesystem::path>(value);
  else if (key == "data.seed") data.data_seed = value.empty() ? std::nullopt : std::optional<std::uint64_t>(u());
  else if (key == "data.test_fraction") data.test_fraction = d();
  else if (key == "data.n") s.n = u();
  else if (key == "data.d") s.d = u();
  else if (key == "data.clusters") s.cluster_count = i();
  else if (key == "data.spread") s.cluster_spread = d();
  else if (key == "data.separation") s.separation = d();
  else if (key == "data.class_balance") s.class_balance = d();
  else if (key == "data.classes") s.classes = i();
  else if (key == "data.groups") s.groups = i();
  else if (key == "data.group_balance") s.group_balance = d();
  else if (key == "data.group_shift") s.group_shift = d();
  else if (key == "data.group_feature") s.group_feature = to_bool(key, value);
  else if (key == "noise.kind") noise.kind = parse_noise_kind(value);
  else if (key == "noise.e_minus") noise.e_minus = d();
  else if (key == "noise.e_plus") noise.e_plus = d();
  else if (key == "noise.e_a") noise.e_a = d();
  else if (key == "noise.e_b") noise.e_b = d();
  else if (key == "noise.gap") noise.gap = d();
  else if (key == "noise.e_min") noise.e_min = d();
  else if (key == "balance.gamma") balance.gamma = d();
  else if (key == "balance.epsilon_r_init") balance.epsilon_r_init = d();
  else if (key == "balance.max_iterations") balance.max_iterations = i();
  else if (key == "balance.backend") balance.backend = parse_backend(value);
  else if (key == "train.epochs") train.epochs = i();
  else if (key == "train.batch_size") train.batch_size = u();
  else if (key == "train.learning_rate") train.learning_rate = d();
  else if (key == "train.l2_penalty") train.l2_penalty = d();
  else if (key == "peer.alpha") peer_alpha = d();
  else if (key == "peer.alpha_grid") {
    peer_alpha_grid.clear();
    for (const auto& v : split_list(value)) peer_alpha_grid.push_back(to_double(key, v));
  } else if (key == "missl.radius") missl_radius = d();
  else if (key == "constraint.delta") delta = d();
  else if (key == "constraint.lambda_init") constraint.lambda_init = d();
  else if (key == "constraint.lambda_growth") constraint.lambda_growth = d();
  else if (key == "constraint.max_rounds") constraint.max_rounds = i();
  else if (key == "constraint.refresh_steps") constraint.refresh_steps = i();
  else if (key == "constraint.temperature") constraint.temperature = d();
  else if (key == "constraint.dual_step") constraint.dual_step = d();
  else if (key == "constraint.target_fraction") constraint.target_fraction = d();
  else throw ConfigError(fmt::format("unknown key '{}'", key));
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg = defaults();
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", number));
    try {
      cfg.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", number, e.what()));
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("no methods selected");
  if (seeds.empty()) throw ConfigError("no seeds given");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (!allowed(pipeline, methods[i])) {
      throw ConfigError(fmt::format("method {} does not run in the {} pipeline", to_string(methods[i]),
                                    to_string(pipeline)));
    }
    if (std::find(methods.begin(), methods.begin() + static_cast<std::ptrdiff_t>(i), methods[i]) !=
        methods.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError(fmt::format("method {} listed twice", to_string(methods[i])));
    }
  }
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) throw ConfigError("data.test_fraction must be in (0, 1)");
  switch (pipeline) {
    case Pipeline::kUnconstrained:
      if (noise.kind != NoiseKind::kBinary && noise.kind != NoiseKind::kNone) {
        throw ConfigError("unconstrained pipeline takes binary or no noise");
      }
      if (std::find(methods.begin(), methods.end(), Method::kMisSL) != methods.end() && noise.kind != NoiseKind::kBinary) {
        throw ConfigError("MisSL perturbs binary class rates; set noise.kind = binary");
      }
      break;
    case Pipeline::kConstrained:
      if (noise.kind != NoiseKind::kGroup && noise.kind != NoiseKind::kNone) {
        throw ConfigError("constrained pipeline takes group or no noise");
      }
      if (!(delta >= 0.0)) throw ConfigError("constraint.delta must be >= 0");
      break;
    case Pipeline::kMultiClass:
      if (noise.kind != NoiseKind::kMatrix && noise.kind != NoiseKind::kUniformDiagonal && noise.kind != NoiseKind::kNone) {
        throw ConfigError("multiclass pipeline takes matrix, uniform_diagonal or no noise");
      }
      break;
  }
  train.validate();
  if (!(peer_alpha >= 0.0)) throw ConfigError("peer.alpha must be >= 0");
  for (double a : peer_alpha_grid) {
    if (!(a >= 0.0)) throw ConfigError("peer.alpha_grid values must be >= 0");
  }
  if (!data.csv) data.synthetic.validate();
}

std::string ExperimentConfig::resolved() const {
  const auto& s = data.synthetic;
  std::vector<std::string> method_names;
  for (auto m : methods) method_names.push_back(to_string(m));
  std::string out;
  auto put = [&](const char* key, const std::string& v) { out += fmt::format("{} = {}\n", key, v); };
  put("pipeline", to_string(pipeline));
  put("methods", join(method_names));
  put("seeds", join(seeds));
  put("threads", fmt::format("{}", threads));
  put("out_dir", out_dir.string());
  if (data.csv) put("data.csv", data.csv->string());
  if (data.data_seed) put("data.seed", fmt::format("{}", *data.data_seed));
  put("data.test_fraction", fmt::format("{}", data.test_fraction));
  put("data.n", fmt::format("{}", s.n));
  put("data.d", fmt::format("{}", s.d));
  put("data.clusters", fmt::format("{}", s.cluster_count));
  put("data.spread", fmt::format("{}", s.cluster_spread));
  put("data.separation", fmt::format("{}", s.separation));
  put("data.class_balance", fmt::format("{}", s.class_balance));
  put("data.classes", fmt::format("{}", s.classes));
  put("data.groups", fmt::format("{}", s.groups));
  put("data.group_balance", fmt::format("{}", s.group_balance));
  put("data.group_shift", fmt::format("{}", s.group_shift));
  put("data.group_feature", s.group_feature ? "true" : "false");
  put("noise.kind", to_string(noise.kind));
  put("noise.e_minus", fmt::format("{}", noise.e_minus));
  put("noise.e_plus", fmt::format("{}", noise.e_plus));
  put("noise.e_a", fmt::format("{}", noise.e_a));
  put("noise.e_b", fmt::format("{}", noise.e_b));
  put("noise.gap", fmt::format("{}", noise.gap));
  put("noise.e_min", fmt::format("{}", noise.e_min));
  put("balance.gamma", fmt::format("{}", balance.gamma));
  put("balance.epsilon_r_init", fmt::format("{}", balance.epsilon_r_init));
  put("balance.max_iterations", fmt::format("{}", balance.max_iterations));
  put("balance.backend", to_string(balance.backend));
  put("train.epochs", fmt::format("{}", train.epochs));
  put("train.batch_size", fmt::format("{}", train.batch_size));
  put("train.learning_rate", fmt::format("{}", train.learning_rate));
  put("train.l2_penalty", fmt::format("{}", train.l2_penalty));
  put("peer.alpha", fmt::format("{}", peer_alpha));
  put("peer.alpha_grid", join(peer_alpha_grid));
  put("missl.radius", fmt::format("{}", missl_radius));
  put("constraint.delta", fmt::format("{}", delta));
  put("constraint.lambda_init", fmt::format("{}", constraint.lambda_init));
  put("constraint.lambda_growth", fmt::format("{}", constraint.lambda_growth));
  put("constraint.max_rounds", fmt::format("{}", constraint.max_rounds));
  put("constraint.refresh_steps", fmt::format("{}", constraint.refresh_steps));
  put("constraint.temperature", fmt::format("{}", constraint.temperature));
  put("constraint.dual_step", fmt::format("{}", constraint.dual_step));
  put("constraint.target_fraction", fmt::format("{}", constraint.target_fraction));
  return out;
}

// ---------------------------------------------------------------------------
// Pipelines

RunReport run_unconstrained(const ExperimentConfig& cfg) {
  return run_balancing_pipeline(cfg, Pipeline::kUnconstrained);
}

RunReport run_multiclass(const ExperimentConfig& cfg) { return run_balancing_pipeline(cfg, Pipeline::kMultiClass); }

RunReport run_constrained(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.pipeline != Pipeline::kConstrained) throw ConfigError("pipeline mismatch");
  const auto loaded = load_source(cfg);
  check_shape(cfg, loaded);

  return run_seeds(cfg, [&](std::uint64_t seed, std::vector<std::string>& warnings) {
    const auto data = with_context(fmt::format("seed {}", seed), [&] { return prepare(cfg, loaded, seed, warnings); });
    const TrainConfig tcfg = train_config(cfg, seed);
    const std::uint64_t peer_seed = derive_seed(seed, "peer");
    CachedBalance balanced;
    std::optional<double> alpha;
    std::vector<RunRow> rows;

    for (Method method : cfg.methods) {
      const auto where = fmt::format("seed {}, method {}", seed, to_string(method));
      rows.push_back(with_context(where, [&] {
        RunRow row;
        row.method = method;
        row.seed = seed;
        const auto t0 = std::chrono::steady_clock::now();
        double extra_seconds = 0.0;
        const LabeledDataset* fit_on = &data.train_noisy;
        if (method == Method::kCEGroupBalance || method == Method::kPeerGroupBalance) {
          if (!balanced.result) {
            const auto b0 = std::chrono::steady_clock::now();
            balanced.result = balance_groups(data.train_noisy, balance_options(cfg, seed));
            balanced.seconds = seconds_since(b0);
          } else {
            extra_seconds = balanced.seconds;
          }
          fit_on = &balanced.result->balanced_dataset;
          row.epsilon = balanced.result->epsilon_found;
          row.iterations = balanced.result->iterations;
          row.balance_success = balanced.result->success;
        }
        LossSpec loss = CrossEntropy{};
        if (uses_peer(method)) {
          if (!alpha) alpha = pick_alpha(cfg, data.train_noisy, seed);
          loss = Peer{*alpha, peer_seed};
          row.peer_alpha = *alpha;
        }
        const LinearModel model = method == Method::kLR
                                      ? train(*fit_on, loss, tcfg).model
                                      : constrained_train(*fit_on, loss, cfg.delta, tcfg, cfg.constraint).model;
        row.accuracy = evaluate(model, data.test, true).accuracy;
        row.equal_odds_gap = equal_odds_gap(measure_rates(model, data.test), LabelSet::kClean);
        row.seconds = seconds_since(t0) + extra_seconds;
        return row;
      }));
    }
    return rows;
  });
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.pipeline) {
    case Pipeline::kUnconstrained: return run_unconstrained(cfg);
    case Pipeline::kConstrained: return run_constrained(cfg);
    case Pipeline::kMultiClass: return run_multiclass(cfg);
  }
  throw ConfigError("unknown pipeline");
}

// ---------------------------------------------------------------------------
// Reports

double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("mean of an empty column");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::optional<double> sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return std::nullopt;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<AggregateRow> RunReport::aggregate() const {
  std::vector<AggregateRow> out;
  for (Method m : config.methods) {
    std::vector<double> acc, gap, eps, its;
    for (const auto& r : rows) {
      if (r.method != m) continue;
      acc.push_back(r.accuracy);
      if (r.equal_odds_gap) gap.push_back(*r.equal_odds_gap);
      if (r.epsilon) eps.push_back(*r.epsilon);
      if (r.iterations) its.push_back(*r.iterations);
    }
    if (acc.empty()) continue;
    AggregateRow a;
    a.method = m;
    a.runs = static_cast<int>(acc.size());
    a.accuracy_mean = mean_of(acc);
    a.accuracy_std = sample_std(acc);
    if (!gap.empty()) {
      a.gap_mean = mean_of(gap);
      a.gap_std = sample_std(gap);
    }
    if (!eps.empty()) a.epsilon_mean = mean_of(eps);
    if (!its.empty()) a.iterations_mean = mean_of(its);
    out.push_back(a);
  }
  return out;
}

std::string RunReport::raw_csv() const {
  std::string out = "method,seed,accuracy,equal_odds_gap,epsilon,iterations,balance_success,peer_alpha\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(r.method), r.seed, r.accuracy, opt(r.equal_odds_gap),
                       opt(r.epsilon), r.iterations ? fmt::format("{}", *r.iterations) : "",
                       r.balance_success ? (*r.balance_success ? "1" : "0") : "", opt(r.peer_alpha));
  }
  return out;
}

std::string RunReport::aggregate_csv() const {
  std::string out = "method,runs,accuracy_mean,accuracy_std,equal_odds_gap_mean,equal_odds_gap_std,epsilon_mean,iterations_mean\n";
  for (const auto& a : aggregate()) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(a.method), a.runs, a.accuracy_mean, opt(a.accuracy_std),
                       opt(a.gap_mean), opt(a.gap_std), opt(a.epsilon_mean), opt(a.iterations_mean));
  }
  return out;
}

std::string RunReport::timing_csv() const {
  std::string out = "method,seed,seconds\n";
  for (const auto& r : rows) out += fmt::format("{},{},{:.6f}\n", to_string(r.method), r.seed, r.seconds);
  return out;
}

std::string RunReport::table() const {
  const auto agg = aggregate();
  std::string out = fmt::format("{} pipeline, {}, {} seed{}\n\n", to_string(config.pipeline),
                                noise_summary(config.noise), config.seeds.size(), config.seeds.size() == 1 ? "" : "s");
  std::vector<std::vector<std::string>> cells;
  if (config.pipeline == Pipeline::kConstrained) {
    std::vector<std::string> head{""}, acc{"Accuracy"}, gap{"EO gap"};
    for (const auto& a : agg) {
      head.push_back(to_string(a.method));
      acc.push_back(mean_std(a.accuracy_mean, a.accuracy_std));
      gap.push_back(a.gap_mean ? mean_std(*a.gap_mean, a.gap_std) : "-");
    }
    cells = {head, acc, gap};
  } else {
    const bool multi = config.pipeline == Pipeline::kMultiClass;
    cells.push_back({"Method", "Accuracy", "Epsilon", "Iterations"});
    if (multi) cells.back().insert(cells.back().begin() + 1, "Noise gap");
    for (const auto& a : agg) {
      cells.push_back({to_string(a.method), mean_std(a.accuracy_mean, a.accuracy_std), fixed4(a.epsilon_mean),
                       a.iterations_mean ? fmt::format("{:.1f}", *a.iterations_mean) : "-"});
      if (multi) cells.back().insert(cells.back().begin() + 1, fmt::format("{}", config.noise.gap));
    }
  }
  return out + aligned(cells);
}

void report_emit(const RunReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  write_file(dir / "raw.csv", report.raw_csv());
  write_file(dir / "aggregate.csv", report.aggregate_csv());
  write_file(dir / "table.txt", report.table());
  write_file(dir / "resolved.cfg", report.config.resolved());
  write_file(dir / "timing.csv", report.timing_csv());
  if (!report.warnings.empty()) {
    std::string w;
    for (const auto& line : report.warnings) w += line + "\n";
    write_file(dir / "warnings.txt", w);
  }
}

}  // namespace noisebal
