#include "noisebal/balance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "noisebal/agreement.hpp"
#include "noisebal/error.hpp"
#include "noisebal/random.hpp"

namespace noisebal {

namespace {

void check_rate(double e, const char* name) {
  if (!(e >= 0.0 && e < 0.5)) throw ConfigError(fmt::format("{} = {} outside [0, 0.5)", name, e));
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("{} = {} outside [0, 1]", name, p));
}

void check_options(const BalanceOptions& opts) {
  if (!(opts.gamma > 0.0)) throw ConfigError(fmt::format("gamma must be positive, got {}", opts.gamma));
  if (!(opts.epsilon_r_init > 0.0 && opts.epsilon_r_init <= 1.0)) {
    throw ConfigError(fmt::format("epsilon_r_init = {} outside (0, 1]", opts.epsilon_r_init));
  }
  if (opts.max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
}

// Destination offsets in [0, K-2] for flip_multiclass, one per row.
std::vector<int> flip_destinations(std::size_t n, int classes, std::uint64_t seed) {
  Engine rng = make_engine(seed, "flip-dest");
  std::vector<int> out(n);
  for (auto& d : out) d = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes - 1)));
  return out;
}

int other_class(int from, int offset) { return offset < from ? offset : offset + 1; }

struct SearchOutcome {
  bool success = false;
  double epsilon = 0.0;
  double gap = 0.0;  // oriented
};

// Bracket-then-bisect search on an oriented gap (positive at epsilon = 0 when flipping helps).
// Right ends are tried in `right_ends` order until one gives a gap below -gamma.
SearchOutcome bisect(const std::function<double(double)>& gap, double gap_at_zero,
                     const std::vector<double>& right_ends, const BalanceOptions& opts, int unit,
                     double sign, BalanceResult& result) {
  const double gamma = opts.gamma;
  result.bracket_trace.push_back({unit, 0.0, sign * gap_at_zero});
  if (std::abs(gap_at_zero) <= gamma) return {true, 0.0, gap_at_zero};
  if (gap_at_zero < 0.0) return {false, 0.0, gap_at_zero};

  double lo = 0.0, hi = -1.0;
  for (double r : right_ends) {
    const double c = gap(r);
    result.bracket_trace.push_back({unit, r, sign * c});
    if (std::abs(c) <= gamma) return {true, r, c};
    if (c < -gamma) {
      hi = r;
      break;
    }
  }
  if (hi < 0.0) return {false, 0.0, gap_at_zero};

  SearchOutcome last{false, 0.0, gap_at_zero};
  for (int it = 0; it < opts.max_iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double c = gap(mid);
    ++result.iterations;
    result.trace.push_back({unit, mid, sign * c});
    last = {false, mid, c};
    if (c < -gamma) {
      hi = mid;
    } else if (c > gamma) {
      lo = mid;
    } else {
      last.success = true;
      break;
    }
  }
  return last;
}

std::vector<double> right_ends(double init, std::initializer_list<double> grid) {
  std::vector<double> out{init};
  for (double g : grid) {
    if (g != init) out.push_back(g);
  }
  return out;
}

}  // namespace

std::vector<double> flip_uniforms(std::size_t n, std::uint64_t seed) {
  Engine rng = make_engine(seed, "flip");
  std::vector<double> u(n);
  for (auto& x : u) x = uniform01(rng);
  return u;
}

LabeledDataset flip(const LabeledDataset& ds, const FlipParams& params) {
  if (ds.classes != 2) throw ConfigError("flip() is binary; use flip_multiclass for K > 2");
  check_probability(params.epsilon, "epsilon");
  if (params.target != kNegative && params.target != kPositive) {
    throw ConfigError(fmt::format("flip target {} is not a binary class", params.target));
  }
  const auto u = flip_uniforms(ds.size(), params.seed);
  std::vector<int> labels = ds.noisy_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == params.target && u[i] < params.epsilon) labels[i] = 1 - labels[i];
  }
  return ds.with_noisy_labels(std::move(labels));
}

LabeledDataset flip_group(const LabeledDataset& ds, const FlipParams& params) {
  if (ds.classes != 2) throw ConfigError("group flipping is binary");
  if (!ds.has_groups()) throw ConfigError("group flipping requires group tags");
  check_probability(params.epsilon, "epsilon");
  if (params.target < 0 || params.target >= ds.group_count) {
    throw ConfigError(fmt::format("flip target group {} out of range", params.target));
  }
  const auto u = flip_uniforms(ds.size(), params.seed);
  const auto& groups = *ds.groups;
  std::vector<int> labels = ds.noisy_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (groups[i] == params.target && u[i] < params.epsilon) labels[i] = 1 - labels[i];
  }
  return ds.with_noisy_labels(std::move(labels));
}

LabeledDataset flip_multiclass(const LabeledDataset& ds, std::span<const double> per_class_epsilon,
                               std::uint64_t seed) {
  if (per_class_epsilon.size() != static_cast<std::size_t>(ds.classes)) {
    throw ConfigError(fmt::format("{} epsilons for {} classes", per_class_epsilon.size(), ds.classes));
  }
  if (ds.classes < 2) throw ConfigError("flipping needs at least two classes");
  for (double e : per_class_epsilon) check_probability(e, "epsilon");
  const auto u = flip_uniforms(ds.size(), seed);
  const auto dest = flip_destinations(ds.size(), ds.classes, seed);
  std::vector<int> labels = ds.noisy_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = labels[i];
    if (u[i] < per_class_epsilon[k]) labels[i] = other_class(k, dest[i]);
  }
  return ds.with_noisy_labels(std::move(labels));
}

FlippedRates predicted_flipped_rates(double e_plus, double e_minus, double epsilon) {
  check_rate(e_plus, "e_plus");
  check_rate(e_minus, "e_minus");
  check_probability(epsilon, "epsilon");
  return {(1.0 - e_plus) * epsilon + e_plus, (1.0 - epsilon) * e_minus};
}

double flipped_rate_gap(double e_plus, double e_minus, double epsilon) {
  check_rate(e_plus, "e_plus");
  check_rate(e_minus, "e_minus");
  check_probability(epsilon, "epsilon");
  return e_minus - e_plus - (1.0 - e_plus + e_minus) * epsilon;
}

double epsilon_star(double e_plus, double e_minus) {
  check_rate(e_plus, "e_plus");
  check_rate(e_minus, "e_minus");
  if (e_plus > e_minus) {
    throw ConfigError(fmt::format("epsilon_star expects e_plus <= e_minus, got ({}, {})", e_plus, e_minus));
  }
  return (e_minus - e_plus) / (1.0 - e_plus + e_minus);
}

double epsilon_uninformative(double e_plus) {
  check_rate(e_plus, "e_plus");
  return (0.5 - e_plus) / (1.0 - e_plus);
}

BalanceResult noise_plus(const LabeledDataset& ds, const BalanceOptions& opts) {
  if (ds.classes != 2) throw ConfigError("noise_plus requires binary labels");
  check_options(opts);

  const auto rows = resample_balanced_indices(ds, BalanceBy::kClass, derive_seed(opts.seed, "resample"));
  const LabeledDataset diamond = ds.subset(rows);
  const NeighborIndex idx = build_index(diamond.features, opts.backend);
  const auto u = flip_uniforms(ds.size(), opts.seed);

  std::vector<int> labels(diamond.size());
  auto raw_gap = [&](int target, double eps) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int y = diamond.noisy_labels[i];
      labels[i] = (y == target && u[rows[i]] < eps) ? 1 - y : y;
    }
    return count_agreements(labels, idx, 2).gap();
  };

  BalanceResult result;
  const double c0 = raw_gap(kPositive, 0.0);
  result.target = c0 > 0.0 ? kPositive : kNegative;
  const double sign = c0 > 0.0 ? 1.0 : -1.0;

  const auto outcome = bisect([&](double eps) { return sign * raw_gap(result.target, eps); },
                              sign * c0, right_ends(opts.epsilon_r_init, {0.1, 0.2, 0.3}), opts,
                              result.target, sign, result);

  result.success = outcome.success;
  result.final_gap = sign * outcome.gap;
  if (outcome.success && outcome.epsilon > 0.0) {
    result.epsilon_found = outcome.epsilon;
    result.balanced_dataset = flip(ds, {outcome.epsilon, result.target, opts.seed});
  } else {
    result.epsilon_found = outcome.success ? 0.0 : outcome.epsilon;
    result.balanced_dataset = ds;
    if (outcome.success) result.target = -1;
  }
  result.epsilons = {result.epsilon_found};
  return result;
}

BalanceResult balance_groups(const LabeledDataset& ds, const BalanceOptions& opts) {
  if (!ds.has_groups()) throw ConfigError("group balancing requires group tags");
  if (ds.group_count != 2) {
    throw ConfigError(fmt::format("group balancing supports two groups, got {}", ds.group_count));
  }
  if (ds.classes != 2) throw ConfigError("group balancing requires binary labels");
  check_options(opts);

  const auto rows = resample_balanced_indices(ds, BalanceBy::kGroup, derive_seed(opts.seed, "resample"));
  const LabeledDataset diamond = ds.subset(rows);
  const NeighborIndex idx = build_group_index(diamond, opts.backend);
  const auto u = flip_uniforms(ds.size(), opts.seed);
  const auto& groups = *diamond.groups;

  std::vector<int> labels(diamond.size());
  auto raw_gap = [&](int target, double eps) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int y = diamond.noisy_labels[i];
      labels[i] = (groups[i] == target && u[rows[i]] < eps) ? 1 - y : y;
    }
    return count_group_agreements(labels, groups, idx).gap();
  };

  BalanceResult result;
  const double c0 = raw_gap(0, 0.0);
  // higher positive agreement means the cleaner group
  result.target = c0 > 0.0 ? 0 : 1;
  const double sign = c0 > 0.0 ? 1.0 : -1.0;

  // symmetric flipping keeps a group informative up to 0.5, so the grid goes that far
  const auto outcome = bisect([&](double eps) { return sign * raw_gap(result.target, eps); },
                              sign * c0, right_ends(opts.epsilon_r_init, {0.1, 0.2, 0.3, 0.4, 0.5}), opts,
                              result.target, sign, result);

  result.success = outcome.success;
  result.final_gap = sign * outcome.gap;
  if (outcome.success && outcome.epsilon > 0.0) {
    result.epsilon_found = outcome.epsilon;
    result.balanced_dataset = flip_group(ds, {outcome.epsilon, result.target, opts.seed});
  } else {
    result.epsilon_found = outcome.success ? 0.0 : outcome.epsilon;
    result.balanced_dataset = ds;
    if (outcome.success) result.target = -1;
  }
  result.epsilons.assign(2, 0.0);
  if (result.target >= 0) result.epsilons[result.target] = result.epsilon_found;
  return result;
}

BalanceResult balance_multiclass(const LabeledDataset& ds, const BalanceOptions& opts) {
  const int k_count = ds.classes;
  if (k_count < 2) throw ConfigError(fmt::format("nothing to balance with {} class", k_count));
  check_options(opts);

  const auto rows = resample_balanced_indices(ds, BalanceBy::kClass, derive_seed(opts.seed, "resample"));
  const LabeledDataset diamond = ds.subset(rows);
  const std::size_t per_class = diamond.size() / static_cast<std::size_t>(k_count);
  if (per_class < 30) {
    throw DataError(fmt::format("{} anchors per class after resampling; need at least 30", per_class));
  }
  const NeighborIndex idx = build_index(diamond.features, opts.backend);
  const auto u = flip_uniforms(ds.size(), opts.seed);
  const auto dest = flip_destinations(ds.size(), k_count, opts.seed);

  std::vector<double> eps(k_count, 0.0);
  std::vector<int> labels(diamond.size());
  auto ka = [&]() {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int y = diamond.noisy_labels[i];
      const std::size_t r = rows[i];
      labels[i] = u[r] < eps[y] ? other_class(y, dest[r]) : y;
    }
    const auto stats = count_agreements(labels, idx, k_count);
    std::vector<double> out(k_count);
    for (int k = 0; k < k_count; ++k) {
      if (!stats.per_class[k]) throw AbsentStatistic(fmt::format("class {} lost all anchors", k));
      out[k] = stats.per_class[k]->value();
    }
    return out;
  };

  const auto ka0 = ka();
  const int ref = static_cast<int>(std::min_element(ka0.begin(), ka0.end()) - ka0.begin());

  BalanceResult result;
  result.target = -1;
  auto worst_gap = [&]() {
    const auto v = ka();
    double worst = 0.0;
    for (int k = 0; k < k_count; ++k) {
      const double g = v[k] - v[ref];
      if (std::abs(g) > std::abs(worst)) worst = g;
    }
    return worst;
  };

  constexpr int kSweeps = 3;
  for (int sweep = 0; sweep < kSweeps; ++sweep) {
    for (int k = 0; k < k_count; ++k) {
      if (k == ref) continue;
      auto gap = [&](double e) {
        eps[k] = e;
        const auto v = ka();
        return v[k] - v[ref];
      };
      const double g0 = gap(0.0);
      const auto outcome = bisect(gap, g0, right_ends(opts.epsilon_r_init, {0.1, 0.2, 0.3, 0.5, 0.7, 0.9}),
                                  opts, k, 1.0, result);
      eps[k] = outcome.epsilon;
    }
    result.final_gap = worst_gap();
    if (std::abs(result.final_gap) <= opts.gamma) {
      result.success = true;
      break;
    }
  }

  result.epsilons = eps;
  result.epsilon_found = *std::max_element(eps.begin(), eps.end());
  result.balanced_dataset = flip_multiclass(ds, eps, opts.seed);
  return result;
}

}  // namespace noisebal
