#include "noisebal/agreement.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "noisebal/error.hpp"

namespace noisebal {

double AgreementStats::gap() const {
  if (!pa) throw AbsentStatistic("PA is absent: no noisy-positive anchors");
  if (!na) throw AbsentStatistic("NA is absent: no noisy-negative anchors");
  return pa->value() - na->value();
}

AgreementStats count_agreements(std::span<const int> labels, const NeighborIndex& idx,
                                int classes) {
  if (labels.size() != idx.size()) {
    throw ConfigError(fmt::format("{} labels for an index over {} rows", labels.size(), idx.size()));
  }
  std::vector<std::int64_t> hits(classes, 0), anchors(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const auto& nb = idx.neighbors(i);
    ++anchors[y];
    if (labels[nb[0]] == y && labels[nb[1]] == y) ++hits[y];
  }
  AgreementStats stats;
  stats.per_class.resize(classes);
  for (int k = 0; k < classes; ++k) {
    if (anchors[k] > 0) stats.per_class[k] = Ratio{hits[k], anchors[k]};
  }
  if (classes == 2) {
    stats.pa = stats.per_class[kPositive];
    stats.na = stats.per_class[kNegative];
  }
  return stats;
}

AgreementStats estimate_agreements(const LabeledDataset& ds, const NeighborIndex& idx) {
  return count_agreements(ds.noisy_labels, idx, ds.classes);
}

GroupAgreements count_group_agreements(std::span<const int> labels, std::span<const int> groups,
                                       const NeighborIndex& group_idx) {
  if (labels.size() != group_idx.size() || groups.size() != labels.size()) {
    throw ConfigError("label, group and index sizes differ");
  }
  std::array<Ratio, 2> r{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kPositive) continue;
    const int g = groups[i];
    if (g < 0 || g > 1) throw ConfigError("group agreements support two groups");
    const auto& nb = group_idx.neighbors(i);
    ++r[g].denominator;
    if (labels[nb[0]] == kPositive && labels[nb[1]] == kPositive) ++r[g].numerator;
  }
  for (int g = 0; g < 2; ++g) {
    if (r[g].denominator == 0) {
      throw AbsentStatistic(fmt::format("group {} has no noisy-positive anchors", g == 0 ? 'a' : 'b'));
    }
  }
  return {r[0], r[1]};
}

GroupAgreements estimate_group_agreements(const LabeledDataset& ds, const NeighborIndex& group_idx) {
  if (!ds.has_groups()) throw ConfigError("group agreements require group tags");
  if (ds.group_count != 2) throw ConfigError("group agreements support exactly two groups");
  return count_group_agreements(ds.noisy_labels, *ds.groups, group_idx);
}

double agreement_gap_closed_form(double e_plus, double e_minus) {
  if (!(e_plus >= 0.0 && e_plus < 0.5) || !(e_minus >= 0.0 && e_minus < 0.5)) {
    throw ConfigError(fmt::format("rates ({}, {}) outside [0, 0.5)", e_plus, e_minus));
  }
  return 4.0 * (0.5 - e_plus) * (0.5 - e_minus) * (e_minus - e_plus);
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kPositiveNoisier: return "positive-noisier";
    case Verdict::kNegativeNoisier: return "negative-noisier";
    case Verdict::kBalanced: return "balanced";
  }
  return "?";
}

Verdict detect_noisier_class(const AgreementStats& stats, double gamma) {
  const double gap = stats.gap();
  if (gap > gamma) return Verdict::kNegativeNoisier;
  if (gap < -gamma) return Verdict::kPositiveNoisier;
  return Verdict::kBalanced;
}

std::vector<std::vector<int>> rank_classes_by_ka(const AgreementStats& stats, double gamma) {
  const int k = static_cast<int>(stats.per_class.size());
  for (int c = 0; c < k; ++c) {
    if (!stats.per_class[c]) throw AbsentStatistic(fmt::format("KA for class {} is absent", c));
  }
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return stats.per_class[a]->value() > stats.per_class[b]->value();
  });
  std::vector<std::vector<int>> groups;
  for (int c : order) {
    if (!groups.empty()) {
      const double prev = stats.per_class[groups.back().back()]->value();
      if (prev - stats.per_class[c]->value() <= gamma) {
        groups.back().push_back(c);
        continue;
      }
    }
    groups.push_back({c});
  }
  return groups;
}

}  // namespace noisebal
