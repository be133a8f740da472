#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "noisebal/dataset.hpp"
#include "noisebal/neighbors.hpp"

namespace noisebal {

/// An estimate kept as its exact count ratio.
struct Ratio {
  std::int64_t numerator = 0;
  std::int64_t denominator = 0;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  friend bool operator==(const Ratio&, const Ratio&) = default;
};

/// 2-NN agreement statistics of a (balanced) noisy dataset.
///
/// per_class[k] is KA_k: the fraction of anchors labelled k whose two
/// neighbours are also labelled k. For binary data pa == per_class[1] and
/// na == per_class[0]. A class without anchors has no entry.
struct AgreementStats {
  std::optional<Ratio> pa;
  std::optional<Ratio> na;
  std::vector<std::optional<Ratio>> per_class;

  /// PA - NA; throws AbsentStatistic when either side is missing.
  double gap() const;
};

/// Counts agreements for an explicit label vector (labels of the rows `idx` was built on).
AgreementStats count_agreements(std::span<const int> labels, const NeighborIndex& idx,
                                int classes);

/// Agreements of `ds.noisy_labels`. The caller supplies the balanced set; no
/// resampling happens here.
AgreementStats estimate_agreements(const LabeledDataset& ds, const NeighborIndex& idx);

/// Per-group positive agreements using a within-group index.
struct GroupAgreements {
  Ratio pa_a;
  Ratio pa_b;

  double gap() const { return pa_a.value() - pa_b.value(); }
};

/// Throws AbsentStatistic when a group has no positive anchors.
GroupAgreements count_group_agreements(std::span<const int> labels, std::span<const int> groups,
                                       const NeighborIndex& group_idx);

GroupAgreements estimate_group_agreements(const LabeledDataset& ds, const NeighborIndex& group_idx);

/// PA - NA on a balanced 2-NN-clusterable set: 4 (0.5 - e+)(0.5 - e-)(e- - e+).
double agreement_gap_closed_form(double e_plus, double e_minus);

enum class Verdict { kPositiveNoisier, kNegativeNoisier, kBalanced };

std::string_view to_string(Verdict v);

/// PA - NA > gamma means the negative class is noisier; < -gamma the positive one.
Verdict detect_noisier_class(const AgreementStats& stats, double gamma);

/// Classes from cleanest (highest KA) to noisiest. Neighbours in that order whose
/// KA differ by at most `gamma` share an equivalence group.
std::vector<std::vector<int>> rank_classes_by_ka(const AgreementStats& stats, double gamma = 0.0);

}  // namespace noisebal
