#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "noisebal/dataset.hpp"

namespace noisebal {

/// kAuto picks the kd-tree up to kKdTreeMaxDim features and brute force above,
/// where the tree prunes too little to pay for itself.
enum class NeighborBackend { kBruteForce, kKdTree, kAuto };

inline constexpr std::size_t kKdTreeMaxDim = 8;

/// Two nearest neighbours (Euclidean, self excluded) of every row.
///
/// Ordering is by (squared distance, row index), so ties go to the smaller
/// index and duplicate rows are each other's neighbour at distance 0. Both
/// backends compute distances with the same summation order and agree exactly.
class NeighborIndex {
 public:
  NeighborIndex() = default;

  std::size_t size() const noexcept { return pairs_.size(); }
  const std::array<std::size_t, 2>& neighbors(std::size_t row) const { return pairs_[row]; }
  std::span<const std::array<std::size_t, 2>> all() const noexcept { return pairs_; }

  friend bool operator==(const NeighborIndex&, const NeighborIndex&) = default;

 private:
  friend NeighborIndex build_index(const Matrix&, NeighborBackend);
  friend NeighborIndex build_group_index(const LabeledDataset&, NeighborBackend);
  std::vector<std::array<std::size_t, 2>> pairs_;
};

/// Requires at least 3 rows.
NeighborIndex build_index(const Matrix& points, NeighborBackend backend = NeighborBackend::kAuto);

inline NeighborIndex build_index(const LabeledDataset& ds,
                                 NeighborBackend backend = NeighborBackend::kAuto) {
  return build_index(ds.features, backend);
}

/// Neighbours searched within each row's own group; indices refer to rows of `ds`.
/// Every group needs at least 3 rows.
NeighborIndex build_group_index(const LabeledDataset& ds,
                                 NeighborBackend backend = NeighborBackend::kAuto);

}  // namespace noisebal
