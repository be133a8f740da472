#include "noisebal/neighbors.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "noisebal/error.hpp"

namespace noisebal {

namespace {

struct Candidate {
  double dist2 = std::numeric_limits<double>::infinity();
  std::size_t index = std::numeric_limits<std::size_t>::max();
};

bool closer(double d2, std::size_t idx, const Candidate& c) {
  return d2 < c.dist2 || (d2 == c.dist2 && idx < c.index);
}

// Keeps the two best (distance, index) pairs in order.
struct BestTwo {
  Candidate first, second;

  void offer(double d2, std::size_t idx) {
    if (closer(d2, idx, first)) {
      second = first;
      first = {d2, idx};
    } else if (closer(d2, idx, second)) {
      second = {d2, idx};
    }
  }
  double bound() const { return second.dist2; }
};

// Squared distance summed in coordinate order. Stops early once the partial sum
// exceeds `bound`; rounded sums of non-negative terms never decrease, so such a
// row could not have won and the result is exact for every row that can.
constexpr double kNoBound = std::numeric_limits<double>::infinity();

double squared_distance(std::span<const double> a, std::span<const double> b, double bound) {
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    sum += diff * diff;
    if (sum > bound) return sum;
  }
  return sum;
}

// Each unordered pair is measured once and offered to both ends; the squared
// differences are the same either way round, so this matches a per-row scan.
std::vector<std::array<std::size_t, 2>> brute_force(const Matrix& pts) {
  const std::size_t n = pts.rows();
  std::vector<BestTwo> best(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto q = pts.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d2 = squared_distance(q, pts.row(j), kNoBound);
      best[i].offer(d2, j);
      best[j].offer(d2, i);
    }
  }
  std::vector<std::array<std::size_t, 2>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {best[i].first.index, best[i].second.index};
  return out;
}

class KdTree {
 public:
  explicit KdTree(const Matrix& pts) : pts_(pts), perm_(pts.rows()) {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    nodes_.reserve(2 * pts.rows() / kLeafSize + 2);
    build(0, perm_.size());
  }

  void query(std::size_t self, BestTwo& best) const { search(0, pts_.row(self), self, best); }

 private:
  static constexpr std::size_t kLeafSize = 12;

  struct Node {
    std::size_t begin, end;
    std::size_t dim = 0;
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    // split on the widest dimension at the median
    std::size_t dim = 0;
    double widest = -1.0;
    for (std::size_t j = 0; j < pts_.cols(); ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t k = begin; k < end; ++k) {
        const double v = pts_(perm_[k], j);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        dim = j;
      }
    }
    if (widest <= 0.0) return id;  // all points identical: keep as one leaf

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(perm_.begin() + static_cast<std::ptrdiff_t>(begin),
                     perm_.begin() + static_cast<std::ptrdiff_t>(mid),
                     perm_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return pts_(a, dim) < pts_(b, dim); });
    const double split = pts_(perm_[mid], dim);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].dim = dim;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(int id, std::span<const double> q, std::size_t self, BestTwo& best) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (std::size_t k = node.begin; k < node.end; ++k) {
        const std::size_t j = perm_[k];
        if (j == self) continue;
        best.offer(squared_distance(q, pts_.row(j), best.bound()), j);
      }
      return;
    }
    const double diff = q[node.dim] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search(near, q, self, best);
    // Points beyond the plane are at least |diff| away; equality still needs a
    // visit because a tie may carry a smaller index.
    if (diff * diff <= best.bound()) search(far, q, self, best);
  }

  const Matrix& pts_;
  std::vector<std::size_t> perm_;
  std::vector<Node> nodes_;
};

std::vector<std::array<std::size_t, 2>> kd_tree(const Matrix& pts) {
  KdTree tree(pts);
  std::vector<std::array<std::size_t, 2>> out(pts.rows());
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    BestTwo best;
    tree.query(i, best);
    out[i] = {best.first.index, best.second.index};
  }
  return out;
}

}  // namespace

NeighborIndex build_index(const Matrix& points, NeighborBackend backend) {
  if (points.rows() < 3) {
    throw ConfigError(fmt::format("neighbour index needs at least 3 rows, got {}", points.rows()));
  }
  NeighborIndex idx;
  if (backend == NeighborBackend::kAuto) {
    backend = points.cols() <= kKdTreeMaxDim ? NeighborBackend::kKdTree : NeighborBackend::kBruteForce;
  }
  idx.pairs_ = backend == NeighborBackend::kBruteForce ? brute_force(points) : kd_tree(points);
  return idx;
}

NeighborIndex build_group_index(const LabeledDataset& ds, NeighborBackend backend) {
  if (!ds.has_groups()) throw ConfigError("group index requires group tags");
  NeighborIndex idx;
  idx.pairs_.resize(ds.size());
  for (int g = 0; g < ds.group_count; ++g) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if ((*ds.groups)[i] == g) rows.push_back(i);
    }
    if (rows.size() < 3) {
      throw ConfigError(fmt::format("group {} has {} rows; need at least 3", g, rows.size()));
    }
    const auto local = build_index(ds.features.select_rows(rows), backend);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& nb = local.neighbors(k);
      idx.pairs_[rows[k]] = {rows[nb[0]], rows[nb[1]]};
    }
  }
  return idx;
}

}  // namespace noisebal
