#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace noisebal {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  /// Rows selected by `indices`, in that order.
  Matrix select_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Binary label encoding used throughout:
//
//   signed label   internal id
//        -1            0
//        +1            1
//
// Sign-indexed rates map as e_minus <-> class 0, e_plus <-> class 1.
inline constexpr int kNegative = 0;
inline constexpr int kPositive = 1;

constexpr int to_signed(int label) noexcept { return label == kPositive ? 1 : -1; }
constexpr int from_signed(int sign) noexcept { return sign > 0 ? kPositive : kNegative; }

/// Features with noisy labels and, when known, clean labels and group tags.
///
/// Immutable by convention: every operation returns a new dataset.
struct LabeledDataset {
  Matrix features;
  std::vector<int> noisy_labels;
  std::optional<std::vector<int>> clean_labels;
  std::optional<std::vector<int>> groups;
  int classes = 2;
  int group_count = 0;

  std::size_t size() const noexcept { return noisy_labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  bool has_clean() const noexcept { return clean_labels.has_value(); }
  bool has_groups() const noexcept { return groups.has_value(); }

  /// Throws DataError if any invariant is broken.
  void validate() const;

  /// Rows at `indices`, carrying every label column along.
  LabeledDataset subset(std::span<const std::size_t> indices) const;

  /// Same rows and metadata with noisy labels replaced.
  LabeledDataset with_noisy_labels(std::vector<int> labels) const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

// ---------------------------------------------------------------------------
// Noise models

/// Class-conditional binary noise: P(noisy=-1 | clean=+1) = e_plus, and
/// P(noisy=+1 | clean=-1) = e_minus.
struct BinaryClassNoise {
  double e_minus = 0.0;
  double e_plus = 0.0;
};

/// Group-dependent symmetric noise: a label in group z flips w.p. rates[z].
struct GroupSymmetricNoise {
  double e_a = 0.0;
  double e_b = 0.0;
};

/// K×K column-stochastic transition matrix, T(j, i) = P(noisy=j | clean=i).
struct MatrixNoise {
  Matrix transition;
};

using NoiseSpec = std::variant<BinaryClassNoise, GroupSymmetricNoise, MatrixNoise>;

/// Throws ConfigError when rates leave [0, 0.5) or the matrix is not column-stochastic.
void validate(const NoiseSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  std::size_t n = 1000;
  std::size_t d = 2;
  int cluster_count = 2;
  double cluster_spread = 0.1;
  double class_balance = 0.5;  ///< P(class 1) for binary data; ignored for K > 2 (uniform).
  std::uint64_t seed = 0;
  int classes = 2;
  double separation = 6.0;     ///< minimum centre distance, in units of cluster_spread
  int groups = 0;              ///< 0 (no groups) or 2
  double group_balance = 0.5;  ///< P(group 1)
  double group_shift = 0.0;    ///< group-1 rows shifted by this many spreads along a random axis
  bool group_feature = false;  ///< append the group id as an extra feature column

  void validate() const;
};

/// Gaussian blobs whose centres are pairwise at least 6 spreads apart, so that
/// nearly every point shares its clean label with its two nearest neighbours.
/// Noisy labels equal clean labels. Rejects separation < 6 and cluster_count < classes.
LabeledDataset generate_clusterable(const SyntheticConfig& cfg);

/// Same generator without the separation floor (overlapping clusters allowed).
LabeledDataset generate_blobs(const SyntheticConfig& cfg);

/// Draws noisy labels from clean labels under `spec`. Deterministic in `seed`.
LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec, std::uint64_t seed);

/// Random K×K transition matrix with diagonals spread over [0.4, 0.4 + noise_gap]
/// (max - min == noise_gap exactly) and random off-diagonal mass per column.
MatrixNoise generate_noise_matrix(int k, double noise_gap, std::uint64_t seed);

enum class BalanceBy { kClass, kGroup };

/// Row indices (ascending) of a downsample with equal noisy-label counts, per
/// group when `by == kGroup`.
std::vector<std::size_t> resample_balanced_indices(const LabeledDataset& ds, BalanceBy by,
                                                   std::uint64_t seed);

LabeledDataset resample_balanced(const LabeledDataset& ds, BalanceBy by, std::uint64_t seed);

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  std::string label_column = "label";
  std::optional<std::string> clean_column = "clean";
  std::optional<std::string> group_column = "group";
  /// Raw label values in internal-id order; filled in by load_csv when empty.
  /// {-1, +1} input is recorded as {-1, 1}.
  std::vector<long> label_values;
  int group_count = 0;  ///< 0 = infer from data
};

/// Reads a header-first CSV; columns other than the label/clean/group columns are
/// features. Optional columns that are absent are skipped. `schema` receives the
/// label mapping actually used.
LabeledDataset load_csv(const std::filesystem::path& path, CsvSchema& schema);
LabeledDataset load_csv(const std::filesystem::path& path);

/// Writes `f0..f{d-1},label[,clean][,group]`. Labels are written through
/// `schema.label_values` when given, else as internal ids.
void save_csv(const LabeledDataset& ds, const std::filesystem::path& path,
              const CsvSchema& schema = {});

}  // namespace noisebal
