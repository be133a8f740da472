#include "noisebal/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "noisebal/error.hpp"
#include "noisebal/random.hpp"

namespace noisebal {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DataError(fmt::format("matrix data has {} values, expected {}x{}", data_.size(),
                                rows_, cols_));
  }
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto src = row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

void LabeledDataset::validate() const {
  const std::size_t n = noisy_labels.size();
  if (features.rows() != n) {
    throw DataError(fmt::format("feature rows ({}) != label count ({})", features.rows(), n));
  }
  if (classes < 1) throw DataError("class count must be positive");
  auto check_labels = [&](const std::vector<int>& labels, const char* what) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= classes) {
        throw DataError(fmt::format("{} label {} at row {} outside [0, {})", what, labels[i], i,
                                    classes));
      }
    }
  };
  check_labels(noisy_labels, "noisy");
  if (clean_labels) {
    if (clean_labels->size() != n) throw DataError("clean label count differs from noisy");
    check_labels(*clean_labels, "clean");
  }
  if (groups) {
    if (groups->size() != n) throw DataError("group count differs from label count");
    for (std::size_t i = 0; i < n; ++i) {
      if ((*groups)[i] < 0 || (*groups)[i] >= group_count) {
        throw DataError(fmt::format("group {} at row {} outside [0, {})", (*groups)[i], i,
                                    group_count));
      }
    }
  }
  for (double v : features.data()) {
    if (!std::isfinite(v)) throw DataError("features contain a non-finite value");
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.features = features.select_rows(indices);
  out.classes = classes;
  out.group_count = group_count;
  auto pick = [&](const std::vector<int>& src) {
    std::vector<int> dst;
    dst.reserve(indices.size());
    for (auto i : indices) dst.push_back(src[i]);
    return dst;
  };
  out.noisy_labels = pick(noisy_labels);
  if (clean_labels) out.clean_labels = pick(*clean_labels);
  if (groups) out.groups = pick(*groups);
  return out;
}

LabeledDataset LabeledDataset::with_noisy_labels(std::vector<int> labels) const {
  if (labels.size() != size()) throw DataError("replacement label count differs");
  LabeledDataset out = *this;
  out.noisy_labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_rate(double r, const char* name) {
  if (!(r >= 0.0 && r < 0.5)) {
    throw ConfigError(fmt::format("noise rate {} = {} outside [0, 0.5)", name, r));
  }
}

}  // namespace

void validate(const NoiseSpec& spec) {
  if (const auto* b = std::get_if<BinaryClassNoise>(&spec)) {
    check_rate(b->e_minus, "e_minus");
    check_rate(b->e_plus, "e_plus");
  } else if (const auto* g = std::get_if<GroupSymmetricNoise>(&spec)) {
    check_rate(g->e_a, "e_a");
    check_rate(g->e_b, "e_b");
  } else {
    const auto& t = std::get<MatrixNoise>(spec).transition;
    if (t.rows() != t.cols() || t.rows() < 1) throw ConfigError("transition matrix must be square");
    for (std::size_t i = 0; i < t.cols(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < t.rows(); ++j) {
        if (t(j, i) < 0.0) throw ConfigError("transition matrix has a negative entry");
        sum += t(j, i);
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError(fmt::format("transition column {} sums to {}", i, sum));
      }
    }
  }
}

void SyntheticConfig::validate() const {
  if (n < 1) throw ConfigError("n must be >= 1");
  if (d < 1) throw ConfigError("d must be >= 1");
  if (!(cluster_spread > 0.0)) throw ConfigError("cluster_spread must be > 0");
  if (!(class_balance > 0.0 && class_balance < 1.0)) {
    throw ConfigError("class_balance must lie in (0, 1)");
  }
  if (classes < 2) throw ConfigError("need at least 2 classes");
  if (cluster_count < classes) {
    throw ConfigError(fmt::format("cluster_count {} < class count {}: every class needs a cluster",
                                  cluster_count, classes));
  }
  if (!(separation > 0.0)) throw ConfigError("separation must be > 0");
  if (groups != 0 && groups != 2) throw ConfigError("groups must be 0 or 2");
  if (!(group_balance > 0.0 && group_balance < 1.0)) {
    throw ConfigError("group_balance must lie in (0, 1)");
  }
}

LabeledDataset generate_clusterable(const SyntheticConfig& cfg) {
  if (cfg.separation < 6.0) {
    throw ConfigError(fmt::format("clusterable data needs separation >= 6 spreads, got {}",
                                  cfg.separation));
  }
  return generate_blobs(cfg);
}

LabeledDataset generate_blobs(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d;
  const double min_dist = cfg.separation * cfg.cluster_spread;
  std::normal_distribution<double> normal(0.0, 1.0);

  // Centres ~ N(0, tau^2 I) put typical pair distances near 1.5 * min_dist;
  // each centre is redrawn until it clears every earlier one.
  Engine center_rng = make_engine(cfg.seed, "centers");
  double tau = 1.5 * min_dist / std::sqrt(2.0 * static_cast<double>(d));
  Matrix centers(static_cast<std::size_t>(cfg.cluster_count), d);
  for (int c = 0; c < cfg.cluster_count; ++c) {
    int attempts = 0;
    for (;;) {
      for (std::size_t j = 0; j < d; ++j) centers(c, j) = tau * normal(center_rng);
      bool ok = true;
      for (int prev = 0; prev < c && ok; ++prev) {
        double dist2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = centers(c, j) - centers(prev, j);
          dist2 += diff * diff;
        }
        ok = dist2 >= min_dist * min_dist;
      }
      if (ok) break;
      if (++attempts == 1000) {
        tau *= 1.2;
        attempts = 0;
      }
    }
  }

  std::vector<std::vector<int>> clusters_of_class(cfg.classes);
  for (int c = 0; c < cfg.cluster_count; ++c) clusters_of_class[c % cfg.classes].push_back(c);

  LabeledDataset ds;
  ds.classes = cfg.classes;
  const std::size_t cols = d + (cfg.groups > 0 && cfg.group_feature ? 1 : 0);
  ds.features = Matrix(cfg.n, cols);
  std::vector<int> clean(cfg.n);

  Engine point_rng = make_engine(cfg.seed, "points");
  for (std::size_t i = 0; i < cfg.n; ++i) {
    int cls;
    if (cfg.classes == 2) {
      cls = bernoulli(point_rng, cfg.class_balance) ? 1 : 0;
    } else {
      cls = static_cast<int>(uniform_index(point_rng, static_cast<std::uint64_t>(cfg.classes)));
    }
    const auto& pool = clusters_of_class[cls];
    const int cluster = pool[uniform_index(point_rng, pool.size())];
    for (std::size_t j = 0; j < d; ++j) {
      ds.features(i, j) = centers(cluster, j) + cfg.cluster_spread * normal(point_rng);
    }
    clean[i] = cls;
  }

  if (cfg.groups > 0) {
    Engine group_rng = make_engine(cfg.seed, "groups");
    std::vector<double> axis(d);
    double norm = 0.0;
    for (auto& v : axis) {
      v = normal(group_rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    std::vector<int> groups(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
      groups[i] = bernoulli(group_rng, cfg.group_balance) ? 1 : 0;
      if (groups[i] == 1 && cfg.group_shift != 0.0) {
        for (std::size_t j = 0; j < d; ++j) {
          ds.features(i, j) += cfg.group_shift * cfg.cluster_spread * axis[j] / norm;
        }
      }
      if (cfg.group_feature) ds.features(i, d) = groups[i];
    }
    ds.groups = std::move(groups);
    ds.group_count = cfg.groups;
  }

  ds.noisy_labels = clean;
  ds.clean_labels = std::move(clean);
  return ds;
}

LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec, std::uint64_t seed) {
  if (!ds.has_clean()) throw DataError("noise injection requires clean labels");
  validate(spec);
  const auto& clean = *ds.clean_labels;
  std::vector<int> noisy(clean.size());
  Engine rng = make_engine(seed, "inject");

  if (const auto* b = std::get_if<BinaryClassNoise>(&spec)) {
    if (ds.classes != 2) throw ConfigError("BinaryClass noise needs a binary dataset");
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double u = uniform01(rng);
      const double rate = clean[i] == kPositive ? b->e_plus : b->e_minus;
      noisy[i] = u < rate ? 1 - clean[i] : clean[i];
    }
  } else if (const auto* g = std::get_if<GroupSymmetricNoise>(&spec)) {
    if (!ds.has_groups() || ds.group_count != 2) {
      throw ConfigError("GroupSymmetric noise needs exactly two groups");
    }
    if (ds.classes != 2) throw ConfigError("GroupSymmetric noise needs a binary dataset");
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double u = uniform01(rng);
      const double rate = (*ds.groups)[i] == 0 ? g->e_a : g->e_b;
      noisy[i] = u < rate ? 1 - clean[i] : clean[i];
    }
  } else {
    const auto& t = std::get<MatrixNoise>(spec).transition;
    if (t.rows() != static_cast<std::size_t>(ds.classes)) {
      throw ConfigError(fmt::format("transition matrix is {}x{} but dataset has {} classes",
                                    t.rows(), t.cols(), ds.classes));
    }
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double u = uniform01(rng);
      const auto col = static_cast<std::size_t>(clean[i]);
      double acc = 0.0;
      int pick = static_cast<int>(t.rows()) - 1;
      for (std::size_t j = 0; j < t.rows(); ++j) {
        acc += t(j, col);
        if (u < acc) {
          pick = static_cast<int>(j);
          break;
        }
      }
      noisy[i] = pick;
    }
  }
  return ds.with_noisy_labels(std::move(noisy));
}

MatrixNoise generate_noise_matrix(int k, double noise_gap, std::uint64_t seed) {
  if (k < 2) throw ConfigError("noise matrix needs k >= 2");
  if (!(noise_gap >= 0.0 && noise_gap < 0.6)) {
    throw ConfigError(fmt::format("noise_gap {} outside [0, 0.6)", noise_gap));
  }
  Engine rng = make_engine(seed, "noise-matrix");
  std::vector<double> diag(k);
  diag[0] = 0.4;
  diag[1] = 0.4 + noise_gap;
  for (int i = 2; i < k; ++i) diag[i] = 0.4 + noise_gap * uniform01(rng);
  std::shuffle(diag.begin(), diag.end(), rng);

  Matrix t(k, k);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> w(k - 1);
  for (int col = 0; col < k; ++col) {
    t(col, col) = diag[col];
    double total = 0.0;
    for (auto& v : w) {
      v = expo(rng);
      total += v;
    }
    const double residual = 1.0 - diag[col];
    double used = 0.0;
    int slot = 0;
    for (int row = 0; row < k; ++row) {
      if (row == col) continue;
      if (slot == k - 2) {
        t(row, col) = std::max(0.0, residual - used);
      } else {
        t(row, col) = residual * w[slot] / total;
        used += t(row, col);
      }
      ++slot;
    }
  }
  return MatrixNoise{std::move(t)};
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> resample_balanced_indices(const LabeledDataset& ds, BalanceBy by,
                                                   std::uint64_t seed) {
  const int units = by == BalanceBy::kGroup ? ds.group_count : 1;
  if (by == BalanceBy::kGroup && (!ds.has_groups() || ds.group_count < 1)) {
    throw ConfigError("group balancing requires group tags");
  }
  // buckets[unit][class] -> rows, in ascending order
  std::vector<std::vector<std::vector<std::size_t>>> buckets(
      units, std::vector<std::vector<std::size_t>>(ds.classes));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int unit = by == BalanceBy::kGroup ? (*ds.groups)[i] : 0;
    buckets[unit][ds.noisy_labels[i]].push_back(i);
  }

  std::vector<std::size_t> kept;
  for (int unit = 0; unit < units; ++unit) {
    std::size_t target = ds.size();
    for (int c = 0; c < ds.classes; ++c) {
      if (buckets[unit][c].empty()) {
        if (by == BalanceBy::kGroup) {
          throw DataError(fmt::format("group {} has no rows with noisy label {}", unit, c));
        }
        throw DataError(fmt::format("noisy label {} has no rows", c));
      }
      target = std::min(target, buckets[unit][c].size());
    }
    for (int c = 0; c < ds.classes; ++c) {
      auto rows = buckets[unit][c];
      if (rows.size() > target) {
        Engine rng = make_engine(seed, "resample",
                                 static_cast<std::uint64_t>(unit) * 1024 + static_cast<unsigned>(c));
        std::shuffle(rows.begin(), rows.end(), rng);
        rows.resize(target);
      }
      kept.insert(kept.end(), rows.begin(), rows.end());
    }
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

LabeledDataset resample_balanced(const LabeledDataset& ds, BalanceBy by, std::uint64_t seed) {
  const auto rows = resample_balanced_indices(ds, by, seed);
  return ds.subset(rows);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_long(const std::string& s, long& out) {
  const char* end = s.data() + s.size();
  const char* begin = s.data();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end && begin != end;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  const char* begin = s.data();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc{} && ptr == end && begin != end;
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path) {
  CsvSchema schema;
  return load_csv(path, schema);
}

LabeledDataset load_csv(const std::filesystem::path& path, CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw DataError(fmt::format("{}: empty file", path.string()));
  auto header = split_line(line);
  for (auto& h : header) h = trim(h);

  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto label_col = find(schema.label_column);
  if (!label_col) {
    throw DataError(fmt::format("{}: missing label column '{}'", path.string(),
                                schema.label_column));
  }
  const auto clean_col = schema.clean_column ? find(*schema.clean_column) : std::nullopt;
  const auto group_col = schema.group_column ? find(*schema.group_column) : std::nullopt;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != *label_col && c != clean_col && c != group_col) feature_cols.push_back(c);
  }

  std::vector<double> values;
  std::vector<long> raw_labels, raw_clean;
  std::vector<int> groups;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("{}: row {} has {} cells, header has {}", path.string(),
                                  line_no, cells.size(), header.size()));
    }
    for (auto c : feature_cols) {
      double v;
      const auto cell = trim(cells[c]);
      if (!parse_double(cell, v) || !std::isfinite(v)) {
        throw DataError(fmt::format("{}: row {}, column '{}': non-numeric feature '{}'",
                                    path.string(), line_no, header[c], cell));
      }
      values.push_back(v);
    }
    auto read_label = [&](std::size_t c) {
      long v;
      const auto cell = trim(cells[c]);
      if (!parse_long(cell, v)) {
        throw DataError(fmt::format("{}: row {}, column '{}': unknown class '{}'", path.string(),
                                    line_no, header[c], cell));
      }
      return v;
    };
    raw_labels.push_back(read_label(*label_col));
    if (clean_col) raw_clean.push_back(read_label(*clean_col));
    if (group_col) {
      const long g = read_label(*group_col);
      if (g < 0) {
        throw DataError(fmt::format("{}: row {}: negative group id {}", path.string(), line_no, g));
      }
      groups.push_back(static_cast<int>(g));
    }
    ++rows;
  }

  if (schema.label_values.empty()) {
    std::set<long> seen(raw_labels.begin(), raw_labels.end());
    seen.insert(raw_clean.begin(), raw_clean.end());
    const bool signed_binary =
        !seen.empty() && std::all_of(seen.begin(), seen.end(), [](long v) { return v == -1 || v == 1; });
    const bool non_negative =
        std::all_of(seen.begin(), seen.end(), [](long v) { return v >= 0; });
    if (signed_binary) {
      schema.label_values = {-1, 1};
    } else if (non_negative) {
      const long top = seen.empty() ? 1 : std::max(1L, *seen.rbegin());
      for (long v = 0; v <= top; ++v) schema.label_values.push_back(v);
    } else {
      schema.label_values.assign(seen.begin(), seen.end());
    }
  }
  std::map<long, int> to_id;
  for (std::size_t i = 0; i < schema.label_values.size(); ++i) {
    to_id[schema.label_values[i]] = static_cast<int>(i);
  }
  auto map_all = [&](const std::vector<long>& raw, const char* what) {
    std::vector<int> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      auto it = to_id.find(raw[i]);
      if (it == to_id.end()) {
        throw DataError(fmt::format("{}: data row {}: unknown {} class '{}'", path.string(), i + 1,
                                    what, raw[i]));
      }
      out.push_back(it->second);
    }
    return out;
  };

  LabeledDataset ds;
  ds.features = Matrix(rows, feature_cols.size(), std::move(values));
  ds.classes = std::max<int>(2, static_cast<int>(schema.label_values.size()));
  ds.noisy_labels = map_all(raw_labels, "label");
  if (clean_col) ds.clean_labels = map_all(raw_clean, "clean");
  if (group_col) {
    int top = 0;
    for (int g : groups) top = std::max(top, g + 1);
    ds.group_count = schema.group_count > 0 ? schema.group_count : top;
    ds.groups = std::move(groups);
  }
  ds.validate();
  return ds;
}

void save_csv(const LabeledDataset& ds, const std::filesystem::path& path, const CsvSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  auto label_text = [&](int id) -> long {
    if (schema.label_values.empty()) return id;
    return schema.label_values.at(static_cast<std::size_t>(id));
  };
  std::string buf;
  for (std::size_t j = 0; j < ds.dim(); ++j) buf += fmt::format("{}f{}", j ? "," : "", j);
  buf += ds.dim() ? ",label" : "label";
  if (ds.has_clean()) buf += ",clean";
  if (ds.has_groups()) buf += ",group";
  buf += '\n';
  out << buf;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    buf.clear();
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      buf += fmt::format("{}{:.17g}", j ? "," : "", ds.features(i, j));
    }
    buf += fmt::format("{}{}", ds.dim() ? "," : "", label_text(ds.noisy_labels[i]));
    if (ds.has_clean()) buf += fmt::format(",{}", label_text((*ds.clean_labels)[i]));
    if (ds.has_groups()) buf += fmt::format(",{}", (*ds.groups)[i]);
    buf += '\n';
    out << buf;
  }
  if (!out) throw DataError(fmt::format("write to {} failed", path.string()));
}

}  // namespace noisebal
