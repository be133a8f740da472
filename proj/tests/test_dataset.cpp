#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <noisebal/dataset.hpp>
#include <noisebal/error.hpp>

#include "oracles.hpp"

using namespace noisebal;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.n = 10;
  c.d = 2;
  c.cluster_count = 2;
  c.cluster_spread = 0.1;
  c.class_balance = 0.5;
  c.seed = 7;
  return c;
}

LabeledDataset labelled(std::vector<int> noisy, std::vector<int> groups = {}) {
  LabeledDataset ds;
  ds.features = Matrix(noisy.size(), 1);
  for (std::size_t i = 0; i < noisy.size(); ++i) ds.features(i, 0) = static_cast<double>(i);
  ds.clean_labels = noisy;
  ds.noisy_labels = std::move(noisy);
  if (!groups.empty()) {
    ds.groups = std::move(groups);
    ds.group_count = 2;
  }
  return ds;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("noisebal_test_" + name);
}

}  // namespace

TEST_CASE("generate_clusterable: small construction") {
  const auto ds = generate_clusterable(small_config());
  CHECK(ds.size() == 10);
  CHECK(ds.dim() == 2);
  REQUIRE(ds.has_clean());
  CHECK(ds.noisy_labels == *ds.clean_labels);
  for (int y : ds.noisy_labels) CHECK((y == 0 || y == 1));
  ds.validate();
}

TEST_CASE("generate_clusterable: deterministic in seed") {
  CHECK(generate_clusterable(small_config()) == generate_clusterable(small_config()));
  auto other = small_config();
  other.seed = 8;
  CHECK_FALSE(generate_clusterable(small_config()) == generate_clusterable(other));
}

TEST_CASE("generate_clusterable: rejects too few clusters and tight separation") {
  auto c = small_config();
  c.cluster_count = 1;
  CHECK_THROWS_AS(generate_clusterable(c), ConfigError);
  c = small_config();
  c.separation = 3.0;
  CHECK_THROWS_AS(generate_clusterable(c), ConfigError);
  CHECK_NOTHROW(generate_blobs(c));
}

TEST_CASE("generate_clusterable: two nearest neighbours share the clean label") {
  SyntheticConfig c;
  c.n = 10000;
  c.d = 5;
  c.cluster_count = 8;
  c.cluster_spread = 0.05;
  c.class_balance = 0.5;
  c.seed = 1;
  CHECK(oracle::clusterability(generate_clusterable(c)) >= 0.99);
}

TEST_CASE("inject_noise: zero rates and identity matrix change nothing") {
  SyntheticConfig c = small_config();
  c.n = 500;
  const auto ds = generate_clusterable(c);
  CHECK(inject_noise(ds, BinaryClassNoise{0.0, 0.0}, 3).noisy_labels == *ds.clean_labels);
  Matrix eye(2, 2);
  eye(0, 0) = eye(1, 1) = 1.0;
  CHECK(inject_noise(ds, MatrixNoise{eye}, 3).noisy_labels == *ds.clean_labels);
}

TEST_CASE("inject_noise: binary flip fractions") {
  SyntheticConfig c;
  c.n = 100000;
  c.d = 2;
  c.cluster_count = 2;
  c.seed = 11;
  const auto ds = generate_clusterable(c);
  const auto noisy = inject_noise(ds, BinaryClassNoise{0.4, 0.2}, 5);
  CHECK(*noisy.clean_labels == *ds.clean_labels);
  double flips[2] = {0, 0}, counts[2] = {0, 0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int y = (*ds.clean_labels)[i];
    counts[y] += 1;
    flips[y] += noisy.noisy_labels[i] != y;
  }
  const double fp = flips[kPositive] / counts[kPositive];
  const double fn = flips[kNegative] / counts[kNegative];
  CHECK(std::abs(fp - 0.2) <= 0.01);
  CHECK(std::abs(fn - 0.4) <= 0.01);
  CHECK(std::abs(fp - 0.2) <= 3 * oracle::binomial_se(0.2, counts[kPositive]));
  CHECK(std::abs(fn - 0.4) <= 3 * oracle::binomial_se(0.4, counts[kNegative]));
}

TEST_CASE("inject_noise: group and matrix marginals within three standard errors") {
  SyntheticConfig c;
  c.n = 120000;
  c.d = 2;
  c.cluster_count = 3;
  c.classes = 3;
  c.seed = 2;
  const auto ds3 = generate_clusterable(c);
  const auto t = generate_noise_matrix(3, 0.3, 9);
  const auto noisy3 = inject_noise(ds3, t, 4);
  Matrix counts(3, 3);
  std::vector<double> totals(3, 0.0);
  for (std::size_t i = 0; i < ds3.size(); ++i) {
    counts(noisy3.noisy_labels[i], (*ds3.clean_labels)[i]) += 1;
    totals[(*ds3.clean_labels)[i]] += 1;
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double p = t.transition(j, i);
      CHECK(std::abs(counts(j, i) / totals[i] - p) <= 3 * oracle::binomial_se(p, totals[i]) + 1e-12);
    }
  }

  c = SyntheticConfig{};
  c.n = 100000;
  c.groups = 2;
  c.seed = 3;
  const auto dsg = generate_clusterable(c);
  const auto noisyg = inject_noise(dsg, GroupSymmetricNoise{0.1, 0.35}, 6);
  double flips[2] = {0, 0}, sizes[2] = {0, 0};
  for (std::size_t i = 0; i < dsg.size(); ++i) {
    const int z = (*dsg.groups)[i];
    sizes[z] += 1;
    flips[z] += noisyg.noisy_labels[i] != (*dsg.clean_labels)[i];
  }
  CHECK(std::abs(flips[0] / sizes[0] - 0.1) <= 3 * oracle::binomial_se(0.1, sizes[0]));
  CHECK(std::abs(flips[1] / sizes[1] - 0.35) <= 3 * oracle::binomial_se(0.35, sizes[1]));
}

TEST_CASE("inject_noise: error paths") {
  auto ds = generate_clusterable(small_config());
  CHECK_THROWS_AS(inject_noise(ds, GroupSymmetricNoise{0.1, 0.1}, 1), ConfigError);
  CHECK_THROWS_AS(inject_noise(ds, generate_noise_matrix(3, 0.1, 1), 1), ConfigError);
  CHECK_THROWS_AS(inject_noise(ds, BinaryClassNoise{0.5, 0.1}, 1), ConfigError);
  ds.clean_labels.reset();
  CHECK_THROWS_AS(inject_noise(ds, BinaryClassNoise{0.1, 0.1}, 1), DataError);
}

TEST_CASE("inject_noise: deterministic in seed") {
  SyntheticConfig c = small_config();
  c.n = 2000;
  const auto ds = generate_clusterable(c);
  CHECK(inject_noise(ds, BinaryClassNoise{0.3, 0.1}, 5) == inject_noise(ds, BinaryClassNoise{0.3, 0.1}, 5));
}

TEST_CASE("generate_noise_matrix: diagonal spread and column sums") {
  const auto m = generate_noise_matrix(10, 0.2, 1).transition;
  double lo = 1, hi = 0;
  for (int i = 0; i < 10; ++i) {
    lo = std::min(lo, m(i, i));
    hi = std::max(hi, m(i, i));
  }
  CHECK(lo == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(hi == doctest::Approx(0.6).epsilon(1e-12));

  const auto two = generate_noise_matrix(2, 0.0, 5).transition;
  CHECK(two(0, 0) == 0.4);
  CHECK(two(1, 1) == 0.4);

  CHECK_THROWS_AS(generate_noise_matrix(3, 0.6, 1), ConfigError);
  CHECK_THROWS_AS(generate_noise_matrix(1, 0.1, 1), ConfigError);
}

TEST_CASE("generate_noise_matrix: column-stochastic for 100 seeds") {
  for (int k : {5, 10}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto t = generate_noise_matrix(k, 0.3, seed).transition;
      for (int col = 0; col < k; ++col) {
        double sum = 0;
        for (int row = 0; row < k; ++row) {
          REQUIRE(t(row, col) >= 0.0);
          sum += t(row, col);
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-9);
        REQUIRE(t(col, col) >= 0.4);
      }
      CHECK_NOTHROW(validate(NoiseSpec{MatrixNoise{t}}));
    }
  }
}

TEST_CASE("resample_balanced: downsamples the majority class") {
  std::vector<int> y(100, 0);
  for (int i = 0; i < 60; ++i) y[i] = 1;
  const auto ds = labelled(y);
  const auto rows = resample_balanced_indices(ds, BalanceBy::kClass, 3);
  CHECK(rows.size() == 80);
  CHECK(std::is_sorted(rows.begin(), rows.end()));
  CHECK(std::set<std::size_t>(rows.begin(), rows.end()).size() == rows.size());
  const auto out = resample_balanced(ds, BalanceBy::kClass, 3);
  CHECK(std::count(out.noisy_labels.begin(), out.noisy_labels.end(), 1) == 40);
  CHECK(std::count(out.noisy_labels.begin(), out.noisy_labels.end(), 0) == 40);
  // every retained row is an input row
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.features(i, 0) == static_cast<double>(rows[i]));
  CHECK(resample_balanced(ds, BalanceBy::kClass, 3) == out);
}

TEST_CASE("resample_balanced: already balanced keeps every row") {
  std::vector<int> y(100, 0);
  for (int i = 0; i < 50; ++i) y[2 * i] = 1;
  CHECK(resample_balanced_indices(labelled(y), BalanceBy::kClass, 1).size() == 100);
}

TEST_CASE("resample_balanced: per group") {
  std::vector<int> y, g;
  for (int i = 0; i < 100; ++i) {
    y.push_back(i < 70 ? 1 : 0);
    g.push_back(0);
  }
  for (int i = 0; i < 100; ++i) {
    y.push_back(i < 45 ? 1 : 0);
    g.push_back(1);
  }
  const auto out = resample_balanced(labelled(y, g), BalanceBy::kGroup, 4);
  int cells[2][2] = {};
  for (std::size_t i = 0; i < out.size(); ++i) ++cells[(*out.groups)[i]][out.noisy_labels[i]];
  CHECK(cells[0][1] == 30);
  CHECK(cells[0][0] == 30);
  CHECK(cells[1][1] == 45);
  CHECK(cells[1][0] == 45);
}

TEST_CASE("resample_balanced: empty class is an error") {
  CHECK_THROWS_AS(resample_balanced(labelled({1, 1, 1}), BalanceBy::kClass, 0), DataError);
  CHECK_THROWS_AS(resample_balanced(labelled({1, 0, 1}), BalanceBy::kGroup, 0), ConfigError);
}

TEST_CASE("csv: round trip") {
  SyntheticConfig c;
  c.n = 100;
  c.d = 3;
  c.groups = 2;
  c.seed = 4;
  auto ds = inject_noise(generate_clusterable(c), BinaryClassNoise{0.2, 0.1}, 1);
  const auto path = temp_file("roundtrip.csv");
  save_csv(ds, path);
  const auto back = load_csv(path);
  CHECK(back.noisy_labels == ds.noisy_labels);
  CHECK(*back.clean_labels == *ds.clean_labels);
  CHECK(*back.groups == *ds.groups);
  REQUIRE(back.features.rows() == ds.features.rows());
  for (std::size_t i = 0; i < ds.features.data().size(); ++i) {
    CHECK(std::abs(back.features.data()[i] - ds.features.data()[i]) <= 1e-12);
  }
  CHECK(back == ds);
  std::filesystem::remove(path);
}

TEST_CASE("csv: non-numeric feature names row and column") {
  const auto path = temp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "f0,f1,label\n1,2,1\n3,abc,0\n";
  }
  try {
    load_csv(path);
    FAIL("expected a parse error");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("'f1'") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("csv: signed binary labels map to internal ids") {
  const auto path = temp_file("signed.csv");
  {
    std::ofstream out(path);
    out << "f0,label\n0.5,-1\n1.5,1\n2.5,1\n";
  }
  CsvSchema schema;
  const auto ds = load_csv(path, schema);
  CHECK(ds.noisy_labels == std::vector<int>{0, 1, 1});
  CHECK(schema.label_values == std::vector<long>{-1, 1});
  CHECK(ds.classes == 2);

  {
    std::ofstream out(path);
    out << "f0,label\n0.5,x\n";
  }
  CHECK_THROWS_AS(load_csv(path), DataError);
  {
    std::ofstream out(path);
    out << "f0,target\n0.5,1\n";
  }
  CHECK_THROWS_AS(load_csv(path), DataError);
  std::filesystem::remove(path);
}
