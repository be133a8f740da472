// Independent reference computations used by the tests.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include <noisebal/dataset.hpp>

namespace oracle {

/// Two nearest neighbours per row by sorting every (distance, index) pair.
inline std::vector<std::array<std::size_t, 2>> two_nn(const noisebal::Matrix& pts) {
  const std::size_t n = pts.rows();
  std::vector<std::array<std::size_t, 2>> out(n);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < pts.cols(); ++k) {
        const double diff = pts(i, k) - pts(j, k);
        s += diff * diff;
      }
      cand.emplace_back(s, j);
    }
    std::partial_sort(cand.begin(), cand.begin() + 2, cand.end());
    out[i] = {cand[0].second, cand[1].second};
  }
  return out;
}

/// Fraction of rows whose two nearest neighbours share the row's clean label.
inline double clusterability(const noisebal::LabeledDataset& ds) {
  const auto nn = two_nn(ds.features);
  const auto& y = *ds.clean_labels;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < nn.size(); ++i) ok += (y[nn[i][0]] == y[i] && y[nn[i][1]] == y[i]);
  return static_cast<double>(ok) / static_cast<double>(nn.size());
}

struct Agreements {
  double pa, na;
};

/// PA/NA on a perfectly 2-NN-clusterable population with clean prior `pi`
/// and class-conditional flip rates a (positives) and b (negatives).
inline Agreements agreements(double pi, double a, double b) {
  const double pos = pi * (1 - a) + (1 - pi) * b;
  const double neg = pi * a + (1 - pi) * (1 - b);
  return {(pi * std::pow(1 - a, 3) + (1 - pi) * std::pow(b, 3)) / pos,
          (pi * std::pow(a, 3) + (1 - pi) * std::pow(1 - b, 3)) / neg};
}

struct Population {
  double pi, e_plus, e_minus;
};

/// Clean prior and flip rates of the noisy-label-balanced resample of a
/// population with clean prior p0. Downsampling by noisy label keeps a row with
/// a probability that depends on its noisy label, which shifts both.
inline Population balanced_resample(double p0, double e_plus, double e_minus) {
  const double pos = p0 * (1 - e_plus) + (1 - p0) * e_minus;
  const double neg = 1 - pos;
  const double keep_pos = std::min(pos, neg) / pos, keep_neg = std::min(pos, neg) / neg;
  const double pp = p0 * (1 - e_plus) * keep_pos, pn = p0 * e_plus * keep_neg;
  const double np = (1 - p0) * e_minus * keep_pos, nn = (1 - p0) * (1 - e_minus) * keep_neg;
  return {(pp + pn) / (pp + pn + np + nn), pn / (pp + pn), np / (np + nn)};
}

/// Gap PA - NA of population `p` after flipping its noisy positives w.p. eps.
inline double flipped_gap(const Population& p, double eps) {
  const auto g = agreements(p.pi, p.e_plus + (1 - p.e_plus) * eps, p.e_minus * (1 - eps));
  return g.pa - g.na;
}

/// Root in (0, hi) of a decreasing function by plain bisection.
inline double root(const std::function<double(double)>& f, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Central finite-difference gradient of f at x.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double binomial_se(double p, double n) { return std::sqrt(p * (1 - p) / n); }

}  // namespace oracle
