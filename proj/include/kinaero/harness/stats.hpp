#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace kinaero::harness {

struct MannWhitneyResult {
  double u = 0.0;       // U statistic of the first sample
  double p = 1.0;       // one-sided p for "first sample tends to be larger"
  bool exact = false;   // exact null distribution (no ties) vs normal approximation
};

// Mid-ranks (1-based) of the pooled values.
inline std::vector<double> midranks(std::span<const double> pooled) {
  std::vector<std::size_t> idx(pooled.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> rank(pooled.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

// Number of arrangements with U = u for sample sizes (m, n), u = 0..m n.
inline std::vector<double> mann_whitney_counts(std::size_t m, std::size_t n) {
  // f(m, n, u) = f(m - 1, n, u - n) + f(m, n - 1, u)
  std::vector<std::vector<std::vector<double>>> f(m + 1, std::vector<std::vector<double>>(n + 1));
  for (std::size_t i = 0; i <= m; ++i)
    for (std::size_t j = 0; j <= n; ++j) {
      f[i][j].assign(i * j + 1, 0.0);
      if (i == 0 || j == 0) {
        f[i][j][0] = 1.0;
        continue;
      }
      for (std::size_t u = 0; u <= i * j; ++u) {
        double c = 0.0;
        if (u >= j && u - j < f[i - 1][j].size()) c += f[i - 1][j][u - j];
        if (u < f[i][j - 1].size()) c += f[i][j - 1][u];
        f[i][j][u] = c;
      }
    }
  return f[m][n];
}

inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// One-sided Mann-Whitney U test of H1: values in x are stochastically larger
// than values in y.
inline MannWhitneyResult mann_whitney_greater(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("mann_whitney: both samples must be non-empty");
  const std::size_t m = x.size(), n = y.size();
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const auto rank = midranks(pooled);
  double rx = 0.0;
  for (std::size_t i = 0; i < m; ++i) rx += rank[i];
  MannWhitneyResult r;
  r.u = rx - static_cast<double>(m * (m + 1)) / 2.0;

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  if (tie_term == 0.0 && m * n <= 2500) {
    const auto counts = mann_whitney_counts(m, n);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    double tail = 0.0;
    for (std::size_t u = static_cast<std::size_t>(std::llround(r.u)); u < counts.size(); ++u) tail += counts[u];
    r.p = tail / total;
    r.exact = true;
    return r;
  }
  const double mm = static_cast<double>(m), nn = static_cast<double>(n), N = mm + nn;
  const double mean = mm * nn / 2.0;
  const double var = mm * nn / 12.0 * ((N + 1.0) - tie_term / (N * (N - 1.0)));
  if (var <= 0.0) {
    r.p = 1.0;
    return r;
  }
  r.p = normal_upper_tail((r.u - mean - 0.5) / std::sqrt(var));
  return r;
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace kinaero::harness
