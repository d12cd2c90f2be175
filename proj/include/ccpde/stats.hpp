#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "errors.hpp"

namespace ccpde::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) throw ContractError("mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation (n - 1 denominator).
inline double stddev(std::span<const double> x) {
  if (x.size() < 2) throw ContractError("stddev needs at least two values");
  const double mu = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

/// Pearson correlation; NaN when either side has zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("pearson: bad sample sizes");
  // Test constancy directly; the centred sum of squares of a constant column is roundoff, not zero.
  auto constant = [](std::span<const double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo == *hi;
  };
  if (constant(x) || constant(y)) return std::nan("");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double a = x[k] - mx, b = y[k] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nan("");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// 1-based ranks with ties averaged.
inline std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t lo = 0; lo < idx.size();) {
    std::size_t hi = lo + 1;
    while (hi < idx.size() && x[idx[hi]] == x[idx[lo]]) ++hi;
    const double avg = 0.5 * static_cast<double>(lo + hi + 1);
    for (std::size_t k = lo; k < hi; ++k) r[idx[k]] = avg;
    lo = hi;
  }
  return r;
}

/// Rank of x[last] among x (ties averaged), without sorting the whole window.
inline double rank_of(std::span<const double> x, double value) {
  double below = 0.0, equal = 0.0;
  for (double v : x) {
    if (v < value) below += 1.0;
    else if (v == value) equal += 1.0;
  }
  return below + 0.5 * (equal + 1.0);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x), ry = ranks(y);
  return pearson(rx, ry);
}

inline double median(std::vector<double> x) {
  if (x.empty()) throw ContractError("median of empty sample");
  const std::size_t mid = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid), x.end());
  const double hi = x[mid];
  if (x.size() % 2 == 1) return hi;
  const double lo = *std::max_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

/// Median absolute deviation about the median (unscaled).
inline double mad(std::span<const double> x, double* center = nullptr) {
  const double med = median(std::vector<double>(x.begin(), x.end()));
  std::vector<double> dev(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) dev[k] = std::abs(x[k] - med);
  if (center) *center = med;
  return median(std::move(dev));
}

/// Linear-interpolation quantile (type 7).
inline double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw ContractError("quantile of empty sample");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

}  // namespace ccpde::stats
