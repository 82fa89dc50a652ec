#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "plmlad/error.hpp"

namespace plmlad {

// Signum with sign(0) = +1 (right-continuous selection).
inline double signum(double t) { return t >= 0.0 ? 1.0 : -1.0; }

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

// ReLU derivative with the fixed selection 1 at the kink.
inline double relu_slope(double v) { return v >= 0.0 ? 1.0 : 0.0; }

// Pairwise (cascade) summation. The reduction tree depends only on the
// length, so results are bit-reproducible.
inline double pairwise_sum(std::span<const double> v) {
  constexpr std::size_t kBlock = 32;
  if (v.size() <= kBlock) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("mean of empty sample");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

// Unbiased sample variance.
inline double variance(std::span<const double> v) {
  if (v.size() < 2) throw ArgumentError("variance needs at least two values");
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Linear-interpolation quantile (type 7, as in R's default).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw ArgumentError("quantile of empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("quantile level outside [0,1]");
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

// Moment-based sample skewness g1.
inline double skewness(std::span<const double> v) {
  const double m = mean(v);
  double m2 = 0.0, m3 = 0.0;
  for (double x : v) {
    const double d = x - m;
    m2 += d * d;
    m3 += d * d * d;
  }
  const double n = static_cast<double>(v.size());
  m2 /= n;
  m3 /= n;
  return m3 / std::pow(m2, 1.5);
}

// Moment-based sample excess kurtosis g2.
inline double excess_kurtosis(std::span<const double> v) {
  const double m = mean(v);
  double m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double d = x - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  const double n = static_cast<double>(v.size());
  m2 /= n;
  m4 /= n;
  return m4 / (m2 * m2) - 3.0;
}

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ArgumentError("normal quantile level outside (0,1)");
  return boost::math::quantile(boost::math::normal(), p);
}

// Least-squares slope of y on x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("ols_slope needs matching samples of size >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw ArgumentError("ols_slope: x has zero spread");
  return sxy / sxx;
}

}  // namespace plmlad
