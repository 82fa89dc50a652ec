#pragma once

// Independent oracles and random fixtures shared by the test binaries.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "plmlad/dataset.hpp"
#include "plmlad/network.hpp"
#include "plmlad/projection.hpp"

namespace plmlad::testing {

using Rng = std::mt19937_64;

inline double unif(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::vector<int> random_widths(Rng& rng, int q0, int max_depth = 4, int max_width = 6) {
  const int L = 2 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_depth - 1));
  std::vector<int> w{q0};
  for (int k = 1; k < L; ++k) w.push_back(1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_width)));
  w.push_back(1);
  return w;
}

// Entries uniform on [-bound, bound]; each zeroed with probability p_zero.
inline WeightStack random_stack(Rng& rng, const std::vector<int>& widths, double bound = 1.0, double p_zero = 0.0) {
  WeightStack w = WeightStack::zeros(widths);
  for (int k = 0; k < w.depth(); ++k) {
    auto& m = w.layer(k);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = unif(rng) < p_zero ? 0.0 : unif(rng, -bound, bound);
  }
  return w;
}

inline Dataset random_dataset(Rng& rng, int n, int d, int l, double noise = 1.0) {
  Dataset data;
  data.X.resize(n, d);
  data.Z.resize(n, l);
  data.Y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) data.X(i, j) = unif(rng);
    for (int j = 0; j < l; ++j) data.Z(i, j) = unif(rng);
    data.Y(i) = unif(rng, -noise, noise) + 2.0 * data.X(i, 0);
  }
  return data;
}

// Straight-line m_k recursion: m_0 = z, m_k = relu(A_k m_{k-1} + b_k) for
// hidden layers, g = A_L m_{L-1} + b_L, with plain scalar loops.
inline double mk_recursion(const WeightStack& w, const std::vector<double>& z) {
  std::vector<double> m = z;
  for (int k = 0; k < w.depth(); ++k) {
    const auto& W = w.layer(k);
    const auto in = static_cast<Eigen::Index>(m.size());
    std::vector<double> next(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      long double acc = W(r, in);
      for (Eigen::Index c = 0; c < in; ++c) acc += static_cast<long double>(W(r, c)) * m[static_cast<std::size_t>(c)];
      const double v = static_cast<double>(acc);
      next[static_cast<std::size_t>(r)] = k + 1 < w.depth() ? (v > 0.0 ? v : 0.0) : v;
    }
    m = std::move(next);
  }
  return m.at(0);
}

// Visits every scalar parameter of theta (beta first, then weights in
// lexicographic order) through a reference.
inline void for_each_param(PlmParams& theta, const std::function<void(double&)>& f) {
  for (Eigen::Index i = 0; i < theta.beta.size(); ++i) f(theta.beta(i));
  for (int k = 0; k < theta.weights.depth(); ++k) {
    auto& m = theta.weights.layer(k);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f(m(r, c));
  }
}

inline std::vector<double> flatten(const ParamGradient& g) {
  std::vector<double> out(g.beta.data(), g.beta.data() + g.beta.size());
  g.weights.for_each_entry([&](int, Eigen::Index, Eigen::Index, double v) { out.push_back(v); });
  return out;
}

// Central differences of f over every parameter of theta.
inline std::vector<double> central_differences(PlmParams theta, const std::function<double(const PlmParams&)>& f,
                                               double h) {
  std::vector<double> out;
  std::vector<double*> slots;
  for_each_param(theta, [&](double& v) { slots.push_back(&v); });
  for (double* p : slots) {
    const double orig = *p;
    *p = orig + h;
    const double up = f(theta);
    *p = orig - h;
    const double down = f(theta);
    *p = orig;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

// Exhaustive projection onto {||W||_0 <= s} x [-1,1]: best squared distance
// over all supports of size <= s with per-entry clipping.
inline double brute_force_sparse_distance(const std::vector<double>& g, int s) {
  const int n = static_cast<int>(g.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) > s) continue;
    double dist = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = (mask >> i) & 1u ? std::min(1.0, std::max(-1.0, g[static_cast<std::size_t>(i)])) : 0.0;
      dist += (v - g[static_cast<std::size_t>(i)]) * (v - g[static_cast<std::size_t>(i)]);
    }
    best = std::min(best, dist);
  }
  return best;
}

// Distance of theta from the nonsmooth set of the LAD risk and the penalties:
// min |residual|, |hidden pre-activation| and, with jacobian, |dg/dz_j|.
inline double smooth_margin(const PlmParams& theta, const Dataset& data, bool jacobian) {
  double m = residuals(theta, data).cwiseAbs().minCoeff();
  ForwardCache cache;
  forward_batch(theta.weights, data.Z.transpose(), cache);
  for (std::size_t k = 0; k + 1 < cache.pre.size(); ++k) m = std::min(m, cache.pre[k].cwiseAbs().minCoeff());
  if (jacobian)
    for (Eigen::Index i = 0; i < data.size(); ++i)
      m = std::min(m, input_jacobian(theta.weights, data.Z.row(i).transpose()).cwiseAbs().minCoeff());
  theta.weights.for_each_entry([&](int, Eigen::Index, Eigen::Index, double v) { m = std::min(m, std::abs(v)); });
  return m;
}

inline std::vector<double> entries(const WeightStack& w) {
  std::vector<double> out;
  w.for_each_entry([&](int, Eigen::Index, Eigen::Index, double v) { out.push_back(v); });
  return out;
}

}  // namespace plmlad::testing
