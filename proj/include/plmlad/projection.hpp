#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "plmlad/error.hpp"
#include "plmlad/network.hpp"

namespace plmlad {

inline double clip(double y, double lo, double hi) {
  if (lo > hi) throw ArgumentError("clip: lo > hi");
  return std::min(hi, std::max(lo, y));
}

inline Eigen::VectorXd project_box_beta(const Eigen::VectorXd& beta, double bound) {
  if (!(bound > 0.0)) throw ArgumentError("beta bound must be positive");
  return beta.cwiseMax(-bound).cwiseMin(bound);
}

// Gain in squared distance from keeping an entry (clipped to [-1,1]) instead
// of zeroing it.
inline double benefit(double g) {
  const double a = std::abs(g);
  return a <= 1.0 ? g * g : 2.0 * a - 1.0;
}

struct BenefitEntry {
  int layer = 0;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double benefit = 0.0;
  double clipped = 0.0;
};

struct SparseProjection {
  WeightStack weights;
  double squared_distance = 0.0;  // ||W* - G||^2
  std::int64_t support_size = 0;
};

// Euclidean projection of G onto {sum_k ||W_k||_0 <= s} intersected with the
// unit box. Keeps the s largest benefits (ties: lexicographic (layer, row,
// col) order), clips those entries and zeroes the rest. Entries with zero
// benefit are never kept.
inline SparseProjection project_sparse_box_detailed(const WeightStack& G, std::int64_t s) {
  if (s < 0) throw ArgumentError("sparsity budget must be nonnegative");
  std::vector<BenefitEntry> entries;
  entries.reserve(static_cast<std::size_t>(G.entry_count()));
  double total_sq = 0.0;
  G.for_each_entry([&](int i, Eigen::Index j, Eigen::Index k, double g) {
    total_sq += g * g;
    const double b = benefit(g);
    if (b > 0.0) entries.push_back({i, j, k, b, std::min(1.0, std::max(-1.0, g))});
  });
  // entries are already in lexicographic order; the index breaks ties
  const auto before = [&](const BenefitEntry& a, const BenefitEntry& b) {
    if (a.benefit != b.benefit) return a.benefit > b.benefit;
    if (a.layer != b.layer) return a.layer < b.layer;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  };
  const auto keep = static_cast<std::size_t>(std::min<std::int64_t>(s, static_cast<std::int64_t>(entries.size())));
  if (keep < entries.size())
    std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(keep), entries.end(), before);

  SparseProjection out;
  out.weights = WeightStack::zeros(G.widths());
  double gained = 0.0;
  for (std::size_t t = 0; t < keep; ++t) {
    const auto& e = entries[t];
    out.weights.layer(e.layer)(e.row, e.col) = e.clipped;
    gained += e.benefit;
  }
  out.support_size = static_cast<std::int64_t>(keep);
  out.squared_distance = total_sq - gained;
#ifndef NDEBUG
  {
    WeightStack diff = out.weights;
    diff.axpy(-1.0, G);
    const double direct = diff.squared_norm();
    assert(std::abs(direct - out.squared_distance) <= 1e-9 * std::max(1.0, total_sq));
  }
#endif
  return out;
}

inline WeightStack project_sparse_box(const WeightStack& G, std::int64_t s) {
  return project_sparse_box_detailed(G, s).weights;
}

// Box projection of the whole parameter: beta to [-C,C]^d, weights to [-1,1].
inline PlmParams project_box_all(const Eigen::VectorXd& beta, const WeightStack& weights, double bound) {
  PlmParams out;
  out.beta = project_box_beta(beta, bound);
  out.beta_bound = bound;
  out.weights = weights;
  for (int k = 0; k < out.weights.depth(); ++k) out.weights.layer(k) = weights.layer(k).cwiseMax(-1.0).cwiseMin(1.0);
  return out;
}

inline PlmParams project_box_all(const PlmParams& raw, double bound) {
  return project_box_all(raw.beta, raw.weights, bound);
}

}  // namespace plmlad
