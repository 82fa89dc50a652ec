#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plmlad/dataset.hpp"
#include "plmlad/error.hpp"
#include "plmlad/network.hpp"
#include "plmlad/numeric.hpp"

namespace plmlad {

enum class PenaltyKind { zero, jacobian_clip, l1_clip };

// Values are clipped at cap * (1 - kCapSlack) so the penalty stays strictly below cap.
inline constexpr double kCapSlack = 1e-9;

// Bounded regularizer lambda * J_{N,M}(beta, W).
struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::zero;
  double cap = 1.0;
  double lambda = 0.0;

  void validate() const {
    if (!(cap > 0.0)) throw ConfigError("penalty.cap must be positive");
    if (!(lambda >= 0.0)) throw ConfigError("penalty.lambda must be nonnegative");
  }
  double clip_level() const { return cap * (1.0 - kCapSlack); }
};

// f_sigma(y) = 1 - exp(-y / sigma), weighted per layer by gamma_k.
struct SurrogateSpec {
  double sigma = 1.0;
  std::vector<double> layer_weights;

  static double f(double y) { return -std::expm1(-y); }
  static double f_prime(double y) { return std::exp(-y); }
};

// gamma_k = gamma0 / (total entry count over all layers), the same for every
// layer, so the surrogate term stays below gamma0.
inline std::vector<double> default_layer_weights(std::span<const int> widths, double gamma0) {
  std::int64_t total = 0;
  for (std::size_t k = 1; k < widths.size(); ++k) total += static_cast<std::int64_t>(widths[k]) * (widths[k - 1] + 1);
  return std::vector<double>(widths.size() - 1, gamma0 / static_cast<double>(total));
}

inline double lad_risk(const PlmParams& theta, const Dataset& data) {
  if (data.size() == 0) throw ArgumentError("lad_risk: empty data");
  const Eigen::VectorXd r = residuals(theta, data).cwiseAbs();
  return pairwise_sum(std::span<const double>(r.data(), static_cast<std::size_t>(r.size()))) /
         static_cast<double>(r.size());
}

inline double raw_penalty(const PenaltySpec& spec, const PlmParams& theta, const Dataset& data) {
  switch (spec.kind) {
    case PenaltyKind::zero:
      return 0.0;
    case PenaltyKind::jacobian_clip:
      return jacobian_l1(theta.weights, data.Z.transpose(), false).mean_l1;
    case PenaltyKind::l1_clip: {
      double s = theta.beta.cwiseAbs().sum();
      for (const auto& w : theta.weights.layers()) s += w.cwiseAbs().sum();
      return s;
    }
  }
  return 0.0;
}

// J_{N,M}: always in [0, cap).
inline double penalty_value(const PenaltySpec& spec, const PlmParams& theta, const Dataset& data) {
  spec.validate();
  return std::min(spec.clip_level(), raw_penalty(spec, theta, data));
}

// Clarke selection consistent with penalty_value: zero once saturated.
// For l1_clip the selection at a zero parameter is 0.
inline ParamGradient penalty_subgradient(const PenaltySpec& spec, const PlmParams& theta, const Dataset& data) {
  spec.validate();
  ParamGradient out = ParamGradient::zeros_like(theta);
  if (spec.kind == PenaltyKind::zero) return out;
  if (raw_penalty(spec, theta, data) >= spec.clip_level()) return out;
  const auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  if (spec.kind == PenaltyKind::l1_clip) {
    out.beta = theta.beta.unaryExpr(sgn);
    for (int k = 0; k < theta.weights.depth(); ++k) out.weights.layer(k) = theta.weights.layer(k).unaryExpr(sgn);
    return out;
  }
  out.weights = jacobian_l1(theta.weights, data.Z.transpose(), true).grad;
  return out;
}

inline std::int64_t l0_count(const WeightStack& w) { return w.nonzeros(); }

inline double surrogate_value(const SurrogateSpec& spec, const WeightStack& w) {
  if (!(spec.sigma > 0.0)) throw ArgumentError("surrogate sigma must be positive");
  if (static_cast<int>(spec.layer_weights.size()) != w.depth())
    throw ArgumentError("surrogate needs one weight per layer");
  double total = 0.0;
  for (int k = 0; k < w.depth(); ++k) {
    double s = 0.0;
    const auto& m = w.layer(k);
    for (Eigen::Index i = 0; i < m.size(); ++i) s += SurrogateSpec::f(std::abs(m.data()[i]) / spec.sigma);
    total += spec.layer_weights[static_cast<std::size_t>(k)] * s;
  }
  return total;
}

// Gradient of the surrogate term; the selection at w = 0 is 0.
inline WeightStack surrogate_gradient(const SurrogateSpec& spec, const WeightStack& w) {
  if (!(spec.sigma > 0.0)) throw ArgumentError("surrogate sigma must be positive");
  WeightStack g = WeightStack::zeros(w.widths());
  for (int k = 0; k < w.depth(); ++k) {
    const double gk = spec.layer_weights.at(static_cast<std::size_t>(k)) / spec.sigma;
    g.layer(k) = w.layer(k).unaryExpr([&](double v) {
      if (v == 0.0) return 0.0;
      return gk * SurrogateSpec::f_prime(std::abs(v) / spec.sigma) * (v > 0.0 ? 1.0 : -1.0);
    });
  }
  return g;
}

inline void require_box(const PlmParams& theta) {
  if (!theta.in_box()) throw InfeasibleError("parameter lies outside the box |beta| <= C, |W| <= 1");
}

// G = R_N + sum_k gamma_k f_sigma(|W_k|) + lambda J_{N,M}, on the box.
inline double relaxed_objective(const PlmParams& theta, const Dataset& data, const PenaltySpec& penalty,
                                const SurrogateSpec& surrogate) {
  require_box(theta);
  return lad_risk(theta, data) + surrogate_value(surrogate, theta.weights) +
         penalty.lambda * penalty_value(penalty, theta, data);
}

// H = R_N + lambda J_{N,M}, on the box intersected with the sparsity budget.
inline double exact_objective(const PlmParams& theta, const Dataset& data, const PenaltySpec& penalty,
                              std::int64_t sparsity) {
  require_box(theta);
  if (l0_count(theta.weights) > sparsity)
    throw InfeasibleError("weight stack has " + std::to_string(l0_count(theta.weights)) + " nonzeros, budget " +
                          std::to_string(sparsity));
  return lad_risk(theta, data) + penalty.lambda * penalty_value(penalty, theta, data);
}

// The l0-penalized objective R_N + sum_k gamma_k ||W_k||_0 + lambda J_{N,M},
// which the relaxed objective approaches as sigma -> 0.
inline double l0_penalized_objective(const PlmParams& theta, const Dataset& data, const PenaltySpec& penalty,
                                     std::span<const double> layer_weights) {
  require_box(theta);
  if (static_cast<int>(layer_weights.size()) != theta.weights.depth())
    throw ArgumentError("need one gamma per layer");
  double l0 = 0.0;
  for (int k = 0; k < theta.weights.depth(); ++k)
    l0 += layer_weights[static_cast<std::size_t>(k)] *
          static_cast<double>((theta.weights.layer(k).array() != 0.0).count());
  return lad_risk(theta, data) + l0 + penalty.lambda * penalty_value(penalty, theta, data);
}

}  // namespace plmlad
