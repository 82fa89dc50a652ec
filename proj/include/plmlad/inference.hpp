#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "plmlad/datagen.hpp"
#include "plmlad/dataset.hpp"
#include "plmlad/error.hpp"
#include "plmlad/network.hpp"
#include "plmlad/numeric.hpp"

namespace plmlad {

// silverman:       0.9 * min(sd, IQR/1.34) * n^{-1/5}
// silverman_cusp:  0.9 * min(sd, IQR/1.34) * n^{-1/3}, the pointwise rate
//                  for a density with a kink at the evaluation point.
enum class BandwidthRule { silverman, silverman_cusp };

inline double robust_scale(std::span<const double> v) {
  const double sd = std::sqrt(variance(v));
  std::vector<double> copy(v.begin(), v.end());
  const double iqr = quantile(copy, 0.75) - quantile(copy, 0.25);
  const double s = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return s;
}

inline double rule_bandwidth(std::span<const double> v, BandwidthRule rule) {
  const double scale = robust_scale(v);
  if (!(scale > 0.0)) throw DegenerateDataError("bandwidth rule: sample has zero spread");
  const double n = static_cast<double>(v.size());
  const double rate = rule == BandwidthRule::silverman ? std::pow(n, -0.2) : std::cbrt(1.0 / n);
  return 0.9 * scale * rate;
}

// Nadaraya-Watson estimate of E[X | Z] (optionally weighted by per-sample
// f(0 | V_i)) with a Gaussian product kernel.
class PhiStarFit {
 public:
  PhiStarFit(Eigen::MatrixXd z, Eigen::MatrixXd x, Eigen::VectorXd sample_weights, Eigen::VectorXd bandwidth)
      : z_(std::move(z)), x_(std::move(x)), w_(std::move(sample_weights)), h_(std::move(bandwidth)) {}

  const Eigen::VectorXd& bandwidth() const { return h_; }

  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    Eigen::VectorXd k = kernel_weights(z);
    const double total = k.sum();
    if (!(total > 0.0)) throw DegenerateDataError("phi_star: no kernel mass at query point");
    return x_.transpose() * k / total;
  }

  // Effective squared-weight sum sum_i k_i^2 / (sum_i k_i)^2 at z, for
  // pointwise standard errors.
  double squared_weight_sum(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    const Eigen::VectorXd k = kernel_weights(z);
    return k.squaredNorm() / (k.sum() * k.sum());
  }

  Eigen::MatrixXd fitted() const {
    Eigen::MatrixXd out(z_.rows(), x_.cols());
    for (Eigen::Index i = 0; i < z_.rows(); ++i) out.row(i) = predict(z_.row(i).transpose()).transpose();
    return out;
  }

 private:
  Eigen::VectorXd kernel_weights(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    if (z.size() != z_.cols()) throw ConfigError("phi_star: query dimension mismatch");
    Eigen::VectorXd k(z_.rows());
    for (Eigen::Index i = 0; i < z_.rows(); ++i) {
      double e = 0.0;
      for (Eigen::Index j = 0; j < z_.cols(); ++j) {
        const double u = (z(j) - z_(i, j)) / h_(j);
        e += u * u;
      }
      k(i) = w_(i) * std::exp(-0.5 * e);
    }
    return k;
  }

  Eigen::MatrixXd z_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd w_;
  Eigen::VectorXd h_;
};

// bandwidth: common value for every Z coordinate, or per-coordinate
// Silverman when empty. density_weights: f(0 | V_i) for the weighted
// projection; empty means unweighted.
inline PhiStarFit estimate_phi_star(const Dataset& data, std::optional<double> bandwidth = std::nullopt,
                                    const Eigen::VectorXd& density_weights = {}) {
  if (data.size() < 30) throw ArgumentError("estimate_phi_star needs N >= 30");
  Eigen::VectorXd h(data.l());
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw ArgumentError("phi_star bandwidth must be positive");
    h.setConstant(*bandwidth);
  } else {
    for (int j = 0; j < data.l(); ++j) {
      const Eigen::VectorXd col = data.Z.col(j);
      h(j) = rule_bandwidth(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                            BandwidthRule::silverman);
    }
  }
  Eigen::VectorXd w = density_weights.size() == 0 ? Eigen::VectorXd::Ones(data.size()) : density_weights;
  if (w.size() != data.size()) throw ArgumentError("phi_star density weights must have length N");
  return PhiStarFit(data.Z, data.X, std::move(w), std::move(h));
}

// Gaussian kernel density estimate of the residual density at 0.
inline double estimate_f0(std::span<const double> residuals, BandwidthRule rule = BandwidthRule::silverman_cusp,
                          std::optional<double> bandwidth = std::nullopt) {
  if (residuals.size() < 30) throw ArgumentError("estimate_f0 needs N >= 30");
  const auto [lo, hi] = std::minmax_element(residuals.begin(), residuals.end());
  if (*lo == *hi) throw DegenerateDataError("estimate_f0: all residuals are identical");
  const double h = bandwidth ? *bandwidth : rule_bandwidth(residuals, rule);
  if (!(h > 0.0)) throw ArgumentError("f0 bandwidth must be positive");
  double s = 0.0;
  for (double r : residuals) {
    const double u = r / h;
    s += std::exp(-0.5 * u * u);
  }
  return s / (static_cast<double>(residuals.size()) * h * std::sqrt(2.0 * std::numbers::pi));
}

enum class VarianceFactor { quarter, unit };

inline double factor_value(VarianceFactor f) { return f == VarianceFactor::quarter ? 0.25 : 1.0; }

struct InferenceReport {
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd sigma1;
  Eigen::MatrixXd sigma2;
  Eigen::MatrixXd sandwich_cov;  // covariance of beta_hat (already divided by N)
  Eigen::VectorXd ci_lower;
  Eigen::VectorXd ci_upper;
  double f0_hat = 0.0;
  double ci_level = 0.95;
  VarianceFactor factor = VarianceFactor::quarter;
  double condition_number = 0.0;
  std::int64_t n = 0;

  Eigen::VectorXd standard_errors() const { return sandwich_cov.diagonal().cwiseSqrt(); }
};

inline constexpr double kMaxConditionNumber = 1e8;

// Sigma1 = (1/N) sum Xt Xt', Sigma2 = f0 * Sigma1 (or the density-weighted
// average when per-sample densities are given), and
// Cov(beta_hat) = (factor / N) Sigma2^{-1} Sigma1 Sigma2^{-1}.
inline InferenceReport sandwich_covariance(const Dataset& data, const Eigen::VectorXd& beta_hat,
                                           const Eigen::MatrixXd& phi_fitted, double f0_hat, double ci_level = 0.95,
                                           VarianceFactor factor = VarianceFactor::quarter,
                                           const Eigen::VectorXd& density_at_zero = {}) {
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ArgumentError("ci_level must lie in (0,1)");
  if (phi_fitted.rows() != data.size() || phi_fitted.cols() != data.d())
    throw ArgumentError("phi fitted values must be N x d");
  if (beta_hat.size() != data.d()) throw ArgumentError("beta_hat has the wrong dimension");
  const auto n = static_cast<double>(data.size());
  const Eigen::MatrixXd xt = data.X - phi_fitted;

  InferenceReport rep;
  rep.beta_hat = beta_hat;
  rep.n = data.size();
  rep.f0_hat = f0_hat;
  rep.ci_level = ci_level;
  rep.factor = factor;
  rep.sigma1 = xt.transpose() * xt / n;
  if (density_at_zero.size() == 0) {
    rep.sigma2 = f0_hat * rep.sigma1;
  } else {
    if (density_at_zero.size() != data.size()) throw ArgumentError("density weights must have length N");
    rep.sigma2 = xt.transpose() * density_at_zero.asDiagonal() * xt / n;
  }
  rep.sigma1 = 0.5 * (rep.sigma1 + rep.sigma1.transpose()).eval();
  rep.sigma2 = 0.5 * (rep.sigma2 + rep.sigma2.transpose()).eval();

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rep.sigma2);
  const double lmax = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double lmin = eig.eigenvalues().cwiseAbs().minCoeff();
  rep.condition_number = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (!(rep.condition_number < kMaxConditionNumber))
    throw IllConditionedError("Sigma2 is ill-conditioned", rep.condition_number);

  const Eigen::MatrixXd inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                              eig.eigenvectors().transpose();
  rep.sandwich_cov = factor_value(factor) / n * inv * rep.sigma1 * inv;
  rep.sandwich_cov = 0.5 * (rep.sandwich_cov + rep.sandwich_cov.transpose()).eval();

  const double z = normal_quantile(0.5 + ci_level / 2.0);
  const Eigen::VectorXd half = z * rep.standard_errors();
  rep.ci_lower = beta_hat - half;
  rep.ci_upper = beta_hat + half;
  return rep;
}

inline nlohmann::json to_json(const InferenceReport& r) {
  const auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  const auto mat = [&](const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec(m.row(i).transpose()));
    return rows;
  };
  return {{"beta_hat", vec(r.beta_hat)},
          {"Sigma1_hat", mat(r.sigma1)},
          {"Sigma2_hat", mat(r.sigma2)},
          {"sandwich_cov", mat(r.sandwich_cov)},
          {"standard_errors", vec(r.standard_errors())},
          {"ci_lower", vec(r.ci_lower)},
          {"ci_upper", vec(r.ci_upper)},
          {"ci_level", r.ci_level},
          {"f0_hat", r.f0_hat},
          {"variance_factor", r.factor == VarianceFactor::quarter ? "quarter" : "unit"},
          {"condition_number", r.condition_number},
          {"N", r.n}};
}

struct SmoothnessSpec {
  std::vector<double> gamma;
  std::vector<int> dbar;

  int J() const { return static_cast<int>(gamma.size()); }

  void validate() const {
    if (gamma.empty() || gamma.size() != dbar.size()) throw ArgumentError("smoothness: gamma and dbar need equal length J >= 1");
    for (double g : gamma)
      if (!(g > 0.0)) throw ArgumentError("smoothness: gamma entries must be positive");
    for (int d : dbar)
      if (d < 1) throw ArgumentError("smoothness: dbar entries must be positive");
  }

  // gamma_bar_k = gamma_k * prod_{i>k} min(gamma_i, 1)
  std::vector<double> effective() const {
    std::vector<double> out(gamma.size());
    double tail = 1.0;
    for (std::size_t k = gamma.size(); k-- > 0;) {
      out[k] = gamma[k] * tail;
      tail *= std::min(gamma[k], 1.0);
    }
    return out;
  }
};

struct RateInfo {
  double zeta = 0.0;
  double r_n = 0.0;
};

// zeta = min_k gamma_bar_k / (2 gamma_bar_k + dbar_k), r_N = N^{-zeta}.
inline RateInfo theoretical_rate(const SmoothnessSpec& spec, std::int64_t n) {
  spec.validate();
  if (n < 1) throw ArgumentError("theoretical_rate needs N >= 1");
  const auto eff = spec.effective();
  double zeta = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < eff.size(); ++k) zeta = std::min(zeta, eff[k] / (2.0 * eff[k] + spec.dbar[k]));
  return {zeta, std::pow(static_cast<double>(n), -zeta)};
}

// Entropy bound (s+1) log(2 H^2 (L+1) / eps) for the sparse network class,
// H = prod_{k=1}^{L} (q_k + 1).
inline double covering_bound(double epsilon, std::int64_t s, int depth, std::span<const int> widths) {
  if (static_cast<int>(widths.size()) != depth + 1) throw ArgumentError("covering_bound: widths must have L+1 entries");
  if (s < 0) throw ArgumentError("covering_bound: s must be nonnegative");
  double h = 1.0;
  for (int k = 1; k <= depth; ++k) h *= widths[static_cast<std::size_t>(k)] + 1;
  const double top = 2.0 * h * h * (depth + 1);
  if (!(epsilon > 0.0 && epsilon < top)) throw ArgumentError("covering_bound: epsilon outside (0, 2 H^2 (L+1))");
  return static_cast<double>(s + 1) * std::log(top / epsilon);
}

struct EstimationMetrics {
  double beta_err = 0.0;  // max |beta_hat - beta0|
  double g_err_l2 = 0.0;  // RMS of g_hat - g0 over fresh Z
  double d_theta = 0.0;   // RMS of the full prediction difference over fresh (X, Z)
};

inline EstimationMetrics estimation_metrics(const PlmParams& theta_hat, const GenConfig& config,
                                            std::int64_t n_eval = 10000, std::uint64_t seed = 0x5eedULL) {
  if (theta_hat.beta.size() != config.d) throw ArgumentError("theta_hat beta dimension does not match config");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd X(n_eval, config.d), Z(n_eval, config.l);
  Eigen::VectorXd x(config.d), z(config.l), g0(n_eval);
  for (std::int64_t i = 0; i < n_eval; ++i) {
    draw_covariates(config, rng, x, z);
    X.row(i) = x.transpose();
    Z.row(i) = z.transpose();
    g0(i) = true_g(config, z);
  }
  const Eigen::VectorXd dg = network_outputs(theta_hat.weights, Z) - g0;
  const Eigen::VectorXd dfull = X * (theta_hat.beta - config.beta0) + dg;
  EstimationMetrics m;
  m.beta_err = (theta_hat.beta - config.beta0).cwiseAbs().maxCoeff();
  m.g_err_l2 = std::sqrt(dg.squaredNorm() / static_cast<double>(n_eval));
  m.d_theta = std::sqrt(dfull.squaredNorm() / static_cast<double>(n_eval));
  return m;
}

inline EstimationMetrics estimation_metrics(const PlmParams& theta_hat, const Dataset& data,
                                            std::int64_t n_eval = 10000, std::uint64_t seed = 0x5eedULL) {
  if (!data.provenance) throw UnsupportedError("estimation metrics need a generated dataset with known truth");
  return estimation_metrics(theta_hat, *data.provenance, n_eval, seed);
}

}  // namespace plmlad
