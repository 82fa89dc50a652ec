#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "plmlad/dataset.hpp"
#include "plmlad/error.hpp"

namespace plmlad {

// Built-in true functions g0 on [0,1]^l.
inline double true_g(const GenConfig& config, const Eigen::Ref<const Eigen::VectorXd>& z) {
  using std::numbers::pi;
  switch (config.g0) {
    case TrueFunction::sine:
      return std::sin(2.0 * pi * z(0));
    case TrueFunction::additive_smooth: {
      double s = 0.0;
      for (Eigen::Index j = 0; j < z.size(); ++j) {
        const double a = config.g0_coeffs.empty() ? 1.0 : config.g0_coeffs[static_cast<std::size_t>(j)];
        s += a * std::cos(pi * z(j));
      }
      return s;
    }
    case TrueFunction::composite:
      return std::exp(-(z.array() - 0.5).square().sum()) * std::sin(2.0 * pi * z(0));
  }
  return 0.0;
}

// One draw from the error law; all laws are symmetric about zero.
template <typename Rng>
double draw_error(const ErrorSpec& e, Rng& rng) {
  switch (e.law) {
    case ErrorLaw::laplace: {
      std::exponential_distribution<double> expo(1.0);
      std::bernoulli_distribution coin(0.5);
      const double mag = e.b * expo(rng);
      return coin(rng) ? mag : -mag;
    }
    case ErrorLaw::student_t: {
      std::student_t_distribution<double> t(e.nu);
      return t(rng);
    }
    case ErrorLaw::contaminated_normal: {
      std::bernoulli_distribution contaminated(e.rho);
      std::normal_distribution<double> normal(0.0, 1.0);
      const bool c = contaminated(rng);
      const double v = normal(rng);
      return c ? e.kappa * v : v;
    }
  }
  return 0.0;
}

// Analytic f_eps(0).
inline double error_density_at_zero(const ErrorSpec& e) {
  e.validate();
  using std::numbers::pi;
  switch (e.law) {
    case ErrorLaw::laplace:
      return 1.0 / (2.0 * e.b);
    case ErrorLaw::student_t:
      return std::exp(std::lgamma((e.nu + 1.0) / 2.0) - std::lgamma(e.nu / 2.0)) / std::sqrt(e.nu * pi);
    case ErrorLaw::contaminated_normal:
      return (1.0 - e.rho) / std::sqrt(2.0 * pi) + e.rho / (e.kappa * std::sqrt(2.0 * pi));
  }
  return 0.0;
}

inline double error_density_at_zero(const GenConfig& config) { return error_density_at_zero(config.error); }

// Covariate draw (X, Z) from the generator's design; X = (V + Z_1)/2 in
// dependent mode keeps the support in [0,1] and E[X | Z] = 1/4 + Z_1/2.
template <typename Rng>
void draw_covariates(const GenConfig& config, Rng& rng, Eigen::Ref<Eigen::VectorXd> x, Eigen::Ref<Eigen::VectorXd> z) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int j = 0; j < config.l; ++j) z(j) = unif(rng);
  for (int j = 0; j < config.d; ++j) {
    const double v = unif(rng);
    x(j) = config.dependent ? 0.5 * (v + z(0)) : v;
  }
}

// Closed-form E[X | Z = z] of the generator's design.
inline Eigen::VectorXd conditional_mean_x(const GenConfig& config, const Eigen::Ref<const Eigen::VectorXd>& z) {
  if (config.dependent) return Eigen::VectorXd::Constant(config.d, 0.25 + 0.5 * z(0));
  return Eigen::VectorXd::Constant(config.d, 0.5);
}

// Y = beta0'X + g0(Z) + eps, rows drawn in order (Z, X, eps).
inline Dataset generate(const GenConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  Dataset data;
  data.X.resize(config.N, config.d);
  data.Z.resize(config.N, config.l);
  data.Y.resize(config.N);
  Eigen::VectorXd x(config.d), z(config.l);
  for (std::int64_t i = 0; i < config.N; ++i) {
    draw_covariates(config, rng, x, z);
    const double eps = draw_error(config.error, rng);
    data.X.row(i) = x.transpose();
    data.Z.row(i) = z.transpose();
    data.Y(i) = config.beta0.dot(x) + true_g(config, z) + eps;
  }
  data.provenance = config;
  data.validate();
  return data;
}

}  // namespace plmlad
