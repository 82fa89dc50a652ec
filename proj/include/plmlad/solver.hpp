#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plmlad/dataset.hpp"
#include "plmlad/error.hpp"
#include "plmlad/network.hpp"
#include "plmlad/objective.hpp"
#include "plmlad/projection.hpp"

namespace plmlad {

enum class SolverMode { relaxed, exact };

inline const char* to_string(SolverMode m) { return m == SolverMode::relaxed ? "relaxed" : "exact"; }

// alpha_k = alpha0 * k^{-p}; p in (0.5, 1] gives sum alpha_k = inf and
// sum alpha_k^2 < inf. The default p = 1 makes the tail of sum alpha_k^2
// negligible by k = 1e5.
struct StepSchedule {
  double alpha0 = 0.1;
  double exponent = 1.0;

  void validate() const {
    if (!(alpha0 > 0.0)) throw ConfigError("solver.alpha0 must be positive");
    if (!(exponent > 0.5 && exponent <= 1.0)) throw ConfigError("solver.exponent must lie in (0.5, 1]");
  }
  double operator()(std::int64_t k) const { return alpha0 * std::pow(static_cast<double>(k), -exponent); }
};

// sigma_k = 2^{-k}, k = 0..stages-1.
inline std::vector<double> geometric_sigma_plan(double start = 1.0, double factor = 0.5, int stages = 8) {
  std::vector<double> plan;
  double s = start;
  for (int k = 0; k < stages; ++k, s *= factor) plan.push_back(s);
  return plan;
}

struct SolverConfig {
  StepSchedule schedule;
  int batch_size = 32;
  std::int64_t max_iters = 10000;
  std::uint64_t seed = 0;
  SolverMode mode = SolverMode::exact;
  std::vector<double> sigma_plan = geometric_sigma_plan();
  double gamma0 = 0.01;
  std::int64_t record_every = 100;
  double stationarity_epsilon = 1e-3;

  void validate(std::int64_t n) const {
    schedule.validate();
    if (batch_size < 1) throw ConfigError("solver.batch_size must be positive");
    if (batch_size > n) throw ConfigError("solver.batch_size exceeds the sample count");
    if (max_iters < 0) throw ConfigError("solver.max_iters must be nonnegative");
    if (record_every < 1) throw ConfigError("solver.record_every must be positive");
    if (!(gamma0 >= 0.0)) throw ConfigError("solver.gamma0 must be nonnegative");
    if (!(stationarity_epsilon > 0.0)) throw ConfigError("solver.stationarity_epsilon must be positive");
    if (mode == SolverMode::relaxed) {
      if (sigma_plan.empty()) throw ConfigError("solver.sigma_plan must be nonempty in relaxed mode");
      for (std::size_t i = 0; i < sigma_plan.size(); ++i) {
        if (!(sigma_plan[i] > 0.0)) throw ConfigError("solver.sigma_plan entries must be positive");
        if (i > 0 && !(sigma_plan[i] < sigma_plan[i - 1]))
          throw ConfigError("solver.sigma_plan must be strictly decreasing");
      }
    }
  }
};

// The composite objective minimized in one solver mode: G (relaxed, with a
// surrogate) or H (exact, with the sparsity budget).
struct CompositeProblem {
  SolverMode mode = SolverMode::exact;
  PenaltySpec penalty;
  std::int64_t sparsity = 0;
  std::optional<SurrogateSpec> surrogate;
};

inline double composite_objective(const CompositeProblem& p, const PlmParams& theta, const Dataset& data) {
  if (p.mode == SolverMode::exact) return exact_objective(theta, data, p.penalty, p.sparsity);
  if (!p.surrogate) throw ArgumentError("relaxed objective needs a surrogate");
  return relaxed_objective(theta, data, p.penalty, *p.surrogate);
}

// Adds the deterministic (non-LAD) parts of the subgradient: the surrogate
// gradient in relaxed mode and lambda times the penalty subgradient.
inline void add_regularizer_subgradient(const CompositeProblem& p, const PlmParams& theta, const Dataset& data,
                                        ParamGradient& g) {
  if (p.mode == SolverMode::relaxed && p.surrogate) g.weights.axpy(1.0, surrogate_gradient(*p.surrogate, theta.weights));
  if (p.penalty.lambda > 0.0 && p.penalty.kind != PenaltyKind::zero)
    g.axpy(p.penalty.lambda, penalty_subgradient(p.penalty, theta, data));
}

inline ParamGradient full_subgradient(const CompositeProblem& p, const PlmParams& theta, const Dataset& data) {
  ParamGradient g = param_subgradient(theta, data);
  add_regularizer_subgradient(p, theta, data, g);
  return g;
}

// zeta(theta, omega): LAD subgradient on a minibatch drawn uniformly with
// replacement, plus the exact regularizer parts.
template <typename Rng>
ParamGradient stochastic_subgradient_sample(const CompositeProblem& p, const PlmParams& theta, const Dataset& data,
                                            int batch_size, Rng& rng) {
  if (batch_size < 1) throw ArgumentError("batch_size must be positive");
  std::uniform_int_distribution<Eigen::Index> pick(0, data.size() - 1);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(batch_size));
  for (auto& r : rows) r = pick(rng);
  ParamGradient g = param_subgradient(theta, data, rows);
  add_regularizer_subgradient(p, theta, data, g);
  return g;
}

inline PlmParams step_relaxed(const PlmParams& theta, const ParamGradient& grad, double alpha, double bound) {
  if (!(alpha >= 0.0)) throw ArgumentError("step size must be nonnegative");
  Eigen::VectorXd beta = theta.beta - alpha * grad.beta;
  WeightStack w = theta.weights;
  w.axpy(-alpha, grad.weights);
  return project_box_all(beta, w, bound);
}

inline PlmParams step_exact(const PlmParams& theta, const ParamGradient& grad, double alpha, double bound,
                            std::int64_t sparsity) {
  if (!(alpha >= 0.0)) throw ArgumentError("step size must be nonnegative");
  PlmParams out;
  out.beta_bound = bound;
  out.beta = project_box_beta(theta.beta - alpha * grad.beta, bound);
  WeightStack w = theta.weights;
  w.axpy(-alpha, grad.weights);
  out.weights = project_sparse_box(w, sparsity);
  return out;
}

inline PlmParams projected_step(const CompositeProblem& p, const PlmParams& theta, const ParamGradient& grad,
                                double alpha) {
  return p.mode == SolverMode::exact ? step_exact(theta, grad, alpha, theta.beta_bound, p.sparsity)
                                     : step_relaxed(theta, grad, alpha, theta.beta_bound);
}

// ||theta - Proj(theta - eps * g)|| / eps with g the full-data subgradient
// selection. Zero at fixed points of the projected subgradient step.
inline double stationarity_proxy(const CompositeProblem& p, const PlmParams& theta, const Dataset& data,
                                 double epsilon) {
  if (!(epsilon > 0.0)) throw ArgumentError("stationarity epsilon must be positive");
  const ParamGradient g = full_subgradient(p, theta, data);
  const PlmParams moved = projected_step(p, theta, g, epsilon);
  WeightStack dw = theta.weights;
  dw.axpy(-1.0, moved.weights);
  return std::sqrt((theta.beta - moved.beta).squaredNorm() + dw.squared_norm()) / epsilon;
}

struct TraceRecord {
  std::int64_t iter = 0;
  double objective = 0.0;
  double alpha = 0.0;
  std::int64_t sparsity = 0;
  double stationarity = 0.0;
  double sigma = 0.0;  // 0 in exact mode
};

struct FitTrace {
  std::vector<TraceRecord> records;
  PlmParams final_theta;
  PlmParams best_theta;
  double best_objective = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, FitTrace trace) : std::runtime_error(what), trace_(std::move(trace)) {}
  const FitTrace& trace() const noexcept { return trace_; }

 private:
  FitTrace trace_;
};

// CSV columns iter,objective,alpha,sparsity,stationarity,sigma.
inline void write_trace_csv(const FitTrace& trace, std::ostream& os) {
  os << "iter,objective,alpha,sparsity,stationarity,sigma\n";
  os.precision(17);
  for (const auto& r : trace.records)
    os << r.iter << ',' << r.objective << ',' << r.alpha << ',' << r.sparsity << ',' << r.stationarity << ','
       << r.sigma << '\n';
}

// Seeded start: beta = 0, weights i.i.d. uniform on [-0.5, 0.5]; in exact
// mode hard-thresholded to the s largest magnitudes.
inline PlmParams initial_params(const NetworkArch& arch, int d, double beta_bound, SolverMode mode,
                                std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  PlmParams theta;
  theta.beta = Eigen::VectorXd::Zero(d);
  theta.beta_bound = beta_bound;
  theta.weights = WeightStack::zeros(arch.widths);
  for (int k = 0; k < theta.weights.depth(); ++k) {
    auto& m = theta.weights.layer(k);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = unif(rng);
  }
  if (mode == SolverMode::exact) theta.weights = project_sparse_box(theta.weights, arch.sparsity);
  return theta;
}

inline CompositeProblem make_problem(const SolverConfig& config, const PenaltySpec& penalty, const NetworkArch& arch) {
  CompositeProblem p;
  p.mode = config.mode;
  p.penalty = penalty;
  p.sparsity = arch.sparsity;
  if (config.mode == SolverMode::relaxed)
    p.surrogate = SurrogateSpec{config.sigma_plan.front(), default_layer_weights(arch.widths, config.gamma0)};
  return p;
}

// Proximal stochastic subgradient iterations. Relaxed mode runs the sigma
// plan as a continuation with an equal iteration budget per stage, warm
// starting each stage; the step counter k is global across stages.
inline FitTrace run(const SolverConfig& config, const Dataset& data, const PenaltySpec& penalty,
                    const NetworkArch& arch, const PlmParams& init) {
  const auto t0 = std::chrono::steady_clock::now();
  arch.validate();
  penalty.validate();
  config.validate(data.size());
  init.weights.require_shape(arch.widths);
  if (init.beta.size() != data.d()) throw ArgumentError("init beta has the wrong dimension");
  if (!init.in_box()) throw ArgumentError("init lies outside the box");
  if (config.mode == SolverMode::exact && init.weights.nonzeros() > arch.sparsity)
    throw ArgumentError("init violates the sparsity budget");

  CompositeProblem problem = make_problem(config, penalty, arch);
  FitTrace trace;
  trace.final_theta = init;
  trace.best_theta = init;
  if (config.max_iters == 0) return trace;

  const std::vector<double> stages =
      config.mode == SolverMode::relaxed ? config.sigma_plan : std::vector<double>{0.0};
  const auto n_stages = static_cast<std::int64_t>(stages.size());
  std::mt19937_64 rng(config.seed);
  PlmParams theta = init;
  double alpha = 0.0;
  double current_sigma = stages.front();

  const auto record = [&](std::int64_t k, bool final_stage) {
    TraceRecord r;
    r.iter = k;
    r.objective = composite_objective(problem, theta, data);
    r.alpha = alpha;
    r.sparsity = theta.weights.nonzeros();
    r.stationarity = stationarity_proxy(problem, theta, data, config.stationarity_epsilon);
    r.sigma = current_sigma;
    trace.records.push_back(r);
    if (!std::isfinite(r.objective)) {
      trace.final_theta = theta;
      trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      throw DivergenceError("objective is not finite at iteration " + std::to_string(k), trace);
    }
    if (final_stage && !(r.objective >= trace.best_objective)) {
      trace.best_objective = r.objective;
      trace.best_theta = theta;
    }
  };

  std::int64_t k = 0;
  record(0, n_stages == 1);
  for (std::int64_t st = 0; st < n_stages; ++st) {
    current_sigma = stages[static_cast<std::size_t>(st)];
    if (problem.surrogate) problem.surrogate->sigma = current_sigma;
    const bool final_stage = st + 1 == n_stages;
    const std::int64_t budget = config.max_iters / n_stages + (final_stage ? config.max_iters % n_stages : 0);
    for (std::int64_t t = 0; t < budget; ++t) {
      ++k;
      alpha = config.schedule(k);
      const ParamGradient g = stochastic_subgradient_sample(problem, theta, data, config.batch_size, rng);
      theta = projected_step(problem, theta, g, alpha);
      if (k % config.record_every == 0 || k == config.max_iters) record(k, final_stage);
    }
  }
  trace.final_theta = theta;
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return trace;
}

}  // namespace plmlad
