#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "plmlad/datagen.hpp"
#include "plmlad/dataset.hpp"
#include "plmlad/error.hpp"
#include "plmlad/inference.hpp"
#include "plmlad/network.hpp"
#include "plmlad/numeric.hpp"
#include "plmlad/objective.hpp"
#include "plmlad/solver.hpp"

namespace plmlad {

struct RatesSpec {
  std::vector<std::int64_t> sample_sizes{500, 2000, 8000};
  int replications = 50;
  // Smoothness of g0 used only for the reported theoretical exponent.
  SmoothnessSpec smoothness{{2.0}, {1}};
};

// One experiment. The defaults are the calibrated default experiment:
// N = 2000, d = 2, l = 1, beta0 = (1, -1), g0 = sin(2 pi z), Laplace(1)
// errors, a (1, 16, 16, 1) network with s = 250.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  GenConfig gen;
  std::optional<std::string> data_csv;
  NetworkArch arch{{1, 16, 16, 1}, 250, 5.0};
  PenaltySpec penalty{PenaltyKind::l1_clip, 100.0, 1e-4};
  SolverConfig solver = [] {
    SolverConfig s;
    s.schedule = {1.0, 0.51};
    s.batch_size = 32;
    s.max_iters = 100000;
    s.mode = SolverMode::relaxed;
    s.gamma0 = 0.01;
    s.record_every = 1000;
    return s;
  }();
  double beta_bound = 10.0;
  int replications = 200;
  double ci_level = 0.95;
  std::string output_dir = "out";
  VarianceFactor variance_factor = VarianceFactor::quarter;
  RatesSpec rates;

  void validate() const {
    try {
      gen.validate();
      arch.validate();
      penalty.validate();
      solver.validate(data_csv ? std::numeric_limits<std::int64_t>::max() : gen.N);
      rates.smoothness.validate();
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
    if (arch.widths.front() != gen.l) throw ConfigError("arch.widths[0] must equal gen.l");
    if (!(beta_bound > 0.0)) throw ConfigError("beta_bound must be positive");
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0,1)");
    if (rates.replications < 1) throw ConfigError("rates.replications must be >= 1");
    for (auto n : rates.sample_sizes)
      if (n < solver.batch_size) throw ConfigError("rates.sample_sizes entries must be >= solver.batch_size");
  }
};

// ---- seeds ---------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Replication r draws everything from seed ^ r: the data stream uses it
// directly, the solver and the initial weights use splitmix64 children.
struct RunSeeds {
  std::uint64_t data = 0;
  std::uint64_t solver = 0;
  std::uint64_t init = 0;
};

inline RunSeeds derive_seeds(std::uint64_t seed, std::uint64_t replication) {
  const std::uint64_t base = seed ^ replication;
  const std::uint64_t s1 = splitmix64(base);
  return {base, s1, splitmix64(s1)};
}

// ---- config json -----------------------------------------------------------

namespace detail {

inline std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

template <typename T>
T convert(const nlohmann::json& j, const std::string& path);

template <>
inline double convert<double>(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  return j.get<double>();
}

template <>
inline bool convert<bool>(const nlohmann::json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path + ": expected true or false");
  return j.get<bool>();
}

template <>
inline std::string convert<std::string>(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  return j.get<std::string>();
}

template <typename I>
  requires std::is_integral_v<I>
I convert_integer(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  if constexpr (std::is_unsigned_v<I>) {
    if (j.is_number_unsigned()) return static_cast<I>(j.get<std::uint64_t>());
    if (j.get<std::int64_t>() < 0) throw ConfigError(path + ": expected a nonnegative integer");
    return static_cast<I>(j.get<std::int64_t>());
  } else {
    const auto v = j.get<std::int64_t>();
    if (v < std::numeric_limits<I>::min() || v > std::numeric_limits<I>::max())
      throw ConfigError(path + ": integer out of range");
    return static_cast<I>(v);
  }
}

template <>
inline int convert<int>(const nlohmann::json& j, const std::string& path) {
  return convert_integer<int>(j, path);
}
template <>
inline std::int64_t convert<std::int64_t>(const nlohmann::json& j, const std::string& path) {
  return convert_integer<std::int64_t>(j, path);
}
template <>
inline std::uint64_t convert<std::uint64_t>(const nlohmann::json& j, const std::string& path) {
  return convert_integer<std::uint64_t>(j, path);
}

template <typename T>
std::vector<T> convert_array(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(convert<T>(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

// Reads the fields of one json object; any key left unread is an error.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    out = convert<T>(j_.at(key), join_path(path_, key));
  }

  template <typename T>
  void read_array(const std::string& key, std::vector<T>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    out = convert_array<T>(j_.at(key), join_path(path_, key));
  }

  template <typename E>
  void read_enum(const std::string& key, E& out, const std::map<std::string, E>& names) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto path = join_path(path_, key);
    const auto s = convert<std::string>(j_.at(key), path);
    const auto it = names.find(s);
    if (it == names.end()) {
      std::string allowed;
      for (const auto& [n, v] : names) allowed += (allowed.empty() ? "" : ", ") + n;
      throw ConfigError(path + ": unknown value '" + s + "' (allowed: " + allowed + ")");
    }
    out = it->second;
  }

  void mark(const std::string& key) { seen_.insert(key); }

  ObjectReader child(const std::string& key) {
    seen_.insert(key);
    return ObjectReader(j_.at(key), join_path(path_, key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(join_path(path_, key) + ": unknown field");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline const std::map<std::string, TrueFunction>& true_function_names() {
  static const std::map<std::string, TrueFunction> m{
      {"sine", TrueFunction::sine}, {"additive_smooth", TrueFunction::additive_smooth}, {"composite", TrueFunction::composite}};
  return m;
}
inline const std::map<std::string, ErrorLaw>& error_law_names() {
  static const std::map<std::string, ErrorLaw> m{
      {"laplace", ErrorLaw::laplace}, {"student_t", ErrorLaw::student_t}, {"contaminated_normal", ErrorLaw::contaminated_normal}};
  return m;
}
inline const std::map<std::string, PenaltyKind>& penalty_names() {
  static const std::map<std::string, PenaltyKind> m{
      {"zero", PenaltyKind::zero}, {"jacobian_clip", PenaltyKind::jacobian_clip}, {"l1_clip", PenaltyKind::l1_clip}};
  return m;
}
inline const std::map<std::string, SolverMode>& mode_names() {
  static const std::map<std::string, SolverMode> m{{"relaxed", SolverMode::relaxed}, {"exact", SolverMode::exact}};
  return m;
}
inline const std::map<std::string, VarianceFactor>& factor_names() {
  static const std::map<std::string, VarianceFactor> m{{"quarter", VarianceFactor::quarter},
                                                       {"unit", VarianceFactor::unit}};
  return m;
}

template <typename E>
std::string enum_name(E v, const std::map<std::string, E>& names) {
  for (const auto& [n, e] : names)
    if (e == v) return n;
  return "?";
}

}  // namespace detail

// Strict parse: unknown keys, wrong types and bad enum names are ConfigErrors
// naming the offending field. Missing keys keep their defaults.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader root(j, "");
  root.read("seed", c.seed);

  if (root.has("gen")) {
    auto g = root.child("gen");
    g.read("N", c.gen.N);
    g.read("d", c.gen.d);
    g.read("l", c.gen.l);
    if (g.has("beta0")) {
      std::vector<double> b;
      g.read_array("beta0", b);
      c.gen.beta0 = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    }
    g.read_enum("g0", c.gen.g0, detail::true_function_names());
    g.read_array("g0_coeffs", c.gen.g0_coeffs);
    g.read("dependent", c.gen.dependent);
    if (g.has("error")) {
      auto e = g.child("error");
      e.read_enum("law", c.gen.error.law, detail::error_law_names());
      e.read("b", c.gen.error.b);
      e.read("nu", c.gen.error.nu);
      e.read("rho", c.gen.error.rho);
      e.read("kappa", c.gen.error.kappa);
      e.finish();
    }
    g.finish();
  }
  if (root.has("data_csv")) {
    if (j.at("data_csv").is_null()) {
      root.mark("data_csv");
    } else {
      std::string p;
      root.read("data_csv", p);
      c.data_csv = p;
    }
  }
  if (root.has("arch")) {
    auto a = root.child("arch");
    a.read_array("widths", c.arch.widths);
    a.read("sparsity", c.arch.sparsity);
    a.read("output_bound", c.arch.output_bound);
    a.finish();
  }
  if (root.has("penalty")) {
    auto p = root.child("penalty");
    p.read_enum("kind", c.penalty.kind, detail::penalty_names());
    p.read("cap", c.penalty.cap);
    p.read("lambda", c.penalty.lambda);
    p.finish();
  }
  if (root.has("solver")) {
    auto s = root.child("solver");
    s.read_enum("mode", c.solver.mode, detail::mode_names());
    s.read("alpha0", c.solver.schedule.alpha0);
    s.read("exponent", c.solver.schedule.exponent);
    s.read("batch_size", c.solver.batch_size);
    s.read("max_iters", c.solver.max_iters);
    s.read_array("sigma_plan", c.solver.sigma_plan);
    s.read("gamma0", c.solver.gamma0);
    s.read("record_every", c.solver.record_every);
    s.read("stationarity_epsilon", c.solver.stationarity_epsilon);
    s.finish();
  }
  root.read("beta_bound", c.beta_bound);
  root.read("replications", c.replications);
  root.read("ci_level", c.ci_level);
  root.read("output_dir", c.output_dir);
  root.read_enum("variance_factor", c.variance_factor, detail::factor_names());
  if (root.has("rates")) {
    auto r = root.child("rates");
    r.read_array("sample_sizes", c.rates.sample_sizes);
    r.read("replications", c.rates.replications);
    if (r.has("smoothness")) {
      auto s = r.child("smoothness");
      s.read_array("gamma", c.rates.smoothness.gamma);
      s.read_array("dbar", c.rates.smoothness.dbar);
      s.finish();
    }
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed json: ") + e.what());
  }
  return parse_experiment_config(j);
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

// The resolved config with every default materialized; parses back to an
// equal config.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  using detail::enum_name;
  nlohmann::json j;
  j["seed"] = c.seed;
  j["gen"] = {{"N", c.gen.N},
              {"d", c.gen.d},
              {"l", c.gen.l},
              {"beta0", std::vector<double>(c.gen.beta0.data(), c.gen.beta0.data() + c.gen.beta0.size())},
              {"g0", enum_name(c.gen.g0, detail::true_function_names())},
              {"g0_coeffs", c.gen.g0_coeffs},
              {"dependent", c.gen.dependent},
              {"error",
               {{"law", enum_name(c.gen.error.law, detail::error_law_names())},
                {"b", c.gen.error.b},
                {"nu", c.gen.error.nu},
                {"rho", c.gen.error.rho},
                {"kappa", c.gen.error.kappa}}}};
  j["data_csv"] = c.data_csv ? nlohmann::json(*c.data_csv) : nlohmann::json(nullptr);
  j["arch"] = {{"widths", c.arch.widths}, {"sparsity", c.arch.sparsity}, {"output_bound", c.arch.output_bound}};
  j["penalty"] = {
      {"kind", enum_name(c.penalty.kind, detail::penalty_names())}, {"cap", c.penalty.cap}, {"lambda", c.penalty.lambda}};
  j["solver"] = {{"mode", enum_name(c.solver.mode, detail::mode_names())},
                 {"alpha0", c.solver.schedule.alpha0},
                 {"exponent", c.solver.schedule.exponent},
                 {"batch_size", c.solver.batch_size},
                 {"max_iters", c.solver.max_iters},
                 {"sigma_plan", c.solver.sigma_plan},
                 {"gamma0", c.solver.gamma0},
                 {"record_every", c.solver.record_every},
                 {"stationarity_epsilon", c.solver.stationarity_epsilon}};
  j["beta_bound"] = c.beta_bound;
  j["replications"] = c.replications;
  j["ci_level"] = c.ci_level;
  j["output_dir"] = c.output_dir;
  j["variance_factor"] = enum_name(c.variance_factor, detail::factor_names());
  j["rates"] = {{"sample_sizes", c.rates.sample_sizes},
                {"replications", c.rates.replications},
                {"smoothness", {{"gamma", c.rates.smoothness.gamma}, {"dbar", c.rates.smoothness.dbar}}}};
  return j;
}

inline nlohmann::json to_json(const PlmParams& theta) {
  nlohmann::json w;
  to_json(w, theta.weights);
  return {{"beta", std::vector<double>(theta.beta.data(), theta.beta.data() + theta.beta.size())},
          {"beta_bound", theta.beta_bound},
          {"weights", std::move(w)}};
}

// ---- single runs -------------------------------------------------------------

// Data for one run: the CSV when configured, else a generated sample of size n.
inline Dataset experiment_data(const ExperimentConfig& c, std::uint64_t data_seed, std::int64_t n) {
  if (c.data_csv) {
    Dataset d = read_dataset_csv(*c.data_csv);
    if (d.l() != c.arch.widths.front()) throw ConfigError("data_csv has l != arch.widths[0]");
    return d;
  }
  GenConfig g = c.gen;
  g.N = n;
  g.seed = data_seed;
  return generate(g);
}

struct FitOutcome {
  FitTrace trace;
  InferenceReport inference;      // with the configured variance factor
  InferenceReport inference_alt;  // the other factor, reported side by side
  std::optional<EstimationMetrics> metrics;
};

// Solver then inference on the final iterate. DivergenceError,
// IllConditionedError and DegenerateDataError propagate; the trace is stored
// in `partial` before inference so callers can persist it on failure.
inline FitOutcome fit_and_infer(const ExperimentConfig& c, const Dataset& data, const RunSeeds& seeds,
                                bool with_inference, FitTrace* partial = nullptr) {
  if (data.size() < c.solver.batch_size) throw ConfigError("solver.batch_size exceeds the sample count");
  if (data.l() != c.arch.widths.front()) throw ConfigError("arch.widths[0] must equal the covariate dimension l");
  SolverConfig sc = c.solver;
  sc.seed = seeds.solver;
  const PlmParams init = initial_params(c.arch, data.d(), c.beta_bound, sc.mode, seeds.init);
  FitOutcome out;
  out.trace = run(sc, data, c.penalty, c.arch, init);
  if (partial) *partial = out.trace;
  if (data.provenance) out.metrics = estimation_metrics(out.trace.final_theta, data);
  if (with_inference) {
    const PhiStarFit phi = estimate_phi_star(data);
    const Eigen::VectorXd res = residuals(out.trace.final_theta, data);
    const double f0 = estimate_f0(std::span<const double>(res.data(), static_cast<std::size_t>(res.size())));
    const VarianceFactor other =
        c.variance_factor == VarianceFactor::quarter ? VarianceFactor::unit : VarianceFactor::quarter;
    out.inference = sandwich_covariance(data, out.trace.final_theta.beta, phi.fitted(), f0, c.ci_level, c.variance_factor);
    out.inference_alt = sandwich_covariance(data, out.trace.final_theta.beta, phi.fitted(), f0, c.ci_level, other);
  }
  return out;
}

// ---- replications ------------------------------------------------------------

enum class RunStatus { ok, diverged, ill_conditioned, failed };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::ok:
      return "ok";
    case RunStatus::diverged:
      return "diverged";
    case RunStatus::ill_conditioned:
      return "ill_conditioned";
    case RunStatus::failed:
      return "failed";
  }
  return "failed";
}

struct ReplicationResult {
  int index = 0;
  std::uint64_t seed = 0;
  std::int64_t n = 0;
  RunStatus status = RunStatus::failed;
  std::string message;
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd se;       // configured factor
  Eigen::VectorXd se_alt;   // the other factor
  Eigen::VectorXd ci_lower, ci_upper, ci_lower_alt, ci_upper_alt;
  EstimationMetrics metrics;
  double f0_hat = std::numeric_limits<double>::quiet_NaN();
  double final_objective = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

inline ReplicationResult run_replication(const ExperimentConfig& c, int r, std::int64_t n, bool with_inference) {
  ReplicationResult out;
  out.index = r;
  out.n = n;
  const RunSeeds seeds = derive_seeds(c.seed, static_cast<std::uint64_t>(r));
  out.seed = seeds.data;
  try {
    const Dataset data = experiment_data(c, seeds.data, n);
    FitOutcome fit = fit_and_infer(c, data, seeds, with_inference);
    out.beta_hat = fit.trace.final_theta.beta;
    out.final_objective = fit.trace.records.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                    : fit.trace.records.back().objective;
    out.wall_seconds = fit.trace.wall_seconds;
    if (fit.metrics) out.metrics = *fit.metrics;
    if (with_inference) {
      out.se = fit.inference.standard_errors();
      out.se_alt = fit.inference_alt.standard_errors();
      out.ci_lower = fit.inference.ci_lower;
      out.ci_upper = fit.inference.ci_upper;
      out.ci_lower_alt = fit.inference_alt.ci_lower;
      out.ci_upper_alt = fit.inference_alt.ci_upper;
      out.f0_hat = fit.inference.f0_hat;
    }
    out.status = RunStatus::ok;
  } catch (const DivergenceError& e) {
    out.status = RunStatus::diverged;
    out.message = e.what();
  } catch (const IllConditionedError& e) {
    out.status = RunStatus::ill_conditioned;
    out.message = e.what();
  } catch (const DegenerateDataError& e) {
    out.status = RunStatus::ill_conditioned;
    out.message = e.what();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    out.status = RunStatus::failed;
    out.message = e.what();
  }
  return out;
}

// Runs body(i) for i in [0, count) on `threads` workers. Work is claimed from
// an atomic counter; results must be keyed by i for order independence.
inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct CoordinateSummary {
  double coverage = 0.0;       // configured factor
  double coverage_alt = 0.0;   // the other factor
  double z_mean = 0.0;
  double z_sd = 0.0;
  double z_skewness = 0.0;
  double z_excess_kurtosis = 0.0;
  double empirical_var = 0.0;  // variance of beta_hat across replications
  double sandwich_var = 0.0;   // mean predicted variance, configured factor
};

struct ReplicateSummary {
  std::vector<ReplicationResult> results;
  int succeeded = 0;
  bool enough = false;  // at least 80% succeeded
  double beta_err_mean = 0.0, beta_err_median = 0.0;
  double g_err_mean = 0.0, g_err_median = 0.0;
  double d_theta_mean = 0.0, d_theta_median = 0.0;
  std::vector<CoordinateSummary> coords;  // filled when inference ran and the truth is known
};

inline constexpr double kMinSuccessFraction = 0.8;

inline ReplicateSummary summarize(const ExperimentConfig& c, std::vector<ReplicationResult> results, bool with_inference) {
  ReplicateSummary s;
  s.results = std::move(results);
  std::vector<const ReplicationResult*> ok;
  for (const auto& r : s.results)
    if (r.status == RunStatus::ok) ok.push_back(&r);
  s.succeeded = static_cast<int>(ok.size());
  s.enough = static_cast<double>(ok.size()) >= kMinSuccessFraction * static_cast<double>(s.results.size());
  if (ok.empty()) return s;

  std::vector<double> be, ge, dt;
  for (const auto* r : ok) {
    be.push_back(r->metrics.beta_err);
    ge.push_back(r->metrics.g_err_l2);
    dt.push_back(r->metrics.d_theta);
  }
  s.beta_err_mean = mean(be);
  s.beta_err_median = median(be);
  s.g_err_mean = mean(ge);
  s.g_err_median = median(ge);
  s.d_theta_mean = mean(dt);
  s.d_theta_median = median(dt);

  if (!with_inference || c.data_csv) return s;
  for (int k = 0; k < c.gen.d; ++k) {
    CoordinateSummary cs;
    const double b0 = c.gen.beta0(k);
    std::vector<double> z, b, v;
    int hit = 0, hit_alt = 0;
    for (const auto* r : ok) {
      hit += r->ci_lower(k) <= b0 && b0 <= r->ci_upper(k);
      hit_alt += r->ci_lower_alt(k) <= b0 && b0 <= r->ci_upper_alt(k);
      z.push_back((r->beta_hat(k) - b0) / r->se(k));
      b.push_back(r->beta_hat(k));
      v.push_back(r->se(k) * r->se(k));
    }
    const auto m = static_cast<double>(ok.size());
    cs.coverage = hit / m;
    cs.coverage_alt = hit_alt / m;
    cs.z_mean = mean(z);
    if (z.size() >= 2) {
      cs.z_sd = std::sqrt(variance(z));
      cs.empirical_var = variance(b);
    }
    if (z.size() >= 4) {
      cs.z_skewness = skewness(z);
      cs.z_excess_kurtosis = excess_kurtosis(z);
    }
    cs.sandwich_var = mean(v);
    s.coords.push_back(cs);
  }
  return s;
}

using ProgressFn = std::function<void(const ReplicationResult&)>;

// R replications at sample size n (gen.N when n is empty).
inline ReplicateSummary replicate(const ExperimentConfig& c, int threads, std::optional<std::int64_t> n = std::nullopt,
                                  std::optional<int> replications = std::nullopt, bool with_inference = true,
                                  const ProgressFn& progress = {}) {
  c.validate();
  const int R = replications.value_or(c.replications);
  const std::int64_t size = n.value_or(c.gen.N);
  std::vector<ReplicationResult> results(static_cast<std::size_t>(R));
  std::mutex progress_mutex;
  parallel_for(R, threads, [&](int r) {
    results[static_cast<std::size_t>(r)] = run_replication(c, r, size, with_inference);
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(results[static_cast<std::size_t>(r)]);
    }
  });
  return summarize(c, std::move(results), with_inference);
}

struct RatesRow {
  std::int64_t n = 0;
  double median_err = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  int succeeded = 0;
};

struct RatesSummary {
  std::vector<RatesRow> rows;
  std::vector<ReplicateSummary> runs;
  double slope = std::numeric_limits<double>::quiet_NaN();  // of log median d_theta on log N
  double zeta = 0.0;                                        // theoretical exponent
  bool enough = true;
};

inline RatesSummary rates_experiment(const ExperimentConfig& c, int threads, const ProgressFn& progress = {}) {
  c.validate();
  if (c.rates.sample_sizes.size() < 3) throw ConfigError("rates.sample_sizes needs at least 3 values");
  if (c.data_csv) throw ConfigError("rates needs generated data; remove data_csv");
  RatesSummary out;
  std::vector<double> lx, ly;
  for (auto n : c.rates.sample_sizes) {
    ReplicateSummary s = replicate(c, threads, n, c.rates.replications, false, progress);
    RatesRow row;
    row.n = n;
    row.succeeded = s.succeeded;
    std::vector<double> dt;
    for (const auto& r : s.results)
      if (r.status == RunStatus::ok) dt.push_back(r.metrics.d_theta);
    if (!dt.empty()) {
      row.median_err = median(dt);
      row.q25 = quantile(dt, 0.25);
      row.q75 = quantile(dt, 0.75);
      lx.push_back(std::log(static_cast<double>(n)));
      ly.push_back(std::log(row.median_err));
    }
    out.enough = out.enough && s.enough;
    out.rows.push_back(row);
    out.runs.push_back(std::move(s));
  }
  if (lx.size() >= 2) out.slope = ols_slope(lx, ly);
  out.zeta = theoretical_rate(c.rates.smoothness, c.rates.sample_sizes.front()).zeta;
  return out;
}

}  // namespace plmlad
