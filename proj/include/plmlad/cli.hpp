#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "plmlad/experiment.hpp"

namespace plmlad {

// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitDiverged = 3,
  kExitIllConditioned = 4,
};

struct RunOptions {
  std::optional<std::string> output_dir;  // overrides the config
  int threads = 1;
  bool verbose = false;
  std::ostream* log = &std::cerr;
};

namespace detail {

inline std::filesystem::path prepare_output(const ExperimentConfig& c, const RunOptions& opt) {
  std::filesystem::path dir = opt.output_dir.value_or(c.output_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline void write_resolved(const std::filesystem::path& dir, const ExperimentConfig& c) {
  write_json(dir / "config.resolved.json", to_json(c));
}

inline nlohmann::json metrics_json(const EstimationMetrics& m) {
  return {{"beta_err", m.beta_err}, {"g_err_l2", m.g_err_l2}, {"d_theta", m.d_theta}};
}

inline const char* factor_name(VarianceFactor f) { return f == VarianceFactor::quarter ? "quarter" : "unit"; }

inline int exit_code_for(RunStatus s) {
  switch (s) {
    case RunStatus::ok:
      return kExitOk;
    case RunStatus::diverged:
      return kExitDiverged;
    case RunStatus::ill_conditioned:
      return kExitIllConditioned;
    case RunStatus::failed:
      return kExitFailure;
  }
  return kExitFailure;
}

// Exit code of a batch: 0 when enough runs succeeded, else the code of the
// first failed replication.
inline int batch_exit_code(const std::vector<ReplicationResult>& results, bool enough) {
  if (enough) return kExitOk;
  for (const auto& r : results)
    if (r.status != RunStatus::ok) return exit_code_for(r.status);
  return kExitFailure;
}

template <typename F>
int guarded(const RunOptions& opt, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    *opt.log << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    *opt.log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline void write_replication_rows(std::ostream& os, const ExperimentConfig& c, const ReplicateSummary& s,
                                   bool with_inference) {
  const int d = c.gen.d;
  const VarianceFactor alt = c.variance_factor == VarianceFactor::quarter ? VarianceFactor::unit : VarianceFactor::quarter;
  const std::string fa = factor_name(c.variance_factor), fb = factor_name(alt);
  os << "replication,seed,N,status,beta_err,g_err_l2,d_theta,f0_hat,objective";
  if (with_inference)
    for (int k = 1; k <= d; ++k) {
      const auto i = std::to_string(k);
      os << ",beta_hat_" << i << ",se_" << fa << "_" << i << ",se_" << fb << "_" << i << ",covered_" << fa << "_" << i
         << ",covered_" << fb << "_" << i << ",z_" << i;
    }
  os << '\n' << std::setprecision(10);
  for (const auto& r : s.results) {
    os << r.index << ',' << r.seed << ',' << r.n << ',' << to_string(r.status);
    if (r.status != RunStatus::ok) {
      os << ",,,,,";
      if (with_inference) os << std::string(static_cast<std::size_t>(6 * d), ',');
      os << '\n';
      continue;
    }
    os << ',' << r.metrics.beta_err << ',' << r.metrics.g_err_l2 << ',' << r.metrics.d_theta << ',' << r.f0_hat << ','
       << r.final_objective;
    if (with_inference)
      for (int k = 0; k < d; ++k) {
        const double b0 = c.gen.beta0(k);
        const bool in = r.ci_lower(k) <= b0 && b0 <= r.ci_upper(k);
        const bool in_alt = r.ci_lower_alt(k) <= b0 && b0 <= r.ci_upper_alt(k);
        os << ',' << r.beta_hat(k) << ',' << r.se(k) << ',' << r.se_alt(k) << ',' << (in ? 1 : 0) << ','
           << (in_alt ? 1 : 0) << ',' << (r.beta_hat(k) - b0) / r.se(k);
      }
    os << '\n';
  }
  if (!with_inference) return;

  // aggregate row: means of the metrics, coverage proportions, mean z
  std::vector<double> f0s, objs;
  Eigen::VectorXd bsum = Eigen::VectorXd::Zero(d), ssum = Eigen::VectorXd::Zero(d), asum = Eigen::VectorXd::Zero(d);
  for (const auto& r : s.results)
    if (r.status == RunStatus::ok) {
      f0s.push_back(r.f0_hat);
      objs.push_back(r.final_objective);
      bsum += r.beta_hat;
      ssum += r.se;
      asum += r.se_alt;
    }
  os << "aggregate,," << s.results.front().n << ",ok=" << s.succeeded << "/" << s.results.size();
  if (s.succeeded == 0) {
    os << '\n';
    return;
  }
  const double m = s.succeeded;
  os << ',' << s.beta_err_mean << ',' << s.g_err_mean << ',' << s.d_theta_mean << ',' << mean(f0s) << ',' << mean(objs);
  for (int k = 0; k < d; ++k) {
    const auto& cs = s.coords.at(static_cast<std::size_t>(k));
    os << ',' << bsum(k) / m << ',' << ssum(k) / m << ',' << asum(k) / m << ',' << cs.coverage << ',' << cs.coverage_alt
       << ',' << cs.z_mean;
  }
  os << '\n';
}

inline nlohmann::json aggregate_json(const ExperimentConfig& c, const ReplicateSummary& s) {
  const VarianceFactor alt = c.variance_factor == VarianceFactor::quarter ? VarianceFactor::unit : VarianceFactor::quarter;
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& cs : s.coords)
    coords.push_back({{std::string("coverage_") + factor_name(c.variance_factor), cs.coverage},
                      {std::string("coverage_") + factor_name(alt), cs.coverage_alt},
                      {"z_mean", cs.z_mean},
                      {"z_sd", cs.z_sd},
                      {"z_skewness", cs.z_skewness},
                      {"z_excess_kurtosis", cs.z_excess_kurtosis},
                      {"empirical_var", cs.empirical_var},
                      {std::string("sandwich_var_") + factor_name(c.variance_factor), cs.sandwich_var}});
  return {{"replications", s.results.size()},
          {"succeeded", s.succeeded},
          {"enough_succeeded", s.enough},
          {"ci_level", c.ci_level},
          {"beta_err", {{"mean", s.beta_err_mean}, {"median", s.beta_err_median}}},
          {"g_err_l2", {{"mean", s.g_err_mean}, {"median", s.g_err_median}}},
          {"d_theta", {{"mean", s.d_theta_mean}, {"median", s.d_theta_median}}},
          {"coordinates", coords}};
}

inline ProgressFn progress_logger(const RunOptions& opt) {
  if (!opt.verbose) return {};
  return [&opt](const ReplicationResult& r) {
    *opt.log << "replication " << r.index << " N=" << r.n << " " << to_string(r.status);
    if (r.status == RunStatus::ok)
      *opt.log << " d_theta=" << r.metrics.d_theta << " t=" << std::setprecision(3) << r.wall_seconds << "s";
    else
      *opt.log << ": " << r.message;
    *opt.log << '\n';
  };
}

}  // namespace detail

// Single estimation run. Writes config.resolved.json, theta.json, trace.csv
// and inference.json into the output directory.
inline int cmd_fit(const std::string& config_path, const RunOptions& opt = {}) {
  return detail::guarded(opt, [&]() -> int {
    const ExperimentConfig c = load_experiment_config(config_path);
    const auto dir = detail::prepare_output(c, opt);
    detail::write_resolved(dir, c);
    const RunSeeds seeds = derive_seeds(c.seed, 0);
    const Dataset data = experiment_data(c, seeds.data, c.gen.N);

    const auto write_fit = [&](const FitTrace& trace) {
      nlohmann::json th = {{"mode", to_string(c.solver.mode)},
                           {"iterations", c.solver.max_iters},
                           {"final", to_json(trace.final_theta)},
                           {"best", to_json(trace.best_theta)},
                           {"best_objective", trace.best_objective},
                           {"nonzeros", trace.final_theta.weights.nonzeros()},
                           {"output_bound", c.arch.output_bound},
                           {"output_sup_observed", observed_output_sup(trace.final_theta.weights, data.Z)}};
      detail::write_json(dir / "theta.json", th);
      std::ofstream tr(dir / "trace.csv");
      write_trace_csv(trace, tr);
    };

    FitTrace trace;
    try {
      const FitOutcome fit = fit_and_infer(c, data, seeds, true, &trace);
      write_fit(fit.trace);
      nlohmann::json inf = to_json(fit.inference);
      inf["alternate"] = to_json(fit.inference_alt);
      inf["metrics"] = fit.metrics ? detail::metrics_json(*fit.metrics) : nlohmann::json(nullptr);
      detail::write_json(dir / "inference.json", inf);
      if (opt.verbose && !fit.trace.records.empty())
        *opt.log << "fit done: objective " << fit.trace.records.back().objective << ", "
                 << fit.trace.final_theta.weights.nonzeros() << " nonzero weights, " << std::setprecision(3)
                 << fit.trace.wall_seconds << "s\n";
      if (observed_output_sup(fit.trace.final_theta.weights, data.Z) > c.arch.output_bound)
        *opt.log << "warning: fitted network exceeds arch.output_bound on the sample\n";
      return kExitOk;
    } catch (const DivergenceError& e) {
      write_fit(e.trace());
      *opt.log << "diverged: " << e.what() << '\n';
      return kExitDiverged;
    } catch (const IllConditionedError& e) {
      write_fit(trace);
      detail::write_json(dir / "inference.json", {{"error", e.what()}, {"condition_number", e.condition_number()}});
      *opt.log << "inference failed: " << e.what() << " (condition number " << e.condition_number() << ")\n";
      return kExitIllConditioned;
    } catch (const DegenerateDataError& e) {
      write_fit(trace);
      detail::write_json(dir / "inference.json", {{"error", e.what()}});
      *opt.log << "inference failed: " << e.what() << '\n';
      return kExitIllConditioned;
    }
  });
}

// R replications with seeds seed ^ r. Writes summary.csv (one row per
// replication plus an aggregate row) and aggregate.json.
inline int cmd_replicate(const std::string& config_path, const RunOptions& opt = {}) {
  return detail::guarded(opt, [&]() -> int {
    const ExperimentConfig c = load_experiment_config(config_path);
    if (c.replications < 2) throw ConfigError("replicate needs replications >= 2");
    if (c.data_csv) throw ConfigError("replicate needs generated data; remove data_csv");
    const auto dir = detail::prepare_output(c, opt);
    detail::write_resolved(dir, c);
    const ReplicateSummary s = replicate(c, opt.threads, std::nullopt, std::nullopt, true, detail::progress_logger(opt));
    {
      std::ofstream out(dir / "summary.csv");
      detail::write_replication_rows(out, c, s, true);
    }
    detail::write_json(dir / "aggregate.json", detail::aggregate_json(c, s));
    if (!s.enough) *opt.log << "only " << s.succeeded << " of " << s.results.size() << " replications succeeded\n";
    return detail::batch_exit_code(s.results, s.enough);
  });
}

// Median d_theta over rates.replications runs at each N in rates.sample_sizes
// and the least-squares slope of log median on log N. Writes rates.csv and
// rates_replications.csv.
inline int cmd_rates(const std::string& config_path, const RunOptions& opt = {}) {
  return detail::guarded(opt, [&]() -> int {
    const ExperimentConfig c = load_experiment_config(config_path);
    const auto dir = detail::prepare_output(c, opt);
    detail::write_resolved(dir, c);
    const RatesSummary r = rates_experiment(c, opt.threads, detail::progress_logger(opt));
    {
      std::ofstream out(dir / "rates.csv");
      out << "N,median_err,q25,q75,slope,zeta_theory\n" << std::setprecision(10);
      for (const auto& row : r.rows)
        out << row.n << ',' << row.median_err << ',' << row.q25 << ',' << row.q75 << ',' << r.slope << ',' << -r.zeta
            << '\n';
    }
    {
      std::ofstream out(dir / "rates_replications.csv");
      bool header = true;
      for (const auto& run : r.runs) {
        std::ostringstream block;
        detail::write_replication_rows(block, c, run, false);
        std::string text = block.str();
        if (!header) text = text.substr(text.find('\n') + 1);
        out << text;
        header = false;
      }
    }
    if (opt.verbose) *opt.log << "slope " << r.slope << " vs theoretical " << -r.zeta << '\n';
    std::vector<ReplicationResult> all;
    for (const auto& run : r.runs) all.insert(all.end(), run.results.begin(), run.results.end());
    return detail::batch_exit_code(all, r.enough);
  });
}

}  // namespace plmlad
