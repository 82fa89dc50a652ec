// plmlad: fit, replicate and rates experiments for penalized LAD estimation
// of partial linear models with a sparse ReLU network component.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "plmlad/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Penalized LAD estimation of partial linear models with sparse ReLU networks"};
  app.require_subcommand(1);

  std::string config;
  std::string output;
  int threads = 1;
  bool verbose = false;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "experiment config (JSON)")->required();
    sub->add_option("--output", output, "output directory, overrides output_dir in the config");
    sub->add_option("--threads", threads, "worker threads for replications")->check(CLI::PositiveNumber);
    sub->add_flag("--verbose", verbose, "progress on stderr");
  };
  CLI::App* fit = app.add_subcommand("fit", "single estimation run: theta.json, trace.csv, inference.json");
  CLI::App* rep = app.add_subcommand("replicate", "Monte Carlo replications: summary.csv, aggregate.json");
  CLI::App* rates = app.add_subcommand("rates", "error vs sample size: rates.csv");
  for (auto* sub : {fit, rep, rates}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : plmlad::kExitConfig;
  }

  plmlad::RunOptions opt;
  if (!output.empty()) opt.output_dir = output;
  opt.threads = threads;
  opt.verbose = verbose;

  if (fit->parsed()) return plmlad::cmd_fit(config, opt);
  if (rep->parsed()) return plmlad::cmd_replicate(config, opt);
  return plmlad::cmd_rates(config, opt);
}
