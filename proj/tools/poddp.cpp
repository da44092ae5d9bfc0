#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poddp/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Belief-space trajectory optimization with discrete latent states"};
  app.require_subcommand(1);

  poddp::RunSpec spec;
  std::string planners = "poddp";
  std::vector<std::string> sets;
  double sigma_level = 0.0;
  int segments = 0;
  int horizon = 0;
  double prior = 0.0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--experiment", spec.experiment, "tmaze, terrain or lanechange")->required();
    cmd->add_option("--planner,--planners", planners, "comma-separated: poddp, mlddp, pwddp");
    cmd->add_option("--seed", spec.seed, "base seed");
    cmd->add_option("--config", spec.config_path, "key = value parameter file");
    cmd->add_option("--out", spec.out_dir, "output directory (default $PODDP_OUT_DIR or ./results)");
    cmd->add_option("--sigma-level", sigma_level, "tmaze observation uncertainty level");
    cmd->add_option("--segments", segments, "number of branch segments");
    cmd->add_option("--horizon", horizon, "horizon in steps");
    cmd->add_option("--prior", prior, "prior probability of the first latent value");
    cmd->add_option("--set", sets, "parameter override key=value (repeatable)");
  };

  CLI::App* solve = app.add_subcommand("solve", "single solve; writes the tree and iteration log");
  add_common(solve);
  CLI::App* bench = app.add_subcommand("benchmark", "closed-loop Monte-Carlo batches");
  add_common(bench);
  bench->add_option("--n", spec.n, "episodes per planner");
  bench->add_flag("--sigma-sweep", spec.sigma_sweep, "tmaze: run all thirteen sigma levels");
  bench->add_flag("--traces", spec.traces, "also write per-step traces");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    spec.planners = poddp::parse_planners(planners);
    auto* cmd = solve->parsed() ? solve : bench;
    if (cmd->count("--sigma-level")) spec.flag_overrides["sigma_level"] = sigma_level;
    if (cmd->count("--segments")) spec.flag_overrides["segments"] = segments;
    if (cmd->count("--horizon")) spec.flag_overrides["horizon"] = horizon;
    if (cmd->count("--prior")) spec.flag_overrides["prior"] = prior;
    for (const auto& s : sets) {
      auto [key, value] = poddp::parse_assignment(s, "--set");
      spec.overrides[key] = value;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return solve->parsed() ? poddp::cmd_solve(spec) : poddp::cmd_benchmark(spec);
}
