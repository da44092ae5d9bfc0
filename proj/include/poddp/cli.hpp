#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poddp/baselines.hpp"
#include "poddp/config.hpp"
#include "poddp/harness.hpp"
#include "poddp/scenarios.hpp"

namespace poddp {

/// Thirteen observation-uncertainty levels of the T-maze sweep: 0.1, 1.1, ..., 12.1.
inline std::vector<double> tmaze_sigma_levels() {
  std::vector<double> levels;
  for (int i = 0; i <= 12; ++i) levels.push_back(0.1 + i);
  return levels;
}

struct RunSpec {
  std::string experiment;
  std::vector<PlannerKind> planners{PlannerKind::PODDP};
  int n = 100;
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out_dir;
  /// Applied after the config file, in order: convenience flags, then --set.
  ParameterSet flag_overrides;
  ParameterSet overrides;
  /// Run every level of tmaze_sigma_levels().
  bool sigma_sweep = false;
  bool traces = false;
};

inline std::vector<PlannerKind> parse_planners(const std::string& list) {
  std::vector<PlannerKind> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(planner_from_string(item));
  }
  if (out.empty()) throw ConfigError("no planners given");
  return out;
}

/// Config file, then convenience flags, then --set overrides.
inline ParameterSet resolve_overrides(const RunSpec& spec) {
  ParameterSet params = default_parameters(spec.experiment);
  if (!spec.config_path.empty()) {
    if (!std::filesystem::exists(spec.config_path))
      throw ConfigError("config file '" + spec.config_path + "' does not exist");
    apply_overrides(params, load_parameter_file(spec.config_path));
  }
  apply_overrides(params, spec.flag_overrides);
  apply_overrides(params, spec.overrides);
  return params;
}

inline std::filesystem::path output_dir(const RunSpec& spec) {
  std::filesystem::path dir = spec.out_dir;
  if (dir.empty()) {
    const char* env = std::getenv("PODDP_OUT_DIR");
    dir = env != nullptr && *env != '\0' ? env : "results";
  }
  std::filesystem::create_directories(dir);
  return dir;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string level_tag(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", level);
  return buf;
}

}  // namespace detail

/// Single solve from the scenario's initial condition. Writes the tree JSON
/// and the iteration log; 0 on convergence, 2 when not converged, 1 on error.
inline int cmd_solve(const RunSpec& spec, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
  try {
    const Scenario s = make_scenario(spec.experiment, resolve_overrides(spec));
    const PlannerKind kind = spec.planners.empty() ? PlannerKind::PODDP : spec.planners.front();
    const Plan plan = make_plan(kind, s.model, s.x0, s.prior, s.solver);
    const auto dir = output_dir(spec);
    const std::string stem = s.experiment + "_" + to_string(kind);

    nlohmann::json tree = tree_to_json(plan.result.tree);
    tree["experiment"] = s.experiment;
    tree["planner"] = to_string(kind);
    tree["config_hash"] = s.hash();
    tree["params"] = params_json(s.params);
    tree["cost"] = plan.result.cost;
    tree["converged"] = plan.result.converged;
    tree["latents"] = plan.planning_model.latents.labels();
    detail::write_file(dir / (stem + "_tree.json"), tree.dump(2) + "\n");

    std::string log = nlohmann::json({{"config_hash", s.hash()}, {"params", params_json(s.params)}})
                          .dump() + "\n";
    for (const auto& r : plan.result.log) log += iteration_json(r).dump() + "\n";
    detail::write_file(dir / (stem + "_iterations.jsonl"), log);

    out << stem << ": cost " << plan.result.cost << ", " << plan.result.iterations
        << " iterations, " << plan.result.tree.nodes.size() << " nodes, "
        << (plan.result.converged ? "converged" : "NOT converged") << "\n";
    return plan.result.converged ? 0 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

/// Batches for every requested planner on shared seeds, with per-episode CSV,
/// summary JSON (including pairwise Welch tests), and for a sigma sweep a
/// per-level table.
inline int cmd_benchmark(const RunSpec& spec, std::ostream& out = std::cout,
                         std::ostream& err = std::cerr) {
  try {
    if (spec.n < 1) throw ConfigError("--n must be at least 1");
    const ParameterSet base = resolve_overrides(spec);
    if (spec.sigma_sweep && spec.experiment != "tmaze")
      throw ConfigError("the sigma sweep applies to the tmaze experiment only");
    const auto dir = output_dir(spec);

    std::vector<std::optional<double>> levels;
    if (spec.sigma_sweep)
      for (double l : tmaze_sigma_levels()) levels.emplace_back(l);
    else
      levels.emplace_back(std::nullopt);

    const Scenario base_scenario = make_scenario(spec.experiment, base);
    std::string sweep = format_csv_header(base_scenario);
    sweep += "sigma_level,planner,n,mean,stderr,config_hash\n";

    for (const auto& level : levels) {
      ParameterSet params = base;
      std::string stem = spec.experiment;
      if (level) {
        params.at("sigma_level") = *level;
        stem += "_sigma" + detail::level_tag(*level);
      }
      const Scenario s = make_scenario(spec.experiment, params);
      std::vector<BatchStats> batches;
      EpisodeOptions opts;
      opts.record_steps = spec.traces;
      for (PlannerKind k : spec.planners) batches.push_back(run_batch(k, s, spec.n, spec.seed, opts));

      detail::write_file(dir / (stem + "_episodes.csv"), episodes_csv(s, batches));
      nlohmann::json summary = {{"experiment", s.experiment},
                                {"config_hash", s.hash()},
                                {"params", params_json(s.params)},
                                {"base_seed", spec.seed},
                                {"n", spec.n}};
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& b : batches) {
        rows.push_back(summary_json(b, s.hash()));
        out << stem << " " << to_string(b.planner) << ": mean " << b.mean << " (stderr "
            << b.standard_error << (b.stderr_defined ? "" : ", undefined for n < 2") << ")\n";
        if (level)
          sweep += format_number(*level) + "," + to_string(b.planner) + "," + std::to_string(b.n) +
                   "," + format_number(b.mean) + "," + format_number(b.standard_error) + "," +
                   s.hash() + "\n";
      }
      summary["summaries"] = rows;
      nlohmann::json comparisons = nlohmann::json::array();
      for (std::size_t i = 0; i < batches.size(); ++i)
        for (std::size_t j = i + 1; j < batches.size(); ++j) {
          comparisons.push_back(comparison_json(batches[i], batches[j]));
          const auto& c = comparisons.back();
          if (!c["p"].is_null())
            out << stem << " " << to_string(batches[i].planner) << " vs "
                << to_string(batches[j].planner) << ": t " << c["t"].get<double>() << ", p "
                << c["p"].get<double>() << "\n";
        }
      summary["comparisons"] = comparisons;
      detail::write_file(dir / (stem + "_summary.json"), summary.dump(2) + "\n");

      if (spec.traces) {
        nlohmann::json traces = {{"experiment", s.experiment},
                                 {"config_hash", s.hash()},
                                 {"params", params_json(s.params)}};
        nlohmann::json eps = nlohmann::json::array();
        for (const auto& b : batches)
          for (const auto& e : b.episodes) eps.push_back(trace_json(e, s.model.latents));
        traces["episodes"] = eps;
        detail::write_file(dir / (stem + "_traces.json"), traces.dump() + "\n");
      }
    }
    if (spec.sigma_sweep) detail::write_file(dir / (spec.experiment + "_sweep.csv"), sweep);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace poddp
