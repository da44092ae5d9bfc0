#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "poddp/baselines.hpp"
#include "poddp/bayes.hpp"
#include "poddp/scenarios.hpp"
#include "poddp/solver.hpp"

namespace poddp {

struct StepRecord {
  int t = 0;
  Vector x;       // state before the step
  Vector u;       // executed (clamped) control
  double cost = 0.0;
  Vector o;       // sampled observation; empty when none was taken
  Vector belief;  // belief after this step's update
};

struct EpisodeTrace {
  std::uint64_t seed = 0;
  PlannerKind planner = PlannerKind::PODDP;
  int true_z = 0;
  std::vector<StepRecord> steps;
  Vector final_state;
  double final_cost = 0.0;
  double cumulative_cost = 0.0;
  int replans = 0;
  bool converged = true;
};

struct BatchStats {
  PlannerKind planner = PlannerKind::PODDP;
  int n = 0;
  double mean = 0.0;
  double standard_error = 0.0;
  /// False when n < 2: the standard error is reported as 0.
  bool stderr_defined = false;
  std::vector<EpisodeTrace> episodes;

  std::vector<double> costs() const {
    std::vector<double> c;
    for (const auto& e : episodes) c.push_back(e.cumulative_cost);
    return c;
  }
};

enum class RandomStream : std::uint64_t { GroundTruth = 0, Process = 1, Observation = 2 };

/// Generator for one sub-stream of an episode.
inline std::mt19937_64 episode_rng(std::uint64_t seed, RandomStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

/// Draw of the ground-truth latent for an episode, independent of the planner.
inline int sample_latent(const Belief& prior, std::uint64_t seed) {
  auto rng = episode_rng(seed, RandomStream::GroundTruth);
  const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int z = 0; z < prior.size(); ++z) {
    acc += prior(z);
    if (r < acc) return z;
  }
  return prior.size() - 1;
}

/// Zero-mean Gaussian sample with covariance `cov` (zero covariance: zero).
inline Vector sample_gaussian(const Matrix& cov, std::mt19937_64& rng) {
  Vector e(cov.rows());
  std::normal_distribution<double> n01(0.0, 1.0);
  for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = n01(rng);
  if (cov.isZero(0.0)) return Vector::Zero(cov.rows());
  Eigen::LDLT<Matrix> ldlt(cov);
  const Vector d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Vector y = ldlt.matrixL() * (d.asDiagonal() * e);
  return ldlt.transpositionsP().transpose() * y;
}

/// Subtree below branch z of the root, re-rooted, for warm starting the next
/// replan. Empty tree when the root is a leaf.
inline TrajectoryTree subtree(const TrajectoryTree& tree, int z) {
  TrajectoryTree out;
  if (tree.schedule.segments() < 2) return out;
  out.state_dim = tree.state_dim;
  out.control_dim = tree.control_dim;
  out.num_latents = tree.num_latents;
  out.schedule = tree.schedule.tail(1);
  const int shift = tree.schedule.begin(1);
  for (const auto& [h, n] : tree.nodes) {
    if (h.is_root() || h.branches.front() != z) continue;
    TreeNode c = n;
    c.history = HistoryPath(std::vector<int>(h.branches.begin() + 1, h.branches.end()));
    c.t_begin -= shift;
    c.t_end -= shift;
    out.nodes.emplace(c.history, std::move(c));
  }
  return out;
}

struct EpisodeOptions {
  /// Record per-step data (states, controls, beliefs) in the trace.
  bool record_steps = true;
  /// Reuse the previous plan's matching subtree as the next initial guess.
  bool warm_start = true;
};

/// Closed-loop execution: plan from the current belief state, execute the
/// first segment with the plan's feedback on the realized state while the
/// state transitions are sampled from the true latent's dynamics, observe at
/// the segment boundary, update the belief, and replan on the shrinking
/// horizon.
inline EpisodeTrace execute_episode(PlannerKind planner, const ProblemModel& model,
                                    const Vector& x0, const Belief& b0, const SolverConfig& config,
                                    int true_z, std::uint64_t seed,
                                    const EpisodeOptions& options = {}) {
  if (true_z < 0 || true_z >= model.num_latents())
    throw InvalidArgument("execute_episode: true latent out of range");
  const SegmentSchedule schedule = config.schedule();
  auto process_rng = episode_rng(seed, RandomStream::Process);
  auto obs_rng = episode_rng(seed, RandomStream::Observation);
  const Matrix& q_true = model.dynamics_noise.at(static_cast<std::size_t>(true_z));

  EpisodeTrace trace;
  trace.seed = seed;
  trace.planner = planner;
  trace.true_z = true_z;

  Vector x = x0;
  Belief b = b0;
  TrajectoryTree warm;
  for (int d = 0; d < schedule.segments(); ++d) {
    SolverConfig sub = config;
    const SegmentSchedule tail = schedule.tail(d);
    sub.horizon = tail.horizon();
    sub.breakpoints = tail.breakpoints();
    const TrajectoryTree* init = warm.nodes.empty() ? nullptr : &warm;
    if (init != nullptr && !(init->schedule == tail)) init = nullptr;
    const Plan plan = make_plan(planner, model, x, b, sub, init);
    ++trace.replans;
    trace.converged = trace.converged && plan.result.converged;

    const TreeNode& root = plan.result.tree.root();
    const Vector beta_start = logits_from_belief(b).beta;
    for (int j = 0; j < root.length(); ++j) {
      const auto sj = static_cast<std::size_t>(j);
      Vector u = root.controls[sj];
      if (!root.gains.empty()) {
        const Vector sigma = plan.lift(x, logits_from_belief(b).beta, beta_start);
        u += root.gains.K[sj] * (sigma - root.stacked[sj]);
      }
      u = model.clamp_control(u);
      StepRecord rec;
      rec.t = schedule.begin(d) + j;
      rec.cost = model.running_cost(x, u, true_z);
      trace.cumulative_cost += rec.cost;

      Vector xn = model.dynamics_mean(x, u, true_z) + sample_gaussian(q_true, process_rng);
      if (j + 1 < root.length()) {
        b = transition_update(xn, u, x, b, model);
      } else {
        const Vector o = model.observation_mean(xn, true_z) +
                         sample_gaussian(model.observation_noise(xn, true_z), obs_rng);
        b = bayes_update(o, xn, u, x, b, model);
        rec.o = o;
      }
      if (options.record_steps) {
        rec.x = x;
        rec.u = u;
        rec.belief = b.probs;
        trace.steps.push_back(std::move(rec));
      }
      x = std::move(xn);
    }
    if (options.warm_start) {
      const int branch = plan.kind == PlannerKind::PODDP ? b.argmax() : 0;
      warm = subtree(plan.result.tree, branch);
    }
  }
  trace.final_state = x;
  trace.final_cost = model.final_cost(x, true_z);
  trace.cumulative_cost += trace.final_cost;
  return trace;
}

inline EpisodeTrace execute_episode(PlannerKind planner, const Scenario& s, int true_z,
                                    std::uint64_t seed, const EpisodeOptions& options = {}) {
  return execute_episode(planner, s.model, s.x0, s.prior, s.solver, true_z, seed, options);
}

inline void finalize_stats(BatchStats& stats) {
  stats.n = static_cast<int>(stats.episodes.size());
  if (stats.n == 0) return;
  double sum = 0.0;
  for (const auto& e : stats.episodes) sum += e.cumulative_cost;
  stats.mean = sum / stats.n;
  if (stats.n < 2) {
    stats.standard_error = 0.0;
    stats.stderr_defined = false;
    return;
  }
  double ss = 0.0;
  for (const auto& e : stats.episodes) ss += (e.cumulative_cost - stats.mean) * (e.cumulative_cost - stats.mean);
  stats.standard_error = std::sqrt(ss / (stats.n - 1)) / std::sqrt(static_cast<double>(stats.n));
  stats.stderr_defined = true;
}

/// Episodes with seeds base_seed .. base_seed + n - 1, each with a ground
/// truth drawn from the prior.
inline BatchStats run_batch(PlannerKind planner, const ProblemModel& model, const Vector& x0,
                            const Belief& prior, const SolverConfig& config, int n,
                            std::uint64_t base_seed, const EpisodeOptions& options = {}) {
  if (n < 1) throw InvalidArgument("run_batch: need at least one episode");
  BatchStats stats;
  stats.planner = planner;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    stats.episodes.push_back(execute_episode(planner, model, x0, prior, config,
                                             sample_latent(prior, seed), seed, options));
  }
  finalize_stats(stats);
  return stats;
}

inline BatchStats run_batch(PlannerKind planner, const Scenario& s, int n,
                            std::uint64_t base_seed, const EpisodeOptions& options = {}) {
  return run_batch(planner, s.model, s.x0, s.prior, s.solver, n, base_seed, options);
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Welch's unequal-variance two-sample t-test, two-sided.
inline WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidArgument("welch_t: need at least two samples each");
  auto moments = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::make_pair(m, ss / static_cast<double>(v.size() - 1));
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = va / na;
  const double sb = vb / nb;
  WelchResult r;
  if (sa + sb == 0.0) {
    if (ma == mb) return r;
    r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.df = na + nb - 2.0;
    r.p = 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

// ----- output ------------------------------------------------------------------------

inline std::string format_csv_header(const Scenario& s) {
  std::string out = "# experiment = " + s.experiment + "\n# config_hash = " + s.hash() + "\n";
  for (const auto& [k, v] : s.params) out += "# " + k + " = " + format_number(v) + "\n";
  return out;
}

inline std::string episodes_csv(const Scenario& s, const std::vector<BatchStats>& batches) {
  std::string out = format_csv_header(s);
  out += "seed,planner,true_z,cumulative_cost,replans,converged\n";
  for (const auto& bs : batches)
    for (const auto& e : bs.episodes)
      out += std::to_string(e.seed) + "," + to_string(bs.planner) + "," +
             s.model.latents.label(e.true_z) + "," + format_number(e.cumulative_cost) + "," +
             std::to_string(e.replans) + "," + (e.converged ? "1" : "0") + "\n";
  return out;
}

inline nlohmann::json summary_json(const BatchStats& b, const std::string& hash) {
  return {{"planner", to_string(b.planner)},
          {"n", b.n},
          {"mean", b.mean},
          {"stderr", b.standard_error},
          {"stderr_defined", b.stderr_defined},
          {"config_hash", hash}};
}

inline nlohmann::json comparison_json(const BatchStats& a, const BatchStats& b) {
  nlohmann::json j = {{"a", to_string(a.planner)}, {"b", to_string(b.planner)},
                      {"mean_difference", a.mean - b.mean}};
  if (a.n >= 2 && b.n >= 2) {
    const WelchResult w = welch_t(a.costs(), b.costs());
    j["t"] = w.t;
    j["df"] = w.df;
    j["p"] = w.p;
  } else {
    j["t"] = nullptr;
    j["df"] = nullptr;
    j["p"] = nullptr;
  }
  return j;
}

inline nlohmann::json params_json(const ParameterSet& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : params) j[k] = v;
  return j;
}

inline nlohmann::json trace_json(const EpisodeTrace& e, const LatentSet& latents) {
  nlohmann::json steps = nlohmann::json::array();
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  for (const auto& s : e.steps) {
    nlohmann::json js = {{"t", s.t}, {"x", vec(s.x)}, {"u", vec(s.u)}, {"cost", s.cost},
                         {"belief", vec(s.belief)}};
    if (s.o.size() > 0) js["o"] = vec(s.o);
    steps.push_back(js);
  }
  return {{"seed", e.seed},
          {"planner", to_string(e.planner)},
          {"true_z", latents.label(e.true_z)},
          {"cumulative_cost", e.cumulative_cost},
          {"final_cost", e.final_cost},
          {"final_state", vec(e.final_state)},
          {"replans", e.replans},
          {"converged", e.converged},
          {"steps", steps}};
}

}  // namespace poddp
