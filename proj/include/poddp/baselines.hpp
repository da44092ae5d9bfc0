#pragma once

#include <string>
#include <utility>
#include <vector>

#include "poddp/belief.hpp"
#include "poddp/model.hpp"
#include "poddp/solver.hpp"
#include "poddp/tree.hpp"

namespace poddp {

enum class PlannerKind { PODDP, MLDDP, PWDDP };

inline std::string to_string(PlannerKind k) {
  switch (k) {
    case PlannerKind::PODDP: return "poddp";
    case PlannerKind::MLDDP: return "mlddp";
    case PlannerKind::PWDDP: return "pwddp";
  }
  return "?";
}

inline PlannerKind planner_from_string(const std::string& s) {
  for (PlannerKind k : {PlannerKind::PODDP, PlannerKind::MLDDP, PlannerKind::PWDDP})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown planner '" + s + "' (valid: poddp, mlddp, pwddp)");
}

/// Single-latent model that behaves like `model` conditioned on latent z.
inline ProblemModel restrict_to_latent(const ProblemModel& model, int z) {
  if (z < 0 || z >= model.num_latents()) throw InvalidArgument("restrict_to_latent: bad latent");
  ProblemModel m;
  m.name = model.name + "|" + model.latents.label(z);
  m.state_dim = model.state_dim;
  m.control_dim = model.control_dim;
  m.obs_dim = model.obs_dim;
  m.latents = LatentSet{model.latents.label(z)};
  m.dt = model.dt;
  m.dynamics_mean = [f = model.dynamics_mean, z](const Vector& x, const Vector& u, int) {
    return f(x, u, z);
  };
  m.dynamics_noise = {model.dynamics_noise.at(static_cast<std::size_t>(z))};
  m.observation_mean = [g = model.observation_mean, z](const Vector& x, int) { return g(x, z); };
  m.observation_noise = [g = model.observation_noise, z](const Vector& x, int) { return g(x, z); };
  m.running_cost = [l = model.running_cost, z](const Vector& x, const Vector& u, int) {
    return l(x, u, z);
  };
  m.final_cost = [l = model.final_cost, z](const Vector& x, int) { return l(x, z); };
  if (model.dynamics_jacobian)
    m.dynamics_jacobian = [f = model.dynamics_jacobian, z](const Vector& x, const Vector& u, int) {
      return f(x, u, z);
    };
  if (model.observation_jacobian)
    m.observation_jacobian = [g = model.observation_jacobian, z](const Vector& x, int) {
      return g(x, z);
    };
  if (model.running_cost_gradient)
    m.running_cost_gradient = [l = model.running_cost_gradient, z](const Vector& x,
                                                                   const Vector& u, int) {
      return l(x, u, z);
    };
  if (model.final_cost_gradient)
    m.final_cost_gradient = [l = model.final_cost_gradient, z](const Vector& x, int) {
      return l(x, z);
    };
  m.control_lower = model.control_lower;
  m.control_upper = model.control_upper;
  return m;
}

/// Single-latent model over the stacked state (x^0, ..., x^{n-1}) in which
/// copy z follows latent z's dynamics under the shared control, and the cost
/// is sum_z weights(z) times latent z's cost. Beliefs are never updated.
inline ProblemModel stack_latents(const ProblemModel& model, const Vector& weights) {
  const int nz = model.num_latents();
  const int nx = model.state_dim;
  if (weights.size() != nz) throw InvalidArgument("stack_latents: one weight per latent");
  ProblemModel m;
  m.name = model.name + "|weighted";
  m.state_dim = nx * nz;
  m.control_dim = model.control_dim;
  m.obs_dim = 1;
  m.latents = LatentSet{"weighted"};
  m.dt = model.dt;
  m.dynamics_mean = [model, nz, nx](const Vector& x, const Vector& u, int) {
    Vector n(nx * nz);
    for (int z = 0; z < nz; ++z) n.segment(z * nx, nx) = model.dynamics_mean(x.segment(z * nx, nx), u, z);
    return n;
  };
  Matrix q = Matrix::Zero(nx * nz, nx * nz);
  for (int z = 0; z < nz; ++z)
    q.block(z * nx, z * nx, nx, nx) = model.dynamics_noise.at(static_cast<std::size_t>(z));
  m.dynamics_noise = {q};
  m.observation_mean = [](const Vector&, int) { return Vector::Zero(1); };
  m.observation_noise = [](const Vector&, int) { return Matrix::Zero(1, 1); };
  m.running_cost = [model, weights, nz, nx](const Vector& x, const Vector& u, int) {
    double c = 0.0;
    for (int z = 0; z < nz; ++z)
      if (weights(z) != 0.0) c += weights(z) * model.running_cost(x.segment(z * nx, nx), u, z);
    return c;
  };
  m.final_cost = [model, weights, nz, nx](const Vector& x, int) {
    double c = 0.0;
    for (int z = 0; z < nz; ++z)
      if (weights(z) != 0.0) c += weights(z) * model.final_cost(x.segment(z * nx, nx), z);
    return c;
  };
  m.dynamics_jacobian = [model, nz, nx](const Vector& x, const Vector& u, int) {
    Matrix A = Matrix::Zero(nx * nz, nx * nz);
    Matrix B(nx * nz, model.control_dim);
    for (int z = 0; z < nz; ++z) {
      auto [Az, Bz] = dynamics_jacobians(model, x.segment(z * nx, nx), u, z);
      A.block(z * nx, z * nx, nx, nx) = Az;
      B.middleRows(z * nx, nx) = Bz;
    }
    return std::make_pair(A, B);
  };
  if (model.running_cost_gradient)
    m.running_cost_gradient = [model, weights, nz, nx](const Vector& x, const Vector& u, int) {
      Vector gx = Vector::Zero(nx * nz);
      Vector gu = Vector::Zero(model.control_dim);
      for (int z = 0; z < nz; ++z) {
        if (weights(z) == 0.0) continue;
        auto [a, b] = model.running_cost_gradient(x.segment(z * nx, nx), u, z);
        gx.segment(z * nx, nx) = weights(z) * a;
        gu += weights(z) * b;
      }
      return std::make_pair(gx, gu);
    };
  if (model.final_cost_gradient)
    m.final_cost_gradient = [model, weights, nz, nx](const Vector& x, int) {
      Vector g = Vector::Zero(nx * nz);
      for (int z = 0; z < nz; ++z)
        if (weights(z) != 0.0)
          g.segment(z * nx, nx) = weights(z) * model.final_cost_gradient(x.segment(z * nx, nx), z);
      return g;
    };
  m.control_lower = model.control_lower;
  m.control_upper = model.control_upper;
  return m;
}

/// A solved plan together with the model it was optimized on and the map from
/// an observed belief state to that model's stacked segment state.
struct Plan {
  PlannerKind kind = PlannerKind::PODDP;
  ProblemModel planning_model;
  SolveResult result;
  int target_latent = -1;  // MLDDP
  Vector weights;          // PWDDP

  /// Stacked segment state of the planning model for observed x with current
  /// logits beta and logits beta_start at the beginning of the segment.
  Vector lift(const Vector& x, const Vector& beta, const Vector& beta_start) const {
    const TrajectoryTree& t = result.tree;
    if (kind == PlannerKind::PODDP) return t.layout().lift(x, beta, beta_start);
    Vector base(t.state_dim);
    if (kind == PlannerKind::PWDDP) {
      const int copies = t.state_dim / static_cast<int>(x.size());
      for (int z = 0; z < copies; ++z) base.segment(z * x.size(), x.size()) = x;
    } else {
      base = x;
    }
    return t.layout().lift(base, Vector::Zero(1));
  }
};

inline Plan poddp_plan(const ProblemModel& model, const Vector& x0, const Belief& b,
                       const SolverConfig& config, const TrajectoryTree* warm = nullptr) {
  Plan p;
  p.kind = PlannerKind::PODDP;
  p.planning_model = model;
  p.result = solve(model, x0, b, config, warm);
  return p;
}

/// Plain DDP against the most likely latent (lowest index on ties).
inline Plan mlddp_plan(const ProblemModel& model, const Vector& x0, const Belief& b,
                       const SolverConfig& config, const TrajectoryTree* warm = nullptr) {
  if (!b.is_valid(1e-9) || b.size() != model.num_latents())
    throw InvalidArgument("mlddp_plan: invalid belief");
  Plan p;
  p.kind = PlannerKind::MLDDP;
  p.target_latent = b.argmax();
  p.planning_model = restrict_to_latent(model, p.target_latent);
  p.result = solve(p.planning_model, x0, Belief::uniform(1), config, warm);
  return p;
}

/// One shared control sequence minimizing the belief-weighted cost over
/// per-latent rollouts (no belief updates).
inline Plan pwddp_plan(const ProblemModel& model, const Vector& x0, const Belief& b,
                       const SolverConfig& config, const TrajectoryTree* warm = nullptr) {
  if (!b.is_valid(1e-9) || b.size() != model.num_latents())
    throw InvalidArgument("pwddp_plan: invalid belief");
  Plan p;
  p.kind = PlannerKind::PWDDP;
  p.weights = b.probs;
  p.planning_model = stack_latents(model, b.probs);
  Vector xs(model.state_dim * model.num_latents());
  for (int z = 0; z < model.num_latents(); ++z) xs.segment(z * model.state_dim, model.state_dim) = x0;
  p.result = solve(p.planning_model, xs, Belief::uniform(1), config, warm);
  return p;
}

inline Plan make_plan(PlannerKind kind, const ProblemModel& model, const Vector& x0,
                      const Belief& b, const SolverConfig& config,
                      const TrajectoryTree* warm = nullptr) {
  switch (kind) {
    case PlannerKind::PODDP: return poddp_plan(model, x0, b, config, warm);
    case PlannerKind::MLDDP: return mlddp_plan(model, x0, b, config, warm);
    case PlannerKind::PWDDP: return pwddp_plan(model, x0, b, config, warm);
  }
  throw InvalidArgument("make_plan: unknown planner");
}

}  // namespace poddp
