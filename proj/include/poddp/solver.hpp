#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "poddp/bayes.hpp"
#include "poddp/belief.hpp"
#include "poddp/model.hpp"
#include "poddp/tree.hpp"
#include "poddp/types.hpp"

namespace poddp {

struct SolverConfig {
  int horizon = 30;
  int segments = 3;
  /// Overrides the equal-length schedule when non-empty.
  std::vector<int> breakpoints;
  int max_iterations = 100;
  /// Relative cost improvement below which the solve is converged.
  double cost_tolerance = 1e-7;
  /// Converged when the mean normalized open-loop update falls below this.
  double gradient_tolerance = 1e-9;
  std::vector<double> alpha_schedule = default_alphas();
  double regularization_init = 1e-6;
  double regularization_factor = 10.0;
  double regularization_decrease = 2.0;
  double regularization_min = 1e-9;
  double regularization_max = 1e10;
  /// Constant control used when no initial tree is supplied.
  Vector initial_control;

  SegmentSchedule schedule() const {
    if (!breakpoints.empty()) {
      SegmentSchedule s(breakpoints);
      if (s.horizon() != horizon)
        throw InvalidArgument("SolverConfig: last breakpoint must equal the horizon");
      return s;
    }
    return SegmentSchedule::equal(horizon, segments);
  }

  static std::vector<double> default_alphas() {
    std::vector<double> a;
    for (int i = 0; i <= 10; ++i) a.push_back(std::ldexp(1.0, -i));
    return a;
  }
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double alpha = 0.0;
  double lambda = 0.0;
  double gradient_norm = 0.0;
  bool accepted = false;
};

inline nlohmann::json iteration_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"cost", r.cost},
          {"alpha", r.alpha},
          {"lambda", r.lambda},
          {"gradient_norm", r.gradient_norm}};
}

struct SolveResult {
  TrajectoryTree tree;  // gains of the last backward pass stored per node
  GainSchedule gains;
  std::vector<IterationRecord> log;
  bool converged = false;
  int iterations = 0;
  double cost = 0.0;
};

/// Second-order expansion of the belief-space Q-function for one control step
/// at a branch point, with respect to perturbations of the belief state
/// s = (x, beta) and the control.
struct QExpansion {
  double q = 0.0;
  Vector Q_s, Q_u;
  Matrix Q_ss, Q_us, Q_uu;
};

struct ControlUpdate {
  Vector k;
  Matrix K;  // control_dim x (state_dim + |Z|)
  QuadraticValueModel value;
  QExpansion q;
};

namespace detail {

// ----- stacked segment system ------------------------------------------------

inline Vector stacked_step(const ProblemModel& model, const StackedLayout& lay, const Vector& s,
                           const Vector& u, bool observe) {
  Vector next = s;
  for (int z = 0; z < lay.num_latents; ++z) {
    const Vector x = lay.branch_x(s, z);
    const Vector xn = model.dynamics_mean(x, u, z);
    const Belief b(softmax(lay.branch_beta(s, z)));
    const Belief bn = observe ? bayes_update(model.observation_mean(xn, z), xn, u, x, b, model)
                              : transition_update(xn, u, x, b, model);
    next.segment(lay.x_offset(z), lay.state_dim) = xn;
    next.segment(lay.beta_offset(z), lay.num_latents) = bn.probs.array().log().matrix();
  }
  return next;
}

inline double stacked_running_cost(const ProblemModel& model, const StackedLayout& lay,
                                   const Vector& s, const Vector& u) {
  const Vector p = softmax(lay.weights_logits(s));
  double c = 0.0;
  for (int z = 0; z < lay.num_latents; ++z)
    c += p(z) * model.running_cost(lay.branch_x(s, z), u, z);
  return c;
}

/// Expected final cost under the belief exp(beta): the horizon value.
inline double terminal_value(const ProblemModel& model, const Vector& x, const Vector& beta) {
  const Vector p = softmax(beta);
  double c = 0.0;
  for (int z = 0; z < p.size(); ++z) c += p(z) * model.final_cost(x, z);
  return c;
}

// Indices of (x^z, beta^z) inside the stacked vector.
inline std::vector<int> branch_indices(const StackedLayout& lay, int z) {
  std::vector<int> idx;
  for (int i = 0; i < lay.state_dim; ++i) idx.push_back(lay.x_offset(z) + i);
  for (int i = 0; i < lay.num_latents; ++i) idx.push_back(lay.beta_offset(z) + i);
  return idx;
}

inline std::vector<int> weight_indices(const StackedLayout& lay) {
  std::vector<int> idx;
  for (int i = 0; i < lay.num_latents; ++i) idx.push_back(lay.w_offset() + i);
  return idx;
}

struct ValueExpansion {
  double v = 0.0;  // predicted cost-to-go under the updated policy
  double dV = 0.0;
  Vector V;
  Matrix VV;
};

struct StepExpansion {
  double l = 0.0;
  Vector L_s, L_u;
  Matrix L_ss, L_us, L_uu;
  Matrix F_s, F_u;
};

inline StepExpansion expand_step(const ProblemModel& model, const StackedLayout& lay,
                                 const Vector& s, const Vector& u, bool observe) {
  const int n = lay.dim();
  const int nx = lay.state_dim;
  const int nz = lay.num_latents;
  const int nu = static_cast<int>(u.size());
  const Vector p = softmax(lay.weights_logits(s));
  const Matrix J = softmax_jacobian(p);
  const int wo = lay.w_offset();

  StepExpansion e;
  e.L_s = Vector::Zero(n);
  e.L_u = Vector::Zero(nu);
  e.L_ss = Matrix::Zero(n, n);
  e.L_us = Matrix::Zero(nu, n);
  e.L_uu = Matrix::Zero(nu, nu);
  e.F_s = Matrix::Zero(n, n);
  e.F_u = Matrix::Zero(n, nu);
  e.F_s.block(wo, wo, nz, nz).setIdentity();

  for (int z = 0; z < nz; ++z) {
    const int xo = lay.x_offset(z);
    const int bo = lay.beta_offset(z);
    const Vector x = lay.branch_x(s, z);
    const DerivativeBundle d = derivative_bundle(model, x, u, z);
    const Vector dp = J.col(z);

    // Running cost weighted by the segment-start belief.
    e.l += p(z) * d.l;
    e.L_s.segment(xo, nx) += p(z) * d.l_x;
    e.L_s.segment(wo, nz) += dp * d.l;
    e.L_u += p(z) * d.l_u;
    e.L_ss.block(xo, xo, nx, nx) += p(z) * d.l_xx;
    e.L_ss.block(xo, wo, nx, nz) += d.l_x * dp.transpose();
    e.L_ss.block(wo, xo, nz, nx) += dp * d.l_x.transpose();
    e.L_ss.block(wo, wo, nz, nz) += softmax_hessian(p, z) * d.l;
    e.L_us.block(0, xo, nu, nx) += p(z) * d.l_xu.transpose();
    e.L_us.block(0, wo, nu, nz) += d.l_u * dp.transpose();
    e.L_uu += p(z) * d.l_uu;

    // Branch dynamics.
    e.F_s.block(xo, xo, nx, nx) = d.f_x;
    e.F_u.block(xo, 0, nx, nu) = d.f_u;

    // Belief update chain: (x^z, beta^z, u) -> log h(...).
    Vector point(nx + nz + nu);
    point << x, lay.branch_beta(s, z), u;
    auto belief_map = [&](const Vector& q) {
      const Vector xq = q.head(nx);
      const Vector uq = q.tail(nu);
      const Vector xn = model.dynamics_mean(xq, uq, z);
      const Belief b(softmax(q.segment(nx, nz)));
      const Belief bn = observe ? bayes_update(model.observation_mean(xn, z), xn, uq, xq, b, model)
                                : transition_update(xn, uq, xq, b, model);
      return Vector(bn.probs.array().log().matrix());
    };
    const Matrix Jb = numerical_jacobian(belief_map, point);
    e.F_s.block(bo, xo, nz, nx) = Jb.leftCols(nx);
    e.F_s.block(bo, bo, nz, nz) = Jb.middleCols(nx, nz);
    e.F_u.block(bo, 0, nz, nu) = Jb.rightCols(nu);
  }
  return e;
}

/// Local quadratic model of branch z's continuation: the expected final cost
/// at a leaf, or the child's value model otherwise.
struct BranchValue {
  double c = 0.0;
  double dV = 0.0;
  Vector g;
  Matrix H;
};

inline BranchValue terminal_branch_value(const ProblemModel& model, const Vector& x,
                                         const Vector& beta) {
  const int nx = static_cast<int>(x.size());
  const int nz = static_cast<int>(beta.size());
  const Vector p = softmax(beta);
  const Matrix J = softmax_jacobian(p);
  BranchValue bv;
  bv.g = Vector::Zero(nx + nz);
  bv.H = Matrix::Zero(nx + nz, nx + nz);
  for (int z = 0; z < nz; ++z) {
    const FinalCostDerivatives f = final_cost_derivatives(model, x, z);
    const Vector dp = J.col(z);
    bv.c += p(z) * f.value;
    bv.g.head(nx) += p(z) * f.lf_x;
    bv.g.tail(nz) += dp * f.value;
    bv.H.topLeftCorner(nx, nx) += p(z) * f.lf_xx;
    bv.H.topRightCorner(nx, nz) += f.lf_x * dp.transpose();
    bv.H.bottomLeftCorner(nz, nx) += dp * f.lf_x.transpose();
    bv.H.bottomRightCorner(nz, nz) += softmax_hessian(p, z) * f.value;
  }
  return bv;
}

inline BranchValue child_branch_value(const QuadraticValueModel& m) {
  return {m.value + m.dV, m.dV, m.V_s, m.V_ss};
}

/// Expansion of sum_z b_z(w) V_z(x^z, beta^z) at the end of a segment.
inline ValueExpansion end_expansion(const StackedLayout& lay, const Vector& s_end,
                                    const std::vector<BranchValue>& branches) {
  const int n = lay.dim();
  const Vector p = softmax(lay.weights_logits(s_end));
  const Matrix J = softmax_jacobian(p);
  const std::vector<int> wi = weight_indices(lay);
  ValueExpansion ve;
  ve.V = Vector::Zero(n);
  ve.VV = Matrix::Zero(n, n);
  for (int z = 0; z < lay.num_latents; ++z) {
    const BranchValue& bv = branches[static_cast<std::size_t>(z)];
    const std::vector<int> yi = branch_indices(lay, z);
    const Vector dp = J.col(z);
    const Matrix Hp = softmax_hessian(p, z);
    ve.v += p(z) * bv.c;
    ve.dV += p(z) * bv.dV;
    for (std::size_t a = 0; a < yi.size(); ++a) {
      ve.V(yi[a]) += p(z) * bv.g(static_cast<Eigen::Index>(a));
      for (std::size_t c = 0; c < yi.size(); ++c)
        ve.VV(yi[a], yi[c]) +=
            p(z) * bv.H(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
      for (std::size_t c = 0; c < wi.size(); ++c) {
        const double cross = bv.g(static_cast<Eigen::Index>(a)) * dp(static_cast<Eigen::Index>(c));
        ve.VV(yi[a], wi[c]) += cross;
        ve.VV(wi[c], yi[a]) += cross;
      }
    }
    for (std::size_t a = 0; a < wi.size(); ++a) {
      ve.V(wi[a]) += dp(static_cast<Eigen::Index>(a)) * bv.c;
      for (std::size_t c = 0; c < wi.size(); ++c)
        ve.VV(wi[a], wi[c]) += Hp(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) * bv.c;
    }
  }
  return ve;
}

struct StepUpdate {
  Vector k;
  Matrix K;
  QExpansion q;  // over the stacked state
};

/// One DDP step: Q expansion from the step expansion and the successor value,
/// regularized control update, and in-place value recursion.
inline StepUpdate backward_step(const StepExpansion& e, ValueExpansion& v, double lambda) {
  StepUpdate out;
  QExpansion& q = out.q;
  q.q = e.l + v.v;
  q.Q_s = e.L_s + e.F_s.transpose() * v.V;
  q.Q_u = e.L_u + e.F_u.transpose() * v.V;
  const Matrix VF_s = v.VV * e.F_s;
  q.Q_ss = e.L_ss + e.F_s.transpose() * VF_s;
  q.Q_us = e.L_us + e.F_u.transpose() * VF_s;
  q.Q_uu = e.L_uu + e.F_u.transpose() * v.VV * e.F_u;
  q.Q_ss = symmetrized(q.Q_ss);
  q.Q_uu = symmetrized(q.Q_uu);

  Matrix Q_reg = q.Q_uu;
  Q_reg.diagonal().array() += lambda;
  Eigen::LLT<Matrix> llt(Q_reg);
  if (llt.info() != Eigen::Success || !Q_reg.allFinite())
    throw BackwardFailure("backward pass: regularized Q_uu is not positive definite");
  out.k = -llt.solve(q.Q_u);
  out.K = -llt.solve(q.Q_us);

  const double dV = out.k.dot(q.Q_u) + 0.5 * out.k.dot(q.Q_uu * out.k);
  const Vector Quu_k = q.Q_uu * out.k;
  v.V = q.Q_s + out.K.transpose() * Quu_k + out.K.transpose() * q.Q_u +
        q.Q_us.transpose() * out.k;
  v.VV = symmetrized(q.Q_ss + out.K.transpose() * q.Q_uu * out.K +
                     out.K.transpose() * q.Q_us + q.Q_us.transpose() * out.K);
  v.v = q.q + dV;
  v.dV += dV;
  return out;
}

inline double node_cost(const ProblemModel& model, const TrajectoryTree& tree, const TreeNode& n,
                        const std::map<HistoryPath, double>& child_costs) {
  const StackedLayout lay = tree.layout();
  double c = 0.0;
  for (int j = 0; j < n.length(); ++j)
    c += stacked_running_cost(model, lay, n.stacked[static_cast<std::size_t>(j)],
                              n.controls[static_cast<std::size_t>(j)]);
  const Vector& end = n.stacked.back();
  const Vector p = softmax(lay.weights_logits(end));
  for (int z = 0; z < lay.num_latents; ++z) {
    const double cz = tree.is_leaf(n.history)
                          ? terminal_value(model, lay.branch_x(end, z), lay.branch_beta(end, z))
                          : child_costs.at(n.history.child(z));
    c += p(z) * cz;
  }
  return c;
}

inline double annotate_costs(const ProblemModel& model, TrajectoryTree& tree) {
  std::map<HistoryPath, double> costs;
  for (const auto& h : iterate_depth_first(tree)) {
    TreeNode& n = tree.node(h);
    if (n.stacked.size() != n.controls.size() + 1)
      throw StructuralCorruption("tree node '" + h.to_string() + "' has not been rolled out");
    n.cost_to_go = node_cost(model, tree, n, costs);
    costs[h] = n.cost_to_go;
  }
  return tree.root().cost_to_go;
}

}  // namespace detail

/// Expected cost of the tree: at each node, the belief-weighted sum of the
/// segment's running costs plus each branch's continuation (child cost, or
/// expected final cost at the horizon).
inline double evaluate_tree_cost(const ProblemModel& model, const TrajectoryTree& tree) {
  std::map<HistoryPath, double> costs;
  for (const auto& h : iterate_depth_first(tree)) {
    const TreeNode& n = tree.node(h);
    if (n.stacked.size() != n.controls.size() + 1)
      throw StructuralCorruption("tree node '" + h.to_string() + "' has not been rolled out");
    costs[h] = detail::node_cost(model, tree, n, costs);
  }
  return costs.at(HistoryPath{});
}

/// Rolls out the trajectory tree from (x0, b0). Within a segment every latent
/// branch follows its own maximum-likelihood transitions under the shared
/// controls u = u_nom + alpha k + K (sigma - sigma_nom), clipped to the model's
/// control box; at segment ends each
/// branch takes its maximum-likelihood observation, updates its belief, and
/// becomes the start of the matching child node.
inline TrajectoryTree forward_pass(const ProblemModel& model, const Vector& x0, const Belief& b0,
                                   const TrajectoryTree& nominal, const GainSchedule* gains,
                                   double alpha) {
  if (x0.size() != model.state_dim || b0.size() != model.num_latents())
    throw InvalidArgument("forward_pass: dimension mismatch");
  if (nominal.num_latents != model.num_latents() || nominal.control_dim != model.control_dim)
    throw InvalidArgument("forward_pass: nominal tree does not match the model");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("forward_pass: alpha outside [0, 1]");

  TrajectoryTree out;
  out.state_dim = model.state_dim;
  out.control_dim = model.control_dim;
  out.num_latents = model.num_latents();
  out.schedule = nominal.schedule;
  const StackedLayout lay = out.layout();

  std::vector<std::pair<HistoryPath, BeliefState>> stack;
  stack.emplace_back(HistoryPath{}, BeliefState{x0, logits_from_belief(b0)});
  while (!stack.empty()) {
    auto [h, start] = std::move(stack.back());
    stack.pop_back();
    const TreeNode& nn = nominal.node(h);
    const NodeGains* g = nullptr;
    if (gains != nullptr) {
      auto it = gains->find(h);
      if (it != gains->end() && !it->second.empty()) g = &it->second;
    }
    if (g != nullptr && nn.stacked.size() != nn.controls.size() + 1)
      throw InvalidArgument("forward_pass: gains supplied without nominal states");

    TreeNode n;
    n.history = h;
    n.t_begin = out.schedule.begin(h.depth());
    n.t_end = out.schedule.end(h.depth());
    if (static_cast<int>(nn.controls.size()) != n.length())
      throw InvalidArgument("forward_pass: nominal controls do not match the schedule");
    n.start = start;
    Vector s = lay.lift(start.x, start.beta.beta);
    for (int j = 0; j < n.length(); ++j) {
      const auto sj = static_cast<std::size_t>(j);
      Vector u = nn.controls[sj];
      if (g != nullptr) u += alpha * g->k[sj] + g->K[sj] * (s - nn.stacked[sj]);
      u = model.clamp_control(u);
      n.controls.push_back(u);
      n.stacked.push_back(s);
      s = detail::stacked_step(model, lay, s, u, j == n.length() - 1);
      if (!s.allFinite())
        throw RolloutDivergence("forward_pass: non-finite state at node '" + h.to_string() +
                                "' step " + std::to_string(j));
    }
    n.stacked.push_back(s);
    if (!out.is_leaf(h))
      for (int z = out.num_latents - 1; z >= 0; --z)
        stack.emplace_back(h.child(z),
                           BeliefState{lay.branch_x(s, z), BeliefLogits(lay.branch_beta(s, z))});
    out.nodes.emplace(h, std::move(n));
  }
  detail::annotate_costs(model, out);
  return out;
}

/// Single branch-point control optimization: expands
///   Q(ds, du) = sum_z b_z(beta + dbeta) [ l(x + dx, u + du, z) + V_z(s'_z) ]
/// where s'_z is the maximum-likelihood successor (dynamics, observation,
/// Bayes update, log) and V_z is the child's value model expanded at that
/// successor, or the expected final cost when `children` is empty.
inline ControlUpdate optimize_control(const ProblemModel& model, const Vector& u,
                                      const BeliefState& s,
                                      const std::vector<QuadraticValueModel>& children,
                                      double lambda = 0.0) {
  const int nz = model.num_latents();
  if (!children.empty() && static_cast<int>(children.size()) != nz)
    throw InvalidArgument("optimize_control: need a child value model for every latent or none");
  const StackedLayout lay{model.state_dim, nz};
  const Vector s0 = lay.lift(s.x, s.beta.beta);
  const Vector s1 = detail::stacked_step(model, lay, s0, u, true);

  std::vector<detail::BranchValue> branches;
  for (int z = 0; z < nz; ++z)
    branches.push_back(children.empty() ? detail::terminal_branch_value(model, lay.branch_x(s1, z),
                                                                        lay.branch_beta(s1, z))
                                        : detail::child_branch_value(
                                              children[static_cast<std::size_t>(z)]));
  detail::ValueExpansion v = detail::end_expansion(lay, s1, branches);
  const double nominal_tail = v.v - v.dV;
  const detail::StepExpansion e = detail::expand_step(model, lay, s0, u, true);
  const detail::StepUpdate step = detail::backward_step(e, v, lambda);

  const Matrix E = lay.lift_jacobian();
  ControlUpdate out;
  out.k = step.k;
  out.K = step.K * E;
  out.q.q = step.q.q;
  out.q.Q_s = E.transpose() * step.q.Q_s;
  out.q.Q_u = step.q.Q_u;
  out.q.Q_ss = E.transpose() * step.q.Q_ss * E;
  out.q.Q_us = step.q.Q_us * E;
  out.q.Q_uu = step.q.Q_uu;
  out.value.value = e.l + nominal_tail;
  out.value.dV = v.dV;
  out.value.V_s = E.transpose() * v.V;
  out.value.V_ss = detail::symmetrized(E.transpose() * v.VV * E);
  return out;
}

struct BackwardResult {
  GainSchedule gains;
  std::map<HistoryPath, QuadraticValueModel> value_models;
  double expected_change = 0.0;  // predicted cost change at the root for alpha = 1
  double gradient_norm = 0.0;
};

/// Post-order dynamic programming over the tree. Within a segment each step is
/// a standard DDP recursion over the stacked belief state; segment ends combine
/// the children's value models through the belief-weighted branch expansion.
inline BackwardResult backward_pass(const ProblemModel& model, const TrajectoryTree& tree,
                                    double lambda) {
  const StackedLayout lay = tree.layout();
  const Matrix E = lay.lift_jacobian();
  BackwardResult out;
  double grad_sum = 0.0;
  int grad_count = 0;
  for (const auto& h : iterate_depth_first(tree)) {
    const TreeNode& n = tree.node(h);
    if (n.stacked.size() != n.controls.size() + 1)
      throw StructuralCorruption("backward_pass: node '" + h.to_string() + "' not rolled out");
    const Vector& end = n.stacked.back();
    std::vector<detail::BranchValue> branches;
    for (int z = 0; z < lay.num_latents; ++z) {
      if (tree.is_leaf(h))
        branches.push_back(detail::terminal_branch_value(model, lay.branch_x(end, z),
                                                         lay.branch_beta(end, z)));
      else
        branches.push_back(detail::child_branch_value(out.value_models.at(h.child(z))));
    }
    detail::ValueExpansion v = detail::end_expansion(lay, end, branches);

    NodeGains g;
    g.k.resize(static_cast<std::size_t>(n.length()));
    g.K.resize(static_cast<std::size_t>(n.length()));
    for (int j = n.length() - 1; j >= 0; --j) {
      const auto sj = static_cast<std::size_t>(j);
      const detail::StepExpansion e =
          detail::expand_step(model, lay, n.stacked[sj], n.controls[sj], j == n.length() - 1);
      detail::StepUpdate step = detail::backward_step(e, v, lambda);
      grad_sum += (step.k.array().abs() / (n.controls[sj].array().abs() + 1.0)).maxCoeff();
      ++grad_count;
      g.k[sj] = std::move(step.k);
      g.K[sj] = std::move(step.K);
    }

    QuadraticValueModel m;
    m.value = n.cost_to_go;
    m.dV = v.dV;
    m.V_s = E.transpose() * v.V;
    m.V_ss = detail::symmetrized(E.transpose() * v.VV * E);
    out.value_models.emplace(h, std::move(m));
    out.gains.emplace(h, std::move(g));
  }
  out.expected_change = out.value_models.at(HistoryPath{}).dV;
  out.gradient_norm = grad_count > 0 ? grad_sum / grad_count : 0.0;
  return out;
}

/// Alternates tree rollouts and backward passes with a backtracking line search
/// on the expected tree cost and Levenberg-style regularization of Q_uu.
/// Never throws on non-convergence: the best tree found is returned with
/// `converged == false`.
inline SolveResult solve(const ProblemModel& model, const Vector& x0, const Belief& b0,
                         const SolverConfig& config, const TrajectoryTree* initial = nullptr) {
  model.validate();
  if (!b0.is_valid(1e-9)) throw InvalidArgument("solve: initial belief is not a distribution");
  const SegmentSchedule schedule = config.schedule();

  TrajectoryTree nominal;
  if (initial != nullptr) {
    if (!(initial->schedule == schedule))
      throw InvalidArgument("solve: initial tree schedule does not match the configuration");
    nominal = *initial;
  } else {
    const Vector fill = config.initial_control.size() == model.control_dim
                            ? config.initial_control
                            : Vector::Zero(model.control_dim);
    nominal = make_control_tree(schedule, model.state_dim, model.control_dim,
                                model.num_latents(), fill);
  }

  SolveResult result;
  result.tree = forward_pass(model, x0, b0, nominal, nullptr, 1.0);
  result.cost = result.tree.root().cost_to_go;
  result.log.push_back({0, result.cost, 0.0, config.regularization_init, 0.0, true});

  double lambda = config.regularization_init;
  BackwardResult last;
  bool gains_current = false;  // `last` was computed on result.tree
  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    result.iterations = iter;
    try {
      last = backward_pass(model, result.tree, lambda);
      gains_current = true;
    } catch (const BackwardFailure&) {
      lambda *= config.regularization_factor;
      if (lambda > config.regularization_max) break;
      continue;
    }

    const double scale = std::max(1.0, std::abs(result.cost));
    if (last.gradient_norm < config.gradient_tolerance ||
        -last.expected_change < config.cost_tolerance * scale) {
      result.converged = true;
      result.log.push_back({iter, result.cost, 0.0, lambda, last.gradient_norm, false});
      break;
    }

    bool accepted = false;
    for (double alpha : config.alpha_schedule) {
      TrajectoryTree candidate;
      try {
        candidate = forward_pass(model, x0, b0, result.tree, &last.gains, alpha);
      } catch (const RolloutDivergence&) {
        continue;
      } catch (const DegenerateEvidence&) {
        continue;
      }
      const double cost = candidate.root().cost_to_go;
      if (std::isfinite(cost) && cost < result.cost) {
        const double improvement = (result.cost - cost) / scale;
        result.tree = std::move(candidate);
        result.cost = cost;
        gains_current = false;
        lambda = std::max(lambda / config.regularization_decrease, config.regularization_min);
        result.log.push_back({iter, cost, alpha, lambda, last.gradient_norm, true});
        accepted = true;
        if (improvement < config.cost_tolerance) result.converged = true;
        break;
      }
    }
    if (result.converged) break;
    if (!accepted) {
      lambda *= config.regularization_factor;
      if (lambda > config.regularization_max) break;
    }
  }

  if (!gains_current) {
    try {
      last = backward_pass(model, result.tree, std::min(lambda, config.regularization_max));
      gains_current = true;
    } catch (const BackwardFailure&) {
    }
  }
  if (gains_current) {
    result.gains = last.gains;
    for (auto& [h, n] : result.tree.nodes) {
      n.gains = last.gains.at(h);
      n.value_model = last.value_models.at(h);
    }
  }
  return result;
}

}  // namespace poddp
