#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "poddp/poddp.hpp"

namespace poddp::testing {

/// Linear dynamics x' = A x + B u, cost 0.5 x'Qx + 0.5 u'Ru, final 0.5 x'Qf x.
struct LinearQuadratic {
  Matrix A, B, Q, R, Qf;
};

inline LinearQuadratic make_lq(int nx, int nu, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LinearQuadratic p;
  p.A = Matrix::Identity(nx, nx);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nx; ++j) p.A(i, j) += 0.1 * u(rng);
  p.B = Matrix(nx, nu);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nu; ++j) p.B(i, j) = 0.2 * u(rng);
  Matrix M(nx, nx);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nx; ++j) M(i, j) = u(rng);
  p.Q = M * M.transpose() + Matrix::Identity(nx, nx);
  p.R = 0.5 * Matrix::Identity(nu, nu);
  p.Qf = 5.0 * Matrix::Identity(nx, nx);
  return p;
}

/// The linear-quadratic problem as a model with `num_latents` identical latents
/// and no evidence channel.
inline ProblemModel lq_model(const LinearQuadratic& p, int num_latents = 1) {
  ProblemModel m;
  m.name = "lq";
  m.state_dim = static_cast<int>(p.A.rows());
  m.control_dim = static_cast<int>(p.B.cols());
  m.obs_dim = 1;
  std::vector<std::string> labels;
  for (int z = 0; z < num_latents; ++z) labels.push_back("z" + std::to_string(z));
  m.latents = LatentSet(labels);
  m.dynamics_mean = [p](const Vector& x, const Vector& u, int) { return Vector(p.A * x + p.B * u); };
  m.dynamics_jacobian = [p](const Vector&, const Vector&, int) { return std::make_pair(p.A, p.B); };
  m.dynamics_noise.assign(static_cast<std::size_t>(num_latents), Matrix::Zero(m.state_dim, m.state_dim));
  m.observation_mean = [](const Vector&, int) { return Vector::Zero(1); };
  m.observation_noise = [](const Vector&, int) { return Matrix::Zero(1, 1); };
  m.running_cost = [p](const Vector& x, const Vector& u, int) {
    return 0.5 * x.dot(p.Q * x) + 0.5 * u.dot(p.R * u);
  };
  m.running_cost_gradient = [p](const Vector& x, const Vector& u, int) {
    return std::make_pair(Vector(p.Q * x), Vector(p.R * u));
  };
  m.final_cost = [p](const Vector& x, int) { return 0.5 * x.dot(p.Qf * x); };
  m.final_cost_gradient = [p](const Vector& x, int) { return Vector(p.Qf * x); };
  return m;
}

/// Finite-horizon discrete Riccati recursion. Returns the optimal cost from x0
/// and fills the optimal controls and feedback gains u_t = -L_t x_t.
inline double riccati_oracle(const LinearQuadratic& p, const Vector& x0, int horizon,
                             std::vector<Vector>* controls = nullptr,
                             std::vector<Matrix>* gains = nullptr) {
  std::vector<Matrix> L(static_cast<std::size_t>(horizon));
  Matrix P = p.Qf;
  for (int t = horizon - 1; t >= 0; --t) {
    const Matrix S = p.R + p.B.transpose() * P * p.B;
    L[static_cast<std::size_t>(t)] = S.ldlt().solve(p.B.transpose() * P * p.A);
    const Matrix Acl = p.A - p.B * L[static_cast<std::size_t>(t)];
    P = p.Q + L[static_cast<std::size_t>(t)].transpose() * p.R * L[static_cast<std::size_t>(t)] +
        Acl.transpose() * P * Acl;
    P = 0.5 * (P + P.transpose());
  }
  if (controls != nullptr) {
    controls->clear();
    Vector x = x0;
    for (int t = 0; t < horizon; ++t) {
      const Vector u = -L[static_cast<std::size_t>(t)] * x;
      controls->push_back(u);
      x = p.A * x + p.B * u;
    }
  }
  if (gains != nullptr) *gains = L;
  return 0.5 * x0.dot(P * x0);
}

/// Planar point robot x' = x + dt u with |Z| candidate goals spread on a
/// circle. A scalar beacon reads the goal index with variance growing away
/// from the origin.
inline ProblemModel beacon_model(int num_latents, double dt = 0.2) {
  ProblemModel m;
  m.name = "beacon";
  m.state_dim = 2;
  m.control_dim = 2;
  m.obs_dim = 1;
  std::vector<std::string> labels;
  for (int z = 0; z < num_latents; ++z) labels.push_back("g" + std::to_string(z));
  m.latents = LatentSet(labels);
  m.dt = dt;
  auto goal = [num_latents](int z) {
    const double a = 0.5 + 2.0 * 3.14159265358979 * z / std::max(num_latents, 1);
    Vector g(2);
    g << 3.0 * std::cos(a), 3.0 * std::sin(a);
    return g;
  };
  m.dynamics_mean = [dt](const Vector& x, const Vector& u, int) { return Vector(x + dt * u); };
  m.dynamics_noise.assign(static_cast<std::size_t>(num_latents), Matrix::Zero(2, 2));
  m.observation_mean = [](const Vector&, int z) { return Vector::Constant(1, static_cast<double>(z)); };
  m.observation_noise = [](const Vector& x, int) {
    return Matrix::Constant(1, 1, 0.3 + 0.5 * x.squaredNorm());
  };
  m.running_cost = [goal](const Vector& x, const Vector& u, int z) {
    return 0.1 * (x - goal(z)).squaredNorm() + 0.05 * u.squaredNorm();
  };
  m.final_cost = [goal](const Vector& x, int z) { return 2.0 * (x - goal(z)).squaredNorm(); };
  return m;
}

/// Plain iLQR on the observed state of a single-latent model, written
/// independently of the tree solver but following the same regularization,
/// line search, clipping and stopping rules.
struct PlainDDPResult {
  std::vector<Vector> controls;
  std::vector<Vector> states;
  std::vector<Vector> k;
  std::vector<Matrix> K;
  std::vector<double> accepted_costs;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace plain_detail {

inline double rollout(const ProblemModel& m, const Vector& x0, const std::vector<Vector>& u_nom,
                      const std::vector<Vector>& x_nom, const std::vector<Vector>* k,
                      const std::vector<Matrix>* K, double alpha, std::vector<Vector>& u_out,
                      std::vector<Vector>& x_out) {
  const std::size_t T = u_nom.size();
  u_out.assign(T, Vector());
  x_out.assign(T + 1, Vector());
  Vector x = x0;
  double cost = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    Vector u = u_nom[t];
    if (k != nullptr) u += alpha * (*k)[t] + (*K)[t] * (x - x_nom[t]);
    u = m.clamp_control(u);
    x_out[t] = x;
    u_out[t] = u;
    cost += m.running_cost(x, u, 0);
    x = m.dynamics_mean(x, u, 0);
    if (!x.allFinite()) return std::numeric_limits<double>::infinity();
  }
  x_out[T] = x;
  return cost + m.final_cost(x, 0);
}

struct Backward {
  std::vector<Vector> k;
  std::vector<Matrix> K;
  double dV = 0.0;
  double grad = 0.0;
};

inline Backward backward(const ProblemModel& m, const std::vector<Vector>& us,
                         const std::vector<Vector>& xs, double lambda) {
  const std::size_t T = us.size();
  Backward b;
  b.k.resize(T);
  b.K.resize(T);
  const FinalCostDerivatives fin = final_cost_derivatives(m, xs[T], 0);
  Vector V = fin.lf_x;
  Matrix VV = fin.lf_xx;
  double grad_sum = 0.0;
  for (std::size_t i = T; i-- > 0;) {
    const DerivativeBundle d = derivative_bundle(m, xs[i], us[i], 0);
    const Vector Qx = d.l_x + d.f_x.transpose() * V;
    const Vector Qu = d.l_u + d.f_u.transpose() * V;
    Matrix Qxx = d.l_xx + d.f_x.transpose() * VV * d.f_x;
    const Matrix Qux = d.l_xu.transpose() + d.f_u.transpose() * VV * d.f_x;
    Matrix Quu = d.l_uu + d.f_u.transpose() * VV * d.f_u;
    Qxx = 0.5 * (Qxx + Qxx.transpose());
    Quu = 0.5 * (Quu + Quu.transpose());
    Matrix reg = Quu;
    reg.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(reg);
    if (llt.info() != Eigen::Success) throw BackwardFailure("plain DDP: Q_uu not positive definite");
    const Vector k = -llt.solve(Qu);
    const Matrix K = -llt.solve(Qux);
    b.dV += k.dot(Qu) + 0.5 * k.dot(Quu * k);
    V = Qx + K.transpose() * Quu * k + K.transpose() * Qu + Qux.transpose() * k;
    VV = Qxx + K.transpose() * Quu * K + K.transpose() * Qux + Qux.transpose() * K;
    VV = 0.5 * (VV + VV.transpose());
    grad_sum += (k.array().abs() / (us[i].array().abs() + 1.0)).maxCoeff();
    b.k[i] = k;
    b.K[i] = K;
  }
  b.grad = T > 0 ? grad_sum / static_cast<double>(T) : 0.0;
  return b;
}

}  // namespace plain_detail

inline PlainDDPResult plain_ddp(const ProblemModel& m, const Vector& x0, const SolverConfig& cfg) {
  const std::size_t T = static_cast<std::size_t>(cfg.horizon);
  const Vector fill = cfg.initial_control.size() == m.control_dim ? cfg.initial_control
                                                                  : Vector::Zero(m.control_dim);
  PlainDDPResult r;
  std::vector<Vector> u0(T, fill);
  r.cost = plain_detail::rollout(m, x0, u0, {}, nullptr, nullptr, 1.0, r.controls, r.states);
  r.accepted_costs.push_back(r.cost);
  double lambda = cfg.regularization_init;
  plain_detail::Backward last;
  bool current = false;
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    r.iterations = iter;
    try {
      last = plain_detail::backward(m, r.controls, r.states, lambda);
      current = true;
    } catch (const BackwardFailure&) {
      lambda *= cfg.regularization_factor;
      if (lambda > cfg.regularization_max) break;
      continue;
    }
    const double scale = std::max(1.0, std::abs(r.cost));
    if (last.grad < cfg.gradient_tolerance || -last.dV < cfg.cost_tolerance * scale) {
      r.converged = true;
      break;
    }
    bool accepted = false;
    for (double alpha : cfg.alpha_schedule) {
      std::vector<Vector> us, xs;
      const double c = plain_detail::rollout(m, x0, r.controls, r.states, &last.k, &last.K, alpha,
                                             us, xs);
      if (std::isfinite(c) && c < r.cost) {
        const double improvement = (r.cost - c) / scale;
        r.controls = std::move(us);
        r.states = std::move(xs);
        r.cost = c;
        r.accepted_costs.push_back(c);
        current = false;
        lambda = std::max(lambda / cfg.regularization_decrease, cfg.regularization_min);
        accepted = true;
        if (improvement < cfg.cost_tolerance) r.converged = true;
        break;
      }
    }
    if (r.converged) break;
    if (!accepted) {
      lambda *= cfg.regularization_factor;
      if (lambda > cfg.regularization_max) break;
    }
  }
  if (!current) {
    last = plain_detail::backward(m, r.controls, r.states, std::min(lambda, cfg.regularization_max));
  }
  r.k = last.k;
  r.K = last.K;
  return r;
}

// Beacon robot whose drift depends on the goal, so transitions carry evidence too.
inline ProblemModel drifting_beacon(int nz) {
  ProblemModel m = beacon_model(nz);
  const double dt = m.dt;
  m.dynamics_mean = [dt](const Vector& x, const Vector& u, int z) {
    return Vector((x + dt * u).array() + 0.1 * dt * (z - 1));
  };
  m.dynamics_noise.assign(static_cast<std::size_t>(nz), 0.01 * Matrix::Identity(2, 2));
  return m;
}

/// Largest deviation between the beliefs and states stored in a rolled-out
/// tree and a step-by-step replay of the Bayes updates along every history,
/// with the maximum-likelihood observation at each segment end.
inline double belief_replay_error(const ProblemModel& m, const Vector& x0, const Belief& b0,
                                  const TrajectoryTree& t) {
  const StackedLayout lay = t.layout();
  const int nz = m.num_latents();
  double worst = 0.0;
  auto step = [&](const TreeNode& seg, int j, int z, Vector& x, Belief& b) {
    const Vector& u = seg.controls[static_cast<std::size_t>(j)];
    const Vector xn = m.dynamics_mean(x, u, z);
    b = j == seg.length() - 1 ? bayes_update(m.observation_mean(xn, z), xn, u, x, b, m)
                              : transition_update(xn, u, x, b, m);
    x = xn;
  };
  for (const auto& [h, node] : t.nodes) {
    Vector x = x0;
    Belief b = b0;
    HistoryPath prefix;
    for (int level = 0; level < h.depth(); ++level) {
      const int z = h.branches[static_cast<std::size_t>(level)];
      const TreeNode& seg = t.node(prefix);
      for (int j = 0; j < seg.length(); ++j) step(seg, j, z, x, b);
      prefix = prefix.child(z);
    }
    worst = std::max(worst, (softmax(node.start.beta.beta) - b.probs).cwiseAbs().maxCoeff());
    worst = std::max(worst, (node.start.x - x).cwiseAbs().maxCoeff());
    for (int z = 0; z < nz; ++z) {
      Vector xz = x;
      Belief bz = b;
      for (int j = 0; j < node.length(); ++j) {
        step(node, j, z, xz, bz);
        const Vector& s = node.stacked[static_cast<std::size_t>(j) + 1];
        worst = std::max(worst, (softmax(lay.branch_beta(s, z)) - bz.probs).cwiseAbs().maxCoeff());
        worst = std::max(worst, (lay.branch_x(s, z) - xz).cwiseAbs().maxCoeff());
      }
    }
  }
  return worst;
}

/// Q(ds, du) rolled out through the dynamics, maximum-likelihood observation,
/// Bayes update, and the children's quadratic models (or the expected final cost).
inline double rolled_out_q(const ProblemModel& m, const BeliefState& s, const Vector& u,
                           const std::vector<QuadraticValueModel>& children, const Vector& d) {
  const int nx = m.state_dim;
  const int nz = m.num_latents();
  const int nu = m.control_dim;
  auto successor = [&](const Vector& x, const Vector& beta, const Vector& uu, int z) {
    const Vector xn = m.dynamics_mean(x, uu, z);
    const Belief bn =
        bayes_update(m.observation_mean(xn, z), xn, uu, x, Belief(softmax(beta)), m);
    Vector out(nx + nz);
    out << xn, bn.probs.array().log().matrix();
    return out;
  };
  const Vector x = s.x + d.head(nx);
  const Vector beta = s.beta.beta + d.segment(nx, nz);
  const Vector uu = u + d.tail(nu);
  const Vector p = softmax(beta);
  double q = 0.0;
  for (int z = 0; z < nz; ++z) {
    const Vector next = successor(x, beta, uu, z);
    double v = 0.0;
    if (children.empty()) {
      const Vector pn = softmax(next.tail(nz));
      for (int zz = 0; zz < nz; ++zz) v += pn(zz) * m.final_cost(next.head(nx), zz);
    } else {
      const Vector nominal = successor(s.x, s.beta.beta, u, z);
      v = children[static_cast<std::size_t>(z)].evaluate(next - nominal);
    }
    q += p(z) * (m.running_cost(x, uu, z) + v);
  }
  return q;
}

/// Controls of a tree along one history, concatenated over segments.
inline std::vector<Vector> path_controls(const TrajectoryTree& tree, int branch = 0) {
  std::vector<Vector> out;
  HistoryPath h;
  while (true) {
    const TreeNode& n = tree.node(h);
    out.insert(out.end(), n.controls.begin(), n.controls.end());
    if (tree.is_leaf(h)) break;
    h = h.child(branch);
  }
  return out;
}

/// Non-increasing accepted costs in a solver log.
inline bool monotone_log(const std::vector<IterationRecord>& log) {
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& r : log) {
    if (!r.accepted) continue;
    if (r.cost > prev) return false;
    prev = r.cost;
  }
  return true;
}

/// Relative error |a - b| / max(|b|, floor) in the Euclidean norm.
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

inline Vector random_vector(int n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

}  // namespace poddp::testing
