#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "poddp/belief.hpp"
#include "poddp/types.hpp"

namespace poddp {

/// POMDP-lite problem definition. Continuous state is fully observed; the
/// latent index z is hidden and constant over the horizon. Dynamics are
/// discrete-time means of Gaussian transitions; observations are means of
/// Gaussian observation densities.
///
/// The optional analytic callbacks are used by derivative_bundle when set.
struct ProblemModel {
  using Dynamics = std::function<Vector(const Vector& x, const Vector& u, int z)>;
  using Observation = std::function<Vector(const Vector& x, int z)>;
  using ObservationNoise = std::function<Matrix(const Vector& x, int z)>;
  using RunningCost = std::function<double(const Vector& x, const Vector& u, int z)>;
  using FinalCost = std::function<double(const Vector& x, int z)>;
  using DynamicsJacobian =
      std::function<std::pair<Matrix, Matrix>(const Vector& x, const Vector& u, int z)>;
  using ObservationJacobian = std::function<Matrix(const Vector& x, int z)>;
  using RunningCostGradient =
      std::function<std::pair<Vector, Vector>(const Vector& x, const Vector& u, int z)>;
  using FinalCostGradient = std::function<Vector(const Vector& x, int z)>;

  std::string name;
  int state_dim = 0;
  int control_dim = 0;
  int obs_dim = 0;
  LatentSet latents{"z0"};
  double dt = 0.1;

  Dynamics dynamics_mean;
  /// One covariance per latent value. An all-zero matrix means the transition
  /// is deterministic and carries no evidence about z.
  std::vector<Matrix> dynamics_noise;
  Observation observation_mean;
  /// An all-zero matrix means the observation carries no evidence about z.
  ObservationNoise observation_noise;
  RunningCost running_cost;
  FinalCost final_cost;

  DynamicsJacobian dynamics_jacobian;
  ObservationJacobian observation_jacobian;
  RunningCostGradient running_cost_gradient;
  FinalCostGradient final_cost_gradient;

  /// Control box; rollouts and executed controls are clipped to it.
  Vector control_lower;
  Vector control_upper;

  int num_latents() const { return latents.size(); }

  Vector clamp_control(const Vector& u) const {
    Vector out = u;
    if (control_lower.size() == u.size()) out = out.cwiseMax(control_lower);
    if (control_upper.size() == u.size()) out = out.cwiseMin(control_upper);
    return out;
  }

  void validate() const {
    if (state_dim <= 0 || control_dim <= 0 || obs_dim <= 0)
      throw InvalidArgument("ProblemModel '" + name + "': dimensions must be positive");
    if (!dynamics_mean || !observation_mean || !observation_noise || !running_cost ||
        !final_cost)
      throw InvalidArgument("ProblemModel '" + name + "': missing model function");
    if (static_cast<int>(dynamics_noise.size()) != num_latents())
      throw InvalidArgument("ProblemModel '" + name + "': need one dynamics covariance per latent");
    for (const auto& q : dynamics_noise)
      if (q.rows() != state_dim || q.cols() != state_dim)
        throw InvalidArgument("ProblemModel '" + name + "': dynamics covariance shape");
    if (!(dt > 0.0)) throw InvalidArgument("ProblemModel '" + name + "': dt must be positive");
  }
};

/// Central-difference Jacobian with per-coordinate step
/// h = rel_step * max(1, |point_i|).
template <class F>
Matrix numerical_jacobian(F&& f, const Vector& point, double rel_step = 1e-5) {
  const Eigen::Index n = point.size();
  Matrix J;
  Vector xp = point;
  Vector xm = point;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = rel_step * std::max(1.0, std::abs(point(i)));
    xp(i) = point(i) + h;
    xm(i) = point(i) - h;
    const Vector fp = f(xp);
    const Vector fm = f(xm);
    if (!fp.allFinite() || !fm.allFinite())
      throw DifferentiationFailure("numerical_jacobian: non-finite evaluation",
                                   static_cast<int>(i));
    if (J.size() == 0) J.resize(fp.size(), n);
    J.col(i) = (fp - fm) / (xp(i) - xm(i));
    xp(i) = point(i);
    xm(i) = point(i);
  }
  if (n == 0) J.resize(f(point).size(), 0);
  return J;
}

/// Central-difference gradient of a scalar function.
template <class F>
Vector numerical_gradient(F&& f, const Vector& point, double rel_step = 1e-5) {
  auto wrapped = [&](const Vector& p) {
    Vector out(1);
    out(0) = f(p);
    return out;
  };
  return numerical_jacobian(wrapped, point, rel_step).row(0).transpose();
}

/// Model derivatives at (x, u, z). Cost Hessians are over the joint (x, u)
/// vector and symmetrized.
struct DerivativeBundle {
  Matrix f_x, f_u;
  Matrix g_x;
  Vector l_x, l_u;
  Matrix l_xx, l_xu, l_uu;
  double l = 0.0;
};

struct FinalCostDerivatives {
  double value = 0.0;
  Vector lf_x;
  Matrix lf_xx;
};

namespace detail {

inline Matrix symmetrized(const Matrix& H) { return 0.5 * (H + H.transpose()); }

// Steps for differences of numerically differentiated gradients are wider so
// the nested round-off stays well below truncation error.
inline constexpr double kGradientStep = 1e-5;
inline constexpr double kNestedGradientStep = 1e-4;

}  // namespace detail

inline std::pair<Matrix, Matrix> dynamics_jacobians(const ProblemModel& model, const Vector& x,
                                                    const Vector& u, int z) {
  if (model.dynamics_jacobian) return model.dynamics_jacobian(x, u, z);
  const int nx = model.state_dim;
  const int nu = model.control_dim;
  Vector xu(nx + nu);
  xu << x, u;
  const Matrix J = numerical_jacobian(
      [&](const Vector& p) { return model.dynamics_mean(p.head(nx), p.tail(nu), z); }, xu);
  return {J.leftCols(nx), J.rightCols(nu)};
}

inline DerivativeBundle derivative_bundle(const ProblemModel& model, const Vector& x,
                                          const Vector& u, int z) {
  const int nx = model.state_dim;
  const int nu = model.control_dim;
  if (x.size() != nx || u.size() != nu)
    throw InvalidArgument("derivative_bundle: dimension mismatch");

  DerivativeBundle d;
  std::tie(d.f_x, d.f_u) = dynamics_jacobians(model, x, u, z);
  d.g_x = model.observation_jacobian
              ? model.observation_jacobian(x, z)
              : numerical_jacobian([&](const Vector& p) { return model.observation_mean(p, z); },
                                   x);

  Vector xu(nx + nu);
  xu << x, u;
  d.l = model.running_cost(x, u, z);

  Matrix H;
  if (model.running_cost_gradient) {
    auto grad = [&](const Vector& p) {
      auto [gx, gu] = model.running_cost_gradient(p.head(nx), p.tail(nu), z);
      Vector g(nx + nu);
      g << gx, gu;
      return g;
    };
    const Vector g = grad(xu);
    d.l_x = g.head(nx);
    d.l_u = g.tail(nu);
    H = numerical_jacobian(grad, xu, detail::kGradientStep);
  } else {
    auto cost = [&](const Vector& p) { return model.running_cost(p.head(nx), p.tail(nu), z); };
    const Vector g = numerical_gradient(cost, xu);
    d.l_x = g.head(nx);
    d.l_u = g.tail(nu);
    H = numerical_jacobian([&](const Vector& p) { return numerical_gradient(cost, p); }, xu,
                           detail::kNestedGradientStep);
  }
  H = detail::symmetrized(H);
  d.l_xx = H.topLeftCorner(nx, nx);
  d.l_xu = H.topRightCorner(nx, nu);
  d.l_uu = H.bottomRightCorner(nu, nu);
  return d;
}

inline FinalCostDerivatives final_cost_derivatives(const ProblemModel& model, const Vector& x,
                                                   int z) {
  FinalCostDerivatives d;
  d.value = model.final_cost(x, z);
  if (model.final_cost_gradient) {
    auto grad = [&](const Vector& p) { return model.final_cost_gradient(p, z); };
    d.lf_x = grad(x);
    d.lf_xx = detail::symmetrized(numerical_jacobian(grad, x, detail::kGradientStep));
  } else {
    auto cost = [&](const Vector& p) { return model.final_cost(p, z); };
    d.lf_x = numerical_gradient(cost, x);
    d.lf_xx = detail::symmetrized(numerical_jacobian(
        [&](const Vector& p) { return numerical_gradient(cost, p); }, x,
        detail::kNestedGradientStep));
  }
  return d;
}

}  // namespace poddp
