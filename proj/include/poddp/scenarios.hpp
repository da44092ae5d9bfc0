#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "poddp/belief.hpp"
#include "poddp/config.hpp"
#include "poddp/model.hpp"
#include "poddp/solver.hpp"
#include "poddp/types.hpp"

namespace poddp {

inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

/// log(1 + exp(k a)) / k, a smooth max(a, 0).
inline double softplus(double a, double k = 1.0) {
  const double y = k * a;
  return (y > 0.0 ? y + std::log1p(std::exp(-y)) : std::log1p(std::exp(y))) / k;
}

// ----- kinematic bicycle ------------------------------------------------------

/// State (px, py, theta, v); control (steer, accel).
struct BicycleParams {
  double wheelbase = 2.5;
  double v_max = 30.0;
};

inline Vector bicycle_step(const Vector& x, const Vector& u, double dt, const BicycleParams& p,
                           double accel_offset = 0.0) {
  Vector n(4);
  const double th = x(2);
  const double v = x(3);
  n(0) = x(0) + v * std::cos(th) * dt;
  n(1) = x(1) + v * std::sin(th) * dt;
  n(2) = th + (v / p.wheelbase) * std::tan(u(0)) * dt;
  n(3) = std::clamp(v + (u(1) + accel_offset) * dt, 0.0, p.v_max);
  return n;
}

/// Jacobians of bicycle_step; the speed row vanishes where the clamp is active.
inline std::pair<Matrix, Matrix> bicycle_jacobian(const Vector& x, const Vector& u, double dt,
                                                  const BicycleParams& p,
                                                  double accel_offset = 0.0) {
  const double th = x(2);
  const double v = x(3);
  const double c = std::cos(th);
  const double s = std::sin(th);
  const double t = std::tan(u(0));
  Matrix A = Matrix::Identity(4, 4);
  Matrix B = Matrix::Zero(4, 2);
  A(0, 2) = -v * s * dt;
  A(0, 3) = c * dt;
  A(1, 2) = v * c * dt;
  A(1, 3) = s * dt;
  A(2, 3) = t * dt / p.wheelbase;
  B(2, 0) = (v / p.wheelbase) * (1.0 + t * t) * dt;
  const double raw = v + (u(1) + accel_offset) * dt;
  if (raw < 0.0 || raw > p.v_max) {
    A(3, 3) = 0.0;
  } else {
    B(3, 1) = dt;
  }
  return {A, B};
}

namespace detail {

template <class C>
using FieldTable = std::vector<std::pair<const char*, double C::*>>;

template <class C>
ParameterSet to_parameters(const C& cfg) {
  ParameterSet out;
  for (const auto& [key, member] : C::fields()) out.emplace(key, cfg.*member);
  return out;
}

template <class C>
C from_parameters(const ParameterSet& params) {
  C cfg;
  ParameterSet resolved = to_parameters(cfg);
  apply_overrides(resolved, params);
  for (const auto& [key, member] : C::fields()) cfg.*member = resolved.at(key);
  return cfg;
}

inline Matrix diagonal(std::initializer_list<double> sigmas) {
  Vector d(static_cast<Eigen::Index>(sigmas.size()));
  Eigen::Index i = 0;
  for (double s : sigmas) d(i++) = s * s;
  return d.asDiagonal();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// Shared experiment-level keys.
#define PODDP_COMMON_FIELDS(C)                                                       \
  {"dt", &C::dt}, {"wheelbase", &C::wheelbase}, {"v_max", &C::v_max},                \
      {"steer_max", &C::steer_max}, {"accel_max", &C::accel_max},                    \
      {"horizon", &C::horizon}, {"segments", &C::segments},                          \
      {"max_iterations", &C::max_iterations}, {"cost_tolerance", &C::cost_tolerance}, \
      {"prior", &C::prior}, {"w_control_limit", &C::w_control_limit}

struct CommonConfig {
  double dt = 0.1;
  double wheelbase = 2.5;
  double v_max = 30.0;
  double steer_max = 0.6;
  double accel_max = 6.0;
  double horizon = 30;
  double segments = 3;
  double max_iterations = 100;
  double cost_tolerance = 1e-7;
  double prior = 0.49;  // probability of latent index 0
  double w_control_limit = 100.0;

  BicycleParams bicycle() const { return {wheelbase, v_max}; }

  void validate_common() const {
    require(dt > 0.0 && wheelbase > 0.0 && v_max > 0.0, "dt, wheelbase and v_max must be positive");
    require(steer_max > 0.0 && steer_max < std::numbers::pi / 2 && accel_max > 0.0,
            "control bounds must be positive (steer_max below pi/2)");
    require(horizon >= 1 && segments >= 1 && segments <= horizon &&
                horizon == std::floor(horizon) && segments == std::floor(segments),
            "horizon and segments must be integers with 1 <= segments <= horizon");
    require(max_iterations >= 1 && cost_tolerance > 0.0, "invalid solver settings");
    require(prior > 0.0 && prior < 1.0, "prior must lie in (0, 1)");
    require(w_control_limit >= 0.0, "w_control_limit must be non-negative");
  }

  /// Squared hinge on controls beyond (steer_max, accel_max); adds its
  /// gradient to *grad when given.
  double control_limit(const Vector& u, Vector* grad = nullptr) const {
    const double limits[2] = {steer_max, accel_max};
    double c = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double a = std::abs(u(i)) - limits[i];
      if (a <= 0.0) continue;
      c += w_control_limit * a * a;
      if (grad) (*grad)(i) += w_control_limit * 2.0 * a * (u(i) > 0.0 ? 1.0 : -1.0);
    }
    return c;
  }

  SolverConfig solver() const {
    SolverConfig s;
    s.horizon = static_cast<int>(horizon);
    s.segments = static_cast<int>(segments);
    s.max_iterations = static_cast<int>(max_iterations);
    s.cost_tolerance = cost_tolerance;
    return s;
  }

  Belief prior_belief() const {
    Vector p(2);
    p << prior, 1.0 - prior;
    return Belief(p);
  }

  void set_bounds(ProblemModel& m) const {
    m.control_lower = Vector(2);
    m.control_lower << -steer_max, -accel_max;
    m.control_upper = -m.control_lower;
  }
};

}  // namespace detail

// ----- T-maze -----------------------------------------------------------------

/// Corridor along +y centred on x = 0 that opens into left/right arms at
/// py = junction_y. Latent 0 = Left goal at (-goal_x, goal_y), 1 = Right.
struct TMazeConfig : detail::CommonConfig {
  TMazeConfig() {
    steer_max = 1.0;
    max_iterations = 200;
  }

  double corridor_half_width = 1.0;
  double junction_y = 8.0;
  double goal_x = 4.0;
  double goal_y = 9.0;
  double start_v = 2.0;
  double sigma_level = 9.1;
  double obs_decay_rate = 1.5;  // gamma
  double obs_decay_mid = 4.0;   // py_mid
  double obs_var_floor = 1e-6;
  double w_goal = 1.0;
  double w_final = 10.0;
  double w_final_speed = 0.0;
  double w_wall = 100.0;
  double wall_softness = 0.1;
  double junction_softness = 0.2;
  double w_steer = 1.0;
  double w_accel = 0.1;

  static const detail::FieldTable<TMazeConfig>& fields() {
    static const detail::FieldTable<TMazeConfig> t = {
        PODDP_COMMON_FIELDS(TMazeConfig),
        {"corridor_half_width", &TMazeConfig::corridor_half_width},
        {"junction_y", &TMazeConfig::junction_y},
        {"goal_x", &TMazeConfig::goal_x},
        {"goal_y", &TMazeConfig::goal_y},
        {"start_v", &TMazeConfig::start_v},
        {"sigma_level", &TMazeConfig::sigma_level},
        {"obs_decay_rate", &TMazeConfig::obs_decay_rate},
        {"obs_decay_mid", &TMazeConfig::obs_decay_mid},
        {"obs_var_floor", &TMazeConfig::obs_var_floor},
        {"w_goal", &TMazeConfig::w_goal},
        {"w_final", &TMazeConfig::w_final},
        {"w_final_speed", &TMazeConfig::w_final_speed},
        {"w_wall", &TMazeConfig::w_wall},
        {"wall_softness", &TMazeConfig::wall_softness},
        {"junction_softness", &TMazeConfig::junction_softness},
        {"w_steer", &TMazeConfig::w_steer},
        {"w_accel", &TMazeConfig::w_accel},
    };
    return t;
  }

  void validate() const {
    validate_common();
    detail::require(corridor_half_width > 0.0 && junction_y > 0.0 && goal_x > 0.0,
                    "tmaze: geometry must be positive");
    detail::require(sigma_level >= 0.0 && obs_decay_rate > 0.0 && obs_var_floor > 0.0,
                    "tmaze: invalid observation parameters");
    detail::require(wall_softness > 0.0 && junction_softness > 0.0, "tmaze: softness must be positive");
    detail::require(w_goal >= 0.0 && w_final >= 0.0 && w_wall >= 0.0 && w_steer > 0.0 &&
                        w_accel > 0.0 && w_final_speed >= 0.0,
                    "tmaze: invalid cost weights");
  }

  double goal_px(int z) const { return z == 0 ? -goal_x : goal_x; }

  /// sigma_level^2 / (1 + exp(gamma (py - py_mid))) + floor.
  double observation_variance(double py) const {
    return sigma_level * sigma_level * sigmoid(-obs_decay_rate * (py - obs_decay_mid)) +
           obs_var_floor;
  }

  /// Smooth indicator of being outside the corridor before the junction.
  double wall(double px, double py, double* d_px = nullptr, double* d_py = nullptr) const {
    const double hw2 = corridor_half_width * corridor_half_width;
    const double a = sigmoid((px * px - hw2) / wall_softness);
    const double b = sigmoid((junction_y - py) / junction_softness);
    if (d_px) *d_px = a * (1.0 - a) * (2.0 * px / wall_softness) * b;
    if (d_py) *d_py = a * b * (1.0 - b) * (-1.0 / junction_softness);
    return a * b;
  }
};

inline ProblemModel tmaze_model(const TMazeConfig& cfg) {
  cfg.validate();
  ProblemModel m;
  m.name = "tmaze";
  m.state_dim = 4;
  m.control_dim = 2;
  m.obs_dim = 1;
  m.latents = LatentSet{"Left", "Right"};
  m.dt = cfg.dt;
  const BicycleParams bp = cfg.bicycle();
  m.dynamics_mean = [cfg, bp](const Vector& x, const Vector& u, int) {
    return bicycle_step(x, u, cfg.dt, bp);
  };
  m.dynamics_jacobian = [cfg, bp](const Vector& x, const Vector& u, int) {
    return bicycle_jacobian(x, u, cfg.dt, bp);
  };
  m.dynamics_noise.assign(2, Matrix::Zero(4, 4));
  m.observation_mean = [](const Vector&, int z) { return Vector::Constant(1, z == 0 ? -1.0 : 1.0); };
  m.observation_jacobian = [](const Vector&, int) { return Matrix::Zero(1, 4); };
  m.observation_noise = [cfg](const Vector& x, int) {
    return Matrix::Constant(1, 1, cfg.observation_variance(x(1)));
  };
  m.running_cost = [cfg](const Vector& x, const Vector& u, int z) {
    const double dx = x(0) - cfg.goal_px(z);
    const double dy = x(1) - cfg.goal_y;
    return cfg.w_goal * (dx * dx + dy * dy) + cfg.w_wall * cfg.wall(x(0), x(1)) +
           cfg.w_steer * u(0) * u(0) + cfg.w_accel * u(1) * u(1) + cfg.control_limit(u);
  };
  m.running_cost_gradient = [cfg](const Vector& x, const Vector& u, int z) {
    double wx = 0.0;
    double wy = 0.0;
    cfg.wall(x(0), x(1), &wx, &wy);
    Vector gx = Vector::Zero(4);
    gx(0) = 2.0 * cfg.w_goal * (x(0) - cfg.goal_px(z)) + cfg.w_wall * wx;
    gx(1) = 2.0 * cfg.w_goal * (x(1) - cfg.goal_y) + cfg.w_wall * wy;
    Vector gu(2);
    gu << 2.0 * cfg.w_steer * u(0), 2.0 * cfg.w_accel * u(1);
    cfg.control_limit(u, &gu);
    return std::make_pair(gx, gu);
  };
  m.final_cost = [cfg](const Vector& x, int z) {
    const double dx = x(0) - cfg.goal_px(z);
    const double dy = x(1) - cfg.goal_y;
    return cfg.w_final * (dx * dx + dy * dy) + cfg.w_final_speed * x(3) * x(3);
  };
  m.final_cost_gradient = [cfg](const Vector& x, int z) {
    Vector g = Vector::Zero(4);
    g(0) = 2.0 * cfg.w_final * (x(0) - cfg.goal_px(z));
    g(1) = 2.0 * cfg.w_final * (x(1) - cfg.goal_y);
    g(3) = 2.0 * cfg.w_final_speed * x(3);
    return g;
  };
  cfg.set_bounds(m);
  m.validate();
  return m;
}

inline Vector tmaze_start(const TMazeConfig& cfg) {
  Vector x(4);
  x << 0.0, 0.0, std::numbers::pi / 2, cfg.start_v;
  return x;
}

// ----- rough terrain ------------------------------------------------------------

/// Vehicle heading +y towards a goal; resistance rho(px, z) tanh(v) opposes
/// motion. Latent 0 = Smooth (resistance fades out for px beyond
/// smooth_center), 1 = Rough (rho_rough everywhere).
struct TerrainConfig : detail::CommonConfig {
  double rho_rough = 3.0;
  double rho_smooth = 0.0;
  double smooth_center = 2.0;
  double smooth_steepness = 2.0;
  double goal_x = 0.0;
  double goal_y = 25.0;
  double start_v = 5.0;
  double sigma_pos = 0.02;
  double sigma_heading = 0.01;
  double sigma_speed = 0.01;
  double w_goal = 0.2;
  double w_final = 10.0;
  double w_steer = 1.0;
  double w_accel = 1.0;

  static const detail::FieldTable<TerrainConfig>& fields() {
    static const detail::FieldTable<TerrainConfig> t = {
        PODDP_COMMON_FIELDS(TerrainConfig),
        {"rho_rough", &TerrainConfig::rho_rough},
        {"rho_smooth", &TerrainConfig::rho_smooth},
        {"smooth_center", &TerrainConfig::smooth_center},
        {"smooth_steepness", &TerrainConfig::smooth_steepness},
        {"goal_x", &TerrainConfig::goal_x},
        {"goal_y", &TerrainConfig::goal_y},
        {"start_v", &TerrainConfig::start_v},
        {"sigma_pos", &TerrainConfig::sigma_pos},
        {"sigma_heading", &TerrainConfig::sigma_heading},
        {"sigma_speed", &TerrainConfig::sigma_speed},
        {"w_goal", &TerrainConfig::w_goal},
        {"w_final", &TerrainConfig::w_final},
        {"w_steer", &TerrainConfig::w_steer},
        {"w_accel", &TerrainConfig::w_accel},
    };
    return t;
  }

  void validate() const {
    validate_common();
    detail::require(rho_rough > rho_smooth && rho_smooth >= 0.0,
                    "terrain: need rho_rough > rho_smooth >= 0");
    detail::require(smooth_steepness > 0.0, "terrain: smooth_steepness must be positive");
    detail::require(sigma_pos > 0.0 && sigma_heading > 0.0 && sigma_speed > 0.0,
                    "terrain: process noise must be positive");
    detail::require(w_goal >= 0.0 && w_final >= 0.0 && w_steer > 0.0 && w_accel > 0.0,
                    "terrain: invalid cost weights");
  }

  /// Resistive coefficient and its derivative along px.
  double rho(double px, int z, double* d_px = nullptr) const {
    if (z != 0) {
      if (d_px) *d_px = 0.0;
      return rho_rough;
    }
    const double s = sigmoid(smooth_steepness * (px - smooth_center));
    if (d_px) *d_px = -(rho_rough - rho_smooth) * s * (1.0 - s) * smooth_steepness;
    return rho_smooth + (rho_rough - rho_smooth) * (1.0 - s);
  }

  /// r = rho tanh(v).
  double resistance(double px, double v, int z) const { return rho(px, z) * std::tanh(v); }
};

inline ProblemModel terrain_model(const TerrainConfig& cfg) {
  cfg.validate();
  ProblemModel m;
  m.name = "terrain";
  m.state_dim = 4;
  m.control_dim = 2;
  m.obs_dim = 1;
  m.latents = LatentSet{"Smooth", "Rough"};
  m.dt = cfg.dt;
  const BicycleParams bp = cfg.bicycle();
  m.dynamics_mean = [cfg, bp](const Vector& x, const Vector& u, int z) {
    return bicycle_step(x, u, cfg.dt, bp, -cfg.resistance(x(0), x(3), z));
  };
  m.dynamics_jacobian = [cfg, bp](const Vector& x, const Vector& u, int z) {
    auto [A, B] = bicycle_jacobian(x, u, cfg.dt, bp, -cfg.resistance(x(0), x(3), z));
    if (B(3, 1) != 0.0) {
      double drho = 0.0;
      const double rho = cfg.rho(x(0), z, &drho);
      const double th = std::tanh(x(3));
      A(3, 0) = -cfg.dt * drho * th;
      A(3, 3) = 1.0 - cfg.dt * rho * (1.0 - th * th);
    }
    return std::make_pair(A, B);
  };
  const Matrix q = detail::diagonal({cfg.sigma_pos, cfg.sigma_pos, cfg.sigma_heading, cfg.sigma_speed});
  m.dynamics_noise.assign(2, q);
  m.observation_mean = [](const Vector&, int) { return Vector::Zero(1); };
  m.observation_jacobian = [](const Vector&, int) { return Matrix::Zero(1, 4); };
  m.observation_noise = [](const Vector&, int) { return Matrix::Zero(1, 1); };
  m.running_cost = [cfg](const Vector& x, const Vector& u, int) {
    const double dx = x(0) - cfg.goal_x;
    const double dy = x(1) - cfg.goal_y;
    return cfg.w_goal * (dx * dx + dy * dy) + cfg.w_steer * u(0) * u(0) +
           cfg.w_accel * u(1) * u(1) + cfg.control_limit(u);
  };
  m.running_cost_gradient = [cfg](const Vector& x, const Vector& u, int) {
    Vector gx = Vector::Zero(4);
    gx(0) = 2.0 * cfg.w_goal * (x(0) - cfg.goal_x);
    gx(1) = 2.0 * cfg.w_goal * (x(1) - cfg.goal_y);
    Vector gu(2);
    gu << 2.0 * cfg.w_steer * u(0), 2.0 * cfg.w_accel * u(1);
    cfg.control_limit(u, &gu);
    return std::make_pair(gx, gu);
  };
  m.final_cost = [cfg](const Vector& x, int) {
    const double dx = x(0) - cfg.goal_x;
    const double dy = x(1) - cfg.goal_y;
    return cfg.w_final * (dx * dx + dy * dy);
  };
  m.final_cost_gradient = [cfg](const Vector& x, int) {
    Vector g = Vector::Zero(4);
    g(0) = 2.0 * cfg.w_final * (x(0) - cfg.goal_x);
    g(1) = 2.0 * cfg.w_final * (x(1) - cfg.goal_y);
    return g;
  };
  cfg.set_bounds(m);
  m.validate();
  return m;
}

inline Vector terrain_start(const TerrainConfig& cfg) {
  Vector x(4);
  x << 0.0, 0.0, std::numbers::pi / 2, cfg.start_v;
  return x;
}

// ----- intelligent driver model -------------------------------------------------

struct IDMParams {
  double desired_speed = 15.0;
  double time_headway = 1.5;
  double max_accel = 1.5;
  double comfortable_decel = 2.0;
  double min_gap = 2.0;
  double exponent = 4.0;
  /// Whether the leader term applies at all (false: ignores the leader).
  bool yields = true;
  /// Centre distance at which the leader weight is one half.
  double vehicle_length = 0.0;
  double gap_softness = 1.0;
  /// Effective gaps are kept above this value smoothly.
  double gap_floor = 0.5;
  /// Smooth lower bound on the returned acceleration.
  double brake_limit = 6.0;
};

/// Car-following acceleration of a vehicle at (lon, v) with a potential leader
/// at (leader_lon, leader_v). The leader term is weighted by
/// sigmoid((gap - vehicle_length) / gap_softness) * overlap, so it fades when
/// the other vehicle is beside, behind, or out of lane.
inline double idm_accel(double lon, double v, double leader_lon, double leader_v, double overlap,
                        const IDMParams& p) {
  const double free = 1.0 - std::pow(std::max(v, 0.0) / p.desired_speed, p.exponent);
  double interaction = 0.0;
  if (p.yields) {
    const double gap = leader_lon - lon;
    const double w = sigmoid((gap - p.vehicle_length) / p.gap_softness) * overlap;
    const double s = p.gap_floor + softplus(gap - p.vehicle_length - p.gap_floor, 4.0);
    const double dv = v - leader_v;
    const double dyn = v * p.time_headway + v * dv / (2.0 * std::sqrt(p.max_accel * p.comfortable_decel));
    const double s_star = p.min_gap + softplus(dyn, 4.0);
    interaction = w * (s_star / s) * (s_star / s);
  }
  const double a = p.max_accel * (free - interaction);
  return -p.brake_limit + softplus(a + p.brake_limit, 4.0);
}

// ----- lane change ---------------------------------------------------------------

/// Ego bicycle in lane y = 0 merging into the target lane y = lane_width,
/// where another vehicle drives along the lane centre with IDM longitudinal
/// dynamics. State (px, py, theta, v, other_lon, other_v). Latent 0 = Nice
/// (slower, yields to the ego vehicle), 1 = Aggressive (faster, ignores it).
struct LaneChangeConfig : detail::CommonConfig {
  LaneChangeConfig() { horizon = 50; }

  double lane_width = 3.5;
  double start_v = 10.0;
  double other_start_lon = 2.0;
  double other_start_v = 10.0;
  double nice_desired_speed = 9.0;
  double aggressive_desired_speed = 12.0;
  double idm_time_headway = 1.5;
  double idm_max_accel = 1.5;
  double idm_comfortable_decel = 2.0;
  double idm_min_gap = 2.0;
  double vehicle_length = 4.5;
  double gap_softness = 0.5;
  double lane_softness = 0.3;
  double brake_limit = 6.0;
  double desired_speed = 11.0;
  double sigma_pos = 0.02;
  double sigma_heading = 0.01;
  double sigma_speed = 0.05;
  double w_lane = 1.0;
  double w_speed = 0.5;
  double w_heading = 5.0;
  double w_collision = 200.0;
  double collision_length_lon = 5.0;
  double collision_length_lat = 1.5;
  double w_steer = 5.0;
  double w_accel = 0.5;
  double w_final_lane = 20.0;
  double w_final_heading = 50.0;
  double w_final_speed = 1.0;

  static const detail::FieldTable<LaneChangeConfig>& fields() {
    static const detail::FieldTable<LaneChangeConfig> t = {
        PODDP_COMMON_FIELDS(LaneChangeConfig),
        {"lane_width", &LaneChangeConfig::lane_width},
        {"start_v", &LaneChangeConfig::start_v},
        {"other_start_lon", &LaneChangeConfig::other_start_lon},
        {"other_start_v", &LaneChangeConfig::other_start_v},
        {"nice_desired_speed", &LaneChangeConfig::nice_desired_speed},
        {"aggressive_desired_speed", &LaneChangeConfig::aggressive_desired_speed},
        {"idm_time_headway", &LaneChangeConfig::idm_time_headway},
        {"idm_max_accel", &LaneChangeConfig::idm_max_accel},
        {"idm_comfortable_decel", &LaneChangeConfig::idm_comfortable_decel},
        {"idm_min_gap", &LaneChangeConfig::idm_min_gap},
        {"vehicle_length", &LaneChangeConfig::vehicle_length},
        {"gap_softness", &LaneChangeConfig::gap_softness},
        {"lane_softness", &LaneChangeConfig::lane_softness},
        {"brake_limit", &LaneChangeConfig::brake_limit},
        {"desired_speed", &LaneChangeConfig::desired_speed},
        {"sigma_pos", &LaneChangeConfig::sigma_pos},
        {"sigma_heading", &LaneChangeConfig::sigma_heading},
        {"sigma_speed", &LaneChangeConfig::sigma_speed},
        {"w_lane", &LaneChangeConfig::w_lane},
        {"w_speed", &LaneChangeConfig::w_speed},
        {"w_heading", &LaneChangeConfig::w_heading},
        {"w_collision", &LaneChangeConfig::w_collision},
        {"collision_length_lon", &LaneChangeConfig::collision_length_lon},
        {"collision_length_lat", &LaneChangeConfig::collision_length_lat},
        {"w_steer", &LaneChangeConfig::w_steer},
        {"w_accel", &LaneChangeConfig::w_accel},
        {"w_final_lane", &LaneChangeConfig::w_final_lane},
        {"w_final_heading", &LaneChangeConfig::w_final_heading},
        {"w_final_speed", &LaneChangeConfig::w_final_speed},
    };
    return t;
  }

  void validate() const {
    validate_common();
    detail::require(lane_width > 0.0 && vehicle_length >= 0.0, "lanechange: invalid geometry");
    detail::require(nice_desired_speed > 0.0 && aggressive_desired_speed > 0.0 &&
                        idm_time_headway > 0.0 && idm_max_accel > 0.0 &&
                        idm_comfortable_decel > 0.0 && idm_min_gap > 0.0,
                    "lanechange: IDM parameters must be positive");
    detail::require(gap_softness > 0.0 && lane_softness > 0.0 && brake_limit > 0.0,
                    "lanechange: softness and brake limit must be positive");
    detail::require(sigma_pos > 0.0 && sigma_heading > 0.0 && sigma_speed > 0.0,
                    "lanechange: process noise must be positive");
    detail::require(collision_length_lon > 0.0 && collision_length_lat > 0.0,
                    "lanechange: collision length scales must be positive");
    detail::require(w_lane >= 0.0 && w_speed >= 0.0 && w_heading >= 0.0 && w_collision >= 0.0 &&
                        w_steer > 0.0 && w_accel > 0.0 && w_final_lane >= 0.0 &&
                        w_final_heading >= 0.0 && w_final_speed >= 0.0,
                    "lanechange: invalid cost weights");
  }

  IDMParams idm(int z) const {
    IDMParams p;
    p.desired_speed = z == 0 ? nice_desired_speed : aggressive_desired_speed;
    p.time_headway = idm_time_headway;
    p.max_accel = idm_max_accel;
    p.comfortable_decel = idm_comfortable_decel;
    p.min_gap = idm_min_gap;
    p.yields = z == 0;
    p.vehicle_length = vehicle_length;
    p.gap_softness = gap_softness;
    p.brake_limit = brake_limit;
    return p;
  }

  /// How much of the ego vehicle lies in the target lane.
  double lane_overlap(double py) const { return sigmoid((py - 0.5 * lane_width) / lane_softness); }

  /// w_c exp(-(dlon^2 / l_lon^2 + dlat^2 / l_lat^2)) with the other vehicle on
  /// the target lane centre.
  double collision(const Vector& x, double* d_px = nullptr, double* d_py = nullptr,
                   double* d_other = nullptr) const {
    const double dl = x(0) - x(4);
    const double dy = x(1) - lane_width;
    const double a = 1.0 / (collision_length_lon * collision_length_lon);
    const double b = 1.0 / (collision_length_lat * collision_length_lat);
    const double c = w_collision * std::exp(-(dl * dl * a + dy * dy * b));
    if (d_px) *d_px = -2.0 * a * dl * c;
    if (d_py) *d_py = -2.0 * b * dy * c;
    if (d_other) *d_other = 2.0 * a * dl * c;
    return c;
  }
};

namespace detail {

inline double lane_ego_cost(const LaneChangeConfig& cfg, const Vector& x, const Vector& u) {
  const double dy = x(1) - cfg.lane_width;
  const double dv = x(3) - cfg.desired_speed;
  return cfg.w_lane * dy * dy + cfg.w_speed * dv * dv + cfg.w_heading * x(2) * x(2) +
         cfg.w_steer * u(0) * u(0) + cfg.w_accel * u(1) * u(1) + cfg.control_limit(u);
}

inline Vector lane_ego_cost_gradient_x(const LaneChangeConfig& cfg, const Vector& x) {
  Vector g = Vector::Zero(x.size());
  g(1) = 2.0 * cfg.w_lane * (x(1) - cfg.lane_width);
  g(2) = 2.0 * cfg.w_heading * x(2);
  g(3) = 2.0 * cfg.w_speed * (x(3) - cfg.desired_speed);
  return g;
}

inline double lane_ego_final(const LaneChangeConfig& cfg, const Vector& x) {
  const double dy = x(1) - cfg.lane_width;
  const double dv = x(3) - cfg.desired_speed;
  return cfg.w_final_lane * dy * dy + cfg.w_final_heading * x(2) * x(2) +
         cfg.w_final_speed * dv * dv;
}

inline Vector lane_ego_final_gradient(const LaneChangeConfig& cfg, const Vector& x) {
  Vector g = Vector::Zero(x.size());
  g(1) = 2.0 * cfg.w_final_lane * (x(1) - cfg.lane_width);
  g(2) = 2.0 * cfg.w_final_heading * x(2);
  g(3) = 2.0 * cfg.w_final_speed * (x(3) - cfg.desired_speed);
  return g;
}

inline Vector lane_control_gradient(const LaneChangeConfig& cfg, const Vector& u) {
  Vector gu(2);
  gu << 2.0 * cfg.w_steer * u(0), 2.0 * cfg.w_accel * u(1);
  cfg.control_limit(u, &gu);
  return gu;
}

}  // namespace detail

inline ProblemModel lane_change_model(const LaneChangeConfig& cfg) {
  cfg.validate();
  ProblemModel m;
  m.name = "lanechange";
  m.state_dim = 6;
  m.control_dim = 2;
  m.obs_dim = 1;
  m.latents = LatentSet{"Nice", "Aggressive"};
  m.dt = cfg.dt;
  const BicycleParams bp = cfg.bicycle();
  const IDMParams idm[2] = {cfg.idm(0), cfg.idm(1)};
  m.dynamics_mean = [cfg, bp, idm](const Vector& x, const Vector& u, int z) {
    Vector n(6);
    n.head(4) = bicycle_step(x.head(4), u, cfg.dt, bp);
    const double a = idm_accel(x(4), x(5), x(0), x(3) * std::cos(x(2)), cfg.lane_overlap(x(1)),
                               idm[z]);
    n(4) = x(4) + x(5) * cfg.dt;
    n(5) = std::clamp(x(5) + a * cfg.dt, 0.0, cfg.v_max);
    return n;
  };
  const Matrix q = detail::diagonal({cfg.sigma_pos, cfg.sigma_pos, cfg.sigma_heading,
                                     cfg.sigma_speed, cfg.sigma_pos, cfg.sigma_speed});
  m.dynamics_noise.assign(2, q);
  m.observation_mean = [](const Vector&, int) { return Vector::Zero(1); };
  m.observation_jacobian = [](const Vector&, int) { return Matrix::Zero(1, 6); };
  m.observation_noise = [](const Vector&, int) { return Matrix::Zero(1, 1); };
  m.running_cost = [cfg](const Vector& x, const Vector& u, int) {
    return detail::lane_ego_cost(cfg, x, u) + cfg.collision(x);
  };
  m.running_cost_gradient = [cfg](const Vector& x, const Vector& u, int) {
    Vector gx = detail::lane_ego_cost_gradient_x(cfg, x);
    double cx = 0.0, cy = 0.0, co = 0.0;
    cfg.collision(x, &cx, &cy, &co);
    gx(0) += cx;
    gx(1) += cy;
    gx(4) += co;
    return std::make_pair(gx, detail::lane_control_gradient(cfg, u));
  };
  m.final_cost = [cfg](const Vector& x, int) {
    return detail::lane_ego_final(cfg, x) + cfg.collision(x);
  };
  m.final_cost_gradient = [cfg](const Vector& x, int) {
    Vector g = detail::lane_ego_final_gradient(cfg, x);
    double cx = 0.0, cy = 0.0, co = 0.0;
    cfg.collision(x, &cx, &cy, &co);
    g(0) += cx;
    g(1) += cy;
    g(4) += co;
    return g;
  };
  cfg.set_bounds(m);
  m.validate();
  return m;
}

/// The ego-only lane change (no other vehicle), state (px, py, theta, v).
inline ProblemModel lane_keeping_model(const LaneChangeConfig& cfg) {
  cfg.validate();
  ProblemModel m;
  m.name = "lanekeeping";
  m.state_dim = 4;
  m.control_dim = 2;
  m.obs_dim = 1;
  m.latents = LatentSet{"Ego"};
  m.dt = cfg.dt;
  const BicycleParams bp = cfg.bicycle();
  m.dynamics_mean = [cfg, bp](const Vector& x, const Vector& u, int) {
    return bicycle_step(x, u, cfg.dt, bp);
  };
  m.dynamics_noise.assign(1, Matrix::Zero(4, 4));
  m.observation_mean = [](const Vector&, int) { return Vector::Zero(1); };
  m.observation_noise = [](const Vector&, int) { return Matrix::Zero(1, 1); };
  m.running_cost = [cfg](const Vector& x, const Vector& u, int) {
    return detail::lane_ego_cost(cfg, x, u);
  };
  m.running_cost_gradient = [cfg](const Vector& x, const Vector& u, int) {
    return std::make_pair(detail::lane_ego_cost_gradient_x(cfg, x),
                          detail::lane_control_gradient(cfg, u));
  };
  m.final_cost = [cfg](const Vector& x, int) { return detail::lane_ego_final(cfg, x); };
  m.final_cost_gradient = [cfg](const Vector& x, int) {
    return detail::lane_ego_final_gradient(cfg, x);
  };
  cfg.set_bounds(m);
  m.validate();
  return m;
}

inline Vector lane_change_start(const LaneChangeConfig& cfg) {
  Vector x(6);
  x << 0.0, 0.0, 0.0, cfg.start_v, cfg.other_start_lon, cfg.other_start_v;
  return x;
}

#undef PODDP_COMMON_FIELDS

// ----- registry ---------------------------------------------------------------------

/// A fully resolved experiment: model, initial condition, prior, and solver
/// settings, together with the parameters they were built from.
struct Scenario {
  std::string experiment;
  ParameterSet params;
  ProblemModel model;
  Vector x0;
  Belief prior;
  SolverConfig solver;

  std::string hash() const { return config_hash(experiment, params); }
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"tmaze", "terrain", "lanechange"};
  return names;
}

namespace detail {

inline std::string valid_experiments() {
  std::string s;
  for (const auto& n : experiment_names()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

template <class C, class Build, class Start>
Scenario build_scenario(const std::string& name, const ParameterSet& overrides, Build build,
                        Start start) {
  const C cfg = from_parameters<C>(overrides);
  Scenario s;
  s.experiment = name;
  s.params = to_parameters(cfg);
  s.model = build(cfg);
  s.x0 = start(cfg);
  s.prior = cfg.prior_belief();
  s.solver = cfg.solver();
  return s;
}

}  // namespace detail

inline ParameterSet default_parameters(const std::string& experiment) {
  if (experiment == "tmaze") return detail::to_parameters(TMazeConfig{});
  if (experiment == "terrain") return detail::to_parameters(TerrainConfig{});
  if (experiment == "lanechange") return detail::to_parameters(LaneChangeConfig{});
  throw ConfigError("unknown experiment '" + experiment + "' (valid: " +
                    detail::valid_experiments() + ")");
}

/// Builds an experiment from its defaults with `overrides` applied; unknown
/// keys are rejected.
inline Scenario make_scenario(const std::string& experiment, const ParameterSet& overrides = {}) {
  if (experiment == "tmaze")
    return detail::build_scenario<TMazeConfig>(experiment, overrides, tmaze_model, tmaze_start);
  if (experiment == "terrain")
    return detail::build_scenario<TerrainConfig>(experiment, overrides, terrain_model,
                                                 terrain_start);
  if (experiment == "lanechange")
    return detail::build_scenario<LaneChangeConfig>(experiment, overrides, lane_change_model,
                                                    lane_change_start);
  throw ConfigError("unknown experiment '" + experiment + "' (valid: " +
                    detail::valid_experiments() + ")");
}

}  // namespace poddp
