#pragma once

// Desk-scale control environments with analytic experts.
//
//   PointMass2D   s = (x, y, vx, vy), a = force in [-3, 3]^2, dt = 0.05,
//                 p' = p + dt v, v' = v + dt a, horizon 150; crossing
//                 |p| = 2 ends the episode, speed capped at 3.
//                 reward 1 - (|p|^2 + 0.1 |v|^2 + 0.1 |a|^2); expert = LQR.
//   Reacher1D     s = (theta, omega), a = torque in [-2, 2], dt = 0.05,
//                 theta' = theta + dt omega, omega' = omega + dt (a - 0.5 omega),
//                 horizon 100; reward 1 - (theta^2 + 0.1 omega^2 + 0.01 a^2);
//                 expert = PD controller.
//   NoisyLinear5  s = (x0..x4, n0..n5): a 5-dim consensus system pushed by two
//                 actuators (a0 on x0..x2, a1 on x3..x4, bounds [-1, 1]) plus
//                 six i.i.d. N(0,1) distractor dims redrawn every step. The
//                 expert settles x at the nearer of the goals +-2.5 * 1.
//                 horizon 100; reward 1 - |x - goal|^2 / 5 - 0.01 |a|^2.
//   GridWorldRam  16x16 grid, s = 8 bits (x in bits 0..3, y in bits 4..7),
//                 4 discrete actions (right, left, up, down), goal (15, 15)
//                 is terminal; horizon 50; reward 1 at the goal, otherwise
//                 -manhattan / 30. Expert walks right, then up.
//
// Rewards are exposed only through Transition::reward for evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sail/errors.hpp"
#include "sail/rng.hpp"
#include "sail/tensor.hpp"

namespace sail::envs {

using State = std::vector<double>;
using Action = std::vector<double>;

enum class EnvId { kPointMass2D, kReacher1D, kNoisyLinear5, kGridWorldRam };
enum class ActionKind { kContinuous, kDiscrete };

struct EnvSpec {
  EnvId id = EnvId::kPointMass2D;
  std::string name;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;  // number of choices for discrete envs
  ActionKind action_kind = ActionKind::kContinuous;
  std::size_t horizon = 1;
  double dt = 0.05;
  double action_low = -1.0;
  double action_high = 1.0;
  // Start distribution: uniform box of this half-width around the center.
  double start_halfwidth = 1.0;
  std::vector<double> start_center;

  bool discrete() const { return action_kind == ActionKind::kDiscrete; }
};

struct Transition {
  State s;
  Action a;  // applied (clipped) action; one-hot for discrete envs
  State s_next;
  bool done = false;      // episode ended (terminal or horizon)
  bool terminal = false;  // ended in a terminal state (no bootstrap)
  std::size_t t = 0;
  double reward = 0.0;  // true environment reward, for metrics only
};

inline EnvSpec make_env(const std::string& name) {
  EnvSpec e;
  e.name = name;
  if (name == "PointMass2D") {
    e.id = EnvId::kPointMass2D;
    e.state_dim = 4;
    e.action_dim = 2;
    e.horizon = 150;
    e.dt = 0.05;
    e.action_low = -3.0;
    e.action_high = 3.0;
    e.start_halfwidth = 1.0;
    e.start_center = {0.0, 0.0};
  } else if (name == "Reacher1D") {
    e.id = EnvId::kReacher1D;
    e.state_dim = 2;
    e.action_dim = 1;
    e.horizon = 100;
    e.dt = 0.05;
    e.action_low = -2.0;
    e.action_high = 2.0;
    e.start_halfwidth = 1.0;
    e.start_center = {0.0};
  } else if (name == "NoisyLinear5") {
    e.id = EnvId::kNoisyLinear5;
    e.state_dim = 11;
    e.action_dim = 2;
    e.horizon = 100;
    e.dt = 0.1;
    e.action_low = -1.0;
    e.action_high = 1.0;
    e.start_halfwidth = 1.5;
    e.start_center = {2.5};
  } else if (name == "GridWorldRam") {
    e.id = EnvId::kGridWorldRam;
    e.state_dim = 8;
    e.action_dim = 4;
    e.action_kind = ActionKind::kDiscrete;
    e.horizon = 50;
    e.dt = 1.0;
    e.action_low = 0.0;
    e.action_high = 3.0;
    e.start_halfwidth = 1.0;  // 0 pins the start at start_center
    e.start_center = {0.0, 0.0};
  } else {
    throw ConfigError("unknown environment '" + name + "'");
  }
  return e;
}

inline const std::vector<std::string>& env_names() {
  static const std::vector<std::string> names{"PointMass2D", "Reacher1D", "NoisyLinear5", "GridWorldRam"};
  return names;
}

inline Action one_hot(std::size_t index, std::size_t n) {
  Action a(n, 0.0);
  a.at(index) = 1.0;
  return a;
}

inline std::size_t argmax(const Action& a) {
  return static_cast<std::size_t>(std::distance(a.begin(), std::max_element(a.begin(), a.end())));
}

namespace grid {
inline constexpr int kSize = 16;
inline constexpr int kGoal = 15;

inline State encode(int x, int y) {
  State s(8);
  for (int b = 0; b < 4; ++b) {
    s[static_cast<std::size_t>(b)] = (x >> b) & 1;
    s[static_cast<std::size_t>(4 + b)] = (y >> b) & 1;
  }
  return s;
}

inline std::pair<int, int> decode(const State& s) {
  int x = 0, y = 0;
  for (int b = 0; b < 4; ++b) {
    x |= (s[static_cast<std::size_t>(b)] > 0.5 ? 1 : 0) << b;
    y |= (s[static_cast<std::size_t>(4 + b)] > 0.5 ? 1 : 0) << b;
  }
  return {x, y};
}
}  // namespace grid

// PointMass2D arena: walls at |p| = 2 stop the mass, speed is capped at 3.
// Neither binds along expert trajectories from the start box.
inline constexpr double kPointMassWall = 2.0;
inline constexpr double kPointMassSpeed = 3.0;

namespace detail {

// Discrete-time LQR gain for the PointMass2D double integrator.
struct PointMassModel {
  static constexpr double kQp = 1.0, kQv = 0.1, kR = 0.1;
};

inline double noisy_goal(const State& s) {
  double m = 0.0;
  for (std::size_t i = 0; i < 5; ++i) m += s[i];
  return m >= 0.0 ? 2.5 : -2.5;
}

}  // namespace detail

inline State reset(const EnvSpec& env, Rng& rng) {
  switch (env.id) {
    case EnvId::kPointMass2D: {
      const double h = env.start_halfwidth;
      const double x = env.start_center[0] + (h > 0 ? uniform(rng, -h, h) : 0.0);
      const double y = env.start_center[1] + (h > 0 ? uniform(rng, -h, h) : 0.0);
      return {x, y, 0.0, 0.0};
    }
    case EnvId::kReacher1D: {
      const double h = env.start_halfwidth;
      return {env.start_center[0] + (h > 0 ? uniform(rng, -h, h) : 0.0), 0.0};
    }
    case EnvId::kNoisyLinear5: {
      const double side = uniform(rng) < 0.5 ? -1.0 : 1.0;
      const double h = env.start_halfwidth;
      const double level = side * (env.start_center[0] + (h > 0 ? uniform(rng, -h, h) : 0.0));
      State s(11);
      for (std::size_t i = 0; i < 5; ++i) s[i] = level + 0.3 * normal(rng);
      for (std::size_t i = 5; i < 11; ++i) s[i] = normal(rng);
      return s;
    }
    case EnvId::kGridWorldRam: {
      if (env.start_halfwidth <= 0.0) {
        return grid::encode(static_cast<int>(env.start_center[0]), static_cast<int>(env.start_center[1]));
      }
      return grid::encode(static_cast<int>(uniform_index(rng, 8)), static_cast<int>(uniform_index(rng, 8)));
    }
  }
  return {};
}

inline double true_reward(const EnvSpec& env, const State& s, const Action& a) {
  switch (env.id) {
    case EnvId::kPointMass2D:
      return 1.0 - (s[0] * s[0] + s[1] * s[1] + 0.1 * (s[2] * s[2] + s[3] * s[3]) +
                    0.1 * (a[0] * a[0] + a[1] * a[1]));
    case EnvId::kReacher1D:
      return 1.0 - (s[0] * s[0] + 0.1 * s[1] * s[1] + 0.01 * a[0] * a[0]);
    case EnvId::kNoisyLinear5: {
      const double g = detail::noisy_goal(s);
      double d = 0.0;
      for (std::size_t i = 0; i < 5; ++i) d += (s[i] - g) * (s[i] - g);
      return 1.0 - d / 5.0 - 0.01 * (a[0] * a[0] + a[1] * a[1]);
    }
    case EnvId::kGridWorldRam: {
      const auto [x, y] = grid::decode(s);
      const int dist = (grid::kGoal - x) + (grid::kGoal - y);
      return dist == 0 ? 1.0 : -static_cast<double>(dist) / 30.0;
    }
  }
  return 0.0;
}

// Number of actions clipped to the declared bounds since process start.
inline std::uint64_t& clip_counter() {
  static std::uint64_t count = 0;
  return count;
}

inline Transition step(const EnvSpec& env, const State& s, const Action& action, std::size_t t, Rng& rng) {
  if (s.size() != env.state_dim) throw ShapeError("state width mismatch for " + env.name);
  for (double v : action) {
    if (!std::isfinite(v)) throw NumericError("non-finite action in " + env.name);
  }
  Transition tr;
  tr.s = s;
  tr.t = t;
  if (env.discrete()) {
    if (action.size() != env.action_dim) throw ShapeError("discrete action must be one-hot of width 4");
    tr.a = one_hot(argmax(action), env.action_dim);
  } else {
    if (action.size() != env.action_dim) throw ShapeError("action width mismatch for " + env.name);
    tr.a = action;
    bool clipped = false;
    for (double& v : tr.a) {
      const double c = std::clamp(v, env.action_low, env.action_high);
      clipped = clipped || c != v;
      v = c;
    }
    if (clipped) ++clip_counter();
  }
  const Action& a = tr.a;
  tr.reward = true_reward(env, s, a);
  switch (env.id) {
    case EnvId::kPointMass2D: {
      const double dt = env.dt;
      tr.s_next = {s[0] + dt * s[2], s[1] + dt * s[3], s[2] + dt * a[0], s[3] + dt * a[1]};
      for (std::size_t k = 0; k < 2; ++k) {
        double& pos = tr.s_next[k];
        double& vel = tr.s_next[k + 2];
        vel = std::clamp(vel, -kPointMassSpeed, kPointMassSpeed);
        if (std::abs(pos) > kPointMassWall) {
          pos = std::clamp(pos, -kPointMassWall, kPointMassWall);
          vel = 0.0;
          tr.terminal = true;  // leaving the arena ends the episode
        }
      }
      break;
    }
    case EnvId::kReacher1D: {
      const double dt = env.dt;
      tr.s_next = {s[0] + dt * s[1], s[1] + dt * (a[0] - 0.5 * s[1])};
      break;
    }
    case EnvId::kNoisyLinear5: {
      double mean = 0.0;
      for (std::size_t i = 0; i < 5; ++i) mean += s[i];
      mean /= 5.0;
      tr.s_next.assign(11, 0.0);
      for (std::size_t i = 0; i < 5; ++i) {
        const double push = i < 3 ? a[0] : a[1];
        tr.s_next[i] = 0.9 * s[i] + 0.1 * mean + env.dt * push + 0.05 * normal(rng);
      }
      for (std::size_t i = 5; i < 11; ++i) tr.s_next[i] = normal(rng);
      break;
    }
    case EnvId::kGridWorldRam: {
      auto [x, y] = grid::decode(s);
      switch (argmax(a)) {
        case 0: x = std::min(x + 1, grid::kSize - 1); break;
        case 1: x = std::max(x - 1, 0); break;
        case 2: y = std::min(y + 1, grid::kSize - 1); break;
        default: y = std::max(y - 1, 0); break;
      }
      tr.s_next = grid::encode(x, y);
      tr.terminal = x == grid::kGoal && y == grid::kGoal;
      break;
    }
  }
  tr.done = tr.terminal || t + 1 >= env.horizon;
  return tr;
}

// Infinite-horizon discrete-time Riccati iteration for the per-axis double
// integrator (p, v) with cost (qp p^2 + qv v^2 + r a^2). Returns P (2x2).
inline std::array<double, 4> point_mass_riccati(double dt, std::size_t iterations = 20000) {
  using M2 = Eigen::Matrix2d;
  M2 A;
  A << 1.0, dt, 0.0, 1.0;
  Eigen::Vector2d B(0.0, dt);
  M2 Q = M2::Zero();
  Q(0, 0) = detail::PointMassModel::kQp;
  Q(1, 1) = detail::PointMassModel::kQv;
  const double R = detail::PointMassModel::kR;
  M2 P = Q;
  for (std::size_t i = 0; i < iterations; ++i) {
    const double s = R + B.dot(P * B);
    const Eigen::RowVector2d K = (B.transpose() * P * A) / s;
    const M2 next = Q + A.transpose() * P * A - (A.transpose() * P * B) * K;
    if ((next - P).cwiseAbs().maxCoeff() < 1e-14) {
      P = next;
      break;
    }
    P = next;
  }
  return {P(0, 0), P(0, 1), P(1, 0), P(1, 1)};
}

// LQR gain (k_p, k_v) per axis: a = -(k_p p + k_v v).
inline std::array<double, 2> point_mass_gain(double dt) {
  const auto p = point_mass_riccati(dt);
  Eigen::Matrix2d P;
  P << p[0], p[1], p[2], p[3];
  Eigen::Matrix2d A;
  A << 1.0, dt, 0.0, 1.0;
  Eigen::Vector2d B(0.0, dt);
  const double s = detail::PointMassModel::kR + B.dot(P * B);
  const Eigen::RowVector2d K = (B.transpose() * P * A) / s;
  return {K(0), K(1)};
}

// Return of the unconstrained optimal controller for T steps, averaged over
// the start distribution, from the finite-horizon Riccati recursion.
inline double point_mass_optimal_return(const EnvSpec& env) {
  using M2 = Eigen::Matrix2d;
  M2 A;
  A << 1.0, env.dt, 0.0, 1.0;
  Eigen::Vector2d B(0.0, env.dt);
  M2 Q = M2::Zero();
  Q(0, 0) = detail::PointMassModel::kQp;
  Q(1, 1) = detail::PointMassModel::kQv;
  const double R = detail::PointMassModel::kR;
  M2 P = M2::Zero();  // cost-to-go after the last step
  for (std::size_t k = 0; k < env.horizon; ++k) {
    const double s = R + B.dot(P * B);
    const Eigen::RowVector2d K = (B.transpose() * P * A) / s;
    P = Q + A.transpose() * P * A - (A.transpose() * P * B) * K;
  }
  // Each axis starts at (u, 0) with u ~ U(c - h, c + h).
  double cost = 0.0;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const double c = env.start_center[axis];
    const double h = env.start_halfwidth;
    cost += P(0, 0) * (c * c + h * h / 3.0);
  }
  return static_cast<double>(env.horizon) - cost;
}

inline bool has_expert(const EnvSpec& env) {
  (void)env;
  return true;
}

inline Action expert_policy(const EnvSpec& env, const State& s) {
  switch (env.id) {
    case EnvId::kPointMass2D: {
      static const auto k = point_mass_gain(0.05);
      const auto gain = env.dt == 0.05 ? k : point_mass_gain(env.dt);
      Action a{-(gain[0] * s[0] + gain[1] * s[2]), -(gain[0] * s[1] + gain[1] * s[3])};
      for (double& v : a) v = std::clamp(v, env.action_low, env.action_high);
      return a;
    }
    case EnvId::kReacher1D:
      return {std::clamp(-(4.0 * s[0] + 2.0 * s[1]), env.action_low, env.action_high)};
    case EnvId::kNoisyLinear5: {
      const double goal = detail::noisy_goal(s);
      const double m0 = (s[0] + s[1] + s[2]) / 3.0;
      const double m1 = (s[3] + s[4]) / 2.0;
      return {std::clamp(-2.0 * (m0 - goal), env.action_low, env.action_high),
              std::clamp(-2.0 * (m1 - goal), env.action_low, env.action_high)};
    }
    case EnvId::kGridWorldRam: {
      const auto [x, y] = grid::decode(s);
      if (x < grid::kGoal) return one_hot(0, 4);
      if (y < grid::kGoal) return one_hot(2, 4);
      return one_hot(0, 4);
    }
  }
  throw ConfigError("environment '" + env.name + "' has no registered expert");
}

// Expert plus zero-mean Gaussian action noise (continuous) or uniformly
// random actions with probability `noise` (discrete).
inline Action noisy_expert(const EnvSpec& env, const State& s, double noise, Rng& rng) {
  Action a = expert_policy(env, s);
  if (env.discrete()) {
    if (uniform(rng) < noise) return one_hot(uniform_index(rng, env.action_dim), env.action_dim);
    return a;
  }
  for (double& v : a) v = std::clamp(v + noise * normal(rng), env.action_low, env.action_high);
  return a;
}

// Noise scales of the four sub-optimal demonstrators, best to worst.
inline std::vector<double> suboptimal_noise_scales(const EnvSpec& env) {
  if (env.discrete()) return {0.2, 0.4, 0.6, 0.8};
  const double range = env.action_high - env.action_low;
  return {0.15 * range, 0.3 * range, 0.5 * range, 0.8 * range};
}

using PolicyFn = std::function<Action(const State&, Rng&)>;

struct Episode {
  std::vector<Transition> steps;
  double total_reward() const {
    double r = 0.0;
    for (const auto& t : steps) r += t.reward;
    return r;
  }
};

inline Episode rollout(const EnvSpec& env, const PolicyFn& policy, Rng& rng, std::size_t max_steps = 0) {
  Episode ep;
  State s = reset(env, rng);
  const std::size_t limit = max_steps == 0 ? env.horizon : std::min(max_steps, env.horizon);
  for (std::size_t t = 0; t < limit; ++t) {
    Transition tr = step(env, s, policy(s, rng), t, rng);
    s = tr.s_next;
    const bool done = tr.done;
    ep.steps.push_back(std::move(tr));
    if (done) break;
  }
  return ep;
}

}  // namespace sail::envs
