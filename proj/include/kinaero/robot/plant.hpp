#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "kinaero/datagen/dataset.hpp"

namespace kinaero::robot {

inline constexpr std::size_t kJoints = datagen::kJoints;
using Joint4 = std::array<double, kJoints>;

struct PlantParams {
  double inertia = 1.0;      // kg m^2
  double damping = 0.5;      // N m s / rad
  double limit = datagen::kJointLimitRad;
};

struct PlantState {
  Joint4 theta{};            // rad
  Joint4 velocity{};         // rad/s
  double time = 0.0;         // s

  Joint4 normalized() const {
    Joint4 n{};
    for (std::size_t j = 0; j < kJoints; ++j) n[j] = datagen::rad_to_normalized(theta[j]);
    return n;
  }
};

// Semi-implicit Euler on I th'' = tau_motor + tau_ext - b th'; a joint that
// hits its limit is clamped and stopped.
inline PlantState sim_step(const PlantState& s, const PlantParams& p, const Joint4& motor,
                           const Joint4& external, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("sim_step: dt must be > 0");
  PlantState n = s;
  for (std::size_t j = 0; j < kJoints; ++j) {
    if (!std::isfinite(motor[j]) || !std::isfinite(external[j])) {
      throw std::invalid_argument("sim_step: non-finite torque");
    }
    const double acc = (motor[j] + external[j] - p.damping * s.velocity[j]) / p.inertia;
    n.velocity[j] = s.velocity[j] + dt * acc;
    n.theta[j] = s.theta[j] + dt * n.velocity[j];
    if (std::abs(n.theta[j]) > p.limit) {
      n.theta[j] = std::copysign(p.limit, n.theta[j]);
      n.velocity[j] = 0.0;
    }
  }
  n.time = s.time + dt;
  return n;
}

struct InverseModel {
  double inertia_error = 0.0;  // relative error of the model's inertia

  // Acceleration the motor torque alone would produce against damping.
  static Joint4 expected_acceleration(const PlantState& s, const PlantParams& p, const Joint4& motor) {
    Joint4 a{};
    for (std::size_t j = 0; j < kJoints; ++j) a[j] = (motor[j] - p.damping * s.velocity[j]) / p.inertia;
    return a;
  }

  // tau_dynm = I' acc + b vel with I' = I (1 + inertia_error).
  Joint4 torque(const PlantState& s, const PlantParams& p, const Joint4& acc) const {
    Joint4 t{};
    for (std::size_t j = 0; j < kJoints; ++j)
      t[j] = p.inertia * (1.0 + inertia_error) * acc[j] + p.damping * s.velocity[j];
    return t;
  }
};

struct ExcessFilterParams {
  double threshold = 0.05;   // tau^th
  double alpha = 0.9;
  double e_max = 2.0;

  void validate() const {
    if (!(threshold >= 0.0)) throw std::invalid_argument("excess filter: threshold must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("excess filter: alpha in (0,1)");
    if (!(e_max > 0.0)) throw std::invalid_argument("excess filter: e_max must be > 0");
  }
};

inline double deadband(double excess, double threshold) {
  return excess > 0.0 ? std::max(0.0, excess - threshold) : std::min(0.0, excess + threshold);
}

inline double clamp_magnitude(double v, double limit) { return std::clamp(v, -limit, limit); }

struct ExcessFilter {
  ExcessFilterParams params;
  Joint4 filtered{};         // e~
  bool started = false;

  // One update of the deadbanded, decaying, magnitude-limited excess torque.
  const Joint4& update(const Joint4& measured, const Joint4& dynm) {
    for (std::size_t j = 0; j < kJoints; ++j) {
      const double e = deadband(measured[j] - dynm[j], params.threshold);
      const double raw = started ? params.alpha * filtered[j] + e : e;
      filtered[j] = clamp_magnitude(raw, params.e_max);
    }
    started = true;
    return filtered;
  }

  void reset() {
    filtered = {};
    started = false;
  }
};

struct ControlGains {
  double k_r = 1.0;          // prediction gain
  double k_p = 0.3;          // compliance gain, rad / (N m)
};

// th* = (th_pred - th) k_r + e~ k_p + th
inline Joint4 compose_target(const Joint4& predicted, const Joint4& observed, const Joint4& excess,
                             const ControlGains& g) {
  Joint4 t{};
  for (std::size_t j = 0; j < kJoints; ++j)
    t[j] = (predicted[j] - observed[j]) * g.k_r + excess[j] * g.k_p + observed[j];
  return t;
}

struct PidGains {
  double kp = 400.0;
  double ki = 0.0;
  double kd = 39.5;
  double integral_limit = 1.0;  // rad s
};

struct Pid {
  PidGains gains;
  Joint4 integral{};
  Joint4 prev_error{};
  bool primed = false;

  // Torque for the current target; the derivative acts on the error.
  Joint4 update(const Joint4& target, const Joint4& theta, double dt) {
    if (gains.kp < 0 || gains.ki < 0 || gains.kd < 0) throw std::invalid_argument("pid: negative gain");
    Joint4 tau{};
    for (std::size_t j = 0; j < kJoints; ++j) {
      const double err = target[j] - theta[j];
      integral[j] = std::clamp(integral[j] + err * dt, -gains.integral_limit, gains.integral_limit);
      const double deriv = primed ? (err - prev_error[j]) / dt : 0.0;
      tau[j] = gains.kp * err + gains.ki * integral[j] + gains.kd * deriv;
      prev_error[j] = err;
    }
    primed = true;
    return tau;
  }
};

struct RobotConfig {
  PlantParams plant;
  ExcessFilterParams filter;
  ControlGains control;
  PidGains pid;
  double inertia_error = 0.0;
  double sensor_noise = 0.01;     // N m, Gaussian
  double physics_dt = 0.001;      // s
  std::size_t substeps = 100;     // physics steps per network step
};

inline void to_json(nlohmann::json& j, const RobotConfig& c) {
  j = {{"inertia", c.plant.inertia},       {"damping", c.plant.damping},
       {"threshold", c.filter.threshold},  {"alpha", c.filter.alpha},
       {"e_max", c.filter.e_max},          {"k_r", c.control.k_r},
       {"k_p", c.control.k_p},             {"pid_kp", c.pid.kp},
       {"pid_ki", c.pid.ki},               {"pid_kd", c.pid.kd},
       {"pid_integral_limit", c.pid.integral_limit},
       {"inertia_error", c.inertia_error}, {"sensor_noise", c.sensor_noise},
       {"physics_dt", c.physics_dt},       {"substeps", c.substeps}};
}

inline void from_json(const nlohmann::json& j, RobotConfig& c) {
  c.plant.inertia = j.value("inertia", c.plant.inertia);
  c.plant.damping = j.value("damping", c.plant.damping);
  c.filter.threshold = j.value("threshold", c.filter.threshold);
  c.filter.alpha = j.value("alpha", c.filter.alpha);
  c.filter.e_max = j.value("e_max", c.filter.e_max);
  c.control.k_r = j.value("k_r", c.control.k_r);
  c.control.k_p = j.value("k_p", c.control.k_p);
  c.pid.kp = j.value("pid_kp", c.pid.kp);
  c.pid.ki = j.value("pid_ki", c.pid.ki);
  c.pid.kd = j.value("pid_kd", c.pid.kd);
  c.pid.integral_limit = j.value("pid_integral_limit", c.pid.integral_limit);
  c.inertia_error = j.value("inertia_error", c.inertia_error);
  c.sensor_noise = j.value("sensor_noise", c.sensor_noise);
  c.physics_dt = j.value("physics_dt", c.physics_dt);
  c.substeps = j.value("substeps", c.substeps);
  c.filter.validate();
  if (!(c.plant.inertia > 0.0) || c.plant.damping < 0.0) throw std::invalid_argument("robot: bad plant");
  if (c.control.k_r < 0.0 || c.control.k_p < 0.0) throw std::invalid_argument("robot: gains must be >= 0");
  if (!(c.physics_dt > 0.0) || c.substeps < 1) throw std::invalid_argument("robot: bad timing");
}

}  // namespace kinaero::robot
