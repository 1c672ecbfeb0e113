#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/datagen/dataset.hpp"
#include "kinaero/inference/sliding_window.hpp"
#include "kinaero/robot/plant.hpp"
#include "kinaero/robot/scenario.hpp"
#include "kinaero/util/random.hpp"

namespace kinaero::harness {

using robot::Joint4;

struct SessionConfig {
  inference::InferenceConfig inference;
  robot::RobotConfig robot;
  std::uint64_t seed = 1;   // sensor noise
};

inline void to_json(nlohmann::json& j, const SessionConfig& c) {
  j = {{"inference", c.inference}, {"robot", c.robot}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SessionConfig& c) {
  if (j.contains("inference")) c.inference = j["inference"].get<inference::InferenceConfig>();
  if (j.contains("robot")) c.robot = j["robot"].get<robot::RobotConfig>();
  c.seed = j.value("seed", c.seed);
}

struct TickRecord {
  std::size_t t = 0;
  inference::StepDiagnostics diag;
  pvrnn::Vec observed;   // normalized joint angles fed to the network
  Joint4 target{};       // theta* at the end of the tick, rad
  Joint4 e_tilde{};
  Joint4 tau_motor{};    // tick means
  Joint4 tau_ext{};
  double w = 0.0;

  nlohmann::json to_json() const {
    auto j = inference::telemetry_record(diag, observed, w, 0);
    j["type"] = "step";
    j["theta_target"] = target;
    j["e_tilde"] = e_tilde;
    j["tau_motor"] = tau_motor;
    j["tau_ext"] = tau_ext;
    return j;
  }
};

// Plant, torque pipeline and online inference stepped together: one call to
// tick() is one network step of `substeps` physics steps.
class Session {
 public:
  Session(const pvrnn::NetworkParams& params, const pvrnn::NetworkConfig& config, SessionConfig cfg)
      : cfg_(std::move(cfg)),
        window_(params, config, cfg_.inference),
        rng_(mix_seed(cfg_.seed, 0x7e1e)) {
    if (config.output_dim != robot::kJoints) throw grad::ShapeError("session: network must drive 4 joints");
    cfg_.robot.filter.validate();
    filter_.params = cfg_.robot.filter;
    pid_.gains = cfg_.robot.pid;
    model_.inertia_error = cfg_.robot.inertia_error;
  }

  const SessionConfig& config() const { return cfg_; }
  const robot::PlantState& plant() const { return plant_; }
  const Joint4& e_tilde() const { return filter_.filtered; }
  std::size_t steps() const { return ticks_; }
  inference::SlidingWindow& window() { return window_; }
  const std::vector<pvrnn::Vec>& observed() const { return observed_; }

  void set_w(double w) {
    window_.set_w(w);
    cfg_.inference.w = w;
  }

  // External torque source: (fractional step, plant state) -> torque.
  template <typename ExternalFn>
  TickRecord tick_with(ExternalFn&& external) {
    const std::size_t substeps = cfg_.robot.substeps;
    const double dt = cfg_.robot.physics_dt;
    TickRecord rec;
    rec.t = ticks_;
    rec.w = cfg_.inference.w;
    const Joint4 obs = plant_.normalized();
    rec.observed.assign(obs.begin(), obs.end());
    observed_.push_back(rec.observed);
    rec.diag = window_.infer_step(rec.observed);

    Joint4 pred{};
    for (std::size_t j = 0; j < robot::kJoints; ++j) pred[j] = datagen::normalized_to_rad(rec.diag.prediction[j]);
    Joint4 next = robot::compose_target(pred, plant_.theta, filter_.filtered, cfg_.robot.control);
    for (double& v : next) v = std::clamp(v, -cfg_.robot.plant.limit, cfg_.robot.plant.limit);
    if (ticks_ == 0) last_target_ = plant_.theta;

    Joint4 measured_sum{}, dynm_sum{};
    std::normal_distribution<double> noise(0.0, cfg_.robot.sensor_noise);
    for (std::size_t k = 1; k <= substeps; ++k) {
      const double frac = static_cast<double>(k) / static_cast<double>(substeps);
      Joint4 target{};
      for (std::size_t j = 0; j < robot::kJoints; ++j)
        target[j] = last_target_[j] + (next[j] - last_target_[j]) * frac;
      const double when = static_cast<double>(ticks_) + static_cast<double>(k - 1) / static_cast<double>(substeps);
      const Joint4 ext = external(when, plant_);
      const Joint4 motor = pid_.update(target, plant_.theta, dt);
      const Joint4 dynm =
          model_.torque(plant_, cfg_.robot.plant, robot::InverseModel::expected_acceleration(plant_, cfg_.robot.plant, motor));
      plant_ = robot::sim_step(plant_, cfg_.robot.plant, motor, ext, dt);
      for (std::size_t j = 0; j < robot::kJoints; ++j) {
        const double n = cfg_.robot.sensor_noise > 0.0 ? noise(rng_) : 0.0;
        measured_sum[j] += motor[j] + ext[j] + n;
        dynm_sum[j] += dynm[j];
        rec.tau_motor[j] += motor[j];
        rec.tau_ext[j] += ext[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(substeps);
    for (std::size_t j = 0; j < robot::kJoints; ++j) {
      measured_sum[j] *= inv;
      dynm_sum[j] *= inv;
      rec.tau_motor[j] *= inv;
      rec.tau_ext[j] *= inv;
    }
    rec.e_tilde = filter_.update(measured_sum, dynm_sum);
    rec.target = next;
    last_target_ = next;
    ++ticks_;
    return rec;
  }

  TickRecord tick(const robot::Scenario& sc) {
    const double step_seconds = cfg_.robot.physics_dt * static_cast<double>(cfg_.robot.substeps);
    return tick_with([&](double when, const robot::PlantState& s) {
      return robot::scenario_torque(sc, when, s, step_seconds);
    });
  }

 private:
  SessionConfig cfg_;
  inference::SlidingWindow window_;
  robot::PlantState plant_;
  robot::Pid pid_;
  robot::ExcessFilter filter_;
  robot::InverseModel model_;
  Joint4 last_target_{};
  std::mt19937_64 rng_;
  std::size_t ticks_ = 0;
  std::vector<pvrnn::Vec> observed_;
};

}  // namespace kinaero::harness
