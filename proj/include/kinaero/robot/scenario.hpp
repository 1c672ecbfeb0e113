#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/datagen/primitives.hpp"
#include "kinaero/robot/plant.hpp"

namespace kinaero::robot {

// Constant torque on the joints for a fixed number of network steps.
struct TorqueEvent {
  std::size_t t_start_step = 0;
  std::size_t duration_steps = 1;
  Joint4 joint_torques{};
};

// Virtual hand that pulls the joints along one primitive's trajectory.
struct HandEvent {
  std::size_t t_start_step = 0;
  datagen::Pattern target_pattern = datagen::Pattern::A;
  double guidance_gain = 0.2;       // N m / rad
  double guidance_damping = 0.2;    // N m s / rad
  std::size_t duration_steps = 100;
  std::optional<std::size_t> phase_origin;  // step at which the pattern's cycle starts
};

struct HandParams {
  double torque_cap = 1.5;          // N m
  std::size_t ramp_steps = 10;
};

struct Scenario {
  std::vector<TorqueEvent> torques;
  std::vector<HandEvent> hands;
  HandParams hand;

  bool empty() const { return torques.empty() && hands.empty(); }
};

// Fraction of the full hand gain, ramped linearly over the first steps.
inline double hand_ramp(const HandParams& hp, double since_origin) {
  if (since_origin < 0.0) return 0.0;
  const double n = static_cast<double>(std::max<std::size_t>(hp.ramp_steps, 1));
  return std::min(1.0, (std::floor(since_origin) + 1.0) / n);
}

// Virtual-hand torque at fractional network step `step` (tick index plus
// substep fraction): a capped PD pull toward the target pattern.
inline Joint4 hand_torque(const HandEvent& h, const HandParams& hp, double step, const PlantState& s,
                          double step_seconds) {
  Joint4 tau{};
  const double start = static_cast<double>(h.t_start_step);
  if (step < start || step >= start + static_cast<double>(h.duration_steps)) return tau;
  const double origin = static_cast<double>(h.phase_origin.value_or(h.t_start_step));
  const double u = step - origin;
  const double ramp = hand_ramp(hp, u);
  if (ramp == 0.0) return tau;
  constexpr double du = 1e-3;
  const auto target = datagen::primitive_posture_at(h.target_pattern, u);
  const auto ahead = datagen::primitive_posture_at(h.target_pattern, u + du);
  for (std::size_t j = 0; j < kJoints; ++j) {
    const double err = datagen::normalized_to_rad(target[j]) - s.theta[j];
    const double target_vel = datagen::normalized_to_rad(ahead[j] - target[j]) / (du * step_seconds);
    const double pull = h.guidance_gain * err + h.guidance_damping * (target_vel - s.velocity[j]);
    tau[j] = std::clamp(ramp * pull, -hp.torque_cap, hp.torque_cap);
  }
  return tau;
}

inline Joint4 scenario_torque(const Scenario& sc, double step, const PlantState& s, double step_seconds) {
  Joint4 tau{};
  for (const auto& e : sc.torques) {
    const double a = static_cast<double>(e.t_start_step);
    if (step >= a && step < a + static_cast<double>(e.duration_steps))
      for (std::size_t j = 0; j < kJoints; ++j) tau[j] += e.joint_torques[j];
  }
  for (const auto& h : sc.hands) {
    const auto t = hand_torque(h, sc.hand, step, s, step_seconds);
    for (std::size_t j = 0; j < kJoints; ++j) tau[j] += t[j];
  }
  return tau;
}

inline void to_json(nlohmann::json& j, const TorqueEvent& e) {
  j = {{"t_start_step", e.t_start_step}, {"duration_steps", e.duration_steps}, {"joint_torques", e.joint_torques}};
}

inline void to_json(nlohmann::json& j, const HandEvent& e) {
  j = {{"t_start_step", e.t_start_step},
       {"target_pattern", std::string(1, datagen::pattern_letter(e.target_pattern))},
       {"guidance_gain", e.guidance_gain},
       {"guidance_damping", e.guidance_damping},
       {"duration_steps", e.duration_steps}};
  if (e.phase_origin) j["phase_origin"] = *e.phase_origin;
}

inline void to_json(nlohmann::json& j, const Scenario& s) {
  j = nlohmann::json::array();
  for (const auto& e : s.torques) j.push_back(e);
  for (const auto& e : s.hands) j.push_back(e);
}

inline Scenario parse_scenario(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("scenario: expected a JSON array of events");
  Scenario s;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("t_start_step"))
      throw std::invalid_argument("scenario: every event needs t_start_step");
    if (e.contains("joint_torques")) {
      TorqueEvent t;
      t.t_start_step = e.at("t_start_step").get<std::size_t>();
      t.duration_steps = e.value("duration_steps", std::size_t{1});
      const auto v = e.at("joint_torques").get<std::vector<double>>();
      if (v.size() != kJoints) throw std::invalid_argument("scenario: joint_torques needs 4 values");
      std::copy(v.begin(), v.end(), t.joint_torques.begin());
      s.torques.push_back(t);
    } else if (e.contains("target_pattern")) {
      HandEvent h;
      h.t_start_step = e.at("t_start_step").get<std::size_t>();
      const auto letter = e.at("target_pattern").get<std::string>();
      if (letter.size() != 1) throw std::invalid_argument("scenario: target_pattern must be one letter");
      h.target_pattern = datagen::pattern_from_letter(letter[0]);
      h.guidance_gain = e.value("guidance_gain", h.guidance_gain);
      h.guidance_damping = e.value("guidance_damping", h.guidance_damping);
      h.duration_steps = e.value("duration_steps", h.duration_steps);
      if (e.contains("phase_origin")) h.phase_origin = e["phase_origin"].get<std::size_t>();
      if (h.guidance_gain < 0.0 || h.guidance_damping < 0.0) throw std::invalid_argument("scenario: hand gains must be >= 0");
      s.hands.push_back(h);
    } else {
      throw std::invalid_argument("scenario: event is neither a torque nor a virtual-hand event");
    }
  }
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open scenario " + path.string());
  return parse_scenario(nlohmann::json::parse(f));
}

}  // namespace kinaero::robot
