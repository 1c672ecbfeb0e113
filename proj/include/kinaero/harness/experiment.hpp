#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/harness/classifier.hpp"
#include "kinaero/harness/session.hpp"

namespace kinaero::harness {

enum class TransitionClass { Trained, Untrained };

using datagen::is_trained_transition;

// Untrained set probed in experiment 2: AD, DB, DC, BA, CA.
inline bool is_untrained_transition(Pattern from, Pattern to) {
  using P = Pattern;
  return (from == P::A && to == P::D) || (from == P::D && (to == P::B || to == P::C)) ||
         ((from == P::B || from == P::C) && to == P::A);
}

inline std::vector<Pattern> transition_targets(Pattern from, TransitionClass cls) {
  std::vector<Pattern> out;
  for (Pattern to : datagen::kPatterns)
    if (cls == TransitionClass::Trained ? is_trained_transition(from, to) : is_untrained_transition(from, to))
      out.push_back(to);
  return out;
}

struct ExperimentConfig {
  SessionConfig session;
  std::size_t n_attempts = 10;
  std::size_t first_attempt = 200;
  std::size_t spacing = 200;
  std::size_t attempt_steps = 100;
  std::size_t total_steps = 2200;
  double guidance_gain = 0.2;
  double guidance_damping = 0.2;
  robot::HandParams hand;
  double success_confidence = 0.2;
  std::uint64_t seed = 1;   // target choice

  void validate() const {
    if (attempt_steps == 0 || attempt_steps > spacing)
      throw std::invalid_argument("experiment: attempt_steps must be in [1, spacing]");
    if (first_attempt < kCycleLength) throw std::invalid_argument("experiment: first attempt needs one cycle of history");
    if (guidance_gain < 0.0 || guidance_damping < 0.0)
      throw std::invalid_argument("experiment: hand gains must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"session", c.session},           {"n_attempts", c.n_attempts},
       {"first_attempt", c.first_attempt}, {"spacing", c.spacing},
       {"attempt_steps", c.attempt_steps}, {"total_steps", c.total_steps},
       {"guidance_gain", c.guidance_gain}, {"guidance_damping", c.guidance_damping},
       {"hand_torque_cap", c.hand.torque_cap},
       {"hand_ramp_steps", c.hand.ramp_steps}, {"success_confidence", c.success_confidence},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("session")) c.session = j["session"].get<SessionConfig>();
  c.n_attempts = j.value("n_attempts", c.n_attempts);
  c.first_attempt = j.value("first_attempt", c.first_attempt);
  c.spacing = j.value("spacing", c.spacing);
  c.attempt_steps = j.value("attempt_steps", c.attempt_steps);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.guidance_gain = j.value("guidance_gain", c.guidance_gain);
  c.guidance_damping = j.value("guidance_damping", c.guidance_damping);
  c.hand.torque_cap = j.value("hand_torque_cap", c.hand.torque_cap);
  c.hand.ramp_steps = j.value("hand_ramp_steps", c.hand.ramp_steps);
  c.success_confidence = j.value("success_confidence", c.success_confidence);
  c.seed = j.value("seed", c.seed);
}

struct AttemptPlan {
  std::size_t index = 0;
  std::size_t start = 0;
  Pattern from = Pattern::A;
  Pattern to = Pattern::A;
  bool trained = true;
  double from_confidence = 0.0;
  robot::HandEvent hand;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"type", "attempt"},
                        {"attempt", index},
                        {"start", start},
                        {"duration", hand.duration_steps},
                        {"from", std::string(1, datagen::pattern_letter(from))},
                        {"to", std::string(1, datagen::pattern_letter(to))},
                        {"trained", trained},
                        {"from_confidence", from_confidence},
                        {"hand", hand}};
    return j;
  }
};

// The step at which the pattern observed in `recent` (the last cycle, newest
// last, ending at step t_last) next passes its cycle origin.
inline std::size_t next_cycle_origin(const Classification& c, std::size_t t_last) {
  // recent[k] matched template[(k + phase) % 20], so step t_last + 1 sits at
  // template index phase.
  return t_last + 1 + (kCycleLength - c.phase) % kCycleLength;
}

// Runs one closed-loop session; each attempt's target is chosen from the
// pattern the robot is performing when the attempt starts. Every record is
// passed to `sink` as it is produced.
inline void run_session(const pvrnn::NetworkParams& params, const pvrnn::NetworkConfig& config,
                        const ExperimentConfig& ec, TransitionClass cls,
                        const std::function<void(const nlohmann::json&)>& sink) {
  ec.validate();
  Session session(params, config, ec.session);
  std::mt19937_64 rng(mix_seed(ec.seed, 0xa77e));
  robot::Scenario scenario;
  scenario.hand = ec.hand;
  std::vector<Posture> observed;
  std::size_t busy_until = 0, planned = 0;
  for (std::size_t t = 0; t < ec.total_steps; ++t) {
    const bool due = planned < ec.n_attempts && t == ec.first_attempt + planned * ec.spacing;
    if (due && t + ec.attempt_steps > ec.total_steps) {
      sink({{"type", "skip"}, {"attempt", planned}, {"start", t}, {"reason", "runs past session end"}});
      ++planned;
    } else if (due && t < busy_until) {
      sink({{"type", "skip"}, {"attempt", planned}, {"start", t}, {"reason", "previous attempt unfinished"}});
      ++planned;
    } else if (due) {
      const std::span<const Posture> recent(observed.data() + observed.size() - kCycleLength, kCycleLength);
      const Classification c = classify_pattern(recent);
      const auto options = transition_targets(c.pattern, cls);
      AttemptPlan plan;
      plan.index = planned;
      plan.start = t;
      plan.from = c.pattern;
      plan.to = options[static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(options.size())) % options.size()];
      plan.trained = cls == TransitionClass::Trained;
      plan.from_confidence = c.confidence;
      plan.hand.t_start_step = t;
      plan.hand.target_pattern = plan.to;
      plan.hand.guidance_gain = ec.guidance_gain;
      plan.hand.guidance_damping = ec.guidance_damping;
      plan.hand.duration_steps = ec.attempt_steps;
      plan.hand.phase_origin = next_cycle_origin(c, t - 1);
      scenario.hands.push_back(plan.hand);
      busy_until = t + ec.attempt_steps;
      sink(plan.to_json());
      ++planned;
    }
    const TickRecord rec = session.tick(scenario);
    Posture p{};
    std::copy(rec.observed.begin(), rec.observed.end(), p.begin());
    observed.push_back(p);
    sink(rec.to_json());
  }
}

struct AttemptSummary {
  std::size_t attempt = 0;
  double w = 0.0;
  Pattern from = Pattern::A;
  Pattern to = Pattern::A;
  bool trained = true;
  double mean_torque = 0.0;   // mean over the attempt of sum_j |e~_j|
  double mean_e = 0.0;
  double mean_r1 = 0.0;
  double mean_r2 = 0.0;
  bool success = false;
};

// Attempt summaries computed from telemetry records alone.
inline std::vector<AttemptSummary> summarize_session(const std::vector<nlohmann::json>& records,
                                                     double success_confidence = 0.2) {
  std::vector<const nlohmann::json*> steps;
  std::vector<const nlohmann::json*> attempts;
  for (const auto& r : records) {
    const auto type = r.value("type", std::string());
    if (type == "step") steps.push_back(&r);
    if (type == "attempt") attempts.push_back(&r);
  }
  std::vector<AttemptSummary> out;
  for (const auto* a : attempts) {
    AttemptSummary s;
    s.attempt = (*a)["attempt"].get<std::size_t>();
    s.from = datagen::pattern_from_letter((*a)["from"].get<std::string>()[0]);
    s.to = datagen::pattern_from_letter((*a)["to"].get<std::string>()[0]);
    s.trained = (*a)["trained"].get<bool>();
    const std::size_t start = (*a)["start"].get<std::size_t>();
    const std::size_t end = start + (*a)["duration"].get<std::size_t>();
    std::vector<Posture> traj;
    std::size_t n = 0;
    for (const auto* r : steps) {
      const std::size_t t = (*r)["t"].get<std::size_t>();
      if (t < start || t >= end) continue;
      for (double e : (*r)["e_tilde"]) s.mean_torque += std::abs(e);
      s.mean_e += (*r)["e_window"].get<double>();
      s.mean_r1 += (*r)["r_l1"].get<double>();
      s.mean_r2 += r->value("r_l2", 0.0);
      s.w = (*r)["w_i"].get<double>();
      Posture p{};
      const auto obs = (*r)["theta_obs"].get<std::vector<double>>();
      std::copy(obs.begin(), obs.end(), p.begin());
      traj.push_back(p);
      ++n;
    }
    if (n == 0) throw std::runtime_error("summarize: attempt " + std::to_string(s.attempt) + " has no steps");
    const double inv = 1.0 / static_cast<double>(n);
    s.mean_torque *= inv;
    s.mean_e *= inv;
    s.mean_r1 *= inv;
    s.mean_r2 *= inv;
    for (std::size_t k = 0; k + kCycleLength <= traj.size() && !s.success; ++k) {
      const auto c = classify_pattern(std::span<const Posture>(traj).subspan(k, kCycleLength));
      s.success = c.pattern == s.to && c.confidence > success_confidence;
    }
    out.push_back(s);
  }
  return out;
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_summary_csv(const std::filesystem::path& path, const std::vector<AttemptSummary>& rows,
                              bool with_trained) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "w,attempt,from,to,mean_torque,mean_e,mean_r1,mean_r2,success" << (with_trained ? ",trained" : "") << "\n";
  for (const auto& r : rows) {
    f << format_double(r.w) << ',' << r.attempt << ',' << datagen::pattern_letter(r.from) << ','
      << datagen::pattern_letter(r.to) << ',' << format_double(r.mean_torque) << ','
      << format_double(r.mean_e) << ',' << format_double(r.mean_r1) << ','
      << format_double(r.mean_r2) << ',' << (r.success ? 1 : 0);
    if (with_trained) f << ',' << (r.trained ? 1 : 0);
    f << "\n";
  }
}

// Runs a session writing JSON lines to `path` and summarizes from the file.
inline std::vector<AttemptSummary> run_logged_session(const pvrnn::NetworkParams& params,
                                                      const pvrnn::NetworkConfig& config,
                                                      const ExperimentConfig& ec, TransitionClass cls,
                                                      const std::filesystem::path& path) {
  {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    run_session(params, config, ec, cls, [&](const nlohmann::json& j) { f << j.dump() << "\n"; });
  }
  return summarize_session(read_jsonl(path), ec.success_confidence);
}

}  // namespace kinaero::harness
