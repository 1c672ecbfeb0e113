#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/datagen/primitives.hpp"
#include "kinaero/util/random.hpp"

namespace kinaero::datagen {

inline constexpr std::size_t kStates = 4;

// Probabilistic finite state machine over primitives; state i emits pattern i.
struct PfsmSpec {
  std::array<std::array<double, kStates>, kStates> transition{};

  void validate() const {
    for (std::size_t i = 0; i < kStates; ++i) {
      double s = 0.0;
      for (double p : transition[i]) {
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("pfsm: probability outside [0,1]");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) {
        throw std::invalid_argument("pfsm: row " + std::to_string(i + 1) + " does not sum to 1");
      }
    }
  }

  double operator()(std::size_t from, std::size_t to) const { return transition[from][to]; }
};

// S1 -> {S1 .90, S2 .03, S3 .07}, S2 -> {S2 .90, S4 .10},
// S3 -> {S3 .85, S4 .15},           S4 -> {S4 .95, S1 .05}
inline PfsmSpec reference_pfsm() {
  PfsmSpec s;
  s.transition[0] = {0.90, 0.03, 0.07, 0.00};
  s.transition[1] = {0.00, 0.90, 0.00, 0.10};
  s.transition[2] = {0.00, 0.00, 0.85, 0.15};
  s.transition[3] = {0.05, 0.00, 0.00, 0.95};
  return s;
}

// Edges S1->S2, S1->S3, S2->S4, S3->S4, S4->S1 in that order.
inline constexpr std::array<std::pair<std::size_t, std::size_t>, 5> kReferenceEdges{
    {{0, 1}, {0, 2}, {1, 3}, {2, 3}, {3, 0}}};

inline bool is_trained_transition(Pattern from, Pattern to) {
  for (auto [a, b] : kReferenceEdges)
    if (static_cast<std::size_t>(from) == a && static_cast<std::size_t>(to) == b) return true;
  return false;
}

using kinaero::mix_seed;
using kinaero::unit_uniform;

inline std::size_t draw_next(const PfsmSpec& spec, std::size_t from, std::mt19937_64& rng) {
  const double u = unit_uniform(rng);
  double acc = 0.0;
  for (std::size_t to = 0; to < kStates; ++to) {
    acc += spec.transition[from][to];
    if (u < acc) return to;
  }
  // rounding: fall back to the last state with non-zero mass
  for (std::size_t to = kStates; to-- > 0;)
    if (spec.transition[from][to] > 0.0) return to;
  return from;
}

// Markov-chain sample of n_cycles states starting from `start`.
inline std::vector<std::size_t> sample_pfsm(const PfsmSpec& spec, std::size_t n_cycles,
                                            std::uint64_t seed, std::size_t start = 0) {
  spec.validate();
  if (start >= kStates) throw std::invalid_argument("pfsm: bad start state");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> states;
  states.reserve(n_cycles);
  std::size_t s = start;
  for (std::size_t k = 0; k < n_cycles; ++k) {
    states.push_back(s);
    s = draw_next(spec, s, rng);
  }
  return states;
}

inline void to_json(nlohmann::json& j, const PfsmSpec& s) {
  j = nlohmann::json::array();
  for (const auto& row : s.transition) j.push_back(row);
}

inline void from_json(const nlohmann::json& j, PfsmSpec& s) {
  if (!j.is_array() || j.size() != kStates) throw std::invalid_argument("pfsm: bad matrix");
  for (std::size_t i = 0; i < kStates; ++i) j.at(i).get_to(s.transition[i]);
  s.validate();
}

}  // namespace kinaero::datagen
