#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "kinaero/datagen/pfsm.hpp"
#include "kinaero/datagen/primitives.hpp"

namespace kinaero::harness {

using datagen::kCycleLength;
using datagen::kJoints;
using datagen::Pattern;
using datagen::Posture;

struct Classification {
  Pattern pattern = Pattern::A;
  // (d2 - d1) / (d2 + d1) for the RMS distances of the best and runner-up
  // templates; 1 for an exact match, 0 when the two are tied.
  double confidence = 0.0;
  double distance = 0.0;   // RMS distance to the winning template
  std::size_t phase = 0;   // circular shift of the template that matched best
};

// Nearest primitive template, minimising over all circular phase shifts.
inline Classification classify_pattern(std::span<const Posture> window) {
  if (window.size() != kCycleLength) {
    throw std::invalid_argument("classify_pattern: window must be one cycle long");
  }
  std::array<double, 4> best{};
  std::array<std::size_t, 4> best_phase{};
  for (Pattern p : datagen::kPatterns) {
    const auto tmpl = datagen::primitive_template(p);
    double lowest = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t shift = 0; shift < kCycleLength; ++shift) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kCycleLength; ++k)
        for (std::size_t j = 0; j < kJoints; ++j) {
          const double d = window[k][j] - tmpl[(k + shift) % kCycleLength][j];
          acc += d * d;
        }
      if (acc < lowest) {
        lowest = acc;
        arg = shift;
      }
    }
    best[static_cast<std::size_t>(p)] = std::sqrt(lowest / (kCycleLength * kJoints));
    best_phase[static_cast<std::size_t>(p)] = arg;
  }
  std::size_t i1 = 0;
  for (std::size_t i = 1; i < 4; ++i)
    if (best[i] < best[i1]) i1 = i;
  std::size_t i2 = i1 == 0 ? 1 : 0;
  for (std::size_t i = 0; i < 4; ++i)
    if (i != i1 && best[i] < best[i2]) i2 = i;
  Classification c;
  c.pattern = datagen::pattern_from_index(static_cast<int>(i1));
  c.distance = best[i1];
  c.phase = best_phase[i1];
  const double denom = best[i1] + best[i2];
  c.confidence = denom > 0.0 ? (best[i2] - best[i1]) / denom : 0.0;
  return c;
}

// Classify consecutive cycle-aligned windows of a trajectory.
inline std::vector<Classification> classify_cycles(std::span<const Posture> traj) {
  std::vector<Classification> out;
  for (std::size_t t = 0; t + kCycleLength <= traj.size(); t += kCycleLength)
    out.push_back(classify_pattern(traj.subspan(t, kCycleLength)));
  return out;
}

struct TransitionStats {
  std::array<std::array<std::size_t, 4>, 4> counts{};
  std::array<std::array<double, 4>, 4> prob{};   // row-normalised; 0 for unvisited rows
  std::array<std::size_t, 4> outgoing{};

  double edge(std::size_t from, std::size_t to) const { return prob[from][to]; }
};

inline TransitionStats transition_stats(std::span<const std::size_t> labels) {
  TransitionStats s;
  for (std::size_t k = 0; k + 1 < labels.size(); ++k) {
    if (labels[k] >= 4 || labels[k + 1] >= 4) throw std::invalid_argument("label out of range");
    ++s.counts[labels[k]][labels[k + 1]];
    ++s.outgoing[labels[k]];
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      s.prob[i][j] = s.outgoing[i] ? static_cast<double>(s.counts[i][j]) / s.outgoing[i] : 0.0;
  return s;
}

}  // namespace kinaero::harness
