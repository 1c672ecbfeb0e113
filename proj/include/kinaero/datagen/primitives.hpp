#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace kinaero::datagen {

inline constexpr std::size_t kJoints = 4;
inline constexpr std::size_t kCycleLength = 20;
inline constexpr double kAmplitude = 0.8;

// Joint order: left shoulder, left elbow, right shoulder, right elbow.
using Posture = std::array<double, kJoints>;

enum class Pattern { A = 0, B = 1, C = 2, D = 3 };

inline constexpr std::array<Pattern, 4> kPatterns{Pattern::A, Pattern::B, Pattern::C, Pattern::D};

inline char pattern_letter(Pattern p) { return static_cast<char>('A' + static_cast<int>(p)); }

inline Pattern pattern_from_letter(char c) {
  if (c < 'A' || c > 'D') throw std::invalid_argument(std::string("unknown pattern id ") + c);
  return static_cast<Pattern>(c - 'A');
}

inline Pattern pattern_from_index(int i) {
  if (i < 0 || i > 3) throw std::invalid_argument("unknown pattern index " + std::to_string(i));
  return static_cast<Pattern>(i);
}

// Normalised joint posture of a primitive at `step` within its cycle.
// Every waveform is zero at phase 0 and has period kCycleLength:
//   A  all joints in phase,          0.8 sin(wt)
//   B  left/right arms in antiphase, +-0.8 sin(wt)
//   C  all joints raise and return,  0.8 sin^2(wt/2) = 0.4 (1 - cos wt)
//   D  double frequency,             0.8 sin(2wt)
inline Posture primitive_posture(Pattern id, std::size_t step) {
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(step % kCycleLength) /
                       static_cast<double>(kCycleLength);
  const double s = kAmplitude * std::sin(phase);
  switch (id) {
    case Pattern::A: return {s, s, s, s};
    case Pattern::B: return {s, s, -s, -s};
    case Pattern::C: {
      const double r = 0.5 * kAmplitude * (1.0 - std::cos(phase));
      return {r, r, r, r};
    }
    case Pattern::D: {
      const double f = kAmplitude * std::sin(2.0 * phase);
      return {f, f, f, f};
    }
  }
  throw std::invalid_argument("unknown pattern id");
}

// Waveform at a fractional step, for sub-step sampling.
inline Posture primitive_posture_at(Pattern id, double step) {
  const double c = static_cast<double>(kCycleLength);
  const double phase = 2.0 * std::numbers::pi * (std::fmod(step, c) + (step < 0 ? c : 0.0)) / c;
  const double s = kAmplitude * std::sin(phase);
  switch (id) {
    case Pattern::A: return {s, s, s, s};
    case Pattern::B: return {s, s, -s, -s};
    case Pattern::C: {
      const double r = 0.5 * kAmplitude * (1.0 - std::cos(phase));
      return {r, r, r, r};
    }
    case Pattern::D: {
      const double f = kAmplitude * std::sin(2.0 * phase);
      return {f, f, f, f};
    }
  }
  throw std::invalid_argument("unknown pattern id");
}

// n_cycles * kCycleLength postures of one repeating primitive.
inline std::vector<Posture> synth_primitive(Pattern id, std::size_t n_cycles) {
  if (n_cycles < 1) throw std::invalid_argument("synth_primitive: n_cycles must be >= 1");
  std::vector<Posture> out;
  out.reserve(n_cycles * kCycleLength);
  for (std::size_t t = 0; t < n_cycles * kCycleLength; ++t) out.push_back(primitive_posture(id, t));
  return out;
}

// One-cycle template, row-major [step][joint].
inline std::array<Posture, kCycleLength> primitive_template(Pattern id) {
  std::array<Posture, kCycleLength> t{};
  for (std::size_t k = 0; k < kCycleLength; ++k) t[k] = primitive_posture(id, k);
  return t;
}

}  // namespace kinaero::datagen
