#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/datagen/pfsm.hpp"
#include "kinaero/datagen/primitives.hpp"

namespace kinaero::datagen {

// Raw joint limits; normalised value v maps to v * kJointLimitDeg degrees.
inline constexpr double kJointLimitDeg = 60.0;
inline constexpr double kJointLimitRad = kJointLimitDeg * std::numbers::pi / 180.0;

inline double normalized_to_rad(double v) { return v * kJointLimitRad; }
inline double rad_to_normalized(double rad) { return rad / kJointLimitRad; }

struct Sequence {
  std::vector<Posture> joints;             // T postures, normalised
  std::vector<std::size_t> cycle_states;   // one PFSM state per 20-step cycle

  std::size_t length() const { return joints.size(); }
  std::size_t state_at(std::size_t t) const { return cycle_states[t / kCycleLength]; }
};

struct Dataset {
  PfsmSpec spec;
  std::uint64_t seed = 0;
  std::size_t n_cycles = 0;
  std::vector<Sequence> sequences;
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Sequence render_sequence(const std::vector<std::size_t>& states) {
  Sequence s;
  s.cycle_states = states;
  s.joints.reserve(states.size() * kCycleLength);
  for (std::size_t st : states)
    for (std::size_t k = 0; k < kCycleLength; ++k)
      s.joints.push_back(primitive_posture(pattern_from_index(static_cast<int>(st)), k));
  return s;
}

// Each sequence starts in a uniformly drawn state and follows the chain.
inline Dataset build_dataset(const PfsmSpec& spec, std::size_t n_seqs, std::size_t n_cycles,
                             std::uint64_t seed) {
  if (n_seqs < 1) throw std::invalid_argument("build_dataset: n_seqs must be >= 1");
  if (n_cycles < 1) throw std::invalid_argument("build_dataset: n_cycles must be >= 1");
  spec.validate();
  Dataset ds{spec, seed, n_cycles, {}};
  for (std::size_t i = 0; i < n_seqs; ++i) {
    std::mt19937_64 start_rng(mix_seed(seed, 2 * i));
    const auto start = static_cast<std::size_t>(unit_uniform(start_rng) * kStates);
    ds.sequences.push_back(render_sequence(sample_pfsm(spec, n_cycles, mix_seed(seed, 2 * i + 1), start)));
  }
  return ds;
}

inline std::string sequence_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03zu.csv", i);
  return buf;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["pfsm"] = ds.spec;
  meta["seed"] = ds.seed;
  meta["n_sequences"] = ds.sequences.size();
  meta["n_cycles"] = ds.n_cycles;
  meta["cycle_length"] = kCycleLength;
  meta["joints"] = {"left_shoulder", "left_elbow", "right_shoulder", "right_elbow"};
  meta["joint_limits_deg"] = nlohmann::json::array();
  for (std::size_t j = 0; j < kJoints; ++j)
    meta["joint_limits_deg"].push_back({-kJointLimitDeg, kJointLimitDeg});
  meta["normalization"] = "value = angle_deg / 60, range [-1, 1]";
  std::vector<std::string> files;
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) files.push_back(sequence_filename(i));
  meta["files"] = files;
  {
    std::ofstream f(dir / "meta.json", std::ios::binary);
    f << meta.dump(2) << '\n';
    if (!f) throw DatasetError("cannot write " + (dir / "meta.json").string());
  }
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const Sequence& s = ds.sequences[i];
    std::ofstream f(dir / files[i], std::ios::binary);
    f << "t,j0,j1,j2,j3,state\n";
    char buf[160];
    for (std::size_t t = 0; t < s.length(); ++t) {
      const Posture& p = s.joints[t];
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,S%zu\n", t, p[0], p[1], p[2], p[3],
                    s.state_at(t) + 1);
      f << buf;
    }
    if (!f) throw DatasetError("cannot write " + (dir / files[i]).string());
  }
}

inline Sequence read_sequence_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DatasetError("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != "t,j0,j1,j2,j3,state") throw DatasetError("bad CSV header in " + path.string());
  Sequence s;
  std::vector<std::size_t> step_states;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6 || cells[5].size() < 2 || cells[5][0] != 'S') {
      throw DatasetError("malformed row in " + path.string() + ": " + line);
    }
    Posture p{};
    for (std::size_t j = 0; j < kJoints; ++j) p[j] = std::stod(cells[1 + j]);
    s.joints.push_back(p);
    step_states.push_back(static_cast<std::size_t>(std::stoul(cells[5].substr(1)) - 1));
  }
  for (std::size_t t = 0; t < step_states.size(); t += kCycleLength)
    s.cycle_states.push_back(step_states[t]);
  return s;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "meta.json");
  if (!f) throw DatasetError("missing meta.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("corrupt meta.json: ") + e.what());
  }
  Dataset ds;
  ds.spec = meta.at("pfsm").get<PfsmSpec>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.n_cycles = meta.at("n_cycles").get<std::size_t>();
  for (const auto& name : meta.at("files")) {
    ds.sequences.push_back(read_sequence_csv(dir / name.get<std::string>()));
  }
  return ds;
}

}  // namespace kinaero::datagen
