#pragma once

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/harness/experiment.hpp"
#include "kinaero/pvrnn/config.hpp"
#include "kinaero/training/train.hpp"

namespace kinaero::service {

using nlohmann::json;

struct RunConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ServeSettings {
  int port = 8765;
  std::size_t tick_ms = 100;
  double broadcast_hz = 20.0;
  double rate_limit = 100.0;       // messages per second per client
  double grab_gain = 0.2;          // N m / rad
  double grab_damping = 0.05;      // N m s / rad
  double grab_cap = 1.5;           // N m
  std::size_t max_ticks = 0;       // 0 runs until stopped
};

inline void to_json(json& j, const ServeSettings& s) {
  j = {{"port", s.port},           {"tick_ms", s.tick_ms},     {"broadcast_hz", s.broadcast_hz},
       {"rate_limit", s.rate_limit}, {"grab_gain", s.grab_gain}, {"grab_damping", s.grab_damping},
       {"grab_cap", s.grab_cap},   {"max_ticks", s.max_ticks}};
}

inline void from_json(const json& j, ServeSettings& s) {
  s.port = j.value("port", s.port);
  s.tick_ms = j.value("tick_ms", s.tick_ms);
  s.broadcast_hz = j.value("broadcast_hz", s.broadcast_hz);
  s.rate_limit = j.value("rate_limit", s.rate_limit);
  s.grab_gain = j.value("grab_gain", s.grab_gain);
  s.grab_damping = j.value("grab_damping", s.grab_damping);
  s.grab_cap = j.value("grab_cap", s.grab_cap);
  s.max_ticks = j.value("max_ticks", s.max_ticks);
  if (s.port < 0 || s.port > 65535) throw RunConfigError("serve.port out of range");
  if (s.tick_ms == 0 || !(s.broadcast_hz > 0.0) || !(s.rate_limit > 0.0))
    throw RunConfigError("serve: tick_ms, broadcast_hz and rate_limit must be > 0");
}

// Defaults for every stage. Training uses a higher, cosine-decayed step size
// and chunked BPTT so desk-scale runs finish in minutes.
inline json default_run_config() {
  training::TrainConfig tc;
  tc.lr = 3e-2;
  tc.lr_final = 1e-3;
  tc.truncation = 400;
  tc.log_every = 10;
  harness::ExperimentConfig ec;
  json exp = ec;
  exp.erase("session");
  exp["w_list"] = std::vector<double>{0.01, 0.05, 0.1};
  return {{"network", pvrnn::desk_scale_config()},
          {"data", {{"seqs", 10}, {"cycles", 200}, {"seed", 1}}},
          {"train", tc},
          {"init_seed", 1},
          {"inference", inference::InferenceConfig{}},
          {"robot", robot::RobotConfig{}},
          {"session_seed", 1},
          {"experiment", exp},
          {"prior_gen", {{"steps", 10000}, {"seed", 1}}},
          {"serve", ServeSettings{}}};
}

// Dotted leaf paths of a config tree; arrays count as leaves.
inline void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object() && !j.empty()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out[prefix] = j;
  }
}

inline std::map<std::string, json> flatten(const json& j) {
  std::map<std::string, json> out;
  flatten(j, "", out);
  return out;
}

inline json& at_path(json& root, const std::string& path) {
  json* node = &root;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!node->is_object() || !node->contains(key)) throw RunConfigError("unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) return *node;
    pos = dot + 1;
  }
}

// Parses a flag or environment string against the type of the default.
inline json parse_value(const std::string& path, const json& like, const std::string& text) {
  try {
    if (like.is_string()) return text;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw RunConfigError("");
    }
    json v = json::parse(text);
    if (like.is_number_unsigned() && !(v.is_number_unsigned())) throw RunConfigError("");
    if (like.is_number_integer() && !v.is_number_integer()) throw RunConfigError("");
    if (like.is_number_float() && !v.is_number()) throw RunConfigError("");
    if (like.is_array() && !v.is_array()) throw RunConfigError("");
    if (like.is_number_float()) return v.get<double>();
    return v;
  } catch (const std::exception&) {
    throw RunConfigError("bad value '" + text + "' for " + path);
  }
}

// Deep merge of `over` into `base`; keys must already exist in `base`.
inline void merge_into(json& base, const json& over, const std::string& prefix = "") {
  if (!over.is_object()) throw RunConfigError("config file must be a JSON object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw RunConfigError("unknown config key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && !slot.empty() && it.value().is_object())
      merge_into(slot, it.value(), path);
    else
      slot = it.value();
  }
}

inline std::string env_name(const std::string& path) {
  std::string s = "KINAERO_";
  for (char c : path) s += (c == '.') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Resolution order: defaults < config file < environment < flags.
inline json resolve_run_config(const std::filesystem::path& file,
                               const std::map<std::string, std::string>& flags,
                               const std::function<const char*(const char*)>& getenv = ::getenv) {
  json cfg = default_run_config();
  if (!file.empty()) {
    std::ifstream f(file);
    if (!f) throw RunConfigError("cannot open config " + file.string());
    json over;
    try {
      over = json::parse(f);
    } catch (const json::exception& e) {
      throw RunConfigError("config " + file.string() + " is not valid JSON: " + e.what());
    }
    merge_into(cfg, over);
  }
  const auto leaves = flatten(cfg);
  for (const auto& [path, like] : leaves)
    if (const char* v = getenv(env_name(path).c_str())) at_path(cfg, path) = parse_value(path, like, v);
  for (const auto& [path, text] : flags) {
    json& slot = at_path(cfg, path);
    slot = parse_value(path, slot, text);
  }
  // typed round trips validate every section
  try {
    cfg["network"].get<pvrnn::NetworkConfig>().validate();
    cfg["train"].get<training::TrainConfig>().validate();
    cfg["inference"].get<inference::InferenceConfig>().validate();
    (void)cfg["robot"].get<robot::RobotConfig>();
    (void)cfg["serve"].get<ServeSettings>();
  } catch (const RunConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw RunConfigError(e.what());
  }
  return cfg;
}

inline void write_run_config(const json& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << cfg.dump(2) << "\n";
}

inline harness::SessionConfig session_config(const json& cfg) {
  harness::SessionConfig sc;
  sc.inference = cfg["inference"].get<inference::InferenceConfig>();
  sc.robot = cfg["robot"].get<robot::RobotConfig>();
  sc.seed = cfg["session_seed"].get<std::uint64_t>();
  return sc;
}

inline harness::ExperimentConfig experiment_config(const json& cfg) {
  json e = cfg["experiment"];
  e.erase("w_list");
  auto ec = e.get<harness::ExperimentConfig>();
  ec.session = session_config(cfg);
  ec.validate();
  return ec;
}

}  // namespace kinaero::service
