#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace kinaero::pvrnn {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct LayerConfig {
  std::size_t num_d = 1;
  std::size_t num_z = 1;
  double tau = 1.0;
};

// Layer 0 is the bottom layer (feeds the output head); the last entry is the
// top layer, which receives no top-down input.
struct NetworkConfig {
  std::vector<LayerConfig> layers;
  std::size_t output_dim = 4;
  std::size_t n_soft = 10;
  double w_train = 0.01;
  double beta = 0.01;
  double softmax_sigma = 0.2;
  // Bin centres extend this far beyond the value range on each side so that
  // expectation decoding stays unbiased near the range limits.
  double softmax_margin = 0.4;
  double value_lo = -1.0;
  double value_hi = 1.0;
  // exp() arguments for sigma are clamped into this range.
  double log_sigma_min = -10.0;
  double log_sigma_max = 4.0;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t output_units() const { return output_dim * n_soft; }

  void validate() const {
    if (layers.empty()) throw ConfigError("network needs at least one layer");
    for (const LayerConfig& l : layers) {
      if (l.num_d < 1 || l.num_z < 1) throw ConfigError("layer needs num_d >= 1 and num_z >= 1");
      if (!(l.tau >= 1.0)) throw ConfigError("layer tau must be >= 1");
    }
    if (output_dim < 1) throw ConfigError("output_dim must be >= 1");
    if (n_soft < 2) throw ConfigError("n_soft must be >= 2");
    if (!(w_train > 0.0)) throw ConfigError("w_train must be > 0");
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
    if (!(softmax_sigma > 0.0)) throw ConfigError("softmax_sigma must be > 0");
    if (!(softmax_margin >= 0.0)) throw ConfigError("softmax_margin must be >= 0");
    if (!(value_lo < value_hi)) throw ConfigError("value range must satisfy lo < hi");
    if (!(log_sigma_min < log_sigma_max)) throw ConfigError("log-sigma clamp range is empty");
  }

  // Complexity normaliser N_x / N_z for one layer.
  double kl_scale(std::size_t layer) const {
    return static_cast<double>(output_dim) / static_cast<double>(layers[layer].num_z);
  }
};

// Two-layer network sized from the reference table: fast 60-unit bottom layer,
// slow 30-unit top layer.
inline NetworkConfig full_scale_config() {
  NetworkConfig c;
  c.layers = {{60, 6, 3.0}, {30, 3, 9.0}};
  return c;
}

inline NetworkConfig desk_scale_config() {
  NetworkConfig c;
  c.layers = {{20, 2, 3.0}, {10, 1, 9.0}};
  return c;
}

inline void to_json(nlohmann::json& j, const LayerConfig& l) {
  j = nlohmann::json{{"num_d", l.num_d}, {"num_z", l.num_z}, {"tau", l.tau}};
}

inline void from_json(const nlohmann::json& j, LayerConfig& l) {
  j.at("num_d").get_to(l.num_d);
  j.at("num_z").get_to(l.num_z);
  j.at("tau").get_to(l.tau);
}

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"output_dim", c.output_dim},
                     {"n_soft", c.n_soft},
                     {"w_train", c.w_train},
                     {"beta", c.beta},
                     {"softmax_sigma", c.softmax_sigma},
                     {"softmax_margin", c.softmax_margin},
                     {"value_lo", c.value_lo},
                     {"value_hi", c.value_hi},
                     {"log_sigma_min", c.log_sigma_min},
                     {"log_sigma_max", c.log_sigma_max}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("output_dim").get_to(c.output_dim);
  j.at("n_soft").get_to(c.n_soft);
  j.at("w_train").get_to(c.w_train);
  j.at("beta").get_to(c.beta);
  j.at("softmax_sigma").get_to(c.softmax_sigma);
  c.softmax_margin = j.value("softmax_margin", 0.4);
  j.at("value_lo").get_to(c.value_lo);
  j.at("value_hi").get_to(c.value_hi);
  c.log_sigma_min = j.value("log_sigma_min", -10.0);
  c.log_sigma_max = j.value("log_sigma_max", 4.0);
}

}  // namespace kinaero::pvrnn
