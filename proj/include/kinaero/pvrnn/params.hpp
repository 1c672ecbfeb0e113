#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kinaero/grad/tensor.hpp"
#include "kinaero/pvrnn/config.hpp"
#include "kinaero/util/random.hpp"

namespace kinaero::pvrnn {

using grad::Tensor;

struct LayerParams {
  Tensor w_dd;       // d_l x d_l, recurrent
  Tensor w_zd;       // d_l x z_l
  Tensor w_td;       // d_l x d_{l+1}; empty for the top layer
  Tensor b_h;        // d_l
  Tensor w_mu;       // z_l x d_l, prior mean head
  Tensor b_mu;       // z_l
  Tensor w_sigma;    // z_l x d_l, prior log-sigma head
  Tensor b_sigma;    // z_l
};

struct NetworkParams {
  std::vector<LayerParams> layers;
  Tensor w_out;  // (N_x * N_soft) x d_1
  Tensor b_out;

  // Visits every tensor with a stable name, in the canonical order used by the
  // optimizer and the checkpoint format.
  template <class F>
  void for_each(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l + 1) + ".";
      LayerParams& L = layers[l];
      f(p + "W_dd", L.w_dd);
      f(p + "W_zd", L.w_zd);
      if (!L.w_td.empty()) f(p + "W_topdown", L.w_td);
      f(p + "b_h", L.b_h);
      f(p + "W_mu", L.w_mu);
      f(p + "b_mu", L.b_mu);
      f(p + "W_sigma", L.w_sigma);
      f(p + "b_sigma", L.b_sigma);
    }
    f(std::string("out.W"), w_out);
    f(std::string("out.b"), b_out);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<NetworkParams*>(this)->for_each(
        [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    std::vector<const Tensor*> ta, tb;
    a.for_each([&](const std::string&, const Tensor& t) { ta.push_back(&t); });
    b.for_each([&](const std::string&, const Tensor& t) { tb.push_back(&t); });
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i)
      if (!(*ta[i] == *tb[i])) return false;
    return true;
  }
};

inline NetworkParams zero_params(const NetworkConfig& config) {
  config.validate();
  NetworkParams p;
  const std::size_t L = config.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t d = config.layers[l].num_d;
    const std::size_t z = config.layers[l].num_z;
    LayerParams lp;
    lp.w_dd = Tensor({d, d});
    lp.w_zd = Tensor({d, z});
    if (l + 1 < L) lp.w_td = Tensor({d, config.layers[l + 1].num_d});
    lp.b_h = Tensor({d});
    lp.w_mu = Tensor({z, d});
    lp.b_mu = Tensor({z});
    lp.w_sigma = Tensor({z, d});
    lp.b_sigma = Tensor({z});
    p.layers.push_back(std::move(lp));
  }
  p.w_out = Tensor({config.output_units(), config.layers[0].num_d});
  p.b_out = Tensor({config.output_units()});
  return p;
}

// Round every value to the nearest 32-bit float, the precision of the
// checkpoint format.
inline void round_to_float(NetworkParams& p) {
  p.for_each([](const std::string&, Tensor& t) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  });
}

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) at float precision; biases zero.
inline NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  NetworkParams p = zero_params(config);
  std::mt19937_64 rng(seed);
  p.for_each([&](const std::string&, Tensor& t) {
    if (t.rank() != 2) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
    for (double& v : t.values()) v = bound * (2.0 * unit_uniform(rng) - 1.0);
  });
  round_to_float(p);
  return p;
}

}  // namespace kinaero::pvrnn
