#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "kinaero/grad/tensor.hpp"
#include "kinaero/pvrnn/config.hpp"

namespace kinaero::pvrnn {

// Adaptive variables of one sequence. For layer l, a_mu[l] and a_sigma[l] have
// shape {T, z_l}; the posterior is N(tanh(a_mu), exp(a_sigma)).
struct SequencePosterior {
  std::vector<grad::Tensor> a_mu;
  std::vector<grad::Tensor> a_sigma;

  static SequencePosterior zeros(const NetworkConfig& config, std::size_t steps) {
    SequencePosterior p;
    for (const LayerConfig& l : config.layers) {
      p.a_mu.emplace_back(grad::Shape{steps, l.num_z});
      p.a_sigma.emplace_back(grad::Shape{steps, l.num_z});
    }
    return p;
  }

  std::size_t steps() const { return a_mu.empty() ? 0 : a_mu[0].rows(); }

  friend bool operator==(const SequencePosterior&, const SequencePosterior&) = default;
};

// Adaptive values whose posterior equals the given Gaussian (zero KL start).
inline double adaptive_mu_for(double mu) { return std::atanh(std::clamp(mu, -0.999, 0.999)); }
inline double adaptive_sigma_for(double sigma) { return std::log(sigma); }

}  // namespace kinaero::pvrnn
