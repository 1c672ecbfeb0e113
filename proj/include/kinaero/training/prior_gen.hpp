#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "kinaero/pvrnn/kernels.hpp"
#include "kinaero/pvrnn/softmax_coding.hpp"
#include "kinaero/util/random.hpp"

namespace kinaero::training {

struct PriorStep {
  pvrnn::Vec output;                      // decoded N_x values
  std::vector<pvrnn::Vec> d;              // per layer
  std::vector<pvrnn::GaussianStats> prior;
};

struct PriorTrace {
  std::vector<PriorStep> steps;

  std::vector<pvrnn::Vec> outputs() const {
    std::vector<pvrnn::Vec> o;
    for (const auto& s : steps) o.push_back(s.output);
    return o;
  }
};

// Closed-loop generation from the learned prior; never reads observations.
inline PriorTrace prior_generate(const pvrnn::NetworkParams& params,
                                 const pvrnn::NetworkConfig& config, std::size_t n_steps,
                                 std::uint64_t seed) {
  config.validate();
  pvrnn::SoftmaxCoder coder(config);
  std::mt19937_64 rng(seed);
  PriorTrace trace;
  trace.steps.reserve(n_steps);
  pvrnn::NetworkState state = pvrnn::NetworkState::zeros(config);
  const pvrnn::LatentPicker sample = [&](std::size_t, const pvrnn::GaussianStats& p) {
    const auto eps = standard_normals(rng, p.mu.size());
    return pvrnn::sample_gaussian(p.mu, p.sigma, eps);
  };
  for (std::size_t t = 0; t < n_steps; ++t) {
    pvrnn::StepRecord rec = pvrnn::network_step(params, config, state, t == 0, sample);
    PriorStep step;
    step.output = coder.decode_frame(rec.probs);
    step.d = rec.state.d;
    step.prior = std::move(rec.prior);
    trace.steps.push_back(std::move(step));
    state = std::move(rec.state);
  }
  return trace;
}

}  // namespace kinaero::training
