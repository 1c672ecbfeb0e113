#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "kinaero/grad/tensor.hpp"
#include "kinaero/pvrnn/config.hpp"
#include "kinaero/pvrnn/params.hpp"
#include "kinaero/pvrnn/softmax_coding.hpp"

// Plain (tape-free) evaluation of the model equations. Used for prior
// generation, for advancing frozen state in online inference, and as the
// reference the graph rollout is tested against.
namespace kinaero::pvrnn {

using Vec = std::vector<double>;

struct GaussianStats {
  Vec mu;
  Vec sigma;
};

namespace detail {

inline void gemv_acc(const Tensor& w, std::span<const double> x, std::span<double> out) {
  if (w.cols() != x.size() || w.rows() != out.size()) {
    throw grad::ShapeError("gemv shape mismatch " + grad::shape_str(w.shape()));
  }
  const std::size_t k = w.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    const double* row = &w[i * k];
    for (std::size_t p = 0; p < k; ++p) acc += row[p] * x[p];
    out[i] += acc;
  }
}

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw grad::NonFiniteError(std::string("non-finite ") + what);
}

}  // namespace detail

struct HiddenUpdate {
  Vec h;
  Vec d;
};

// Leaky-integrator update of one layer. `topdown_d` is empty for the top layer.
inline HiddenUpdate layer_step(std::span<const double> h_prev, std::span<const double> d_prev,
                               std::span<const double> topdown_d, std::span<const double> z,
                               const LayerParams& p, double tau) {
  if (!(tau >= 1.0)) throw ConfigError("tau must be >= 1");
  const std::size_t n = p.b_h.size();
  if (h_prev.size() != n || d_prev.size() != n) throw grad::ShapeError("layer_step state size");
  Vec pre(p.b_h.values());
  detail::gemv_acc(p.w_dd, d_prev, pre);
  detail::gemv_acc(p.w_zd, z, pre);
  if (!topdown_d.empty()) detail::gemv_acc(p.w_td, topdown_d, pre);
  HiddenUpdate u{Vec(n), Vec(n)};
  const double keep = 1.0 - 1.0 / tau;
  for (std::size_t i = 0; i < n; ++i) {
    u.h[i] = keep * h_prev[i] + pre[i] / tau;
    u.d[i] = std::tanh(u.h[i]);
  }
  detail::require_finite(u.h, "hidden state");
  return u;
}

// Conditional prior. On the first step of a sequence it is the unit Gaussian.
inline GaussianStats compute_prior(std::span<const double> d_prev, const LayerParams& p,
                                   bool first_step, double log_sigma_min = -10.0,
                                   double log_sigma_max = 4.0) {
  const std::size_t z = p.b_mu.size();
  GaussianStats s{Vec(z, 0.0), Vec(z, 1.0)};
  if (first_step) return s;
  Vec m(p.b_mu.values());
  Vec ls(p.b_sigma.values());
  detail::gemv_acc(p.w_mu, d_prev, m);
  detail::gemv_acc(p.w_sigma, d_prev, ls);
  for (std::size_t i = 0; i < z; ++i) {
    s.mu[i] = std::tanh(m[i]);
    s.sigma[i] = std::exp(std::clamp(ls[i], log_sigma_min, log_sigma_max));
  }
  return s;
}

inline GaussianStats posterior_from_adaptive(std::span<const double> a_mu,
                                             std::span<const double> a_sigma,
                                             double log_sigma_min = -10.0,
                                             double log_sigma_max = 4.0) {
  GaussianStats s{Vec(a_mu.size()), Vec(a_sigma.size())};
  for (std::size_t i = 0; i < a_mu.size(); ++i) {
    s.mu[i] = std::tanh(a_mu[i]);
    s.sigma[i] = std::exp(std::clamp(a_sigma[i], log_sigma_min, log_sigma_max));
  }
  return s;
}

inline Vec sample_gaussian(std::span<const double> mu, std::span<const double> sigma,
                           std::span<const double> eps) {
  if (mu.size() != sigma.size() || mu.size() != eps.size()) {
    throw grad::ShapeError("sample_gaussian size mismatch");
  }
  Vec z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw std::domain_error("sample_gaussian: sigma must be > 0");
    z[i] = mu[i] + sigma[i] * eps[i];
  }
  return z;
}

// KL(N(mu_q, sigma_q) || N(mu_p, sigma_p)) summed over independent dimensions.
inline double kld_gauss(std::span<const double> mu_q, std::span<const double> sigma_q,
                        std::span<const double> mu_p, std::span<const double> sigma_p) {
  if (mu_q.size() != sigma_q.size() || mu_q.size() != mu_p.size() ||
      mu_q.size() != sigma_p.size()) {
    throw grad::ShapeError("kld_gauss size mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < mu_q.size(); ++i) {
    if (!(sigma_q[i] > 0.0) || !(sigma_p[i] > 0.0)) {
      throw std::domain_error("kld_gauss: sigma must be > 0");
    }
    const double dm = mu_q[i] - mu_p[i];
    kl += std::log(sigma_p[i] / sigma_q[i]) +
          (sigma_q[i] * sigma_q[i] + dm * dm) / (2.0 * sigma_p[i] * sigma_p[i]) - 0.5;
  }
  return kl;
}

inline constexpr double kProbFloor = 1e-12;

// sum_i KL(Q_i || P_i) over channels of two frames.
inline double prediction_error(const SoftmaxFrame& target, const SoftmaxFrame& output) {
  if (target.channels != output.channels || target.n_soft != output.n_soft ||
      target.probs.size() != output.probs.size()) {
    throw grad::ShapeError("prediction_error frame shape mismatch");
  }
  double e = 0.0;
  for (std::size_t k = 0; k < target.probs.size(); ++k) {
    const double q = target.probs[k];
    if (q <= 0.0) continue;
    e += q * std::log(q / std::max(output.probs[k], kProbFloor));
  }
  return e;
}

// Weighted free energy of one sequence. `r[l][t]` is the KLD of layer l at
// step t; step 0 of the sequence is weighted by beta, later steps by w.
inline double free_energy(std::span<const double> e, const std::vector<Vec>& r,
                          const NetworkConfig& config, double w, bool starts_at_t1 = true) {
  if (e.empty()) throw std::invalid_argument("free_energy: empty sequence");
  if (r.size() != config.num_layers()) throw grad::ShapeError("free_energy: layer count");
  double f = 0.0;
  for (double v : e) f += v;
  for (std::size_t l = 0; l < r.size(); ++l) {
    if (r[l].size() != e.size()) throw grad::ShapeError("free_energy: e and r lengths differ");
    const double scale = config.kl_scale(l);
    for (std::size_t t = 0; t < r[l].size(); ++t) {
      const double weight = (t == 0 && starts_at_t1) ? config.beta : w;
      f += scale * weight * r[l][t];
    }
  }
  return f;
}

// Deterministic state of all layers after some step.
struct NetworkState {
  std::vector<Vec> h;
  std::vector<Vec> d;

  static NetworkState zeros(const NetworkConfig& config) {
    NetworkState s;
    for (const LayerConfig& l : config.layers) {
      s.h.emplace_back(l.num_d, 0.0);
      s.d.emplace_back(l.num_d, 0.0);
    }
    return s;
  }
};

struct StepRecord {
  NetworkState state;
  std::vector<GaussianStats> prior;  // per layer
  std::vector<Vec> z;                // per layer
  Vec probs;                         // N_x * N_soft
};

// Chooses z for one layer given its prior; returns z.
using LatentPicker = std::function<Vec(std::size_t layer, const GaussianStats& prior)>;

// One full network step, top layer first. `first_step` selects the unit prior.
inline StepRecord network_step(const NetworkParams& params, const NetworkConfig& config,
                               const NetworkState& prev, bool first_step,
                               const LatentPicker& pick) {
  const std::size_t L = config.num_layers();
  StepRecord rec;
  rec.state.h.resize(L);
  rec.state.d.resize(L);
  rec.prior.resize(L);
  rec.z.resize(L);
  for (std::size_t li = L; li-- > 0;) {
    const LayerParams& p = params.layers[li];
    rec.prior[li] =
        compute_prior(prev.d[li], p, first_step, config.log_sigma_min, config.log_sigma_max);
    rec.z[li] = pick(li, rec.prior[li]);
    std::span<const double> td;
    if (li + 1 < L) td = rec.state.d[li + 1];
    HiddenUpdate u = layer_step(prev.h[li], prev.d[li], td, rec.z[li], p, config.layers[li].tau);
    rec.state.h[li] = std::move(u.h);
    rec.state.d[li] = std::move(u.d);
  }
  const std::size_t units = config.output_units();
  Vec logits(params.b_out.values());
  detail::gemv_acc(params.w_out, rec.state.d[0], logits);
  rec.probs.resize(units);
  const std::size_t g = config.n_soft;
  for (std::size_t base = 0; base < units; base += g) {
    const double mx = *std::max_element(logits.begin() + static_cast<std::ptrdiff_t>(base),
                                        logits.begin() + static_cast<std::ptrdiff_t>(base + g));
    double zsum = 0.0;
    for (std::size_t j = 0; j < g; ++j) {
      rec.probs[base + j] = std::exp(logits[base + j] - mx);
      zsum += rec.probs[base + j];
    }
    for (std::size_t j = 0; j < g; ++j) rec.probs[base + j] /= zsum;
  }
  return rec;
}

}  // namespace kinaero::pvrnn
