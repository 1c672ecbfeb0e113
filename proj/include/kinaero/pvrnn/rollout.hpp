#pragma once

#include <cstddef>
#include <vector>

#include "kinaero/grad/tape.hpp"
#include "kinaero/pvrnn/config.hpp"
#include "kinaero/pvrnn/kernels.hpp"
#include "kinaero/pvrnn/params.hpp"

namespace kinaero::pvrnn {

using grad::Tape;
using grad::Var;

// Network parameters recorded as tape leaves.
struct BoundParams {
  struct Layer {
    Var w_dd, w_zd, w_td, b_h, w_mu, b_mu, w_sigma, b_sigma;
    bool has_topdown = false;
  };
  std::vector<Layer> layers;
  Var w_out, b_out;
  std::vector<Var> ordered;  // same order as NetworkParams::for_each
};

inline BoundParams bind_params(Tape& tape, const NetworkParams& params, bool trainable) {
  BoundParams b;
  for (const LayerParams& p : params.layers) {
    BoundParams::Layer l;
    l.w_dd = tape.leaf(p.w_dd, trainable);
    l.w_zd = tape.leaf(p.w_zd, trainable);
    l.has_topdown = !p.w_td.empty();
    if (l.has_topdown) l.w_td = tape.leaf(p.w_td, trainable);
    l.b_h = tape.leaf(p.b_h, trainable);
    l.w_mu = tape.leaf(p.w_mu, trainable);
    l.b_mu = tape.leaf(p.b_mu, trainable);
    l.w_sigma = tape.leaf(p.w_sigma, trainable);
    l.b_sigma = tape.leaf(p.b_sigma, trainable);
    b.ordered.insert(b.ordered.end(), {l.w_dd, l.w_zd});
    if (l.has_topdown) b.ordered.push_back(l.w_td);
    b.ordered.insert(b.ordered.end(), {l.b_h, l.w_mu, l.b_mu, l.w_sigma, l.b_sigma});
    b.layers.push_back(l);
  }
  b.w_out = tape.leaf(params.w_out, trainable);
  b.b_out = tape.leaf(params.b_out, trainable);
  b.ordered.push_back(b.w_out);
  b.ordered.push_back(b.b_out);
  return b;
}

inline void rebind_params(Tape& tape, const BoundParams& bound, const NetworkParams& params) {
  std::size_t k = 0;
  params.for_each([&](const std::string&, const Tensor& t) { tape.set_value(bound.ordered[k++], t); });
}

struct RolloutInputs {
  std::size_t steps = 0;
  // Sequence index (1-based) of the first step; step 1 uses the unit prior
  // and the beta weight.
  std::size_t first_t = 1;
  NetworkState initial;               // state before the first step
  std::vector<Vec> a_mu, a_sigma;     // per layer, steps * z_l
  std::vector<Vec> eps;               // per layer, steps * z_l
  Vec targets;                        // steps * N_x * N_soft; empty = no likelihood
  double w = 0.01;
  double beta = 0.01;
  bool adaptive_trainable = true;
};

// Tape handles for one recorded posterior rollout.
struct RolloutGraph {
  std::vector<Var> a_mu, a_sigma, eps;     // per layer leaves
  std::vector<Var> init_h, init_d;         // per layer leaves
  Var targets{}, negentropy{};
  bool has_targets = false;

  std::vector<Var> e;                      // per step
  std::vector<std::vector<Var>> r;         // [layer][step]
  std::vector<std::vector<Var>> h, d;      // [layer][step]
  std::vector<std::vector<Var>> mu_p, sigma_p, mu_q, sigma_q;
  std::vector<Var> log_probs;              // per step

  Var e_total{};
  std::vector<Var> r_total;                // per layer, unweighted
  Var free_energy{};
};

namespace detail {

inline Vec negentropy_terms(const Vec& targets, std::size_t steps, std::size_t units) {
  Vec out(steps, 0.0);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t k = 0; k < units; ++k) {
      const double q = targets[t * units + k];
      if (q > 0.0) out[t] += q * std::log(q);
    }
  return out;
}

}  // namespace detail

// Record the forward pass of the posterior-driven model over `in.steps` steps
// together with the free energy
//   F = sum_t e_t + sum_l (N_x / N_z^l) * (beta r^l_1 + w sum_{t>1} r^l_t).
inline RolloutGraph build_rollout(Tape& tape, const BoundParams& P, const NetworkConfig& config,
                                  const RolloutInputs& in) {
  const std::size_t L = config.num_layers();
  const std::size_t T = in.steps;
  const std::size_t units = config.output_units();
  if (T == 0) throw std::invalid_argument("rollout needs at least one step");
  if (in.a_mu.size() != L || in.a_sigma.size() != L) throw grad::ShapeError("rollout: A layers");
  RolloutGraph g;
  g.r.assign(L, {});
  g.h.assign(L, {});
  g.d.assign(L, {});
  g.mu_p.assign(L, {});
  g.sigma_p.assign(L, {});
  g.mu_q.assign(L, {});
  g.sigma_q.assign(L, {});

  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t z = config.layers[l].num_z;
    if (in.a_mu[l].size() != T * z || in.a_sigma[l].size() != T * z) {
      throw grad::ShapeError("rollout: adaptive variable size");
    }
    g.a_mu.push_back(tape.leaf(Tensor::vector(in.a_mu[l]), in.adaptive_trainable));
    g.a_sigma.push_back(tape.leaf(Tensor::vector(in.a_sigma[l]), in.adaptive_trainable));
    Vec eps = in.eps.empty() ? Vec(T * z, 0.0) : in.eps[l];
    if (eps.size() != T * z) throw grad::ShapeError("rollout: eps size");
    g.eps.push_back(tape.constant(Tensor::vector(std::move(eps))));
    const NetworkState init =
        in.initial.h.empty() ? NetworkState::zeros(config) : in.initial;
    g.init_h.push_back(tape.constant(Tensor::vector(init.h[l])));
    g.init_d.push_back(tape.constant(Tensor::vector(init.d[l])));
  }
  g.has_targets = !in.targets.empty();
  if (g.has_targets) {
    if (in.targets.size() != T * units) throw grad::ShapeError("rollout: target size");
    g.targets = tape.constant(Tensor::vector(in.targets));
    g.negentropy = tape.constant(Tensor::vector(detail::negentropy_terms(in.targets, T, units)));
  }

  const double lo = config.log_sigma_min, hi = config.log_sigma_max;
  std::vector<Var> h_prev = g.init_h, d_prev = g.init_d;
  std::vector<Var> fe_terms;
  std::vector<std::vector<Var>> weighted_r(L);

  for (std::size_t s = 0; s < T; ++s) {
    const bool first = (in.first_t + s) == 1;
    const double weight = first ? in.beta : in.w;
    std::vector<Var> h_now(L), d_now(L);
    for (std::size_t li = L; li-- > 0;) {
      const BoundParams::Layer& lp = P.layers[li];
      const std::size_t z = config.layers[li].num_z;
      const double tau = config.layers[li].tau;

      Var a_mu = tape.slice(g.a_mu[li], s * z, z);
      Var a_sig = tape.slice(g.a_sigma[li], s * z, z);
      Var eps = tape.slice(g.eps[li], s * z, z);
      Var mu_q = tanh(a_mu);
      Var log_sq = tape.clamp(a_sig, lo, hi);
      Var sig_q = exp(log_sq);
      Var z_t = mu_q + sig_q * eps;

      Var kl;
      Var mu_p, sig_p;
      if (first) {
        // KL(q || N(0,1)) = -log sq + (sq^2 + mq^2) / 2 - 1/2
        mu_p = tape.constant(Tensor::zeros({z}));
        sig_p = tape.constant(Tensor::filled({z}, 1.0));
        Var terms = (exp(log_sq * 2.0) + square(mu_q)) * 0.5 - log_sq;
        kl = sum(terms) - 0.5 * static_cast<double>(z);
      } else {
        mu_p = tanh(tape.affine(lp.w_mu, d_prev[li], lp.b_mu));
        Var log_sp = tape.clamp(tape.affine(lp.w_sigma, d_prev[li], lp.b_sigma), lo, hi);
        sig_p = exp(log_sp);
        Var diff = log_sq - log_sp;
        Var dm = mu_q - mu_p;
        Var terms = (exp(diff * 2.0) + square(dm) * exp(log_sp * -2.0)) * 0.5 - diff;
        kl = sum(terms) - 0.5 * static_cast<double>(z);
      }
      g.r[li].push_back(kl);
      weighted_r[li].push_back(kl * weight);
      g.mu_p[li].push_back(mu_p);
      g.sigma_p[li].push_back(sig_p);
      g.mu_q[li].push_back(mu_q);
      g.sigma_q[li].push_back(sig_q);

      Var pre = tape.affine(lp.w_dd, d_prev[li], lp.b_h) + tape.matmul(lp.w_zd, z_t);
      if (lp.has_topdown) pre = pre + tape.matmul(lp.w_td, d_now[li + 1]);
      Var h = h_prev[li] * (1.0 - 1.0 / tau) + pre * (1.0 / tau);
      h_now[li] = h;
      d_now[li] = tanh(h);
      g.h[li].push_back(h_now[li]);
      g.d[li].push_back(d_now[li]);
    }
    Var logits = tape.affine(P.w_out, d_now[0], P.b_out);
    Var logp = tape.log_softmax(logits, config.n_soft);
    g.log_probs.push_back(logp);
    if (g.has_targets) {
      Var q = tape.slice(g.targets, s * units, units);
      Var nh = tape.slice(g.negentropy, s, 1);
      Var e = nh - sum(q * logp);
      g.e.push_back(e);
    }
    h_prev = h_now;
    d_prev = d_now;
  }

  if (g.has_targets) {
    g.e_total = sum(tape.concat(g.e));
    fe_terms.push_back(g.e_total);
  }
  for (std::size_t l = 0; l < L; ++l) {
    g.r_total.push_back(sum(tape.concat(g.r[l])));
    fe_terms.push_back(sum(tape.concat(weighted_r[l])) * config.kl_scale(l));
  }
  g.free_energy = sum(tape.concat(fe_terms));
  return g;
}

// Final deterministic state of a recorded rollout, read from current values.
inline NetworkState final_state(const Tape& tape, const RolloutGraph& g) {
  NetworkState s;
  for (std::size_t l = 0; l < g.h.size(); ++l) {
    auto h = tape.value(g.h[l].back()).values();
    auto d = tape.value(g.d[l].back()).values();
    s.h.push_back(h);
    s.d.push_back(d);
  }
  return s;
}

}  // namespace kinaero::pvrnn
