#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/datagen/dataset.hpp"
#include "kinaero/grad/adam.hpp"
#include "kinaero/pvrnn/rollout.hpp"
#include "kinaero/pvrnn/softmax_coding.hpp"
#include "kinaero/training/checkpoint.hpp"
#include "kinaero/util/random.hpp"

namespace kinaero::training {

using pvrnn::Vec;

struct TrainConfig {
  std::size_t epochs = 3000;
  double lr = 1e-3;
  std::optional<double> lr_final;    // cosine decay from lr to lr_final; unset = constant
  double grad_clip = 1.0;            // global norm; <= 0 disables
  std::optional<double> w;           // defaults to NetworkConfig::w_train
  std::optional<double> beta;        // defaults to NetworkConfig::beta
  std::uint64_t seed = 1;
  std::size_t log_every = 1;
  std::vector<std::size_t> sequences;  // subset of the dataset; empty = all
  std::size_t truncation = 0;          // BPTT chunk length; 0 = full sequence
  std::size_t log_tail = 20;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (lr_final && !(*lr_final > 0.0)) throw std::invalid_argument("train: lr_final must be > 0");
    if (log_every == 0) throw std::invalid_argument("train: log_every must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs}, {"lr", c.lr},         {"grad_clip", c.grad_clip},
       {"seed", c.seed},     {"log_every", c.log_every}, {"sequences", c.sequences},
       {"truncation", c.truncation}, {"log_tail", c.log_tail}};
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["lr_final"] = opt(c.lr_final);
  j["w"] = opt(c.w);
  j["beta"] = opt(c.beta);
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  c.sequences = j.value("sequences", c.sequences);
  c.truncation = j.value("truncation", c.truncation);
  c.log_tail = j.value("log_tail", c.log_tail);
  auto opt = [&](const char* key, std::optional<double>& v) {
    if (j.contains(key) && !j[key].is_null()) v = j[key].get<double>();
  };
  opt("lr_final", c.lr_final);
  opt("w", c.w);
  opt("beta", c.beta);
}

struct EpochLog {
  std::size_t epoch = 0;
  double free_energy = 0.0;
  double e_mean = 0.0;             // per step
  std::vector<double> r_mean;      // per layer, per step, unweighted
  double grad_norm = 0.0;
  double wallclock_s = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"epoch", epoch}, {"F", free_energy}, {"e_mean", e_mean}};
    for (std::size_t l = 0; l < r_mean.size(); ++l) j["r_l" + std::to_string(l + 1)] = r_mean[l];
    j["grad_norm"] = grad_norm;
    j["wallclock_s"] = wallclock_s;
    return j;
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
  bool diverged = false;
  std::string error;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Softmax-coded targets, one flat vector per sequence.
inline std::vector<Vec> encode_sequences(const pvrnn::NetworkConfig& config,
                                         const std::vector<std::vector<Vec>>& raw) {
  pvrnn::SoftmaxCoder coder(config);
  std::vector<Vec> out;
  for (const auto& seq : raw) {
    Vec flat;
    flat.reserve(seq.size() * config.output_units());
    for (const Vec& x : seq) {
      if (x.size() != config.output_dim) throw grad::ShapeError("train: observation width");
      const auto f = coder.encode_frame(x);
      flat.insert(flat.end(), f.probs.begin(), f.probs.end());
    }
    out.push_back(std::move(flat));
  }
  return out;
}

inline std::vector<std::vector<Vec>> dataset_observations(const datagen::Dataset& ds) {
  std::vector<std::vector<Vec>> out;
  for (const auto& s : ds.sequences) {
    std::vector<Vec> seq;
    for (const auto& p : s.joints) seq.emplace_back(p.begin(), p.end());
    out.push_back(std::move(seq));
  }
  return out;
}

namespace detail {

struct Chunk {
  std::size_t seq = 0, start = 0, len = 0;
  pvrnn::Tape tape;
  pvrnn::BoundParams bound;
  pvrnn::RolloutGraph graph;
};

inline std::vector<Vec> epoch_noise(const pvrnn::NetworkConfig& config, std::uint64_t seed,
                                    std::size_t epoch, std::size_t seq, std::size_t steps) {
  std::mt19937_64 rng(mix_seed(mix_seed(seed, epoch), seq));
  std::vector<Vec> eps;
  for (const auto& l : config.layers) eps.push_back(standard_normals(rng, steps * l.num_z));
  return eps;
}

inline Vec rows(const Tensor& t, std::size_t start, std::size_t len) {
  const std::size_t c = t.cols();
  return Vec(t.data().begin() + static_cast<std::ptrdiff_t>(start * c),
             t.data().begin() + static_cast<std::ptrdiff_t>((start + len) * c));
}

}  // namespace detail

// Minimises the training free energy over weights and adaptive variables with
// Adam. `observations[s][t]` holds N_x normalised values.
namespace detail {

inline TrainResult train_impl(const std::vector<std::vector<Vec>>& observations,
                              const pvrnn::NetworkConfig& config, pvrnn::NetworkParams params,
                              const std::vector<SequencePosterior>* initial, const TrainConfig& tc,
                              const EpochCallback& on_epoch) {
  config.validate();
  tc.validate();
  std::vector<std::size_t> pick = tc.sequences;
  if (pick.empty())
    for (std::size_t s = 0; s < observations.size(); ++s) pick.push_back(s);
  if (pick.empty()) throw std::invalid_argument("train: no sequences");
  std::vector<std::vector<Vec>> chosen;
  for (std::size_t s : pick) {
    if (s >= observations.size()) throw std::out_of_range("train: sequence index out of range");
    if (observations[s].empty()) throw std::invalid_argument("train: empty sequence");
    chosen.push_back(observations[s]);
  }
  const auto targets = encode_sequences(config, chosen);
  const double w = tc.w.value_or(config.w_train);
  const double beta = tc.beta.value_or(config.beta);
  const std::size_t L = config.num_layers();
  const std::size_t units = config.output_units();

  TrainResult result;
  result.checkpoint.config = config;
  if (initial) {
    if (initial->size() != chosen.size()) throw std::invalid_argument("train: posterior count mismatch");
    for (std::size_t s = 0; s < chosen.size(); ++s)
      if ((*initial)[s].a_mu.size() != config.num_layers() ||
          (*initial)[s].steps() != chosen[s].size())
        throw grad::ShapeError("train: posterior shape does not match sequence " + std::to_string(s));
    result.checkpoint.posteriors = *initial;
  } else {
    for (const auto& seq : chosen)
      result.checkpoint.posteriors.push_back(SequencePosterior::zeros(config, seq.size()));
  }
  auto& posts = result.checkpoint.posteriors;

  std::size_t total_steps = 0;
  for (const auto& seq : chosen) total_steps += seq.size();

  std::vector<std::unique_ptr<detail::Chunk>> chunks;
  grad::AdamState adam(grad::AdamConfig{tc.lr});
  std::vector<Vec> param_grad;
  params.for_each([&](const std::string&, const Tensor& t) { param_grad.emplace_back(t.size()); });
  std::vector<std::vector<Vec>> a_mu_grad(chosen.size()), a_sig_grad(chosen.size());
  for (std::size_t s = 0; s < chosen.size(); ++s)
    for (std::size_t l = 0; l < L; ++l) {
      a_mu_grad[s].emplace_back(posts[s].a_mu[l].size());
      a_sig_grad[s].emplace_back(posts[s].a_sigma[l].size());
    }

  pvrnn::NetworkParams last_good = params;
  std::vector<SequencePosterior> last_good_posts = posts;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    EpochLog rec;
    rec.epoch = epoch;
    rec.r_mean.assign(L, 0.0);
    for (Vec& g : param_grad) std::fill(g.begin(), g.end(), 0.0);
    try {
      std::size_t ci = 0;
      for (std::size_t s = 0; s < chosen.size(); ++s) {
        const std::size_t T = chosen[s].size();
        const std::size_t K = tc.truncation == 0 ? T : tc.truncation;
        const auto eps = detail::epoch_noise(config, tc.seed, epoch, s, T);
        pvrnn::NetworkState carry = pvrnn::NetworkState::zeros(config);
        for (std::size_t start = 0; start < T; start += K, ++ci) {
          const std::size_t len = std::min(K, T - start);
          pvrnn::RolloutInputs in;
          in.steps = len;
          in.first_t = start + 1;
          in.initial = carry;
          in.w = w;
          in.beta = beta;
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t z = config.layers[l].num_z;
            in.a_mu.push_back(detail::rows(posts[s].a_mu[l], start, len));
            in.a_sigma.push_back(detail::rows(posts[s].a_sigma[l], start, len));
            in.eps.emplace_back(eps[l].begin() + static_cast<std::ptrdiff_t>(start * z),
                                eps[l].begin() + static_cast<std::ptrdiff_t>((start + len) * z));
          }
          in.targets.assign(targets[s].begin() + static_cast<std::ptrdiff_t>(start * units),
                            targets[s].begin() + static_cast<std::ptrdiff_t>((start + len) * units));
          if (ci == chunks.size()) {
            auto c = std::make_unique<detail::Chunk>();
            c->seq = s;
            c->start = start;
            c->len = len;
            c->bound = pvrnn::bind_params(c->tape, params, true);
            c->graph = pvrnn::build_rollout(c->tape, c->bound, config, in);
            chunks.push_back(std::move(c));
          } else {
            detail::Chunk& c = *chunks[ci];
            pvrnn::rebind_params(c.tape, c.bound, params);
            for (std::size_t l = 0; l < L; ++l) {
              c.tape.set_value(c.graph.a_mu[l], in.a_mu[l]);
              c.tape.set_value(c.graph.a_sigma[l], in.a_sigma[l]);
              c.tape.set_value(c.graph.eps[l], in.eps[l]);
              c.tape.set_value(c.graph.init_h[l], in.initial.h[l]);
              c.tape.set_value(c.graph.init_d[l], in.initial.d[l]);
            }
            c.tape.forward();
          }
          detail::Chunk& c = *chunks[ci];
          const double F = c.tape.scalar(c.graph.free_energy);
          if (!std::isfinite(F)) throw grad::NonFiniteError("free energy is not finite");
          rec.free_energy += F;
          rec.e_mean += c.tape.scalar(c.graph.e_total);
          for (std::size_t l = 0; l < L; ++l) rec.r_mean[l] += c.tape.scalar(c.graph.r_total[l]);
          c.tape.backward(c.graph.free_energy);
          for (std::size_t k = 0; k < c.bound.ordered.size(); ++k) {
            const auto g = c.tape.grad(c.bound.ordered[k]);
            for (std::size_t i = 0; i < g.size(); ++i) param_grad[k][i] += g[i];
          }
          for (std::size_t l = 0; l < L; ++l) {
            const std::size_t z = config.layers[l].num_z;
            const auto gm = c.tape.grad(c.graph.a_mu[l]);
            const auto gs = c.tape.grad(c.graph.a_sigma[l]);
            std::copy(gm.begin(), gm.end(), a_mu_grad[s][l].begin() + static_cast<std::ptrdiff_t>(start * z));
            std::copy(gs.begin(), gs.end(), a_sig_grad[s][l].begin() + static_cast<std::ptrdiff_t>(start * z));
          }
          carry = pvrnn::final_state(c.tape, c.graph);
        }
      }
    } catch (const grad::NonFiniteError& e) {
      result.diverged = true;
      result.error = "epoch " + std::to_string(epoch) + ": " + e.what();
      params = last_good;
      posts = last_good_posts;
      break;
    }
    last_good = params;
    last_good_posts = posts;

    std::vector<std::span<double>> grads;
    for (Vec& g : param_grad) grads.emplace_back(g);
    for (std::size_t s = 0; s < chosen.size(); ++s)
      for (std::size_t l = 0; l < L; ++l) {
        grads.emplace_back(a_mu_grad[s][l]);
        grads.emplace_back(a_sig_grad[s][l]);
      }
    rec.grad_norm = grad::clip_global_norm(
        grads, tc.grad_clip > 0.0 ? tc.grad_clip : std::numeric_limits<double>::infinity());
    std::vector<grad::ParamSlot> slots;
    std::size_t k = 0;
    params.for_each([&](const std::string&, Tensor& t) {
      slots.push_back({t.values(), param_grad[k++]});
    });
    for (std::size_t s = 0; s < chosen.size(); ++s)
      for (std::size_t l = 0; l < L; ++l) {
        slots.push_back({posts[s].a_mu[l].values(), a_mu_grad[s][l]});
        slots.push_back({posts[s].a_sigma[l].values(), a_sig_grad[s][l]});
      }
    if (tc.lr_final && tc.epochs > 1) {
      const double frac = static_cast<double>(epoch - 1) / static_cast<double>(tc.epochs - 1);
      adam.set_lr(*tc.lr_final + 0.5 * (tc.lr - *tc.lr_final) * (1.0 + std::cos(std::numbers::pi * frac)));
    }
    adam.step(slots);

    rec.e_mean /= static_cast<double>(total_steps);
    for (double& r : rec.r_mean) r /= static_cast<double>(total_steps);
    rec.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (epoch % tc.log_every == 0 || epoch == tc.epochs) {
      result.log.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
  }

  pvrnn::round_to_float(params);
  round_to_float(posts);
  result.checkpoint.params = std::move(params);
  const std::size_t n = std::min(tc.log_tail, result.log.size());
  for (std::size_t i = result.log.size() - n; i < result.log.size(); ++i)
    result.checkpoint.log_tail.push_back(result.log[i].to_json());
  return result;
}

}  // namespace detail

inline TrainResult train(const std::vector<std::vector<Vec>>& observations,
                         const pvrnn::NetworkConfig& config, pvrnn::NetworkParams params,
                         const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  return detail::train_impl(observations, config, std::move(params), nullptr, tc, on_epoch);
}

// Continue from a checkpoint, keeping its posteriors. The optimizer state starts fresh.
inline TrainResult train(const std::vector<std::vector<Vec>>& observations, const Checkpoint& from,
                         const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  return detail::train_impl(observations, from.config, from.params, &from.posteriors, tc, on_epoch);
}

inline TrainResult train(const datagen::Dataset& ds, const pvrnn::NetworkConfig& config,
                         pvrnn::NetworkParams params, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  return train(dataset_observations(ds), config, std::move(params), tc, on_epoch);
}

// Free energy of a checkpoint on its training data for one epoch's noise draw,
// without updating anything.
inline double evaluate_free_energy(const Checkpoint& ckpt,
                                   const std::vector<std::vector<Vec>>& observations,
                                   const TrainConfig& tc, std::size_t epoch) {
  const auto& config = ckpt.config;
  const auto targets = encode_sequences(config, observations);
  if (observations.size() != ckpt.posteriors.size()) {
    throw std::invalid_argument("evaluate_free_energy: sequence count differs from checkpoint");
  }
  double total = 0.0;
  for (std::size_t s = 0; s < observations.size(); ++s) {
    const std::size_t T = observations[s].size();
    pvrnn::Tape tape;
    auto bound = pvrnn::bind_params(tape, ckpt.params, false);
    pvrnn::RolloutInputs in;
    in.steps = T;
    in.w = tc.w.value_or(config.w_train);
    in.beta = tc.beta.value_or(config.beta);
    in.eps = detail::epoch_noise(config, tc.seed, epoch, s, T);
    for (std::size_t l = 0; l < config.num_layers(); ++l) {
      in.a_mu.push_back(ckpt.posteriors[s].a_mu[l].values());
      in.a_sigma.push_back(ckpt.posteriors[s].a_sigma[l].values());
    }
    in.targets = targets[s];
    in.adaptive_trainable = false;
    auto g = pvrnn::build_rollout(tape, bound, config, in);
    total += tape.scalar(g.free_energy);
  }
  return total;
}

}  // namespace kinaero::training
