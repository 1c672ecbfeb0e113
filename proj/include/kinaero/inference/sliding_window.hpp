#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/grad/adam.hpp"
#include "kinaero/pvrnn/posterior.hpp"
#include "kinaero/pvrnn/rollout.hpp"
#include "kinaero/pvrnn/softmax_coding.hpp"
#include "kinaero/util/random.hpp"

namespace kinaero::inference {

using pvrnn::NetworkConfig;
using pvrnn::NetworkParams;
using pvrnn::NetworkState;
using pvrnn::Vec;

struct InferenceConfig {
  double w = 0.01;               // meta-prior w^i
  std::size_t epochs = 15;       // inner iterations per step
  double lr = 0.05;              // Adam step size for A
  std::size_t window = 20;       // t_w
  std::uint64_t seed = 1;
  bool sample_prediction = false; // true draws the t + 1 prediction from the prior

  void validate() const {
    if (!(w > 0.0)) throw std::invalid_argument("inference: w must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("inference: lr must be > 0");
    if (window < 1) throw std::invalid_argument("inference: window must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const InferenceConfig& c) {
  j = {{"w", c.w}, {"epochs", c.epochs}, {"lr", c.lr}, {"window", c.window}, {"seed", c.seed},
       {"sample_prediction", c.sample_prediction}};
}

inline void from_json(const nlohmann::json& j, InferenceConfig& c) {
  c.w = j.value("w", c.w);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.window = j.value("window", c.window);
  c.seed = j.value("seed", c.seed);
  c.sample_prediction = j.value("sample_prediction", c.sample_prediction);
}

struct StepDiagnostics {
  std::size_t t = 0;              // index of the newest observed step (1-based)
  Vec prediction;                 // decoded output for t + 1
  double e_window = 0.0;          // sum of e over the window
  std::vector<double> r_window;   // per layer, unweighted sum over the window
  double free_energy = 0.0;       // F^int
  double e_last = 0.0;            // e at the newest step
  std::size_t resets = 0;         // non-finite recoveries during this step
};

// Error regression over a sliding past window: only the window's adaptive
// variables are optimised; weights are read-only.
class SlidingWindow {
 public:
  SlidingWindow(NetworkParams params, NetworkConfig config, InferenceConfig cfg)
      : params_(std::move(params)),
        config_(std::move(config)),
        cfg_(cfg),
        coder_(config_),
        frozen_(NetworkState::zeros(config_)),
        rng_(mix_seed(cfg.seed, 0x5157)) {
    config_.validate();
    cfg_.validate();
  }

  const NetworkConfig& config() const { return config_; }
  const NetworkParams& params() const { return params_; }
  const InferenceConfig& settings() const { return cfg_; }
  void set_w(double w) {
    if (!(w > 0.0)) throw std::invalid_argument("inference: w must be > 0");
    cfg_.w = w;
  }

  std::size_t size() const { return steps_.size(); }
  bool full() const { return steps_.size() == cfg_.window; }
  std::size_t current_t() const { return frozen_t_ + steps_.size(); }
  std::size_t frozen_t() const { return frozen_t_; }
  const NetworkState& frozen_state() const { return frozen_; }

  // Posterior parameters of window step k (0 = oldest), per layer.
  const std::vector<Vec>& a_mu(std::size_t k) const { return steps_.at(k).a_mu; }
  const std::vector<Vec>& a_sigma(std::size_t k) const { return steps_.at(k).a_sigma; }
  const Vec& observation(std::size_t k) const { return steps_.at(k).raw; }

  // Append an observation with prior-matching A, sliding first if full.
  void append(const Vec& obs) {
    if (obs.size() != config_.output_dim) {
      throw grad::ShapeError("inference: observation has " + std::to_string(obs.size()) +
                             " values, network expects " + std::to_string(config_.output_dim));
    }
    if (full()) slide_window();
    Slot s;
    s.raw = obs;
    s.target = coder_.encode_frame(obs).probs;
    const bool first = current_t() == 0;
    const NetworkState prev = steps_.empty() ? frozen_ : state_after(steps_.size());
    for (std::size_t l = 0; l < config_.num_layers(); ++l) {
      const auto prior = pvrnn::compute_prior(prev.d[l], params_.layers[l], first,
                                              config_.log_sigma_min, config_.log_sigma_max);
      Vec am(prior.mu.size()), as(prior.mu.size());
      for (std::size_t i = 0; i < am.size(); ++i) {
        am[i] = pvrnn::adaptive_mu_for(prior.mu[i]);
        as[i] = pvrnn::adaptive_sigma_for(prior.sigma[i]);
      }
      s.a_mu.push_back(std::move(am));
      s.a_sigma.push_back(std::move(as));
    }
    steps_.push_back(std::move(s));
  }

  // Finalise the oldest step into the frozen pre-window state.
  void slide_window() {
    if (!full()) throw std::logic_error("slide_window: window is not full");
    frozen_ = state_after(1);
    ++frozen_t_;
    steps_.pop_front();
  }

  // `epochs` Adam iterations on the window's A, then diagnostics at the result.
  StepDiagnostics optimize() {
    if (steps_.empty()) throw std::logic_error("optimize: empty window");
    StepDiagnostics diag;
    diag.t = current_t();
    Graph& g = graph();
    load(g);
    grad::AdamState adam(grad::AdamConfig{cfg_.lr});
    const std::size_t L = config_.num_layers();
    for (std::size_t it = 0; it < cfg_.epochs; ++it) {
      try {
        g.tape->forward();
        g.tape->backward(g.roll.free_energy);
      } catch (const grad::NonFiniteError&) {
        reset_newest();
        ++diag.resets;
        load(g);
        continue;
      }
      std::vector<grad::ParamSlot> slots;
      std::vector<Vec> grads;
      grads.reserve(2 * L);
      for (std::size_t l = 0; l < L; ++l) {
        const auto gm = g.tape->grad(g.roll.a_mu[l]);
        const auto gs = g.tape->grad(g.roll.a_sigma[l]);
        grads.emplace_back(gm.begin(), gm.end());
        grads.emplace_back(gs.begin(), gs.end());
      }
      for (std::size_t l = 0; l < L; ++l) {
        slots.push_back({g.a_mu[l], grads[2 * l]});
        slots.push_back({g.a_sigma[l], grads[2 * l + 1]});
      }
      adam.step(slots);
      bool finite = true;
      for (const Vec& v : g.a_mu)
        for (double x : v) finite = finite && std::isfinite(x);
      for (const Vec& v : g.a_sigma)
        for (double x : v) finite = finite && std::isfinite(x);
      if (!finite) {
        reset_newest();
        ++diag.resets;
        load(g);
        continue;
      }
      for (std::size_t l = 0; l < L; ++l) {
        g.tape->set_value(g.roll.a_mu[l], g.a_mu[l]);
        g.tape->set_value(g.roll.a_sigma[l], g.a_sigma[l]);
      }
    }
    store(g);
    try {
      g.tape->forward();
    } catch (const grad::NonFiniteError&) {
      reset_newest();
      ++diag.resets;
      load(g);
      g.tape->forward();
    }
    diag.e_window = g.tape->scalar(g.roll.e_total);
    diag.e_last = g.tape->scalar(g.roll.e.back());
    for (std::size_t l = 0; l < L; ++l) diag.r_window.push_back(g.tape->scalar(g.roll.r_total[l]));
    diag.free_energy = g.tape->scalar(g.roll.free_energy);
    return diag;
  }

  // One-step-ahead output from the prior at the end of the window.
  Vec predict() {
    const NetworkState s = steps_.empty() ? frozen_ : state_after(steps_.size());
    const pvrnn::LatentPicker sample = [&](std::size_t, const pvrnn::GaussianStats& p) {
      if (!cfg_.sample_prediction) return p.mu;
      return pvrnn::sample_gaussian(p.mu, p.sigma, standard_normals(rng_, p.mu.size()));
    };
    const auto rec = pvrnn::network_step(params_, config_, s, current_t() == 0, sample);
    return coder_.decode_frame(rec.probs);
  }

  StepDiagnostics infer_step(const Vec& obs) {
    append(obs);
    StepDiagnostics d = optimize();
    d.prediction = predict();
    return d;
  }

 private:
  struct Slot {
    Vec raw, target;
    std::vector<Vec> a_mu, a_sigma;  // per layer
  };

  struct Graph {
    std::unique_ptr<pvrnn::Tape> tape;
    pvrnn::BoundParams bound;
    pvrnn::RolloutGraph roll;
    std::size_t len = 0;
    bool starts_at_one = false;
    double w = 0.0;
    std::vector<Vec> a_mu, a_sigma;  // flat per layer, working copy

    // The tape is a cache; copies start without one.
    Graph() = default;
    Graph(const Graph&) {}
    Graph& operator=(const Graph&) {
      tape.reset();
      return *this;
    }
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;
  };

  pvrnn::RolloutInputs inputs(std::size_t n) const {
    pvrnn::RolloutInputs in;
    in.steps = n;
    in.first_t = frozen_t_ + 1;
    in.initial = frozen_;
    in.w = cfg_.w;
    in.beta = config_.beta;
    for (std::size_t l = 0; l < config_.num_layers(); ++l) {
      Vec am, as;
      for (std::size_t k = 0; k < n; ++k) {
        am.insert(am.end(), steps_[k].a_mu[l].begin(), steps_[k].a_mu[l].end());
        as.insert(as.end(), steps_[k].a_sigma[l].begin(), steps_[k].a_sigma[l].end());
      }
      in.a_mu.push_back(std::move(am));
      in.a_sigma.push_back(std::move(as));
    }
    return in;
  }

  // Deterministic (mean) state after the first n window steps.
  NetworkState state_after(std::size_t n) const {
    NetworkState s = frozen_;
    for (std::size_t k = 0; k < n; ++k) {
      const bool first = frozen_t_ + k == 0;
      const pvrnn::LatentPicker mean = [&](std::size_t l, const pvrnn::GaussianStats&) {
        Vec z(steps_[k].a_mu[l].size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::tanh(steps_[k].a_mu[l][i]);
        return z;
      };
      s = pvrnn::network_step(params_, config_, s, first, mean).state;
    }
    return s;
  }

  Graph& graph() {
    const std::size_t n = steps_.size();
    const bool at_one = frozen_t_ == 0;
    if (!graph_.tape || graph_.len != n || graph_.starts_at_one != at_one || graph_.w != cfg_.w) {
      graph_ = Graph{};
      graph_.tape = std::make_unique<pvrnn::Tape>();
      graph_.bound = pvrnn::bind_params(*graph_.tape, params_, false);
      auto in = inputs(n);
      for (const Slot& s : steps_) in.targets.insert(in.targets.end(), s.target.begin(), s.target.end());
      graph_.roll = pvrnn::build_rollout(*graph_.tape, graph_.bound, config_, in);
      graph_.len = n;
      graph_.starts_at_one = at_one;
      graph_.w = cfg_.w;
    }
    return graph_;
  }

  // Push the current window contents into the cached tape.
  void load(Graph& g) {
    auto in = inputs(g.len);
    Vec targets;
    for (const Slot& s : steps_) targets.insert(targets.end(), s.target.begin(), s.target.end());
    const std::size_t units = config_.output_units();
    Vec neg(g.len, 0.0);
    for (std::size_t t = 0; t < g.len; ++t)
      for (std::size_t k = 0; k < units; ++k) {
        const double q = targets[t * units + k];
        if (q > 0.0) neg[t] += q * std::log(q);
      }
    g.tape->set_value(g.roll.targets, targets);
    g.tape->set_value(g.roll.negentropy, neg);
    for (std::size_t l = 0; l < config_.num_layers(); ++l) {
      g.tape->set_value(g.roll.a_mu[l], in.a_mu[l]);
      g.tape->set_value(g.roll.a_sigma[l], in.a_sigma[l]);
      g.tape->set_value(g.roll.init_h[l], frozen_.h[l]);
      g.tape->set_value(g.roll.init_d[l], frozen_.d[l]);
    }
    g.a_mu = std::move(in.a_mu);
    g.a_sigma = std::move(in.a_sigma);
  }

  void store(const Graph& g) {
    for (std::size_t l = 0; l < config_.num_layers(); ++l) {
      const std::size_t z = config_.layers[l].num_z;
      for (std::size_t k = 0; k < g.len; ++k)
        for (std::size_t i = 0; i < z; ++i) {
          steps_[k].a_mu[l][i] = g.a_mu[l][k * z + i];
          steps_[k].a_sigma[l][i] = g.a_sigma[l][k * z + i];
        }
    }
  }

  // Re-appending recomputes prior-matching values for the newest step.
  void reset_newest() {
    const Vec raw = steps_.back().raw;
    steps_.pop_back();
    append(raw);
  }

  NetworkParams params_;
  NetworkConfig config_;
  InferenceConfig cfg_;
  pvrnn::SoftmaxCoder coder_;
  NetworkState frozen_;
  std::size_t frozen_t_ = 0;
  std::deque<Slot> steps_;
  std::mt19937_64 rng_;
  Graph graph_;
};

// Window filled with warmup observations at prior-matching A; evicted steps
// become the frozen pre-window state of a prior-mean rollout.
inline SlidingWindow init_window(const NetworkParams& params, const NetworkConfig& config,
                                 const InferenceConfig& cfg, const std::vector<Vec>& warmup) {
  if (warmup.empty()) throw std::invalid_argument("init_window: need at least one observation");
  SlidingWindow w(params, config, cfg);
  for (const Vec& obs : warmup) w.append(obs);
  return w;
}

// One telemetry line: {t, theta_obs, theta_pred, e_window, r_l1.., F_int, w_i, lag}.
inline nlohmann::json telemetry_record(const StepDiagnostics& d, const Vec& observed, double w,
                                       std::size_t lag) {
  nlohmann::json j;
  j["t"] = d.t;
  j["theta_obs"] = observed;
  j["theta_pred"] = d.prediction;
  j["e_window"] = d.e_window;
  for (std::size_t l = 0; l < d.r_window.size(); ++l) j["r_l" + std::to_string(l + 1)] = d.r_window[l];
  j["F_int"] = d.free_energy;
  j["w_i"] = w;
  j["lag"] = lag;
  return j;
}

}  // namespace kinaero::inference
