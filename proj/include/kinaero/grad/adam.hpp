#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "kinaero/grad/tensor.hpp"

namespace kinaero::grad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One trainable array and its gradient, as seen by the optimizer.
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
};

// Moment accumulators for a fixed list of parameter arrays. The slot layout
// is fixed by the first step; later steps must present the same sizes.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {
    if (!(config_.lr > 0.0)) throw std::invalid_argument("adam learning rate must be > 0");
  }

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam learning rate must be > 0");
    config_.lr = lr;
  }
  std::int64_t step_count() const { return step_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

  void reset() {
    m_.clear();
    v_.clear();
    step_ = 0;
  }

  void step(std::span<const ParamSlot> slots) {
    if (m_.empty()) {
      for (const ParamSlot& s : slots) {
        m_.emplace_back(s.value.size(), 0.0);
        v_.emplace_back(s.value.size(), 0.0);
      }
    }
    if (slots.size() != m_.size()) throw ShapeError("adam: parameter count changed");
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (slots[k].value.size() != m_[k].size() || slots[k].grad.size() != m_[k].size()) {
        throw ShapeError("adam: parameter/gradient size mismatch");
      }
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < slots.size(); ++k) {
      std::span<double> x = slots[k].value;
      std::span<const double> g = slots[k].grad;
      std::vector<double>& m = m_[k];
      std::vector<double>& v = v_[k];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        x[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

inline double global_norm(std::span<const std::span<const double>> grads) {
  double acc = 0.0;
  for (auto g : grads)
    for (double v : g) acc += v * v;
  return std::sqrt(acc);
}

// Rescale all gradients in place so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_global_norm(std::span<const std::span<double>> grads, double max_norm) {
  double acc = 0.0;
  for (auto g : grads)
    for (double v : g) acc += v * v;
  const double norm = std::sqrt(acc);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto g : grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

}  // namespace kinaero::grad
