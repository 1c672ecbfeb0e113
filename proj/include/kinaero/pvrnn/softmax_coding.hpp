#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "kinaero/pvrnn/config.hpp"

namespace kinaero::pvrnn {

// Per-channel probability vectors, flattened channel-major
// (channel i occupies [i * n_soft, (i + 1) * n_soft)).
struct SoftmaxFrame {
  std::size_t channels = 0;
  std::size_t n_soft = 0;
  std::vector<double> probs;

  std::span<const double> channel(std::size_t i) const {
    return std::span<const double>(probs).subspan(i * n_soft, n_soft);
  }
};

enum class RangePolicy { Clamp, Reject };

// Gaussian-kernel population code for one normalised scalar.
class SoftmaxCoder {
 public:
  explicit SoftmaxCoder(const NetworkConfig& config)
      : n_(config.n_soft),
        sigma_(config.softmax_sigma),
        lo_(config.value_lo),
        hi_(config.value_hi),
        centers_(config.n_soft) {
    if (n_ < 2) throw ConfigError("n_soft must be >= 2");
    const double a = lo_ - config.softmax_margin;
    const double b = hi_ + config.softmax_margin;
    for (std::size_t j = 0; j < n_; ++j) {
      centers_[j] = a + (b - a) * static_cast<double>(j) / static_cast<double>(n_ - 1);
    }
  }

  std::size_t bins() const { return n_; }
  const std::vector<double>& centers() const { return centers_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }

  std::vector<double> encode(double value, RangePolicy policy = RangePolicy::Clamp) const {
    std::vector<double> out(n_);
    encode_into(value, out, policy);
    return out;
  }

  void encode_into(double value, std::span<double> out,
                   RangePolicy policy = RangePolicy::Clamp) const {
    if (!std::isfinite(value)) throw std::invalid_argument("encode: non-finite value");
    if (value < lo_ || value > hi_) {
      if (policy == RangePolicy::Reject) throw std::out_of_range("encode: value outside range");
      value = std::clamp(value, lo_, hi_);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double d = value - centers_[j];
      out[j] = std::exp(-d * d / (2.0 * sigma_ * sigma_));
      z += out[j];
    }
    for (std::size_t j = 0; j < n_; ++j) out[j] /= z;
  }

  double decode(std::span<const double> p) const {
    if (p.size() != n_) throw std::invalid_argument("decode: wrong bin count");
    double total = 0.0, mean = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      if (p[j] < 0.0) throw std::invalid_argument("decode: negative probability");
      total += p[j];
      mean += p[j] * centers_[j];
    }
    if (std::abs(total - 1.0) > 1e-4) throw std::invalid_argument("decode: not normalised");
    return mean;
  }

  SoftmaxFrame encode_frame(std::span<const double> values,
                            RangePolicy policy = RangePolicy::Clamp) const {
    SoftmaxFrame f{values.size(), n_, std::vector<double>(values.size() * n_)};
    for (std::size_t i = 0; i < values.size(); ++i) {
      encode_into(values[i], std::span<double>(f.probs).subspan(i * n_, n_), policy);
    }
    return f;
  }

  std::vector<double> decode_frame(std::span<const double> probs) const {
    if (probs.size() % n_ != 0) throw std::invalid_argument("decode_frame: size mismatch");
    std::vector<double> out(probs.size() / n_);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = decode(probs.subspan(i * n_, n_));
    return out;
  }

 private:
  std::size_t n_;
  double sigma_;
  double lo_;
  double hi_;
  std::vector<double> centers_;
};

}  // namespace kinaero::pvrnn
