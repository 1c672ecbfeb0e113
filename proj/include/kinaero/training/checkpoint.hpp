#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinaero/pvrnn/config.hpp"
#include "kinaero/pvrnn/params.hpp"
#include "kinaero/pvrnn/posterior.hpp"

namespace kinaero::training {

using grad::Tensor;
using pvrnn::NetworkConfig;
using pvrnn::NetworkParams;
using pvrnn::SequencePosterior;

inline constexpr int kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  NetworkConfig config;
  NetworkParams params;
  std::vector<SequencePosterior> posteriors;  // one per training sequence
  std::vector<nlohmann::json> log_tail;
  int version = kCheckpointVersion;
};

// Round posteriors to the stored precision, as round_to_float does for weights.
inline void round_to_float(std::vector<SequencePosterior>& posts) {
  for (auto& p : posts)
    for (auto* group : {&p.a_mu, &p.a_sigma})
      for (Tensor& t : *group)
        for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

namespace detail {

inline void put_f32(std::vector<char>& buf, double v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char b[4];
  std::memcpy(b, &bits, 4);
  buf.insert(buf.end(), b, b + 4);
}

inline double get_f32(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return static_cast<double>(std::bit_cast<float>(bits));
}

inline void append_tensor(std::vector<char>& buf, nlohmann::json& table, const std::string& name,
                          const Tensor& t) {
  table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", buf.size()}});
  for (double v : t.data()) put_f32(buf, v);
}

inline std::vector<char> read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw CheckpointError("missing " + p.filename().string());
  return {std::istreambuf_iterator<char>(f), {}};
}

inline void fill_tensor(Tensor& t, const nlohmann::json& entry, const std::vector<char>& buf,
                        const std::string& file) {
  const auto shape = entry.at("shape").get<grad::Shape>();
  if (shape != t.shape()) {
    throw CheckpointError("tensor " + entry.at("name").get<std::string>() + " has wrong shape");
  }
  const auto off = entry.at("offset").get<std::size_t>();
  if (off + 4 * t.size() > buf.size()) {
    throw CheckpointError("corrupt checkpoint: " + file + " is truncated");
  }
  for (std::size_t i = 0; i < t.size(); ++i) t.values()[i] = get_f32(buf.data() + off + 4 * i);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<char> weights, posts;
  nlohmann::json wtable = nlohmann::json::array(), ptable = nlohmann::json::array();
  ckpt.params.for_each([&](const std::string& name, const Tensor& t) {
    detail::append_tensor(weights, wtable, name, t);
  });
  for (std::size_t s = 0; s < ckpt.posteriors.size(); ++s) {
    const SequencePosterior& p = ckpt.posteriors[s];
    for (std::size_t l = 0; l < p.a_mu.size(); ++l) {
      const std::string base = "seq" + std::to_string(s) + ".layer" + std::to_string(l + 1) + ".";
      detail::append_tensor(posts, ptable, base + "A_mu", p.a_mu[l]);
      detail::append_tensor(posts, ptable, base + "A_sigma", p.a_sigma[l]);
    }
  }
  nlohmann::json m;
  m["format_version"] = ckpt.version;
  m["config"] = ckpt.config;
  m["dtype"] = "float32-le";
  m["tensors"] = wtable;
  m["weights_bytes"] = weights.size();
  m["n_sequences"] = ckpt.posteriors.size();
  m["posteriors"] = ptable;
  m["posteriors_bytes"] = posts.size();
  m["log_tail"] = ckpt.log_tail;
  auto write = [&](const std::string& name, const char* data, std::size_t n) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    f.write(data, static_cast<std::streamsize>(n));
    if (!f) throw CheckpointError("cannot write " + (dir / name).string());
  };
  write("weights.bin", weights.data(), weights.size());
  write("posteriors.bin", posts.data(), posts.size());
  const std::string text = m.dump(2) + "\n";
  write("manifest.json", text.data(), text.size());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json m;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw CheckpointError("missing manifest.json in " + dir.string());
    try {
      m = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("corrupt manifest: ") + e.what());
    }
  }
  Checkpoint c;
  try {
    c.version = m.at("format_version").get<int>();
    if (c.version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
    }
    c.config = m.at("config").get<NetworkConfig>();
    const auto weights = detail::read_all(dir / "weights.bin");
    const auto posts = detail::read_all(dir / "posteriors.bin");
    if (weights.size() != m.at("weights_bytes").get<std::size_t>()) {
      throw CheckpointError("corrupt checkpoint: weights.bin size mismatch");
    }
    if (posts.size() != m.at("posteriors_bytes").get<std::size_t>()) {
      throw CheckpointError("corrupt checkpoint: posteriors.bin size mismatch");
    }
    c.params = pvrnn::zero_params(c.config);
    const auto& wt = m.at("tensors");
    std::size_t k = 0;
    c.params.for_each([&](const std::string& name, Tensor& t) {
      if (k >= wt.size() || wt[k].at("name").get<std::string>() != name) {
        throw CheckpointError("manifest tensor table does not match config at " + name);
      }
      detail::fill_tensor(t, wt[k++], weights, "weights.bin");
    });
    if (k != wt.size()) throw CheckpointError("manifest lists extra tensors");
    const auto& pt = m.at("posteriors");
    const auto n_seq = m.at("n_sequences").get<std::size_t>();
    const std::size_t L = c.config.num_layers();
    if (pt.size() != n_seq * 2 * L) throw CheckpointError("posterior table size mismatch");
    k = 0;
    for (std::size_t s = 0; s < n_seq; ++s) {
      const std::size_t steps = pt[k].at("shape").at(0).get<std::size_t>();
      SequencePosterior p = SequencePosterior::zeros(c.config, steps);
      for (std::size_t l = 0; l < L; ++l) {
        detail::fill_tensor(p.a_mu[l], pt[k++], posts, "posteriors.bin");
        detail::fill_tensor(p.a_sigma[l], pt[k++], posts, "posteriors.bin");
      }
      c.posteriors.push_back(std::move(p));
    }
    if (m.contains("log_tail"))
      for (const auto& r : m["log_tail"]) c.log_tail.push_back(r);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt manifest: ") + e.what());
  } catch (const pvrnn::ConfigError& e) {
    throw CheckpointError(std::string("corrupt manifest: ") + e.what());
  }
  return c;
}

}  // namespace kinaero::training
