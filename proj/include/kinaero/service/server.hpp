#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "kinaero/harness/classifier.hpp"
#include "kinaero/harness/session.hpp"
#include "kinaero/service/run_config.hpp"

namespace kinaero::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

// Client inputs, sampled once per control tick.
struct InputState {
  robot::Joint4 force{};
  std::array<std::optional<double>, robot::kJoints> grab{};
  std::optional<double> set_w;
};

// Applies one client message to the input state. Returns an error text for
// malformed or unknown messages.
inline std::optional<std::string> apply_message(const std::string& text, InputState& in, double joint_limit) {
  json m;
  try {
    m = json::parse(text);
  } catch (const json::exception&) {
    return "malformed JSON";
  }
  if (!m.is_object() || !m.contains("type") || !m["type"].is_string()) return "message needs a string 'type'";
  const std::string type = m["type"];
  auto joint = [&]() -> std::optional<std::size_t> {
    if (!m.contains("joint") || !m["joint"].is_number_integer()) return std::nullopt;
    const auto j = m["joint"].get<long long>();
    if (j < 0 || j >= static_cast<long long>(robot::kJoints)) return std::nullopt;
    return static_cast<std::size_t>(j);
  };
  auto number = [&](const char* key) -> std::optional<double> {
    if (!m.contains(key) || !m[key].is_number()) return std::nullopt;
    const double v = m[key].get<double>();
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  };
  if (type == "force") {
    const auto j = joint();
    const auto v = number("value");
    if (!j || !v) return "force needs joint 0-3 and a finite value";
    in.force[*j] = *v;
  } else if (type == "grab") {
    const auto j = joint();
    const auto a = number("angle");
    if (!j || !a) return "grab needs joint 0-3 and a finite angle";
    in.grab[*j] = std::clamp(*a, -joint_limit, joint_limit);
  } else if (type == "release") {
    const auto j = joint();
    if (!j) return "release needs joint 0-3";
    in.grab[*j].reset();
    in.force[*j] = 0.0;
  } else if (type == "set_w") {
    const auto v = number("value");
    if (!v || !(*v > 0.0)) return "set_w needs a value > 0";
    in.set_w = *v;
  } else {
    return "unknown message type '" + type + "'";
  }
  return std::nullopt;
}

// Per-client token bucket.
class RateLimiter {
 public:
  explicit RateLimiter(double per_second)
      : rate_(per_second), tokens_(per_second), last_(std::chrono::steady_clock::now()) {}

  bool allow(std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now()) {
    const double dt = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(rate_, tokens_ + dt * rate_);
    if (tokens_ < 1.0) return false;
    tokens_ -= 1.0;
    return true;
  }

 private:
  double rate_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

struct TickStats {
  std::size_t ticks = 0;
  std::size_t over_budget = 0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;

  double within_budget() const {
    return ticks ? 1.0 - static_cast<double>(over_budget) / static_cast<double>(ticks) : 1.0;
  }
};

inline TickStats tick_stats(std::vector<double> ms, double budget_ms) {
  TickStats s;
  s.ticks = ms.size();
  if (ms.empty()) return s;
  s.over_budget = static_cast<std::size_t>(std::count_if(ms.begin(), ms.end(), [&](double v) { return v > budget_ms; }));
  std::sort(ms.begin(), ms.end());
  auto q = [&](double p) { return ms[std::min(ms.size() - 1, static_cast<std::size_t>(p * static_cast<double>(ms.size())))]; };
  s.p50_ms = q(0.5);
  s.p99_ms = q(0.99);
  s.max_ms = ms.back();
  return s;
}

class Server;

class ClientSession : public std::enable_shared_from_this<ClientSession> {
 public:
  ClientSession(tcp::socket socket, Server& server, double rate_limit)
      : ws_(std::move(socket)), server_(server), limiter_(rate_limit) {}

  void start();
  void send(std::shared_ptr<const std::string> msg);
  std::size_t dropped() const { return dropped_; }

 private:
  void read();
  void write_next();

  websocket::stream<beast::tcp_stream> ws_;
  Server& server_;
  RateLimiter limiter_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  std::size_t dropped_ = 0;
  bool open_ = false;
};

// Plant and inference loop at a fixed tick, websocket fan-out of `state`
// messages and a single input mailbox fed by every client.
class Server {
 public:
  Server(pvrnn::NetworkParams params, pvrnn::NetworkConfig config, harness::SessionConfig session,
         ServeSettings settings, std::filesystem::path log_path = {})
      : session_(params, config, session),
        settings_(settings),
        joint_limit_(session.robot.plant.limit),
        acceptor_(io_),
        broadcast_timer_(io_),
        log_path_(std::move(log_path)) {}

  ~Server() { stop(); }

  void start() {
    tcp::endpoint ep(asio::ip::make_address("127.0.0.1"), static_cast<unsigned short>(settings_.port));
    acceptor_.open(ep.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    if (!log_path_.empty()) log_.open(log_path_);
    accept();
    schedule_broadcast();
    io_thread_ = std::thread([this] { io_.run(); });
    loop_thread_ = std::thread([this] { control_loop(); });
  }

  int port() const { return port_; }

  // Blocks until the loop ends (max_ticks reached or stop()).
  void wait() {
    if (loop_thread_.joinable()) loop_thread_.join();
  }

  // Safe from a signal handler; wait() returns after the current tick.
  void request_stop() { running_ = false; }

  void stop() {
    running_ = false;
    if (loop_thread_.joinable()) loop_thread_.join();
    asio::post(io_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      broadcast_timer_.cancel();
    });
    io_.stop();
    if (io_thread_.joinable()) io_thread_.join();
  }

  TickStats stats() const {
    std::lock_guard lock(stats_mutex_);
    return tick_stats(tick_ms_, static_cast<double>(settings_.tick_ms));
  }

  std::size_t ticks() const { return ticks_done_; }

  // Called from client sessions on the IO thread.
  void on_message(const std::string& text, ClientSession& from) {
    std::optional<std::string> err;
    {
      std::lock_guard lock(input_mutex_);
      err = apply_message(text, inputs_, joint_limit_);
    }
    if (err) from.send(std::make_shared<const std::string>(json{{"type", "error"}, {"message", *err}}.dump()));
  }

  void on_open(const std::shared_ptr<ClientSession>& c) { clients_.push_back(c); }

 private:
  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto c = std::make_shared<ClientSession>(std::move(socket), *this, settings_.rate_limit);
      c->start();
      accept();
    });
  }

  void schedule_broadcast() {
    broadcast_timer_.expires_after(std::chrono::microseconds(static_cast<long long>(1e6 / settings_.broadcast_hz)));
    broadcast_timer_.async_wait([this](beast::error_code ec) {
      if (ec) return;
      std::shared_ptr<const std::string> msg;
      {
        std::lock_guard lock(state_mutex_);
        msg = latest_state_;
      }
      if (msg) {
        std::erase_if(clients_, [](const std::weak_ptr<ClientSession>& w) { return w.expired(); });
        for (auto& w : clients_)
          if (auto c = w.lock()) c->send(msg);
      }
      schedule_broadcast();
    });
  }

  robot::Joint4 external_torque(const InputState& in, const robot::PlantState& s) const {
    robot::Joint4 tau = in.force;
    for (std::size_t j = 0; j < robot::kJoints; ++j)
      if (in.grab[j]) {
        const double pull = settings_.grab_gain * (*in.grab[j] - s.theta[j]) - settings_.grab_damping * s.velocity[j];
        tau[j] += std::clamp(pull, -settings_.grab_cap, settings_.grab_cap);
      }
    return tau;
  }

  void control_loop() {
    using clock = std::chrono::steady_clock;
    const auto tick = std::chrono::milliseconds(settings_.tick_ms);
    auto next = clock::now();
    std::deque<harness::Posture> recent;
    while (running_ && (settings_.max_ticks == 0 || ticks_done_ < settings_.max_ticks)) {
      InputState in;
      {
        std::lock_guard lock(input_mutex_);
        in = inputs_;
        inputs_.set_w.reset();
      }
      if (in.set_w) session_.set_w(*in.set_w);
      const auto t0 = clock::now();
      const harness::TickRecord rec =
          session_.tick_with([&](double, const robot::PlantState& s) { return external_torque(in, s); });
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();

      harness::Posture p{};
      std::copy(rec.observed.begin(), rec.observed.end(), p.begin());
      recent.push_back(p);
      if (recent.size() > harness::kCycleLength) recent.pop_front();
      std::string pattern;
      if (recent.size() == harness::kCycleLength) {
        const std::vector<harness::Posture> win(recent.begin(), recent.end());
        pattern = std::string(1, datagen::pattern_letter(harness::classify_pattern(win).pattern));
      }
      const auto& theta = session_.plant().theta;
      robot::Joint4 pred{};
      for (std::size_t j = 0; j < robot::kJoints; ++j) pred[j] = datagen::normalized_to_rad(rec.diag.prediction[j]);
      json state = {{"type", "state"},      {"t", rec.t},
                    {"theta", theta},       {"theta_pred", pred},
                    {"e_tilde", rec.e_tilde}, {"pred_err", rec.diag.e_window},
                    {"kld", rec.diag.r_window}, {"w_i", rec.w},
                    {"pattern", pattern},   {"tau_ext", rec.tau_ext},
                    {"tick_ms", ms}};
      {
        std::lock_guard lock(state_mutex_);
        latest_state_ = std::make_shared<const std::string>(state.dump());
      }
      {
        std::lock_guard lock(stats_mutex_);
        tick_ms_.push_back(ms);
      }
      if (log_) log_ << rec.to_json().dump() << "\n";
      ++ticks_done_;
      next += tick;
      const auto now = clock::now();
      if (next < now) next = now;  // overran: no catch-up burst
      std::this_thread::sleep_until(next);
    }
    if (log_) log_.close();
    running_ = false;
  }

  harness::Session session_;
  ServeSettings settings_;
  double joint_limit_;
  asio::io_context io_;
  tcp::acceptor acceptor_;
  asio::steady_timer broadcast_timer_;
  std::vector<std::weak_ptr<ClientSession>> clients_;  // IO thread only
  std::thread io_thread_, loop_thread_;
  std::atomic<bool> running_{true};
  std::atomic<std::size_t> ticks_done_{0};
  int port_ = 0;
  std::mutex input_mutex_;
  InputState inputs_;
  std::mutex state_mutex_;
  std::shared_ptr<const std::string> latest_state_;
  mutable std::mutex stats_mutex_;
  std::vector<double> tick_ms_;
  std::filesystem::path log_path_;
  std::ofstream log_;
};

inline void ClientSession::start() {
  auto self = shared_from_this();
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept([self](beast::error_code ec) {
    if (ec) return;
    self->open_ = true;
    self->server_.on_open(self);
    self->read();
  });
}

inline void ClientSession::read() {
  auto self = shared_from_this();
  ws_.async_read(buffer_, [self](beast::error_code ec, std::size_t) {
    if (ec) {
      self->open_ = false;
      return;
    }
    const std::string text = beast::buffers_to_string(self->buffer_.data());
    self->buffer_.consume(self->buffer_.size());
    if (self->limiter_.allow())
      self->server_.on_message(text, *self);
    else
      ++self->dropped_;
    self->read();
  });
}

// Slow clients lose frames instead of growing the queue.
inline void ClientSession::send(std::shared_ptr<const std::string> msg) {
  if (!open_) return;
  if (queue_.size() >= 8) {
    ++dropped_;
    return;
  }
  queue_.push_back(std::move(msg));
  if (queue_.size() == 1) write_next();
}

inline void ClientSession::write_next() {
  auto self = shared_from_this();
  ws_.text(true);
  ws_.async_write(asio::buffer(*queue_.front()), [self](beast::error_code ec, std::size_t) {
    self->queue_.pop_front();
    if (ec) {
      self->open_ = false;
      self->queue_.clear();
      return;
    }
    if (!self->queue_.empty()) self->write_next();
  });
}

}  // namespace kinaero::service
