#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "kinaero/service/run_config.hpp"
#include "kinaero/service/server.hpp"

namespace sv = kinaero::service;
namespace kp = kinaero::pvrnn;
namespace hs = kinaero::harness;
namespace fs = std::filesystem;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using nlohmann::json;

namespace {

kp::NetworkConfig tiny_config() {
  kp::NetworkConfig c;
  c.layers = {{6, 1, 2.0}, {3, 1, 4.0}};
  c.output_dim = 4;
  c.n_soft = 5;
  return c;
}

hs::SessionConfig tiny_session() {
  hs::SessionConfig sc;
  sc.inference.epochs = 2;
  sc.inference.window = 5;
  return sc;
}

sv::ServeSettings fast_settings() {
  sv::ServeSettings s;
  s.port = 0;
  s.tick_ms = 20;
  s.broadcast_hz = 50;
  return s;
}

struct Client {
  asio::io_context io;
  websocket::stream<asio::ip::tcp::socket> ws{io};

  explicit Client(int port) {
    asio::ip::tcp::resolver r(io);
    asio::connect(ws.next_layer(), r.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
  }
  void send(const std::string& s) { ws.write(asio::buffer(s)); }
  json recv() {
    beast::flat_buffer b;
    ws.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  }
  json recv_type(const std::string& type, int max = 200) {
    for (int i = 0; i < max; ++i) {
      json m = recv();
      if (m["type"] == type) return m;
    }
    throw std::runtime_error("no " + type + " message");
  }
};

}  // namespace

TEST(Protocol, ForceLatchesPerJoint) {
  sv::InputState in;
  EXPECT_FALSE(sv::apply_message(R"({"type":"force","joint":2,"value":0.7})", in, 1.0));
  EXPECT_DOUBLE_EQ(in.force[2], 0.7);
  EXPECT_DOUBLE_EQ(in.force[0], 0.0);
  EXPECT_FALSE(sv::apply_message(R"({"type":"force","joint":2,"value":-0.1})", in, 1.0));
  EXPECT_DOUBLE_EQ(in.force[2], -0.1);
}

TEST(Protocol, GrabClampsToJointLimit) {
  sv::InputState in;
  EXPECT_FALSE(sv::apply_message(R"({"type":"grab","joint":1,"angle":9.0})", in, 1.2));
  ASSERT_TRUE(in.grab[1]);
  EXPECT_DOUBLE_EQ(*in.grab[1], 1.2);
}

TEST(Protocol, ReleaseClearsGrabAndForce) {
  sv::InputState in;
  sv::apply_message(R"({"type":"grab","joint":3,"angle":0.2})", in, 1.0);
  sv::apply_message(R"({"type":"force","joint":3,"value":0.4})", in, 1.0);
  EXPECT_FALSE(sv::apply_message(R"({"type":"release","joint":3})", in, 1.0));
  EXPECT_FALSE(in.grab[3]);
  EXPECT_DOUBLE_EQ(in.force[3], 0.0);
}

TEST(Protocol, RejectsBadMessages) {
  sv::InputState in;
  for (const char* bad : {"not json", "[1,2]", R"({"type":"dance"})", R"({"type":"force","joint":4,"value":1})",
                          R"({"type":"force","joint":0})", R"({"type":"set_w","value":0})",
                          R"({"type":"set_w","value":"x"})", R"({"type":"grab","joint":-1,"angle":0})"})
    EXPECT_TRUE(sv::apply_message(bad, in, 1.0)) << bad;
  EXPECT_EQ(in.force, (kinaero::robot::Joint4{}));
  EXPECT_FALSE(in.set_w);
}

TEST(Protocol, TokenBucketCapsBurst) {
  sv::RateLimiter lim(100.0);
  const auto t0 = std::chrono::steady_clock::now();
  int allowed = 0;
  for (int i = 0; i < 500; ++i) allowed += lim.allow(t0);
  EXPECT_EQ(allowed, 100);
  // refills at the stated rate
  int later = 0;
  for (int i = 0; i < 500; ++i) later += lim.allow(t0 + std::chrono::milliseconds(500));
  EXPECT_EQ(later, 50);
}

TEST(Protocol, TickStatsQuantiles) {
  std::vector<double> ms;
  for (int i = 1; i <= 100; ++i) ms.push_back(i);
  const auto s = sv::tick_stats(ms, 95.0);
  EXPECT_EQ(s.over_budget, 5u);
  EXPECT_DOUBLE_EQ(s.max_ms, 100.0);
  EXPECT_DOUBLE_EQ(s.p99_ms, 100.0);
  EXPECT_NEAR(s.within_budget(), 0.95, 1e-12);
}

TEST(Server, BroadcastsStateSchema) {
  const auto cfg = tiny_config();
  sv::Server srv(kp::init_params(cfg, 1), cfg, tiny_session(), fast_settings());
  srv.start();
  Client c(srv.port());
  const json m = c.recv_type("state");
  for (const char* k : {"t", "theta", "theta_pred", "e_tilde", "pred_err", "kld", "w_i", "pattern", "tau_ext"})
    EXPECT_TRUE(m.contains(k)) << k;
  EXPECT_EQ(m["theta"].size(), 4u);
  EXPECT_EQ(m["theta_pred"].size(), 4u);
  EXPECT_EQ(m["e_tilde"].size(), 4u);
  EXPECT_EQ(m["kld"].size(), 2u);
  srv.stop();
}

TEST(Server, ErrorReplyKeepsConnection) {
  const auto cfg = tiny_config();
  sv::Server srv(kp::init_params(cfg, 1), cfg, tiny_session(), fast_settings());
  srv.start();
  Client c(srv.port());
  c.send("{broken");
  const json err = c.recv_type("error");
  EXPECT_FALSE(err["message"].get<std::string>().empty());
  c.send(R"({"type":"teleport"})");
  EXPECT_NE(c.recv_type("error")["message"].get<std::string>().find("teleport"), std::string::npos);
  EXPECT_EQ(c.recv_type("state")["type"], "state");
  srv.stop();
}

TEST(Server, ForceAndSetWReachThePlant) {
  const auto cfg = tiny_config();
  sv::Server srv(kp::init_params(cfg, 1), cfg, tiny_session(), fast_settings());
  srv.start();
  Client c(srv.port());
  c.send(R"({"type":"set_w","value":0.5})");
  c.send(R"({"type":"force","joint":1,"value":0.8})");
  bool saw_w = false, saw_force = false;
  for (int i = 0; i < 100 && !(saw_w && saw_force); ++i) {
    const json m = c.recv_type("state");
    saw_w = saw_w || m["w_i"].get<double>() == 0.5;
    saw_force = saw_force || std::abs(m["tau_ext"][1].get<double>() - 0.8) < 1e-12;
  }
  EXPECT_TRUE(saw_w);
  EXPECT_TRUE(saw_force);
  c.send(R"({"type":"release","joint":1})");
  bool cleared = false;
  for (int i = 0; i < 100 && !cleared; ++i) cleared = c.recv_type("state")["tau_ext"][1].get<double>() == 0.0;
  EXPECT_TRUE(cleared);
  srv.stop();
}

TEST(Server, GrabPullsJointTowardAngle) {
  const auto cfg = tiny_config();
  auto s = fast_settings();
  s.grab_gain = 20.0;
  s.grab_damping = 2.0;
  auto sc = tiny_session();
  sc.robot.control.k_r = 0.0;  // back-drivable so the hand wins
  sv::Server srv(kp::init_params(cfg, 1), cfg, sc, s);
  srv.start();
  Client c(srv.port());
  c.send(R"({"type":"grab","joint":0,"angle":0.6})");
  double theta0 = 0.0;
  for (int i = 0; i < 60; ++i) theta0 = c.recv_type("state")["theta"][0].get<double>();
  EXPECT_GT(theta0, 0.3);
  srv.stop();
}

TEST(Server, MaxTicksStopsLoopAndLogs) {
  const auto cfg = tiny_config();
  auto s = fast_settings();
  s.max_ticks = 15;
  const fs::path log = fs::temp_directory_path() / "kinaero_serve_log.jsonl";
  sv::Server srv(kp::init_params(cfg, 1), cfg, tiny_session(), s, log);
  srv.start();
  srv.wait();
  EXPECT_EQ(srv.ticks(), 15u);
  const auto st = srv.stats();
  EXPECT_EQ(st.ticks, 15u);
  EXPECT_GT(st.max_ms, 0.0);
  srv.stop();
  std::ifstream f(log);
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) {
    EXPECT_EQ(json::parse(line)["type"], "step");
    ++n;
  }
  EXPECT_EQ(n, 15u);
}

TEST(RunConfig, PrecedenceFileEnvFlag) {
  const fs::path file = fs::temp_directory_path() / "kinaero_rc.json";
  std::ofstream(file) << R"({"data":{"seqs":3,"cycles":7},"train":{"epochs":11}})";
  std::map<std::string, std::string> env = {{"KINAERO_DATA_CYCLES", "9"}, {"KINAERO_TRAIN_EPOCHS", "12"}};
  auto getenv = [&](const char* k) -> const char* {
    auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  const json cfg = sv::resolve_run_config(file, {{"train.epochs", "13"}}, getenv);
  EXPECT_EQ(cfg["data"]["seqs"], 3);
  EXPECT_EQ(cfg["data"]["cycles"], 9);
  EXPECT_EQ(cfg["train"]["epochs"], 13);
  EXPECT_EQ(cfg["data"]["seed"], sv::default_run_config()["data"]["seed"]);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  auto none = [](const char*) -> const char* { return nullptr; };
  EXPECT_THROW(sv::resolve_run_config({}, {{"train.nope", "1"}}, none), sv::RunConfigError);
  EXPECT_THROW(sv::resolve_run_config({}, {{"train.epochs", "many"}}, none), sv::RunConfigError);
  EXPECT_THROW(sv::resolve_run_config({}, {{"robot.alpha", "1.5"}}, none), sv::RunConfigError);
  const fs::path file = fs::temp_directory_path() / "kinaero_rc_bad.json";
  std::ofstream(file) << R"({"robto":{}})";
  EXPECT_THROW(sv::resolve_run_config(file, {}, none), sv::RunConfigError);
}

TEST(RunConfig, DefaultsRoundTrip) {
  auto none = [](const char*) -> const char* { return nullptr; };
  const json cfg = sv::resolve_run_config({}, {}, none);
  EXPECT_EQ(cfg, sv::default_run_config());
  const auto ec = sv::experiment_config(cfg);
  EXPECT_EQ(ec.n_attempts, 10u);
  EXPECT_EQ(sv::env_name("robot.k_p"), "KINAERO_ROBOT_K_P");
}
