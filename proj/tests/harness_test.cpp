#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "kinaero/harness/experiment.hpp"
#include "kinaero/harness/pca.hpp"
#include "kinaero/harness/report.hpp"
#include "kinaero/harness/stats.hpp"

namespace hs = kinaero::harness;
namespace dg = kinaero::datagen;
namespace rb = kinaero::robot;
namespace kp = kinaero::pvrnn;
namespace fs = std::filesystem;
using dg::Pattern;

namespace {

kp::NetworkConfig tiny_config() {
  kp::NetworkConfig c;
  c.layers = {{6, 1, 2.0}, {3, 1, 4.0}};
  c.output_dim = 4;
  c.n_soft = 5;
  return c;
}

hs::ExperimentConfig short_experiment() {
  hs::ExperimentConfig ec;
  ec.session.inference.epochs = 2;
  ec.session.inference.window = 5;
  ec.n_attempts = 3;
  ec.first_attempt = 40;
  ec.spacing = 40;
  ec.attempt_steps = 30;
  ec.total_steps = 150;
  return ec;
}

// One-sided exact p by enumerating every split of the pooled sample.
double brute_force_p(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled = x;
  pooled.insert(pooled.end(), y.begin(), y.end());
  const std::size_t N = pooled.size(), m = x.size();
  auto u_of = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double u = 0.0;
    for (double p : a)
      for (double q : b) u += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    return u;
  };
  const double u_obs = u_of(x, y);
  std::size_t hits = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << N); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != m) continue;
    std::vector<double> a, b;
    for (std::size_t i = 0; i < N; ++i) ((mask >> i) & 1u ? a : b).push_back(pooled[i]);
    ++total;
    if (u_of(a, b) >= u_obs - 1e-12) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST(MannWhitney, ExactMatchesEnumeration) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(4 + trial % 4), y(3 + trial % 5);
    for (double& v : x) v = n(rng) + 0.5;
    for (double& v : y) v = n(rng);
    const auto r = hs::mann_whitney_greater(x, y);
    ASSERT_TRUE(r.exact);
    EXPECT_NEAR(r.p, brute_force_p(x, y), 1e-12);
  }
}

TEST(MannWhitney, KnownValues) {
  // 4 of the C(9,4) = 126 splits reach U = 18
  const std::vector<double> x{3.1, 4.2, 5.0, 6.3, 7.7}, y{1.0, 2.2, 3.3, 4.0};
  const auto r = hs::mann_whitney_greater(x, y);
  EXPECT_EQ(r.u, 18.0);
  EXPECT_NEAR(r.p, 4.0 / 126.0, 1e-15);
  // tied samples: normal approximation with tie and continuity corrections
  const std::vector<double> a{1, 2, 2, 3, 4, 5, 5, 6}, b{0, 1, 1, 2, 3, 3};
  const auto t = hs::mann_whitney_greater(a, b);
  EXPECT_FALSE(t.exact);
  EXPECT_EQ(t.u, 38.0);
  EXPECT_NEAR(t.p, 0.038506484086958545, 1e-12);
}

TEST(MannWhitney, SeparatedSamplesAndEdgeCases) {
  std::vector<double> hi, lo;
  for (int i = 0; i < 10; ++i) {
    hi.push_back(10.0 + i);
    lo.push_back(static_cast<double>(i));
  }
  // only one split puts all of hi on top: 1 / C(20,10)
  EXPECT_NEAR(hs::mann_whitney_greater(hi, lo).p, 1.0 / 184756.0, 1e-18);
  EXPECT_NEAR(hs::mann_whitney_greater(lo, hi).p, 1.0, 1e-12);
  const std::vector<double> same{1.0, 1.0, 1.0};
  EXPECT_EQ(hs::mann_whitney_greater(same, same).p, 1.0);
  EXPECT_THROW(hs::mann_whitney_greater({}, lo), std::invalid_argument);
}

TEST(Pca, RankOneDataIsOneComponent) {
  Eigen::MatrixXd d(50, 5);
  const Eigen::VectorXd dir = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0).normalized();
  for (int i = 0; i < 50; ++i) d.row(i) = (0.3 * i - 4.0) * dir.transpose();
  const auto r = hs::pca3(d);
  EXPECT_NEAR(r.explained_ratio(0), 1.0, 1e-12);
  EXPECT_NEAR(std::abs(r.components.col(0).dot(dir)), 1.0, 1e-12);
}

TEST(Pca, SpectrumIsRotationInvariant) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd d(80, 6);
  for (int i = 0; i < d.size(); ++i) d.data()[i] = n(rng) * (1 + i % 6);
  Eigen::MatrixXd q = Eigen::MatrixXd::NullaryExpr(6, 6, [&] { return n(rng); });
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ();
  const auto a = hs::pca3(d), b = hs::pca3(d * q);
  EXPECT_LT((a.explained_variance - b.explained_variance).norm(), 1e-9 * a.explained_variance.norm());
  for (Eigen::Index i = 1; i < a.explained_variance.size(); ++i)
    EXPECT_GE(a.explained_variance(i - 1), a.explained_variance(i));
  EXPECT_EQ(a.projection.rows(), 80);
  EXPECT_EQ(a.projection.cols(), 3);
}

TEST(Pca, FullRankReconstructionIsExact) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd d = Eigen::MatrixXd::NullaryExpr(100, 10, [&] { return u(rng); });
  const auto r = hs::pca(d, 10);
  const Eigen::MatrixXd back = (r.projection * r.components.transpose()).rowwise() + r.mean.transpose();
  EXPECT_LT((back - d).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_THROW(hs::pca3(Eigen::MatrixXd::Zero(10, 3)), std::invalid_argument);
}

TEST(Transitions, TrainedAndUntrainedSets) {
  using P = Pattern;
  EXPECT_EQ(hs::transition_targets(P::A, hs::TransitionClass::Trained), (std::vector<P>{P::B, P::C}));
  EXPECT_EQ(hs::transition_targets(P::B, hs::TransitionClass::Trained), (std::vector<P>{P::D}));
  EXPECT_EQ(hs::transition_targets(P::D, hs::TransitionClass::Trained), (std::vector<P>{P::A}));
  EXPECT_EQ(hs::transition_targets(P::A, hs::TransitionClass::Untrained), (std::vector<P>{P::D}));
  EXPECT_EQ(hs::transition_targets(P::D, hs::TransitionClass::Untrained), (std::vector<P>{P::B, P::C}));
  EXPECT_EQ(hs::transition_targets(P::B, hs::TransitionClass::Untrained), (std::vector<P>{P::A}));
  EXPECT_EQ(hs::transition_targets(P::C, hs::TransitionClass::Untrained), (std::vector<P>{P::A}));
  std::size_t trained = 0, untrained = 0;
  for (P a : dg::kPatterns)
    for (P b : dg::kPatterns) {
      EXPECT_FALSE(hs::is_trained_transition(a, b) && hs::is_untrained_transition(a, b));
      trained += hs::is_trained_transition(a, b);
      untrained += hs::is_untrained_transition(a, b);
    }
  EXPECT_EQ(trained, 5u);
  EXPECT_EQ(untrained, 5u);
}

TEST(Transitions, NextCycleOriginFollowsClassifierPhase) {
  for (std::size_t offset = 0; offset < 20; ++offset) {
    // the window holds steps 100 - 19 .. 100 of a cycle that started at 100 - offset - 19
    const std::size_t start = 81 - offset;
    std::vector<dg::Posture> win;
    for (std::size_t t = 81; t <= 100; ++t) win.push_back(dg::primitive_posture(Pattern::D, (t - start) % 20));
    const auto c = hs::classify_pattern(win);
    const std::size_t origin = hs::next_cycle_origin(c, 100);
    EXPECT_GT(origin, 100u);
    EXPECT_LE(origin, 120u);
    EXPECT_EQ((origin - start) % 20, 0u) << offset;
  }
}

TEST(Scenario, ParseAndSerialize) {
  const auto j = nlohmann::json::parse(R"([
    {"t_start_step": 5, "duration_steps": 3, "joint_torques": [0.1, 0, 0, -0.2]},
    {"t_start_step": 10, "target_pattern": "C", "guidance_gain": 2.0}
  ])");
  const auto s = rb::parse_scenario(j);
  ASSERT_EQ(s.torques.size(), 1u);
  ASSERT_EQ(s.hands.size(), 1u);
  EXPECT_EQ(s.hands[0].target_pattern, Pattern::C);
  EXPECT_EQ(s.hands[0].duration_steps, 100u);
  EXPECT_EQ(rb::parse_scenario(nlohmann::json(s)).torques[0].joint_torques, s.torques[0].joint_torques);
  EXPECT_THROW(rb::parse_scenario(nlohmann::json::parse(R"([{"t_start_step": 1}])")), std::invalid_argument);
  EXPECT_THROW(rb::parse_scenario(nlohmann::json::parse(R"([{"t_start_step": 1, "joint_torques": [1]}])")),
               std::invalid_argument);
  EXPECT_THROW(rb::parse_scenario(nlohmann::json::parse(R"({"t_start_step": 1})")), std::invalid_argument);
}

TEST(Scenario, TorqueEventWindow) {
  rb::Scenario s;
  s.torques.push_back({5, 3, {0.5, 0, 0, 0}});
  const rb::PlantState st;
  EXPECT_EQ(rb::scenario_torque(s, 4.99, st, 0.1)[0], 0.0);
  EXPECT_EQ(rb::scenario_torque(s, 5.0, st, 0.1)[0], 0.5);
  EXPECT_EQ(rb::scenario_torque(s, 7.99, st, 0.1)[0], 0.5);
  EXPECT_EQ(rb::scenario_torque(s, 8.0, st, 0.1)[0], 0.0);
}

TEST(Scenario, HandRampsAndIsCapped) {
  rb::HandEvent h;
  h.t_start_step = 0;
  h.target_pattern = Pattern::A;
  h.guidance_gain = 100.0;
  h.guidance_damping = 0.0;
  h.phase_origin = 4;
  const rb::HandParams hp;
  rb::PlantState far;
  far.theta = {-1.0, -1.0, -1.0, -1.0};
  EXPECT_EQ(rb::hand_torque(h, hp, 3.5, far, 0.1), rb::Joint4{});  // before the cycle origin
  for (double step = 4.0; step < 100.0; step += 0.37)
    for (double v : rb::hand_torque(h, hp, step, far, 0.1)) EXPECT_LE(std::abs(v), hp.torque_cap);
  EXPECT_EQ(rb::hand_torque(h, hp, 100.0, far, 0.1), rb::Joint4{});
  h.guidance_gain = 1.0;
  rb::PlantState rest;
  // at the origin the target posture is zero, so only the ramped pull on theta remains
  const auto first = rb::hand_torque(h, hp, 4.0, far, 0.1);
  EXPECT_NEAR(first[0], 0.1 * 1.0 * 1.0, 1e-12);
  EXPECT_NEAR(rb::hand_torque(h, hp, 4.0, rest, 0.1)[0], 0.0, 1e-12);
}

TEST(Session, TorqueEventShowsUpInPipeline) {
  const auto cfg = tiny_config();
  hs::SessionConfig sc;
  sc.inference.epochs = 1;
  sc.inference.window = 4;
  sc.robot.sensor_noise = 0.0;
  hs::Session s(kp::init_params(cfg, 3), cfg, sc);
  rb::Scenario scen;
  scen.torques.push_back({2, 2, {0.0, 0.0, 0.55, 0.0}});
  std::vector<hs::TickRecord> recs;
  for (int t = 0; t < 6; ++t) recs.push_back(s.tick(scen));
  EXPECT_EQ(recs[1].tau_ext[2], 0.0);
  EXPECT_NEAR(recs[2].tau_ext[2], 0.55, 1e-12);
  // exact inverse model without noise: e~ is the deadbanded injected torque
  EXPECT_NEAR(recs[2].e_tilde[2], 0.5, 1e-9);
  EXPECT_NEAR(recs[3].e_tilde[2], 0.9 * 0.5 + 0.5, 1e-9);
  EXPECT_NEAR(recs[4].e_tilde[2], 0.9 * 0.95, 1e-9);
  EXPECT_EQ(recs[3].e_tilde[0], 0.0);
  for (const auto& r : recs)
    for (double v : r.observed) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Session, BackDrivableWithoutPrediction) {
  // k_r = 0: the target only moves with the applied force
  const auto cfg = tiny_config();
  hs::SessionConfig sc;
  sc.inference.epochs = 0;
  sc.robot.control.k_r = 0.0;
  sc.robot.sensor_noise = 0.0;
  hs::Session s(kp::init_params(cfg, 3), cfg, sc);
  rb::Scenario none;
  for (int t = 0; t < 5; ++t) s.tick(none);
  for (double v : s.plant().theta) EXPECT_NEAR(v, 0.0, 1e-9);
  rb::Scenario push;
  push.torques.push_back({5, 1, {0.25, 0, 0, 0}});
  s.tick(push);
  s.tick(none);
  const double after = s.plant().theta[0];
  EXPECT_GT(after, 0.0);
  EXPECT_NEAR(s.plant().theta[1], 0.0, 1e-9);
}

TEST(Experiment, SummariesComeFromTelemetryAndAreDeterministic) {
  const auto cfg = tiny_config();
  const auto params = kp::init_params(cfg, 4);
  const auto ec = short_experiment();
  const fs::path dir = fs::temp_directory_path() / "kinaero_harness_exp";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto a = hs::run_logged_session(params, cfg, ec, hs::TransitionClass::Untrained, dir / "a.jsonl");
  const auto b = hs::run_logged_session(params, cfg, ec, hs::TransitionClass::Untrained, dir / "b.jsonl");
  ASSERT_EQ(a.size(), 3u);
  hs::write_summary_csv(dir / "a.csv", a, true);
  hs::write_summary_csv(dir / "b.csv", b, true);
  std::stringstream sa, sb;
  sa << std::ifstream(dir / "a.csv").rdbuf();
  sb << std::ifstream(dir / "b.csv").rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().substr(0, sa.str().find('\n')), "w,attempt,from,to,mean_torque,mean_e,mean_r1,mean_r2,success,trained");
  for (const auto& r : a) {
    EXPECT_FALSE(r.trained);
    EXPECT_TRUE(hs::is_untrained_transition(r.from, r.to));
  }
  // re-summarizing the log reproduces the in-memory records exactly
  const auto again = hs::summarize_session(hs::read_jsonl(dir / "a.jsonl"));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(again[i].mean_torque, a[i].mean_torque);
    EXPECT_EQ(again[i].mean_r2, a[i].mean_r2);
  }
  fs::remove_all(dir);
}

TEST(Experiment, AttemptMeansOverExactWindow) {
  std::vector<nlohmann::json> recs;
  recs.push_back({{"type", "attempt"}, {"attempt", 0}, {"start", 2}, {"duration", 3}, {"from", "A"},
                  {"to", "B"}, {"trained", true}});
  for (int t = 0; t < 8; ++t)
    recs.push_back({{"type", "step"}, {"t", t}, {"e_tilde", {t, -1.0, 0, 0}}, {"e_window", 10.0 * t},
                    {"r_l1", 1.0}, {"r_l2", 2.0 * t}, {"w_i", 0.05}, {"theta_obs", {0, 0, 0, 0}}});
  const auto s = hs::summarize_session(recs);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0].mean_torque, (3.0 + 4.0 + 5.0) / 3.0);
  EXPECT_DOUBLE_EQ(s[0].mean_e, 30.0);
  EXPECT_DOUBLE_EQ(s[0].mean_r2, 6.0);
  EXPECT_EQ(s[0].w, 0.05);
  EXPECT_FALSE(s[0].success);  // shorter than a cycle
  EXPECT_TRUE(hs::summarize_session({}).empty());
}

TEST(Experiment, SuccessNeedsOneConfidentTargetCycle) {
  std::vector<nlohmann::json> recs;
  recs.push_back({{"type", "attempt"}, {"attempt", 0}, {"start", 0}, {"duration", 40}, {"from", "A"},
                  {"to", "C"}, {"trained", true}});
  for (int t = 0; t < 40; ++t) {
    const auto p = t < 15 ? dg::primitive_posture(Pattern::A, t % 20) : dg::primitive_posture(Pattern::C, (t - 15) % 20);
    recs.push_back({{"type", "step"}, {"t", t}, {"e_tilde", {0, 0, 0, 0}}, {"e_window", 0.0}, {"r_l1", 0.0},
                    {"r_l2", 0.0}, {"w_i", 0.01}, {"theta_obs", p}});
  }
  EXPECT_TRUE(hs::summarize_session(recs)[0].success);
  recs[0]["to"] = "D";
  EXPECT_FALSE(hs::summarize_session(recs)[0].success);
}

TEST(Report, SummaryCsvRoundTripsBitExactly) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<hs::AttemptSummary> rows;
  for (std::size_t i = 0; i < 12; ++i) {
    hs::AttemptSummary r;
    r.attempt = i;
    r.w = i % 2 ? 0.1 : 0.01;
    r.from = Pattern::A;
    r.to = i % 3 ? Pattern::B : Pattern::D;
    r.trained = i % 3 != 0;
    r.mean_torque = u(rng);
    r.mean_e = u(rng);
    r.mean_r1 = u(rng) / 3.0;
    r.mean_r2 = std::nextafter(u(rng), 0.0);
    r.success = i % 4 != 0;
    rows.push_back(r);
  }
  const fs::path p = fs::temp_directory_path() / "kinaero_summary_roundtrip.csv";
  hs::write_summary_csv(p, rows, true);
  const auto back = hs::read_summary_csv(p);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].w, rows[i].w);
    EXPECT_EQ(back[i].mean_torque, rows[i].mean_torque);
    EXPECT_EQ(back[i].mean_e, rows[i].mean_e);
    EXPECT_EQ(back[i].mean_r1, rows[i].mean_r1);
    EXPECT_EQ(back[i].mean_r2, rows[i].mean_r2);
    EXPECT_EQ(back[i].to, rows[i].to);
    EXPECT_EQ(back[i].trained, rows[i].trained);
    EXPECT_EQ(back[i].success, rows[i].success);
  }
}

TEST(Report, Exp1OrderingsOnConstructedMeans) {
  std::vector<hs::AttemptSummary> rows;
  for (double w : {0.1, 0.01, 0.05}) {
    hs::AttemptSummary r;
    r.w = w;
    r.mean_torque = w;
    r.mean_e = 2 * w;
    r.mean_r1 = 1.0 / w;
    r.mean_r2 = 0.0;
    rows.push_back(r);
  }
  auto rep = hs::exp1_report(rows);
  EXPECT_EQ(rep.w, (std::vector<double>{0.01, 0.05, 0.1}));
  EXPECT_TRUE(rep.torque_increasing && rep.e_increasing && rep.kld_decreasing);
  rows[2].mean_torque = 0.2;  // w=0.05 now above w=0.1
  rep = hs::exp1_report(rows);
  EXPECT_FALSE(rep.torque_increasing);
  EXPECT_TRUE(rep.e_increasing);
}

TEST(Report, Exp2SeparatedClassesAreSignificant) {
  std::vector<hs::AttemptSummary> rows;
  for (int i = 0; i < 10; ++i) {
    hs::AttemptSummary t, u;
    t.trained = true;
    u.trained = false;
    t.mean_torque = 1.0 + 0.01 * i;
    u.mean_torque = 2.0 + 0.01 * i;
    t.mean_e = u.mean_e = 1.0 + i;  // identical samples
    t.mean_r1 = 0.5 + 0.01 * i;
    u.mean_r1 = 0.6 + 0.01 * i;
    t.success = true;
    u.success = i < 8;
    rows.push_back(t);
    rows.push_back(u);
  }
  const auto rep = hs::exp2_report(rows);
  // complete separation of 10 vs 10: p = 1 / C(20, 10)
  EXPECT_NEAR(rep.torque.p, 1.0 / 184756.0, 1e-15);
  EXPECT_GT(rep.e.p, 0.4);
  EXPECT_LT(rep.kld.p, 0.05);
  EXPECT_TRUE(rep.success_ok);
  EXPECT_EQ(rep.untrained.successes, 8u);
}
