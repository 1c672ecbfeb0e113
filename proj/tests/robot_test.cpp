#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kinaero/robot/plant.hpp"

namespace rb = kinaero::robot;
using rb::Joint4;

namespace {

Joint4 fill(double v) { return {v, v, v, v}; }

}  // namespace

TEST(Plant, ZeroTorqueAtRestIsUnchanged) {
  rb::PlantState s;
  s.theta = {0.1, -0.2, 0.3, 0.0};
  const auto n = rb::sim_step(s, rb::PlantParams{}, fill(0), fill(0), 0.001);
  EXPECT_EQ(n.theta, s.theta);
  EXPECT_EQ(n.velocity, s.velocity);
  EXPECT_DOUBLE_EQ(n.time, 0.001);
}

TEST(Plant, ConstantTorqueGivesConstantAcceleration) {
  rb::PlantParams p;
  p.damping = 0.0;
  p.limit = 100.0;
  rb::PlantState s;
  for (int i = 0; i < 1000; ++i) s = rb::sim_step(s, p, fill(p.inertia), fill(0), 0.001);
  for (double v : s.velocity) EXPECT_NEAR(v, 1.0, 1e-3);
  // semi-implicit Euler: theta_n = dt^2 n (n+1) / 2
  for (double th : s.theta) EXPECT_NEAR(th, 0.5 * 1e-6 * 1000 * 1001, 1e-12);
}

TEST(Plant, DampingDecaysVelocityMonotonically) {
  rb::PlantState s;
  s.velocity = {1.0, -1.0, 0.5, -0.5};
  rb::PlantParams p;
  p.limit = 1e9;
  for (int i = 0; i < 2000; ++i) {
    const auto n = rb::sim_step(s, p, fill(0), fill(0), 0.001);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_LT(std::abs(n.velocity[j]), std::abs(s.velocity[j]));
      EXPECT_EQ(std::signbit(n.velocity[j]), std::signbit(s.velocity[j]));
    }
    s = n;
  }
}

TEST(Plant, JointLimitClampsAndStops) {
  rb::PlantState s;
  rb::PlantParams p;
  for (int i = 0; i < 3000; ++i) s = rb::sim_step(s, p, fill(5.0), fill(0), 0.001);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(s.theta[j], p.limit);
    EXPECT_EQ(s.velocity[j], 0.0);
    EXPECT_DOUBLE_EQ(s.normalized()[j], 1.0);
  }
}

TEST(Plant, RejectsNonFiniteTorqueAndBadDt) {
  rb::PlantState s;
  EXPECT_THROW(rb::sim_step(s, {}, fill(NAN), fill(0), 0.001), std::invalid_argument);
  EXPECT_THROW(rb::sim_step(s, {}, fill(0), fill(INFINITY), 0.001), std::invalid_argument);
  EXPECT_THROW(rb::sim_step(s, {}, fill(0), fill(0), 0.0), std::invalid_argument);
}

TEST(InverseModel, RestWithoutAccelerationIsZero) {
  const rb::InverseModel m;
  EXPECT_EQ(m.torque(rb::PlantState{}, {}, fill(0)), fill(0));
}

TEST(InverseModel, ExactModelRecoversExternalTorque) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const rb::PlantParams p;
  const rb::InverseModel m;
  for (int trial = 0; trial < 1000; ++trial) {
    rb::PlantState s;
    Joint4 motor, ext, measured;
    for (std::size_t j = 0; j < 4; ++j) {
      s.velocity[j] = u(rng);
      motor[j] = u(rng);
      ext[j] = u(rng);
      measured[j] = motor[j] + ext[j];
    }
    const auto dynm = m.torque(s, p, rb::InverseModel::expected_acceleration(s, p, motor));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(measured[j] - dynm[j], ext[j], 1e-12);
  }
}

TEST(InverseModel, InertiaErrorIsProportionalToAcceleration) {
  // the two linear models differ by delta * I * acc
  const rb::PlantParams p;
  rb::InverseModel exact, off{0.05};
  rb::PlantState s;
  s.velocity = fill(0.3);
  for (double motor : {0.0, 0.5, 1.0, 2.0, -3.0}) {
    const auto acc = rb::InverseModel::expected_acceleration(s, p, fill(motor));
    const double err = off.torque(s, p, acc)[0] - exact.torque(s, p, acc)[0];
    EXPECT_NEAR(err, 0.05 * p.inertia * acc[0], 1e-12);
    EXPECT_NEAR(std::abs(err), 0.05 * std::abs(motor - 0.5 * 0.3), 1e-12);
  }
}

TEST(ExcessPipeline, DeadbandExamples) {
  EXPECT_EQ(rb::deadband(0.5, 0.2), 0.5 - 0.2);
  EXPECT_EQ(rb::deadband(0.1, 0.2), 0.0);
  EXPECT_EQ(rb::deadband(-0.5, 0.2), -0.5 + 0.2);
  EXPECT_EQ(rb::deadband(-0.1, 0.2), 0.0);
  EXPECT_EQ(rb::deadband(0.0, 0.2), 0.0);
}

TEST(ExcessPipeline, FirstStepAndDecayExamples) {
  rb::ExcessFilter f;
  f.params = {0.2, 0.9, 2.0};
  // first step: e~ = e
  EXPECT_EQ(f.update(fill(0.5), fill(0.0))[0], 0.5 - 0.2);
  f.filtered = fill(1.0);
  EXPECT_EQ(f.update(fill(0.1), fill(0.0))[0], 0.9);
}

TEST(ExcessPipeline, FirstStepIsClampedToo) {
  rb::ExcessFilter f;
  f.params = {0.0, 0.9, 2.0};
  EXPECT_EQ(f.update(fill(5.0), fill(0.0))[0], 2.0);
  EXPECT_EQ(f.update(fill(-50.0), fill(0.0))[0], -2.0);
}

TEST(ExcessPipeline, ClampHoldsUnderFuzz) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> big(-100.0, 100.0), th(0.0, 1.0), al(0.01, 0.99),
      em(0.01, 5.0);
  rb::ExcessFilter f;
  f.params = {0.05, 0.9, 2.0};
  for (int i = 0; i < 100000; ++i) {
    if (i % 1000 == 0) {
      f.params = {th(rng), al(rng), em(rng)};
      f.reset();
    }
    Joint4 m, d;
    for (std::size_t j = 0; j < 4; ++j) {
      m[j] = big(rng);
      d[j] = big(rng);
    }
    for (double v : f.update(m, d)) ASSERT_LE(std::abs(v), f.params.e_max);
  }
}

TEST(ExcessPipeline, ReconstructsInjectedTorqueAfterDeadband) {
  const rb::PlantParams p;
  const rb::InverseModel m;
  rb::ExcessFilter f;
  rb::PlantState s;
  s.velocity = {0.2, -0.1, 0.0, 0.4};
  const Joint4 motor{0.3, -0.7, 1.1, 0.0}, ext{0.8, -0.6, 0.03, 0.0};
  Joint4 measured;
  for (std::size_t j = 0; j < 4; ++j) measured[j] = motor[j] + ext[j];
  const auto e = f.update(measured, m.torque(s, p, rb::InverseModel::expected_acceleration(s, p, motor)));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(e[j], rb::deadband(ext[j], 0.05), 1e-12);
}

TEST(ExcessPipeline, ValidatesParameters) {
  EXPECT_THROW((rb::ExcessFilterParams{-0.1, 0.9, 2.0}.validate()), std::invalid_argument);
  EXPECT_THROW((rb::ExcessFilterParams{0.1, 1.0, 2.0}.validate()), std::invalid_argument);
  EXPECT_THROW((rb::ExcessFilterParams{0.1, 0.9, 0.0}.validate()), std::invalid_argument);
}

TEST(ComposeTarget, Examples) {
  EXPECT_EQ(rb::compose_target(fill(0.4), fill(0.3), fill(0.2), {1.0, 0.5})[0], 0.1 * 1.0 + 0.2 * 0.5 + 0.3);
  EXPECT_NEAR(rb::compose_target(fill(0.4), fill(0.3), fill(0.2), {1.0, 0.5})[0], 0.5, 1e-15);
  EXPECT_EQ(rb::compose_target(fill(0.7), fill(0.1), fill(0.0), {1.0, 0.3}), fill(0.7));
  // k_r = 0: target moves only with the applied force
  EXPECT_EQ(rb::compose_target(fill(0.7), fill(0.1), fill(0.0), {0.0, 0.3}), fill(0.1));
  EXPECT_NEAR(rb::compose_target(fill(0.7), fill(0.1), fill(1.0), {0.0, 0.3})[0], 0.4, 1e-15);
}

TEST(Pid, ZeroErrorGivesZeroTorque) {
  rb::Pid pid;
  pid.gains.ki = 3.0;
  EXPECT_EQ(pid.update(fill(0.2), fill(0.2), 0.001), fill(0.0));
  EXPECT_EQ(pid.update(fill(0.2), fill(0.2), 0.001), fill(0.0));
}

TEST(Pid, IntegralClampEngages) {
  rb::Pid pid;
  pid.gains = {0.0, 1.0, 0.0, 0.25};
  Joint4 tau{};
  for (int i = 0; i < 10000; ++i) tau = pid.update(fill(1.0), fill(0.0), 0.001);
  EXPECT_EQ(pid.integral[0], 0.25);
  EXPECT_EQ(tau[0], 0.25);
  for (int i = 0; i < 10000; ++i) pid.update(fill(-1.0), fill(0.0), 0.001);
  EXPECT_EQ(pid.integral[0], -0.25);
  pid.gains.kd = -1.0;
  EXPECT_THROW(pid.update(fill(0), fill(0), 0.001), std::invalid_argument);
}

TEST(Pid, ProportionalStepResponseMatchesSecondOrder) {
  // I th'' + b th' + Kp th = Kp r
  const double kp = 20.0, r = 0.3, dt = 0.001;
  rb::PlantParams p;
  rb::Pid pid;
  pid.gains = {kp, 0.0, 0.0, 1.0};
  const double wn = std::sqrt(kp / p.inertia), zeta = p.damping / (2.0 * std::sqrt(kp * p.inertia));
  const double wd = wn * std::sqrt(1.0 - zeta * zeta);
  rb::PlantState s;
  double worst = 0.0;
  for (int i = 1; i <= 5000; ++i) {
    s = rb::sim_step(s, p, pid.update(fill(r), s.theta, dt), fill(0), dt);
    const double t = i * dt;
    const double exact =
        r * (1.0 - std::exp(-zeta * wn * t) * (std::cos(wd * t) + zeta * wn / wd * std::sin(wd * t)));
    worst = std::max(worst, std::abs(s.theta[0] - exact));
  }
  EXPECT_LT(worst, 0.02 * r);
}

TEST(ClosedLoop, CounterTorqueGrowsWithPredictionGap) {
  // human holds the joint at th; the motor pushes harder for larger gaps and larger k_r
  const rb::PidGains g;
  double prev_gap = -1.0;
  for (double kr : {0.25, 0.5, 1.0, 2.0}) {
    double prev = -1.0;
    for (double gap : {0.0, 0.05, 0.1, 0.2, 0.4}) {
      rb::Pid pid;
      pid.gains = g;
      const Joint4 th = fill(0.1);
      const auto target = rb::compose_target(fill(0.1 + gap), th, fill(0.0), {kr, 0.3});
      const double tau = std::abs(pid.update(target, th, 0.001)[0]);
      EXPECT_GE(tau, prev);
      prev = tau;
      if (gap == 0.2) {
        EXPECT_GT(tau, prev_gap);
        prev_gap = tau;
      }
    }
  }
}

TEST(RobotConfig, JsonRoundTripAndValidation) {
  rb::RobotConfig c;
  c.control.k_p = 0.7;
  c.inertia_error = 0.05;
  nlohmann::json j = c;
  const auto back = j.get<rb::RobotConfig>();
  EXPECT_EQ(back.control.k_p, 0.7);
  EXPECT_EQ(back.inertia_error, 0.05);
  EXPECT_EQ(back.pid.kp, c.pid.kp);
  j["alpha"] = 1.5;
  EXPECT_THROW(j.get<rb::RobotConfig>(), std::invalid_argument);
}
