#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kinaero/datagen/dataset.hpp"
#include "kinaero/harness/classifier.hpp"

namespace dg = kinaero::datagen;
namespace hs = kinaero::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kinaero_datagen_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Primitive, ZeroPostureAtCycleBoundaries) {
  for (dg::Pattern id : dg::kPatterns) {
    const auto traj = dg::synth_primitive(id, 3);
    for (std::size_t k = 0; k < traj.size(); k += dg::kCycleLength)
      for (double v : traj[k]) EXPECT_EQ(std::abs(v), 0.0) << dg::pattern_letter(id) << " step " << k;
    for (double v : dg::primitive_posture(id, 20)) EXPECT_EQ(std::abs(v), 0.0);
  }
}

TEST(Primitive, PeriodIsExactlyTwenty) {
  for (dg::Pattern id : dg::kPatterns) {
    const auto traj = dg::synth_primitive(id, 4);
    ASSERT_EQ(traj.size(), 80u);
    for (std::size_t t = 0; t + 20 < traj.size(); ++t) EXPECT_EQ(traj[t], traj[t + 20]);
  }
}

TEST(Primitive, AmplitudeWithinNinetyPercentOfRange) {
  for (dg::Pattern id : dg::kPatterns)
    for (const auto& p : dg::synth_primitive(id, 1))
      for (double v : p) EXPECT_LE(std::abs(v), 0.9);
}

TEST(Primitive, PatternsArePairwiseSeparated) {
  // independent evaluation of the waveforms from their closed forms
  const double pi = std::acos(-1.0);
  auto closed = [&](int id, int k, int j) {
    const double ph = 2.0 * pi * k / 20.0;
    switch (id) {
      case 0: return 0.8 * std::sin(ph);
      case 1: return (j < 2 ? 0.8 : -0.8) * std::sin(ph);
      case 2: return 0.4 * (1.0 - std::cos(ph));
      default: return 0.8 * std::sin(2.0 * ph);
    }
  };
  for (int a = 0; a < 4; ++a) {
    const auto ta = dg::primitive_template(dg::pattern_from_index(a));
    for (int k = 0; k < 20; ++k)
      for (int j = 0; j < 4; ++j) EXPECT_NEAR(ta[k][j], closed(a, k, j), 1e-15);
    for (int b = a + 1; b < 4; ++b) {
      double d2 = 0.0;
      for (int k = 0; k < 20; ++k)
        for (int j = 0; j < 4; ++j) d2 += std::pow(closed(a, k, j) - closed(b, k, j), 2);
      EXPECT_GT(std::sqrt(d2), 0.5) << a << " vs " << b;
    }
  }
}

TEST(Primitive, UnknownIdThrows) {
  EXPECT_THROW(dg::pattern_from_letter('E'), std::invalid_argument);
  EXPECT_THROW(dg::pattern_from_index(4), std::invalid_argument);
  EXPECT_THROW(dg::synth_primitive(dg::Pattern::A, 0), std::invalid_argument);
}

TEST(Pfsm, ReferenceChainIsRowStochasticWithFiveEdges) {
  const auto s = dg::reference_pfsm();
  EXPECT_NO_THROW(s.validate());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      bool allowed = i == j;
      for (auto [a, b] : dg::kReferenceEdges) allowed = allowed || (a == i && b == j);
      if (!allowed) EXPECT_EQ(s(i, j), 0.0);
      else EXPECT_GT(s(i, j), 0.0);
    }
}

TEST(Pfsm, InvalidRowsRejected) {
  auto s = dg::reference_pfsm();
  s.transition[1][1] = 0.8;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = dg::reference_pfsm();
  s.transition[0] = {1.2, -0.2, 0.0, 0.0};
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Pfsm, SelfProbabilityOneGivesConstantState) {
  dg::PfsmSpec s;
  for (std::size_t i = 0; i < 4; ++i) s.transition[i][i] = 1.0;
  for (std::size_t start = 0; start < 4; ++start) {
    const auto seq = dg::sample_pfsm(s, 500, 11, start);
    for (std::size_t st : seq) EXPECT_EQ(st, start);
  }
}

TEST(Pfsm, DeterministicGivenSeed) {
  const auto s = dg::reference_pfsm();
  EXPECT_EQ(dg::sample_pfsm(s, 1000, 5), dg::sample_pfsm(s, 1000, 5));
  EXPECT_NE(dg::sample_pfsm(s, 1000, 5), dg::sample_pfsm(s, 1000, 6));
}

TEST(Pfsm, EdgeFrequenciesMatchTargetsAt1e5Cycles) {
  const auto seq = dg::sample_pfsm(dg::reference_pfsm(), 100000, 2024);
  const auto stats = hs::transition_stats(seq);
  EXPECT_NEAR(stats.edge(0, 1), 0.03, 0.005);
  EXPECT_NEAR(stats.edge(0, 2), 0.07, 0.005);
  EXPECT_NEAR(stats.edge(1, 3), 0.10, 0.005);
  EXPECT_NEAR(stats.edge(2, 3), 0.15, 0.005);
  EXPECT_NEAR(stats.edge(3, 0), 0.05, 0.005);
}

TEST(Pfsm, FrequenciesWithinBinomialThreeSigma) {
  const auto spec = dg::reference_pfsm();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto seq = dg::sample_pfsm(spec, 20000, seed);
    const auto stats = hs::transition_stats(seq);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double p = spec(i, j);
        const double n = static_cast<double>(stats.outgoing[i]);
        ASSERT_GT(n, 0.0);
        EXPECT_LE(std::abs(stats.edge(i, j) - p), 3.0 * std::sqrt(p * (1 - p) / n) + 1e-12);
      }
  }
}

TEST(Pfsm, JsonRoundTrip) {
  const auto s = dg::reference_pfsm();
  const nlohmann::json j = s;
  EXPECT_EQ(j.get<dg::PfsmSpec>().transition, s.transition);
  EXPECT_THROW((nlohmann::json{{1.0, 0.0}}.get<dg::PfsmSpec>()), std::invalid_argument);
}

TEST(Dataset, FullSizeGives4000Steps) {
  const auto ds = dg::build_dataset(dg::reference_pfsm(), 10, 200, 7);
  ASSERT_EQ(ds.sequences.size(), 10u);
  for (const auto& s : ds.sequences) {
    EXPECT_EQ(s.length(), 4000u);
    EXPECT_EQ(s.cycle_states.size(), 200u);
    for (const auto& p : s.joints)
      for (double v : p) EXPECT_LE(std::abs(v), 1.0);
  }
}

TEST(Dataset, RejectsEmpty) {
  EXPECT_THROW(dg::build_dataset(dg::reference_pfsm(), 0, 10, 1), std::invalid_argument);
}

TEST(Dataset, SameSeedByteIdenticalFiles) {
  const auto a = scratch("a"), b = scratch("b");
  dg::write_dataset(dg::build_dataset(dg::reference_pfsm(), 3, 50, 99), a);
  dg::write_dataset(dg::build_dataset(dg::reference_pfsm(), 3, 50, 99), b);
  for (const char* f : {"meta.json", "seq_000.csv", "seq_001.csv", "seq_002.csv"}) {
    const std::string x = slurp(a / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(b / f)) << f;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, CsvLayoutAndReload) {
  const auto dir = scratch("reload");
  const auto ds = dg::build_dataset(dg::reference_pfsm(), 2, 30, 3);
  dg::write_dataset(ds, dir);
  std::ifstream f(dir / "seq_000.csv");
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  EXPECT_EQ(header, "t,j0,j1,j2,j3,state");
  EXPECT_EQ(row.substr(0, 38), "0,0.000000,0.000000,0.000000,0.000000,");
  const auto back = dg::load_dataset(dir);
  ASSERT_EQ(back.sequences.size(), 2u);
  EXPECT_EQ(back.seed, 3u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.sequences[i].cycle_states, ds.sequences[i].cycle_states);
    for (std::size_t t = 0; t < ds.sequences[i].length(); ++t)
      for (std::size_t j = 0; j < 4; ++j)
        EXPECT_NEAR(back.sequences[i].joints[t][j], ds.sequences[i].joints[t][j], 5e-7);
  }
  fs::remove_all(dir);
}

TEST(Dataset, ClassifierRecoversEveryLabel) {
  const auto ds = dg::build_dataset(dg::reference_pfsm(), 10, 200, 7);
  std::size_t checked = 0;
  for (const auto& s : ds.sequences) {
    const auto labels = hs::classify_cycles(s.joints);
    ASSERT_EQ(labels.size(), s.cycle_states.size());
    for (std::size_t k = 0; k < labels.size(); ++k) {
      EXPECT_EQ(static_cast<std::size_t>(labels[k].pattern), s.cycle_states[k]);
      EXPECT_NEAR(labels[k].confidence, 1.0, 1e-12);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 2000u);
}

TEST(Classifier, PhaseShiftedTemplateStillMatches) {
  const auto tmpl = dg::primitive_template(dg::Pattern::D);
  std::vector<dg::Posture> w(20);
  for (std::size_t k = 0; k < 20; ++k) w[k] = tmpl[(k + 3) % 20];
  const auto c = hs::classify_pattern(w);
  EXPECT_EQ(c.pattern, dg::Pattern::D);
  EXPECT_EQ(c.phase, 3u);
}

TEST(Classifier, BlendOfTwoPatternsHasLowConfidence) {
  const auto a = dg::primitive_template(dg::Pattern::A);
  const auto b = dg::primitive_template(dg::Pattern::B);
  std::vector<dg::Posture> w(20);
  for (std::size_t k = 0; k < 20; ++k)
    for (std::size_t j = 0; j < 4; ++j) w[k][j] = 0.5 * (a[k][j] + b[k][j]);
  const auto c = hs::classify_pattern(w);
  EXPECT_TRUE(c.pattern == dg::Pattern::A || c.pattern == dg::Pattern::B);
  EXPECT_LT(c.confidence, 0.05);
}

TEST(Classifier, WrongLengthThrows) {
  std::vector<dg::Posture> w(19);
  EXPECT_THROW(hs::classify_pattern(w), std::invalid_argument);
}
