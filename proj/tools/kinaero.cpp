#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kinaero/datagen/dataset.hpp"
#include "kinaero/datagen/pfsm.hpp"
#include "kinaero/harness/classifier.hpp"
#include "kinaero/harness/experiment.hpp"
#include "kinaero/harness/report.hpp"
#include "kinaero/robot/scenario.hpp"
#include "kinaero/service/run_config.hpp"
#include "kinaero/service/server.hpp"
#include "kinaero/training/checkpoint.hpp"
#include "kinaero/training/prior_gen.hpp"
#include "kinaero/training/train.hpp"

namespace fs = std::filesystem;
namespace dg = kinaero::datagen;
namespace hs = kinaero::harness;
namespace kt = kinaero::training;
namespace kp = kinaero::pvrnn;
namespace sv = kinaero::service;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every RunConfig leaf becomes --section.key on each subcommand.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON RunConfig file")->check(CLI::ExistingFile);
    for (const auto& [path, def] : sv::flatten(sv::default_run_config())) {
      const std::string p = path;
      app->add_option_function<std::string>("--" + p, [this, p](const std::string& v) { values[p] = v; },
                                            "default " + def.dump())
          ->group("RunConfig");
    }
  }

  void alias(CLI::App* app, const std::string& flag, const std::string& path, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, path](const std::string& v) { values[path] = v; }, help);
  }

  json resolve() const {
    try {
      return sv::resolve_run_config(config_file, values);
    } catch (const sv::RunConfigError& e) {
      throw UsageError(e.what());
    }
  }
};

void write_config_next_to(const json& cfg, const fs::path& path) { sv::write_run_config(cfg, path); }

fs::path sibling(const fs::path& file, const std::string& suffix) {
  fs::path p = file;
  p.replace_filename(file.stem().string() + suffix);
  return p;
}

int cmd_gen_data(const json& cfg, const fs::path& out) {
  const auto& d = cfg["data"];
  const auto ds = dg::build_dataset(dg::reference_pfsm(), d["seqs"].get<std::size_t>(),
                                    d["cycles"].get<std::size_t>(), d["seed"].get<std::uint64_t>());
  dg::write_dataset(ds, out);
  write_config_next_to(cfg, out / "run_config.json");
  std::printf("wrote %zu sequences x %zu cycles to %s\n", ds.sequences.size(), ds.n_cycles, out.c_str());
  return 0;
}

int cmd_train(const json& cfg, const fs::path& data, const fs::path& out, const fs::path& resume) {
  const auto ds = dg::load_dataset(data);
  const auto net = cfg["network"].get<kp::NetworkConfig>();
  const auto tc = cfg["train"].get<kt::TrainConfig>();
  fs::create_directories(out);
  write_config_next_to(cfg, out / "run_config.json");
  std::ofstream log(out / "train_log.jsonl");
  auto on_epoch = [&](const kt::EpochLog& l) {
    log << l.to_json().dump() << "\n";
    std::printf("epoch %zu F=%.4f e=%.3e", l.epoch, l.free_energy, l.e_mean);
    for (std::size_t i = 0; i < l.r_mean.size(); ++i) std::printf(" r%zu=%.3e", i + 1, l.r_mean[i]);
    std::printf("\n");
    std::fflush(stdout);
  };
  kt::TrainResult res;
  if (!resume.empty()) {
    const auto from = kt::load_checkpoint(resume);
    res = kt::train(kt::dataset_observations(ds), from, tc, on_epoch);
  } else {
    res = kt::train(ds, net, kp::init_params(net, cfg["init_seed"].get<std::uint64_t>()), tc, on_epoch);
  }
  if (res.diverged) {
    std::fprintf(stderr, "training diverged: %s\n", res.error.c_str());
    return 1;
  }
  kt::save_checkpoint(res.checkpoint, out);
  std::printf("checkpoint written to %s\n", out.c_str());
  return 0;
}

int cmd_prior_gen(const json& cfg, const fs::path& ckpt_dir, const fs::path& out) {
  const auto ck = kt::load_checkpoint(ckpt_dir);
  const auto& pg = cfg["prior_gen"];
  const auto trace = kt::prior_generate(ck.params, ck.config, pg["steps"].get<std::size_t>(),
                                        pg["seed"].get<std::uint64_t>());
  fs::create_directories(out);
  write_config_next_to(cfg, out / "run_config.json");
  std::vector<dg::Posture> traj;
  {
    std::ofstream f(out / "prior_gen.csv");
    f << "t,j0,j1,j2,j3\n";
    std::size_t t = 0;
    for (const auto& o : trace.outputs()) {
      dg::Posture p{};
      std::copy(o.begin(), o.end(), p.begin());
      traj.push_back(p);
      f << t++;
      for (double v : p) f << ',' << hs::format_double(v);
      f << "\n";
    }
  }
  const auto cycles = hs::classify_cycles(traj);
  std::vector<std::size_t> labels;
  std::size_t confident = 0;
  for (const auto& c : cycles) {
    labels.push_back(static_cast<std::size_t>(c.pattern));
    confident += c.confidence > 0.2;
  }
  const auto st = hs::transition_stats(labels);
  std::ofstream f(out / "prior_gen_summary.csv");
  f << "from,to,count,prob\n";
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      f << dg::pattern_letter(dg::pattern_from_index(static_cast<int>(i))) << ','
        << dg::pattern_letter(dg::pattern_from_index(static_cast<int>(j))) << ',' << st.counts[i][j] << ','
        << hs::format_double(st.prob[i][j]) << "\n";
  std::printf("%zu cycles, %.1f%% classified with confidence > 0.2\n", cycles.size(),
              cycles.empty() ? 0.0 : 100.0 * static_cast<double>(confident) / static_cast<double>(cycles.size()));
  for (const auto& [a, b] : std::vector<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 3}, {2, 3}, {3, 0}})
    std::printf("  %c->%c %.3f\n", 'A' + a, 'A' + b, st.edge(a, b));
  return 0;
}

int cmd_interact(const json& cfg, const fs::path& ckpt_dir, const fs::path& script, const fs::path& log,
                 std::size_t steps) {
  const auto ck = kt::load_checkpoint(ckpt_dir);
  kinaero::robot::Scenario sc;
  if (!script.empty()) sc = kinaero::robot::load_scenario(script);
  sc.hand = sv::experiment_config(cfg).hand;
  if (log.has_parent_path()) fs::create_directories(log.parent_path());
  write_config_next_to(cfg, sibling(log, ".run_config.json"));
  std::ofstream f(log);
  if (!f) throw std::runtime_error("cannot write " + log.string());
  hs::Session session(ck.params, ck.config, sv::session_config(cfg));
  for (std::size_t t = 0; t < steps; ++t) f << session.tick(sc).to_json().dump() << "\n";
  std::printf("%zu steps logged to %s\n", steps, log.c_str());
  return 0;
}

std::string w_tag(double w) {
  std::string s = hs::format_double(w);
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

int cmd_exp(int which, const json& cfg, const std::vector<std::string>& ckpts, const fs::path& out) {
  if (ckpts.empty()) throw UsageError("at least one --ckpt is required");
  fs::create_directories(out);
  write_config_next_to(cfg, out / "run_config.json");
  const auto base = sv::experiment_config(cfg);
  std::vector<hs::AttemptSummary> rows;
  std::size_t next_attempt = 0;
  auto run = [&](const kt::Checkpoint& ck, hs::ExperimentConfig ec, hs::TransitionClass cls, const fs::path& log) {
    auto got = hs::run_logged_session(ck.params, ck.config, ec, cls, log);
    for (auto& r : got) r.attempt = next_attempt++;
    std::printf("%s: %zu attempts\n", log.filename().c_str(), got.size());
    std::fflush(stdout);
    rows.insert(rows.end(), got.begin(), got.end());
  };
  for (std::size_t k = 0; k < ckpts.size(); ++k) {
    const auto ck = kt::load_checkpoint(ckpts[k]);
    const std::string tag = "ck" + std::to_string(k);
    if (which == 1) {
      for (double w : cfg["experiment"]["w_list"].get<std::vector<double>>()) {
        auto ec = base;
        ec.session.inference.w = w;
        run(ck, ec, hs::TransitionClass::Trained, out / ("exp1_" + tag + "_w" + w_tag(w) + ".jsonl"));
      }
    } else {
      run(ck, base, hs::TransitionClass::Trained, out / ("exp2_" + tag + "_trained.jsonl"));
      run(ck, base, hs::TransitionClass::Untrained, out / ("exp2_" + tag + "_untrained.jsonl"));
    }
  }
  const fs::path csv = out / (which == 1 ? "exp1_summary.csv" : "exp2_summary.csv");
  hs::write_summary_csv(csv, rows, which == 2);
  std::printf("summary written to %s\n", csv.c_str());
  return 0;
}

void print_exp1(const hs::Exp1Report& rep) {
  std::printf("experiment 1\n  %-8s %6s %12s %12s %12s %12s %8s\n", "w", "n", "torque", "e", "kld_l1", "kld_l2",
              "success");
  for (std::size_t i = 0; i < rep.w.size(); ++i) {
    const auto& g = rep.means[i];
    std::printf("  %-8g %6zu %12.5g %12.5g %12.5g %12.5g %5zu/%zu\n", rep.w[i], g.n, g.torque, g.e, g.r1, g.r2,
                g.successes, g.n);
  }
  std::printf("  torque increasing in w: %s\n  prediction error increasing in w: %s\n  KLD decreasing in w: %s\n",
              rep.torque_increasing ? "yes" : "no", rep.e_increasing ? "yes" : "no", rep.kld_decreasing ? "yes" : "no");
}

void print_exp2(const hs::Exp2Report& rep) {
  std::printf("experiment 2\n  %-10s %6s %12s %12s %12s %8s\n", "class", "n", "torque", "e", "kld", "success");
  for (const auto& [name, g] : {std::pair{"trained", rep.trained}, std::pair{"untrained", rep.untrained}})
    std::printf("  %-10s %6zu %12.5g %12.5g %12.5g %5zu/%zu\n", name, g.n, g.torque, g.e, g.r1 + g.r2, g.successes,
                g.n);
  for (const auto& [name, t] : {std::pair{"torque", rep.torque}, std::pair{"e", rep.e}, std::pair{"kld", rep.kld}})
    std::printf("  untrained > trained %-7s U=%g p=%.4g (%s)\n", name, t.u, t.p, t.exact ? "exact" : "normal approx");
  std::printf("  untrained success rate <= trained: %s\n", rep.success_ok ? "yes" : "no");
}

int cmd_report(const fs::path& dir) {
  bool any = false;
  if (fs::exists(dir / "exp1_summary.csv")) {
    print_exp1(hs::exp1_report(hs::read_summary_csv(dir / "exp1_summary.csv")));
    any = true;
  }
  if (fs::exists(dir / "exp2_summary.csv")) {
    print_exp2(hs::exp2_report(hs::read_summary_csv(dir / "exp2_summary.csv")));
    any = true;
  }
  if (!any) throw std::runtime_error("no exp1_summary.csv or exp2_summary.csv in " + dir.string());
  return 0;
}

sv::Server* g_server = nullptr;

int cmd_serve(const json& cfg, const fs::path& ckpt_dir, const fs::path& log) {
  const auto ck = kt::load_checkpoint(ckpt_dir);
  if (!log.empty()) write_config_next_to(cfg, sibling(log, ".run_config.json"));
  sv::Server server(ck.params, ck.config, sv::session_config(cfg), cfg["serve"].get<sv::ServeSettings>(), log);
  server.start();
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->request_stop();
  });
  std::printf("serving on ws://127.0.0.1:%d\n", server.port());
  std::fflush(stdout);
  server.wait();
  g_server = nullptr;
  server.stop();
  const auto st = server.stats();
  std::printf("%zu ticks, %.2f%% within %zu ms, p50 %.2f ms, p99 %.2f ms, max %.2f ms\n", st.ticks,
              100.0 * st.within_budget(), cfg["serve"]["tick_ms"].get<std::size_t>(), st.p50_ms, st.p99_ms, st.max_ms);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kinaero: PV-RNN training, compliant robot simulation and experiments"};
  app.require_subcommand(1);

  std::string out, data, ckpt, script, log, resume, dir;
  std::vector<std::string> ckpts;
  std::size_t steps = 2200;

  std::map<std::string, ConfigFlags> flags;
  auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    flags[name].attach(s);
    return s;
  };

  auto* gen = sub("gen-data", "sample a PFSM dataset");
  gen->add_option("--out", out, "output directory")->required();
  flags["gen-data"].alias(gen, "--seqs", "data.seqs", "number of sequences");
  flags["gen-data"].alias(gen, "--cycles", "data.cycles", "cycles per sequence");
  flags["gen-data"].alias(gen, "--seed", "data.seed", "dataset seed");

  auto* tr = sub("train", "train a PV-RNN on a dataset");
  tr->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", out, "checkpoint directory")->required();
  tr->add_option("--resume", resume, "continue from this checkpoint")->check(CLI::ExistingDirectory);
  flags["train"].alias(tr, "--epochs", "train.epochs", "training epochs");
  flags["train"].alias(tr, "--seed", "train.seed", "training noise seed");

  auto* pg = sub("prior-gen", "generate from the learned prior and classify the result");
  pg->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  pg->add_option("--out", out, "output directory")->required();
  flags["prior-gen"].alias(pg, "--steps", "prior_gen.steps", "generated steps");
  flags["prior-gen"].alias(pg, "--seed", "prior_gen.seed", "sampling seed");

  auto* in = sub("interact", "run one closed-loop session from a torque script");
  in->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  in->add_option("--script", script, "scenario JSON")->check(CLI::ExistingFile);
  in->add_option("--log", log, "telemetry JSON lines")->required();
  in->add_option("--steps", steps, "network steps")->check(CLI::PositiveNumber);
  flags["interact"].alias(in, "--w", "inference.w", "meta-prior w");
  flags["interact"].alias(in, "--seed", "session_seed", "session seed");

  CLI::App* exps[2];
  for (int k = 0; k < 2; ++k) {
    const std::string name = k == 0 ? "exp1" : "exp2";
    exps[k] = sub(name, k == 0 ? "trained transitions across experiment.w_list"
                               : "trained vs untrained transitions at inference.w");
    exps[k]->add_option("--ckpt", ckpts, "checkpoint directory, once per training seed")
        ->required()
        ->check(CLI::ExistingDirectory);
    exps[k]->add_option("--out", out, "output directory")->required();
    flags[name].alias(exps[k], "--seed", "experiment.seed", "attempt schedule seed");
    if (k == 1) flags[name].alias(exps[k], "--w", "inference.w", "meta-prior w");
  }

  auto* srv = sub("serve", "realtime websocket service");
  srv->add_option("--ckpt", ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  srv->add_option("--log", log, "telemetry JSON lines");
  flags["serve"].alias(srv, "--port", "serve.port", "listen port, 0 picks one");
  flags["serve"].alias(srv, "--w", "inference.w", "initial meta-prior w");

  auto* rep = app.add_subcommand("report", "orderings and Mann-Whitney tests from summary CSVs");
  rep->add_option("--dir", dir, "directory holding exp1_summary.csv and/or exp2_summary.csv")
      ->required()
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    if (name == "report") return cmd_report(dir);
    const json cfg = flags[name].resolve();
    if (name == "gen-data") return cmd_gen_data(cfg, out);
    if (name == "train") return cmd_train(cfg, data, out, resume);
    if (name == "prior-gen") return cmd_prior_gen(cfg, ckpt, out);
    if (name == "interact") return cmd_interact(cfg, ckpt, script, log, steps);
    if (name == "exp1") return cmd_exp(1, cfg, ckpts, out);
    if (name == "exp2") return cmd_exp(2, cfg, ckpts, out);
    if (name == "serve") return cmd_serve(cfg, ckpt, log);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
