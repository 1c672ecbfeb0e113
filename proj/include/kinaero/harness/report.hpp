#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "kinaero/harness/experiment.hpp"
#include "kinaero/harness/stats.hpp"

namespace kinaero::harness {

inline std::vector<AttemptSummary> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* k : {"w", "attempt", "from", "to", "mean_torque", "mean_e", "mean_r1", "mean_r2", "success"})
    if (!col.count(k)) throw std::runtime_error(path.string() + ": missing column " + k);
  std::vector<AttemptSummary> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) throw std::runtime_error(path.string() + ": ragged row");
    AttemptSummary s;
    s.w = std::stod(cells[col["w"]]);
    s.attempt = std::stoul(cells[col["attempt"]]);
    s.from = datagen::pattern_from_letter(cells[col["from"]].at(0));
    s.to = datagen::pattern_from_letter(cells[col["to"]].at(0));
    s.mean_torque = std::stod(cells[col["mean_torque"]]);
    s.mean_e = std::stod(cells[col["mean_e"]]);
    s.mean_r1 = std::stod(cells[col["mean_r1"]]);
    s.mean_r2 = std::stod(cells[col["mean_r2"]]);
    s.success = cells[col["success"]] == "1";
    if (col.count("trained")) s.trained = cells[col["trained"]] == "1";
    out.push_back(s);
  }
  return out;
}

struct GroupMeans {
  std::size_t n = 0;
  double torque = 0.0, e = 0.0, r1 = 0.0, r2 = 0.0;
  std::size_t successes = 0;
};

inline GroupMeans group_means(const std::vector<AttemptSummary>& rows) {
  GroupMeans g;
  for (const auto& r : rows) {
    g.torque += r.mean_torque;
    g.e += r.mean_e;
    g.r1 += r.mean_r1;
    g.r2 += r.mean_r2;
    g.successes += r.success;
  }
  g.n = rows.size();
  if (g.n) {
    const double inv = 1.0 / static_cast<double>(g.n);
    g.torque *= inv;
    g.e *= inv;
    g.r1 *= inv;
    g.r2 *= inv;
  }
  return g;
}

// KLD of a row: the layer-wise window sums added up.
inline double row_kld(const AttemptSummary& r) { return r.mean_r1 + r.mean_r2; }

struct Exp1Report {
  std::vector<double> w;            // ascending
  std::vector<GroupMeans> means;    // per w
  bool torque_increasing = false;
  bool e_increasing = false;
  bool kld_decreasing = false;
};

inline Exp1Report exp1_report(const std::vector<AttemptSummary>& rows) {
  std::map<double, std::vector<AttemptSummary>> by_w;
  for (const auto& r : rows) by_w[r.w].push_back(r);
  Exp1Report rep;
  for (const auto& [w, group] : by_w) {
    rep.w.push_back(w);
    rep.means.push_back(group_means(group));
  }
  auto monotone = [&](auto value, bool increasing) {
    if (rep.means.size() < 2) return false;
    for (std::size_t i = 1; i < rep.means.size(); ++i) {
      const double a = value(rep.means[i - 1]), b = value(rep.means[i]);
      if (increasing ? !(b > a) : !(b < a)) return false;
    }
    return true;
  };
  rep.torque_increasing = monotone([](const GroupMeans& g) { return g.torque; }, true);
  rep.e_increasing = monotone([](const GroupMeans& g) { return g.e; }, true);
  rep.kld_decreasing = monotone([](const GroupMeans& g) { return g.r1 + g.r2; }, false);
  return rep;
}

struct Exp2Report {
  GroupMeans trained, untrained;
  MannWhitneyResult torque, e, kld;  // untrained greater than trained
  bool success_ok = false;           // untrained rate <= trained rate
};

inline Exp2Report exp2_report(const std::vector<AttemptSummary>& rows) {
  std::vector<AttemptSummary> tr, un;
  for (const auto& r : rows) (r.trained ? tr : un).push_back(r);
  if (tr.empty() || un.empty()) throw std::runtime_error("exp2 report needs both transition classes");
  Exp2Report rep;
  rep.trained = group_means(tr);
  rep.untrained = group_means(un);
  auto test = [&](auto value) {
    std::vector<double> x, y;
    for (const auto& r : un) x.push_back(value(r));
    for (const auto& r : tr) y.push_back(value(r));
    return mann_whitney_greater(x, y);
  };
  rep.torque = test([](const AttemptSummary& r) { return r.mean_torque; });
  rep.e = test([](const AttemptSummary& r) { return r.mean_e; });
  rep.kld = test([](const AttemptSummary& r) { return row_kld(r); });
  rep.success_ok = rep.untrained.successes * rep.trained.n <= rep.trained.successes * rep.untrained.n;
  return rep;
}

}  // namespace kinaero::harness
