#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlac/pipeline/config.hpp"
#include "xlac/pipeline/experiment.hpp"
#include "xlac/pipeline/results.hpp"

namespace xlac::pipeline {

inline const char* system_label(const std::string& s) {
  if (s == "oracle_lr_tgt") return "mono-ling target AM (ORACLE)";
  if (s == "mono_wr_src" || s == "mono_lr_src") return "mono-ling source AM";
  if (s == "multiling") return "multi-ling source AM";
  if (s == "proposed") return "proposed CL adapt AM";
  if (s == "multitask3") return "multi-task CL AM";
  if (s == "multitask3_ft") return "multi-task CL + adapt AM";
  if (s == "multicond") return "multi-cond CL AM";
  if (s == "multicond_ft") return "multi-cond CL + adapt AM";
  return "?";
}

/// Lists every (system, condition, seed) cell and sweep point the config
/// asks for but the table lacks.
inline std::vector<std::string> missing_cells(const ExperimentConfig& c, const ResultsTable& t) {
  std::set<std::tuple<std::string, std::string, std::uint64_t>> have;
  for (const auto& r : t.rows) have.emplace(r.system, r.condition, r.seed);
  std::set<std::tuple<std::size_t, double, std::uint64_t>> have_sweep;
  for (const auto& r : t.sweep) have_sweep.emplace(r.k_layers, r.epochs, r.seed);
  std::vector<std::string> missing;
  for (const auto& system : all_systems()) {
    if (!c.has_system(system)) continue;
    for (const auto& [cond, _] : system_conditions(c, system))
      for (auto seed : c.seeds)
        if (!have.contains({system, cond, seed}))
          missing.push_back(system + "/" + cond + "/seed " + std::to_string(seed));
  }
  if (c.has_system("proposed"))
    for (auto k : c.sweep.k_layers)
      for (double e : c.sweep.epochs)
        for (auto seed : c.seeds)
          if (!have_sweep.contains({k, e, seed}))
            missing.push_back("sweep k=" + std::to_string(k) + " epochs=" + epochs_label(e) + "/seed " +
                              std::to_string(seed));
  return missing;
}

struct Report {
  std::string text;
  nlohmann::json summary;
};

namespace detail {

inline std::optional<double> mean_of(const ResultsTable& t, const std::string& system, const std::string& cond) {
  auto s = t.stats(system, cond);
  if (!s) return std::nullopt;
  return s->mean;
}

}  // namespace detail

/// Builds the aligned tables and the machine-readable summary. Fails with an
/// incomplete-results error listing the missing cells.
inline Report build_report(const ExperimentConfig& c, const ResultsTable& t) {
  const auto missing = missing_cells(c, t);
  if (!missing.empty()) {
    std::string msg = "results incomplete, " + std::to_string(missing.size()) + " missing cells:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
    if (missing.size() > 20) msg += "\n  ...";
    fail(ErrorKind::incomplete, msg);
  }

  using nlohmann::json;
  Report rep;
  std::string& out = rep.text;
  json& sum = rep.summary;
  const std::string hash = config_hash(c);
  std::string seeds;
  for (auto s : c.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  out += "metric: frame error rate (%), mean +- std over seeds; not WER\n";
  out += "config_hash: " + hash + "  profile: " + c.profile + "  seeds: " + seeds + "\n\n";
  sum["v"] = kResultsVersion;
  sum["config_hash"] = hash;
  sum["seeds"] = c.seeds;
  sum["metric"] = "frame_error_percent";

  auto cell = [&](const std::string& system, const std::string& cond) {
    return c.has_system(system) ? fmt_stats(t.stats(system, cond)) : std::string("---");
  };

  // Table 1: in-domain and cross-domain baselines.
  {
    TextTable tab({"baselines", "WR src", "WR tgt", "LR src", "LR tgt"});
    tab.add({system_label("oracle_lr_tgt"), "---", "---", cell("oracle_lr_tgt", "lr_src"),
             cell("oracle_lr_tgt", "lr_tgt")});
    tab.add({system_label("mono_lr_src"), cell("mono_wr_src", "wr_src"), cell("mono_wr_src", "wr_tgt"),
             cell("mono_lr_src", "lr_src"), cell("mono_lr_src", "lr_tgt")});
    tab.add({system_label("multiling"), cell("multiling", "wr_src"), cell("multiling", "wr_tgt"),
             cell("multiling", "lr_src"), cell("multiling", "lr_tgt")});
    out += "Table 1: baselines by test condition\n" + tab.render() + "\n";
  }

  // Table 2: all systems on the target-domain test sets.
  {
    TextTable tab({"system", "WR tgt", "LR tgt"});
    int idx = 1;
    for (const auto& [label_sys, wr_sys] : std::vector<std::pair<std::string, std::string>>{
             {"mono_lr_src", "mono_wr_src"}, {"multiling", "multiling"}, {"proposed", "proposed"},
             {"multitask3", "multitask3"}, {"multitask3_ft", "multitask3_ft"}, {"multicond", "multicond"},
             {"multicond_ft", "multicond_ft"}}) {
      tab.add({std::string(system_label(label_sys)) + " (" + std::to_string(idx++) + ")", cell(wr_sys, "wr_tgt"),
               cell(label_sys, "lr_tgt")});
    }
    out += "Table 2: target-domain comparison\n" + tab.render() + "\n";
  }

  // Table 3: LR language over target-like domains plus their average.
  {
    std::vector<std::string> doms;
    for (const auto& d : c.test_domains())
      if (d != "src") doms.push_back(d);
    std::vector<std::string> header{"LR language"};
    for (const auto& d : doms) header.push_back("LR " + d);
    header.push_back("Avg.");
    TextTable tab(header);
    for (const std::string system : {"mono_lr_src", "multiling", "proposed"}) {
      std::vector<std::string> row{system_label(system)};
      double acc = 0.0;
      bool ok = c.has_system(system);
      for (const auto& d : doms) {
        row.push_back(cell(system, condition_name("lr", d)));
        auto m = detail::mean_of(t, system, condition_name("lr", d));
        ok = ok && m.has_value();
        if (m) acc += *m;
      }
      row.push_back(ok ? fmt(acc / static_cast<double>(doms.size())) : "---");
      tab.add(row);
      if (ok) sum["table3_avg"][system] = acc / static_cast<double>(doms.size());
    }
    out += "Table 3: LR target-like conditions\n" + tab.render() + "\n";
  }

  // Means used by the checks.
  for (const auto& system : all_systems())
    if (c.has_system(system))
      for (const auto& [cond, _] : system_conditions(c, system)) {
        auto s = *t.stats(system, cond);
        sum["means"][system][cond] = s.mean;
        sum["stds"][system][cond] = s.std;
      }

  // Sweep.
  if (!t.sweep.empty()) {
    std::map<std::pair<std::size_t, double>, std::vector<double>> lr, wr;
    for (const auto& r : t.sweep) {
      lr[{r.k_layers, r.epochs}].push_back(r.lr_tgt);
      wr[{r.k_layers, r.epochs}].push_back(r.wr_tgt);
    }
    std::pair<std::size_t, double> best{};
    double best_v = 0, worst_v = 0;
    bool first = true;
    for (auto k : c.sweep.k_layers)
      for (double e : c.sweep.epochs) {
        const double m = summarize(lr.at({k, e})).mean;
        if (first || m < best_v) best_v = m, best = {k, e};
        if (first || m > worst_v) worst_v = m;
        first = false;
      }
    std::vector<std::string> header{"k \\ epochs"};
    for (double e : c.sweep.epochs) header.push_back(epochs_label(e));
    TextTable tab(header);
    for (auto k : c.sweep.k_layers) {
      std::vector<std::string> row{"1-" + std::to_string(k)};
      for (double e : c.sweep.epochs) {
        const bool is_best = std::make_pair(k, e) == best;
        row.push_back((is_best ? "*" : "") + fmt(summarize(lr.at({k, e})).mean) + " (" +
                      fmt(summarize(wr.at({k, e})).mean) + ")");
        sum["sweep"].push_back({{"k_layers", k}, {"epochs", e}, {"lr_tgt", summarize(lr.at({k, e})).mean},
                                {"wr_tgt", summarize(wr.at({k, e})).mean}});
      }
      tab.add(row);
    }
    out += "Sweep: LR tgt (WR tgt) by adapted layers and epochs, * = argmin of LR tgt\n" + tab.render();
    out += "argmin: k=" + std::to_string(best.first) + " epochs=" + epochs_label(best.second) + "  spread " +
           fmt(worst_v - best_v) + " (bound " + fmt(c.report.sweep_spread) + ")\n\n";
    sum["sweep_argmin"] = {{"k_layers", best.first}, {"epochs", best.second}, {"lr_tgt", best_v}};
    sum["sweep_spread"] = worst_v - best_v;
    sum["checks"]["sweep_spread"] = worst_v - best_v <= c.report.sweep_spread;
  }

  // Oracle estimates.
  if (!t.oracle.empty()) {
    TextTable tab({"condition", "Bayes error"});
    for (const auto& cond : test_conditions(c))
      if (auto s = t.oracle_stats(cond)) {
        tab.add({cond, fmt_stats(s)});
        sum["bayes"][cond] = s->mean;
      }
    out += "Monte-Carlo Bayes error (generative model)\n" + tab.render() + "\n";
  }

  // Orderings and relative improvements on LR tgt.
  auto m = [&](const std::string& s) { return detail::mean_of(t, s, "lr_tgt"); };
  std::string checks;
  auto check = [&](const std::string& name, bool ok, const std::string& text) {
    sum["checks"][name] = ok;
    checks += std::string(ok ? "  ok    " : "  FLAG  ") + text + "\n";
  };
  auto rel = [&](const std::string& name, const std::string& a, const std::string& b) {
    if (!m(a) || !m(b)) return;
    const double r = relative_improvement(*m(a), *m(b));
    sum["relative_improvement"][name] = r;
    checks += "  relative improvement " + b + " over " + a + ": (" + fmt(*m(a)) + " - " + fmt(*m(b)) + ") / " +
              fmt(*m(a)) + " = " + fmt(100.0 * r, 1) + "%\n";
  };
  const double margin = c.report.margin;
  if (m("oracle_lr_tgt") && m("proposed"))
    check("oracle_le_proposed", *m("oracle_lr_tgt") <= *m("proposed"), "oracle <= proposed on LR tgt");
  if (m("proposed") && m("multiling"))
    check("proposed_lt_multiling", *m("proposed") + margin <= *m("multiling"),
          "proposed < multiling by >= " + fmt(margin, 1) + " (gap " + fmt(*m("multiling") - *m("proposed")) + ")");
  if (m("multiling") && m("mono_lr_src"))
    check("multiling_lt_mono", *m("multiling") + margin <= *m("mono_lr_src"),
          "multiling < mono by >= " + fmt(margin, 1) + " (gap " + fmt(*m("mono_lr_src") - *m("multiling")) + ")");
  for (const std::string base : {"multitask3", "multicond"}) {
    if (m("proposed") && m(base))
      check("proposed_le_" + base, *m("proposed") <= *m(base) + c.report.slack,
            "proposed <= " + base + " + " + fmt(c.report.slack, 1) + " (" + fmt(*m("proposed")) + " vs " +
                fmt(*m(base)) + ")");
    if (m(base) && m(base + "_ft"))
      check(base + "_ft_delta", std::abs(*m(base + "_ft") - *m(base)) <= c.report.ft_band,
            "|" + base + "_ft - " + base + "| <= " + fmt(c.report.ft_band, 1) + " (delta " +
                fmt(*m(base + "_ft") - *m(base)) + ")");
  }
  rel("multiling_over_mono", "mono_lr_src", "multiling");
  rel("proposed_over_multiling", "multiling", "proposed");
  rel("proposed_over_mono", "mono_lr_src", "proposed");
  if (!checks.empty()) out += "Checks on LR tgt means\n" + checks;
  return rep;
}

inline Report emit_tables(const ExperimentConfig& c, const ResultsTable& t, const fs::path& out) {
  Report rep = build_report(c, t);
  fs::create_directories(out);
  binary::Writer text, sum;
  text.bytes(rep.text);
  text.save(out / "tables.txt");
  sum.bytes(rep.summary.dump(2) + "\n");
  sum.save(out / "summary.json");
  return rep;
}

}  // namespace xlac::pipeline
