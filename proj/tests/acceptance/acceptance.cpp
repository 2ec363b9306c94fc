// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any failed. Usage: xlac_acceptance --work <dir> [--only 1,5,9]
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "support/gradcheck.hpp"
#include "xlac/model/checkpoint.hpp"
#include "xlac/model/graft.hpp"
#include "xlac/pipeline/experiment.hpp"
#include "xlac/pipeline/report.hpp"
#include "xlac/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace xlac;
using namespace xlac::pipeline;
using clock_type = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(XLAC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig config_file(const std::string& name) {
  return load_config(std::nullopt, fs::path(XLAC_CONFIG_DIR) / name);
}

bool layers_equal(const Network& a, const Network& b, std::size_t first, std::size_t last) {
  for (std::size_t i = first; i < last; ++i)
    if (!bitwise_equal(a.layers[i], b.layers[i])) return false;
  return true;
}

// ------------------------------------------------------------------ 1

Verdict gradient_checks() {
  const auto t0 = clock_type::now();
  double worst = 0.0;
  std::string worst_at;
  std::size_t coords = 0;
  bool ok = true;
  const auto suite = xlac::testing::gradient_suite();
  for (const auto& entry : suite)
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto r = entry.run(seed * 7919 + 3);
      ok = ok && r.ok();
      coords += r.checked;
      if (r.max_rel > worst) worst = r.max_rel, worst_at = entry.name + ":" + r.worst;
    }
  const double secs = seconds_since(t0);
  return {ok && secs < 60.0, std::to_string(suite.size()) + " ops x 20 instances (" + std::to_string(coords) +
                                 " coordinates), max rel err " + sci(worst) + " at " + worst_at + ", " +
                                 fmt(secs, 1) + " s"};
}

// ------------------------------------------------------------------ 2

Verdict freeze_graft(const ExperimentConfig& c, const fs::path& desk_out) {
  const fs::path seed = seed_dir(desk_out, c.seeds.front());
  const Network multiling = load_checkpoint(seed / "multiling" / "model.ckpt");
  const CorpusSet data = read_corpora(c, seed / "data");
  const std::size_t depth = multiling.trunk_depth(), n = multiling.layer_count();

  Network adapted = multiling;
  adapt_shared_layers(adapted, "wr", data.train_corpus("wr_tgt"), 3, stage_config(c.adapt.train, 1));
  const bool frozen_kept = layers_equal(adapted, multiling, 3, n);
  bool moved = true;
  for (std::size_t i = 0; i < 3; ++i) moved = moved && !bitwise_equal(adapted.layers[i], multiling.layers[i]);

  const Network grafted = transfer_shared_layers(adapted, multiling, depth);
  const std::size_t lr = grafted.head_layer("lr");
  const bool trunk_from_adapted = layers_equal(grafted, adapted, 0, depth);
  const bool lr_head_kept = layers_equal(grafted, multiling, lr, lr + 2);

  // The pipeline's own proposed checkpoints obey the same rule.
  const Network p_adapted = load_checkpoint(seed / "proposed" / "adapted.ckpt");
  const Network p_model = load_checkpoint(seed / "proposed" / "model.ckpt");
  const bool pipeline_ok = layers_equal(p_adapted, multiling, c.adapt.k_layers, n) &&
                           layers_equal(p_model, p_adapted, 0, depth) && layers_equal(p_model, multiling, depth, n);

  return {frozen_kept && moved && trunk_from_adapted && lr_head_kept && pipeline_ok,
          std::string("layers 4..7 + heads unchanged: ") + (frozen_kept ? "yes" : "NO") +
              ", layers 1..3 updated: " + (moved ? "yes" : "NO") +
              ", grafted trunk == adapted: " + (trunk_from_adapted ? "yes" : "NO") +
              ", LR head == original: " + (lr_head_kept ? "yes" : "NO") +
              ", pipeline checkpoints: " + (pipeline_ok ? "yes" : "NO")};
}

// ------------------------------------------------------------------ 3

Verdict optimizer_contract(const ExperimentConfig& c, const fs::path& desk_out) {
  const ExperimentConfig paper = parse_config(profile_json("paper"));
  const double lr0 = lr_schedule(paper.train, 0.0), lr1 = lr_schedule(paper.train, 1.0);
  const bool endpoints = lr0 == 0.0015 && lr1 == 0.00015;

  const CorpusSet data = read_corpora(c, seed_dir(desk_out, c.seeds.front()) / "data");
  const double bound = paper.train.max_change * (1.0 + 1e-12);
  double max_norm = 0.0;
  std::size_t updates = 0, clipped = 0;
  // Desk learning rate, then a rate high enough that most steps hit the cap.
  for (double lr : {c.train.initial_lr, 2.0}) {
    Network net = build_network(system_spec(c, "multiling"), Rng(5));
    TrainConfig cfg = stage_config(c.train, 5);
    cfg.initial_lr = lr;
    cfg.max_change = paper.train.max_change;
    cfg.epochs = 1;
    Network before = net;
    auto measure = [&] {
      for (std::size_t i = 0; i < net.layer_count(); ++i) {
        double sq = 0.0;
        auto a = net.layers[i].weight.data(), b = before.layers[i].weight.data();
        for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
        for (std::size_t k = 0; k < net.layers[i].bias.size(); ++k) {
          const double d = net.layers[i].bias[k] - before.layers[i].bias[k];
          sq += d * d;
        }
        if (sq > 0) ++updates;
        max_norm = std::max(max_norm, std::sqrt(sq));
      }
      before = net;
    };
    bool first = true;
    TrainHooks hooks;
    hooks.on_minibatch = [&](const PlanEntry&) {
      if (!first) measure();
      first = false;
    };
    hooks.log = [&](const TrainRecord& r) { clipped += r.clipped_layers.size(); };
    std::map<std::string, const Corpus*> tasks{{"lr", &data.train_corpus("lr_src")},
                                               {"wr", &data.train_corpus("wr_src")}};
    train_multitask(net, tasks, cfg, hooks);
    measure();
  }
  return {endpoints && max_norm <= bound && clipped > 0,
          "lr(0)=" + sci(lr0) + " lr(1)=" + sci(lr1) + (endpoints ? " exact" : " INEXACT") + "; " +
              std::to_string(updates) + " layer updates, " + std::to_string(clipped) + " clipped, max norm " +
              fmt(max_norm, 15)};
}

// ------------------------------------------------------------------ 4

Verdict sampling_contract(const ExperimentConfig& c, const fs::path& desk_out) {
  const CorpusSet data = read_corpora(c, seed_dir(desk_out, c.seeds.front()) / "data");
  std::map<std::string, const Corpus*> tasks{{"lr", &data.train_corpus("lr_src")},
                                             {"wr", &data.train_corpus("wr_src")},
                                             {"wr_tgt", &data.train_corpus("wr_tgt")}};
  TrainConfig cfg = stage_config(c.train, 11);
  cfg.epochs = 2;
  std::map<std::string, std::size_t> examples;
  std::size_t steps_per_epoch = 0;
  for (const auto& [task, corpus] : tasks) {
    examples[task] = make_chunks(*corpus, cfg.chunk_frames).size();
    const std::size_t per = cfg.chunks_per_minibatch();
    steps_per_epoch += (examples[task] + per - 1) / per;
  }

  std::vector<std::map<std::string, std::vector<int>>> counts(2);
  for (auto& epoch : counts)
    for (const auto& [task, n] : examples) epoch[task].assign(n, 0);
  std::size_t step = 0;
  bool homogeneous = true;
  TrainHooks hooks;
  hooks.on_minibatch = [&](const PlanEntry& e) {
    auto& epoch = counts.at(step++ / steps_per_epoch);
    for (auto idx : e.examples) ++epoch.at(e.task).at(idx);
    homogeneous = homogeneous && !e.examples.empty();
  };
  Network net = build_network(system_spec(c, "multitask3"), Rng(11));
  train_multitask(net, tasks, cfg, hooks);

  bool exact = step == 2 * steps_per_epoch && homogeneous;
  std::size_t total = 0;
  for (const auto& epoch : counts)
    for (const auto& [task, v] : epoch)
      for (int k : v) {
        exact = exact && k == 1;
        ++total;
      }
  std::string sizes;
  for (const auto& [task, n] : examples) sizes += (sizes.empty() ? "" : ", ") + task + "=" + std::to_string(n);
  return {exact, "2 epochs x 3 tasks (" + sizes + " examples), " + std::to_string(total) +
                     " (epoch, task, example) cells, each consumed " + (exact ? "exactly once" : "NOT exactly once")};
}

// ------------------------------------------------------------ 5, 6, 7

struct DeskRun {
  ExperimentConfig config;
  ResultsTable table;
  Report report;
  double seconds = 0.0;
};

DeskRun desk_benchmark(const fs::path& out) {
  DeskRun r{config_file("desk.json"), {}, {}, 0.0};
  fs::remove_all(out);
  const auto t0 = clock_type::now();
  r.table = run_all(r.config, out, [](const std::string& m) { std::cerr << m << std::endl; });
  r.seconds = seconds_since(t0);
  r.report = emit_tables(r.config, r.table, out);
  return r;
}

bool check(const Report& r, const char* name) {
  return r.summary.at("checks").contains(name) && r.summary.at("checks").at(name).get<bool>();
}

double lr_tgt(const Report& r, const std::string& system) {
  return r.summary.at("means").at(system).at("lr_tgt").get<double>();
}

Verdict ordering(const DeskRun& d) {
  const auto& c = d.config;
  const bool standard = c.seeds.size() == 5 && c.data.languages.at("lr").alpha == 0.7;
  const bool ok = check(d.report, "oracle_le_proposed") && check(d.report, "proposed_lt_multiling") &&
                  check(d.report, "multiling_lt_mono");
  return {standard && ok && d.seconds < 900.0,
          "LR tgt oracle " + fmt(lr_tgt(d.report, "oracle_lr_tgt")) + " <= proposed " +
              fmt(lr_tgt(d.report, "proposed")) + " < multiling " + fmt(lr_tgt(d.report, "multiling")) +
              " < mono " + fmt(lr_tgt(d.report, "mono_lr_src")) + " over " + std::to_string(c.seeds.size()) +
              " seeds; run-all " + fmt(d.seconds, 0) + " s"};
}

Verdict sweep_stability(const DeskRun& d) {
  const auto& c = d.config;
  const bool full_grid = c.sweep.k_layers == std::vector<std::size_t>{1, 2, 3, 4, 5, 6} &&
                         c.sweep.epochs == std::vector<double>{0.5, 1, 2, 3};
  const auto& s = d.report.summary;
  const double spread = s.at("sweep_spread").get<double>();
  const auto& arg = s.at("sweep_argmin");
  return {full_grid && check(d.report, "sweep_spread"),
          "spread " + fmt(spread) + " over 24 points; argmin k=" + std::to_string(arg.at("k_layers").get<int>()) +
              " epochs=" + epochs_label(arg.at("epochs").get<double>()) + " (" +
              fmt(arg.at("lr_tgt").get<double>()) + ")"};
}

Verdict baseline_comparison(const DeskRun& d) {
  // Hard part: the full 7-system table with every seed, plus the orderings of
  // criterion 5. The direction checks are reported and flagged in the tables.
  bool table_ok = missing_cells(d.config, d.table).empty();
  for (const std::string s : {"mono_lr_src", "multiling", "proposed", "multitask3", "multitask3_ft", "multicond",
                              "multicond_ft"})
    table_ok = table_ok && d.config.has_system(s) && d.report.text.find(system_label(s)) != std::string::npos;
  const bool orderings = check(d.report, "oracle_le_proposed") && check(d.report, "proposed_lt_multiling") &&
                         check(d.report, "multiling_lt_mono");
  auto mark = [&](const char* name) { return std::string(check(d.report, name) ? "ok" : "FLAGGED"); };
  const double p = lr_tgt(d.report, "proposed");
  return {table_ok && orderings,
          "proposed " + fmt(p) + " vs multitask3 " + fmt(lr_tgt(d.report, "multitask3")) + " [" +
              mark("proposed_le_multitask3") + "], multicond " + fmt(lr_tgt(d.report, "multicond")) + " [" +
              mark("proposed_le_multicond") + "]; ft deltas " +
              fmt(lr_tgt(d.report, "multitask3_ft") - lr_tgt(d.report, "multitask3")) + " [" +
              mark("multitask3_ft_delta") + "], " +
              fmt(lr_tgt(d.report, "multicond_ft") - lr_tgt(d.report, "multicond")) + " [" +
              mark("multicond_ft_delta") + "]; 7-system table " + (table_ok ? "complete" : "INCOMPLETE")};
}

// ------------------------------------------------------------------ 8

Verdict poor_match(const fs::path& out) {
  const ExperimentConfig c = config_file("poor_match.json");
  fs::remove_all(out);
  const auto t0 = clock_type::now();
  const ResultsTable t = run_all(c, out, [](const std::string& m) { std::cerr << m << std::endl; });
  const Report r = emit_tables(c, t, out);
  const double multi = lr_tgt(r, "multiling"), prop = lr_tgt(r, "proposed");
  const double rel = relative_improvement(multi, prop);
  return {c.data.languages.at("lr").alpha == 0.2 && multi - prop >= 1.0,
          "alpha=0.2, " + std::to_string(c.seeds.size()) + " seeds: multiling " + fmt(multi) + ", proposed " +
              fmt(prop) + ", gap " + fmt(multi - prop) + ", relative improvement (multi-proposed)/multi = " +
              fmt(100.0 * rel, 1) + "% (" + fmt(seconds_since(t0), 0) + " s)"};
}

// ------------------------------------------------------------------ 9

std::map<std::string, std::vector<char>> tree(const fs::path& root) {
  std::map<std::string, std::vector<char>> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = file_bytes(e.path());
  return files;
}

Verdict determinism(const fs::path& work) {
  const fs::path config = fs::path(XLAC_CONFIG_DIR) / "determinism.json";
  // Same --out both times: the saved config records the output directory.
  const fs::path out = work / "det";
  std::vector<std::map<std::string, std::vector<char>>> trees;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(out);
    const int rc = run_cli("run-all -q --config " + config.string() + " --out " + out.string(),
                           work / ("det-" + std::to_string(run) + ".log"));
    if (rc != 0) return {false, "run-all exited with " + std::to_string(rc)};
    trees.push_back(tree(out));
  }
  std::size_t ckpts = 0, differ = 0;
  std::string first_diff;
  std::set<std::string> names;
  for (const auto& t : trees)
    for (const auto& [n, _] : t) names.insert(n);
  for (const auto& n : names) {
    const bool same = trees[0].contains(n) && trees[1].contains(n) && trees[0].at(n) == trees[1].at(n);
    if (!same && differ++ == 0) first_diff = n;
    if (n.ends_with(".ckpt")) ++ckpts;
  }
  const bool have_results = trees[0].contains("results.jsonl") && trees[0].contains("sweep.jsonl");
  return {differ == 0 && have_results && ckpts > 0,
          std::to_string(names.size()) + " files compared (" + std::to_string(ckpts) + " checkpoints), " +
              (differ == 0 ? "all byte-identical" : std::to_string(differ) + " differ, first " + first_diff)};
}

// ------------------------------------------------------------------ 10

Verdict persistence(const ExperimentConfig& c, const fs::path& desk_out, const fs::path& work) {
  const fs::path seed = seed_dir(desk_out, c.seeds.front());
  std::size_t systems = 0, files = 0;
  bool ok = true;
  for (const auto& system : all_systems()) {
    bool found = false;
    for (const char* f : {"model.ckpt", "adapted.ckpt"}) {
      const fs::path p = seed / system / f;
      if (!fs::exists(p)) continue;
      found = true;
      ++files;
      const auto bytes = file_bytes(p);
      const Network net = load_checkpoint(p);
      const Network again = parse_checkpoint(serialize_checkpoint(net));
      ok = ok && serialize_checkpoint(net) == bytes && bitwise_equal(net, again) && net.spec == again.spec &&
           net.provenance == again.provenance;
    }
    systems += found;
  }

  // gen-data through the CLI, loaded back, against an in-memory draw.
  const fs::path gen = work / "gen";
  fs::remove_all(gen);
  const int rc = run_cli("gen-data -q --config " + (fs::path(XLAC_CONFIG_DIR) / "desk.json").string() + " --seed " +
                             std::to_string(c.seeds.front()) + " --out " + gen.string(),
                         work / "gen.log");
  std::size_t frames = 0;
  bool corpus_ok = rc == 0;
  if (corpus_ok) {
    const CorpusSet loaded = read_corpora(c, seed_dir(gen, c.seeds.front()) / "data");
    const CorpusSet fresh = sample_corpora(c, make_world(c, c.seeds.front()), c.seeds.front());
    auto same = [&](const Corpus& a, const Corpus& b) {
      if (a.feature_dim != b.feature_dim || a.utterances.size() != b.utterances.size()) return false;
      for (std::size_t i = 0; i < a.utterances.size(); ++i) {
        const auto &x = a.utterances[i], &y = b.utterances[i];
        if (x.id != y.id || x.labels != y.labels || !bitwise_equal(x.frames, y.frames)) return false;
        frames += x.frames.rows();
      }
      return true;
    };
    corpus_ok = loaded.train.size() == fresh.train.size() && loaded.test.size() == fresh.test.size();
    for (const auto& [role, corpus] : fresh.train) corpus_ok = corpus_ok && same(loaded.train.at(role), corpus);
    for (const auto& [cond, corpus] : fresh.test) corpus_ok = corpus_ok && same(loaded.test.at(cond), corpus);
  }
  return {ok && systems == 9 && corpus_ok,
          std::to_string(systems) + " systems / " + std::to_string(files) + " checkpoints " +
              (ok ? "bitwise round-trip" : "MISMATCH") + "; gen-data -> load " +
              (corpus_ok ? "bit-identical over " + std::to_string(frames) + " frames" : "FAILED")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "xlac-acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string s; std::getline(ss, s, ',');) only.insert(std::stoi(s));
    } else {
      std::cerr << "usage: xlac_acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(work);
  // Everything printed is also kept in <work>/acceptance.txt.
  std::ofstream log(work / "acceptance.txt", std::ios::trunc);
  auto say = [&](const std::string& text) {
    std::cout << text << std::flush;
    log << text << std::flush;
  };
  auto wanted = [&](int n) { return only.empty() || only.contains(n); };

  std::map<int, Verdict> verdicts;
  auto guarded = [&](int n, const std::function<Verdict()>& f) {
    if (!wanted(n)) return;
    try {
      verdicts[n] = f();
    } catch (const std::exception& e) {
      verdicts[n] = {false, std::string("error: ") + e.what()};
    }
  };

  guarded(1, gradient_checks);

  // Criteria 2-7 and 10 use the standard desk benchmark run.
  std::optional<DeskRun> desk;
  const fs::path desk_out = work / "desk";
  const bool need_desk = wanted(2) || wanted(3) || wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(10);
  if (need_desk) {
    try {
      desk = desk_benchmark(desk_out);
      say(desk->report.text + "\n");
    } catch (const std::exception& e) {
      for (int n : {2, 3, 4, 5, 6, 7, 10})
        if (wanted(n)) verdicts[n] = {false, std::string("desk benchmark failed: ") + e.what()};
    }
  }
  if (desk) {
    guarded(2, [&] { return freeze_graft(desk->config, desk_out); });
    guarded(3, [&] { return optimizer_contract(desk->config, desk_out); });
    guarded(4, [&] { return sampling_contract(desk->config, desk_out); });
    guarded(5, [&] { return ordering(*desk); });
    guarded(6, [&] { return sweep_stability(*desk); });
    guarded(7, [&] { return baseline_comparison(*desk); });
  }
  guarded(8, [&] { return poor_match(work / "poor_match"); });
  guarded(9, [&] { return determinism(work); });
  if (desk) guarded(10, [&] { return persistence(desk->config, desk_out, work); });

  static const char* titles[] = {"",
                                 "gradient checks",
                                 "freeze/graft exactness",
                                 "optimizer contract",
                                 "sampling contract",
                                 "ordering reproduction",
                                 "sweep stability",
                                 "baseline comparison",
                                 "poor-match condition",
                                 "determinism",
                                 "persistence"};
  bool all = true;
  for (const auto& [n, v] : verdicts) {
    say(std::string(v.pass ? "PASS" : "FAIL") + "  criterion " + std::to_string(n) + " (" + titles[n] +
        "): " + v.detail + "\n");
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
