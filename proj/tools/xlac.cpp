// Command-line driver for the cross-lingual adaptation experiments.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage
// error, 3 data or checkpoint error, 4 numeric abort, 5 incomplete results.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xlac/pipeline/config.hpp"
#include "xlac/pipeline/experiment.hpp"
#include "xlac/pipeline/report.hpp"
#include "xlac/pipeline/results.hpp"

namespace {

using namespace xlac;
using namespace xlac::pipeline;
using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::shape:
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::incomplete: return 5;
  }
  return 1;
}

struct Common {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string systems;
  std::optional<std::size_t> k_layers;
  std::optional<double> epochs;
  std::string out;
  std::optional<std::size_t> jobs;
  bool quiet = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON experiment config (merged over the profile)");
    app->add_option("--profile", profile, "base profile")->check(CLI::IsMember({"paper", "desk"}));
    app->add_option("--seed", seed, "run a single seed instead of the configured list");
    app->add_option("--systems", systems, "comma-separated systems to run");
    app->add_option("--k-layers", k_layers, "adapted trunk layers for the adapt step");
    app->add_option("--epochs", epochs, "epochs for the adapt step");
    app->add_option("--out", out, "output directory");
    app->add_option("--jobs", jobs, "seeds run concurrently");
    app->add_flag("-q,--quiet", quiet, "no progress output");
  }

  ExperimentConfig load() const {
    json o = json::object();
    if (seed) o["seeds"] = json::array({*seed});
    if (!systems.empty()) {
      json list = json::array();
      std::stringstream ss(systems);
      for (std::string s; std::getline(ss, s, ',');)
        if (!s.empty()) list.push_back(s);
      o["systems"] = list;
    }
    if (k_layers) o["adapt"]["k_layers"] = *k_layers;
    if (epochs) o["adapt"]["epochs"] = *epochs;
    if (!out.empty()) o["output_dir"] = out;
    if (jobs) o["jobs"] = *jobs;
    return load_config(profile.empty() ? std::nullopt : std::optional<std::string>(profile),
                       config.empty() ? std::nullopt : std::optional<std::filesystem::path>(config), o);
  }

  Progress progress() const {
    if (quiet) return {};
    return [](const std::string& m) { std::cerr << m << std::endl; };
  }
};

void print_rows(const std::vector<ResultRow>& rows) {
  for (const auto& r : rows)
    std::cout << r.system << "\t" << r.condition << "\tseed " << r.seed << "\t" << fmt(r.frame_error) << "\n";
}

std::string base_of(const std::string& system) {
  const auto r = recipe(system);
  if (r.base.empty()) fail(ErrorKind::config, "system '" + system + "' is not an adapted system");
  return r.base;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xlac: cross-lingual domain adaptation of TDNN acoustic models on synthetic corpora"};
  app.require_subcommand(1);

  Common common;
  std::string system, from, to, original, adapted, checkpoint, task, corpus;
  std::optional<std::size_t> boundary;

  auto* gen = app.add_subcommand("gen-data", "generate corpora for each seed");
  auto* train = app.add_subcommand("train", "train a base system from generated corpora");
  auto* adapt = app.add_subcommand("adapt", "adapt the first k trunk layers on WR target data");
  auto* graft = app.add_subcommand("graft", "transfer an adapted trunk onto the original heads");
  auto* eval = app.add_subcommand("eval", "frame error of a checkpoint on test corpora");
  auto* sweep = app.add_subcommand("sweep", "adapt the multilingual checkpoint over the (k, epochs) grid");
  auto* run_all_cmd = app.add_subcommand("run-all", "every step for every seed, then the report");
  auto* report = app.add_subcommand("report", "tables from a finished output directory");
  for (auto* sub : {gen, train, adapt, graft, eval, sweep, run_all_cmd, report}) common.attach(sub);

  train->add_option("--system", system, "base system")->required();
  adapt->add_option("--system", system, "adapted system (proposed, multitask3_ft, multicond_ft)")
      ->default_val("proposed");
  adapt->add_option("--from", from, "checkpoint to adapt (default: the base system's model.ckpt)");
  adapt->add_option("--to", to, "adapted checkpoint path");
  graft->add_option("--system", system, "adapted system")->default_val("proposed");
  graft->add_option("--adapted", adapted, "adapted checkpoint");
  graft->add_option("--original", original, "original checkpoint");
  graft->add_option("--to", to, "grafted checkpoint path");
  graft->add_option("--boundary", boundary, "trunk layers to transfer (default: whole trunk)");
  eval->add_option("--system", system, "system whose model.ckpt to evaluate on all its conditions");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--task", task, "head to evaluate");
  eval->add_option("--corpus", corpus, "corpus directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = common.load();
    const fs::path out = cfg.output_dir;
    const std::string hash = config_hash(cfg);
    const Progress say = common.progress();
    auto single_seed = [&](const char* what) {
      if (cfg.seeds.size() != 1)
        fail(ErrorKind::config, std::string(what) + " with explicit paths needs exactly one --seed");
      return cfg.seeds.front();
    };

    if (*gen) {
      write_config(cfg, out);
      for (auto seed : cfg.seeds) {
        gen_data(cfg, seed, out);
        std::cout << (seed_dir(out, seed) / "data").string() << "\n";
      }
    } else if (*train) {
      if (is_derived(system))
        fail(ErrorKind::config, "system '" + system + "' is derived from '" + recipe(system).base +
                                    "'; use adapt and graft");
      for (auto seed : cfg.seeds) {
        const CorpusSet data = read_corpora(cfg, seed_dir(out, seed) / "data");
        const fs::path dir = seed_dir(out, seed) / system;
        fs::create_directories(dir);
        TrainLog log(dir / "train.jsonl");
        Network net = train_base_system(cfg, data, seed, system, log.hooks());
        save_checkpoint(net, dir / "model.ckpt");
        print_rows(evaluate_system(cfg, net, system, data, seed, hash));
      }
    } else if (*adapt) {
      const std::string base = base_of(system);
      const SystemRecipe rec = recipe(system);
      if (!from.empty() || !to.empty()) single_seed("adapt");
      for (auto seed : cfg.seeds) {
        const fs::path dir = seed_dir(out, seed);
        const CorpusSet data = read_corpora(cfg, dir / "data");
        const Network net = load_checkpoint(from.empty() ? dir / base / "model.ckpt" : fs::path(from));
        fs::create_directories(dir / system);
        TrainLog log(dir / system / "train.jsonl");
        const AdaptResult r = adapt_and_graft(cfg, net, base, rec.adapt_task, data.train_corpus("wr_tgt"), seed,
                                              cfg.adapt.k_layers, cfg.adapt.train.epochs, log.hooks());
        const fs::path target = to.empty() ? dir / system / "adapted.ckpt" : fs::path(to);
        save_checkpoint(r.adapted, target);
        std::cout << target.string() << "\n";
      }
    } else if (*graft) {
      const std::string base = base_of(system);
      if (!adapted.empty() || !original.empty() || !to.empty()) single_seed("graft");
      for (auto seed : cfg.seeds) {
        const fs::path dir = seed_dir(out, seed);
        const Network a = load_checkpoint(adapted.empty() ? dir / system / "adapted.ckpt" : fs::path(adapted));
        const Network o = load_checkpoint(original.empty() ? dir / base / "model.ckpt" : fs::path(original));
        const Network g = transfer_shared_layers(a, o, boundary.value_or(o.trunk_depth()));
        const fs::path target = to.empty() ? dir / system / "model.ckpt" : fs::path(to);
        save_checkpoint(g, target);
        std::cout << target.string() << "\n";
      }
    } else if (*eval) {
      if (!checkpoint.empty()) {
        if (task.empty() || corpus.empty()) fail(ErrorKind::config, "eval --checkpoint needs --task and --corpus");
        const Network net = load_checkpoint(checkpoint);
        std::cout << fmt(evaluate(net, task, read_corpus(corpus))) << "\n";
      } else {
        if (system.empty()) fail(ErrorKind::config, "eval needs --system or --checkpoint");
        for (auto seed : cfg.seeds) {
          const fs::path dir = seed_dir(out, seed);
          const CorpusSet data = read_corpora(cfg, dir / "data");
          const Network net = load_checkpoint(dir / system / "model.ckpt");
          print_rows(evaluate_system(cfg, net, system, data, seed, hash));
        }
      }
    } else if (*sweep) {
      if (cfg.sweep.k_layers.empty() || cfg.sweep.epochs.empty()) fail(ErrorKind::config, "empty sweep grid");
      ResultsTable t;
      for (auto seed : cfg.seeds) {
        const fs::path dir = seed_dir(out, seed);
        const CorpusSet data = read_corpora(cfg, dir / "data");
        const fs::path ckpt = dir / "multiling" / "model.ckpt";
        if (!fs::exists(ckpt))
          fail(ErrorKind::data, "no multilingual checkpoint at " + ckpt.string() + " (run train --system multiling)");
        const Network multiling = load_checkpoint(ckpt);
        AdaptCache cache;
        auto rows = run_sweep(cfg, seed, dir, data, multiling, hash, cache);
        t.sweep.insert(t.sweep.end(), rows.begin(), rows.end());
        if (say) say("[seed " + std::to_string(seed) + "] sweep done");
      }
      t.sort();
      save_sweep(t.sweep, out / "sweep.jsonl");
      for (const auto& r : t.sweep)
        std::cout << "k=" << r.k_layers << "\tepochs=" << epochs_label(r.epochs) << "\tseed " << r.seed
                  << "\tLR tgt " << fmt(r.lr_tgt) << "\tWR tgt " << fmt(r.wr_tgt) << "\n";
    } else if (*run_all_cmd) {
      const ResultsTable t = run_all(cfg, out, say);
      std::cout << emit_tables(cfg, t, out).text;
    } else if (*report) {
      // The directory's own config wins unless one is given explicitly.
      ExperimentConfig rc = cfg;
      if (common.config.empty() && fs::exists(out / "config.json")) {
        json saved = read_json_file(out / "config.json");
        rc = parse_config(saved);
      }
      std::cout << emit_tables(rc, load_results(out), out).text;
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
