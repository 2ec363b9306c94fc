#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "xlac/model/checkpoint.hpp"
#include "xlac/model/forward.hpp"
#include "xlac/model/graft.hpp"
#include "xlac/model/network.hpp"
#include "xlac/pipeline/config.hpp"
#include "xlac/pipeline/results.hpp"
#include "xlac/synthdata/corpus_io.hpp"
#include "xlac/synthdata/generator.hpp"
#include "xlac/synthdata/oracle.hpp"
#include "xlac/training/trainer.hpp"

namespace xlac::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- data

inline const std::vector<std::string>& train_roles() {
  static const std::vector<std::string> roles{"lr_src", "wr_src", "wr_tgt", "lr_tgt"};
  return roles;
}

inline std::string condition_name(const std::string& language, const std::string& domain) {
  return language + "_" + domain;
}

inline std::pair<std::string, std::string> split_condition(const std::string& cond) {
  const auto pos = cond.find('_');
  if (pos == std::string::npos) fail(ErrorKind::config, "bad condition name '" + cond + "'");
  return {cond.substr(0, pos), cond.substr(pos + 1)};
}

struct World {
  std::map<std::string, LanguageSpec> languages;
  std::map<std::string, DomainSpec> domains;
};

inline World make_world(const ExperimentConfig& c, std::uint64_t seed) {
  const Rng root = Rng(seed).derive("world");
  World w;
  auto shape_for = [&](const LanguageConfig& lc) {
    LanguageShape s;
    s.senones = lc.senones;
    s.latent_dim = c.data.latent_dim;
    s.feature_dim = c.data.feature_dim;
    s.mean_scale = c.data.mean_scale;
    s.var_min = c.data.var_min;
    s.var_max = c.data.var_max;
    return s;
  };
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& [name, lc] : c.data.languages) {
      if (lc.base.empty() != (pass == 0)) continue;
      const LanguageSpec* base = lc.base.empty() ? nullptr : &w.languages.at(lc.base);
      w.languages.emplace(name, make_language(root.derive("language/" + name), name, shape_for(lc), base,
                                              lc.alpha, lc.share_mixing_map));
    }
  for (const auto& [name, dc] : c.data.domains) {
    DomainSpec d;
    d.name = name;
    d.channel = dc.channel == "identity"
                    ? identity_channel(c.data.feature_dim)
                    : orthogonal_channel(root.derive("channel/" + name), c.data.feature_dim, dc.strength);
    d.noise_std = dc.noise_std;
    d.gain_min = dc.gain_min;
    d.gain_max = dc.gain_max;
    d.validate(c.data.feature_dim);
    w.domains.emplace(name, std::move(d));
  }
  return w;
}

struct CorpusSet {
  std::map<std::string, Corpus> train;  // by role
  std::map<std::string, Corpus> test;   // by condition

  const Corpus& train_corpus(const std::string& role) const {
    auto it = train.find(role);
    if (it == train.end()) fail(ErrorKind::data, "missing training corpus '" + role + "'");
    return it->second;
  }
  const Corpus& test_corpus(const std::string& cond) const {
    auto it = test.find(cond);
    if (it == test.end()) fail(ErrorKind::data, "missing test corpus '" + cond + "'");
    return it->second;
  }
};

inline std::vector<std::string> test_conditions(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const char* lang : {"wr", "lr"})
    for (const auto& d : c.test_domains()) out.push_back(condition_name(lang, d));
  return out;
}

/// Training corpora are independent draws per role. Test corpora share one
/// latent stream per language across domains, so domain conditions differ
/// only in rendering.
inline CorpusSet sample_corpora(const ExperimentConfig& c, const World& w, std::uint64_t seed) {
  const Rng root = Rng(seed).derive("corpora");
  CorpusSet set;
  for (const auto& role : train_roles()) {
    const auto [lang, dom] = split_condition(role);
    const CorpusBudget budget{c.data.train_frames.at(role), c.data.mean_utt_len, c.data.self_loop};
    set.train.emplace(role, sample_corpus(root.derive("train/" + role), w.languages.at(lang),
                                          w.domains.at(dom), budget, "train_" + role));
  }
  for (const char* lang : {"wr", "lr"}) {
    const CorpusBudget budget{c.data.test_frames, c.data.mean_utt_len, c.data.self_loop};
    const auto latents = sample_latent(root.derive(std::string("test-latent/") + lang), w.languages.at(lang), budget);
    for (const auto& dom : c.test_domains()) {
      const std::string cond = condition_name(lang, dom);
      set.test.emplace(cond, render(latents, w.languages.at(lang), w.domains.at(dom),
                                    root.derive("test-render/" + cond), "test_" + cond));
    }
  }
  return set;
}

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed-" + std::to_string(seed)); }

inline void write_corpora(const CorpusSet& set, const fs::path& data_dir) {
  for (const auto& [role, corpus] : set.train) write_corpus(corpus, data_dir / ("train_" + role));
  for (const auto& [cond, corpus] : set.test) write_corpus(corpus, data_dir / ("test_" + cond));
}

inline CorpusSet read_corpora(const ExperimentConfig& c, const fs::path& data_dir) {
  CorpusSet set;
  std::string missing;
  for (const auto& role : train_roles())
    if (!fs::exists(data_dir / ("train_" + role) / "manifest.json")) missing += " train_" + role;
  for (const auto& cond : test_conditions(c))
    if (!fs::exists(data_dir / ("test_" + cond) / "manifest.json")) missing += " test_" + cond;
  if (!missing.empty())
    fail(ErrorKind::data, "corpora missing under " + data_dir.string() + ":" + missing + " (run gen-data first)");
  for (const auto& role : train_roles()) set.train.emplace(role, read_corpus(data_dir / ("train_" + role)));
  for (const auto& cond : test_conditions(c)) set.test.emplace(cond, read_corpus(data_dir / ("test_" + cond)));
  for (const auto& [_, corpus] : set.train)
    if (corpus.feature_dim != c.data.feature_dim)
      fail(ErrorKind::data, "corpus feature_dim " + std::to_string(corpus.feature_dim) +
                                " disagrees with config " + std::to_string(c.data.feature_dim));
  return set;
}

/// Generates one seed's corpora and writes them in the corpus directory format.
inline CorpusSet gen_data(const ExperimentConfig& c, std::uint64_t seed, const fs::path& out) {
  const World w = make_world(c, seed);
  CorpusSet set = sample_corpora(c, w, seed);
  write_corpora(set, seed_dir(out, seed) / "data");
  return set;
}

// ------------------------------------------------------------- systems

struct SystemRecipe {
  std::map<std::string, std::vector<std::string>> tasks;  // head -> training roles
  std::string base;         // derived systems: the network they adapt
  std::string adapt_task;   // head used for the adaptation loss
};

inline SystemRecipe recipe(const std::string& system) {
  if (system == "mono_lr_src") return {{{"lr", {"lr_src"}}}, "", ""};
  if (system == "mono_wr_src") return {{{"wr", {"wr_src"}}}, "", ""};
  if (system == "oracle_lr_tgt") return {{{"lr", {"lr_tgt"}}}, "", ""};
  if (system == "multiling") return {{{"lr", {"lr_src"}}, {"wr", {"wr_src"}}}, "", ""};
  if (system == "multitask3")
    return {{{"lr", {"lr_src"}}, {"wr", {"wr_src"}}, {"wr_tgt", {"wr_tgt"}}}, "", ""};
  if (system == "multicond") return {{{"lr", {"lr_src"}}, {"wr", {"wr_src", "wr_tgt"}}}, "", ""};
  if (system == "proposed") return {recipe("multiling").tasks, "multiling", "wr"};
  if (system == "multitask3_ft") return {recipe("multitask3").tasks, "multitask3", "wr_tgt"};
  if (system == "multicond_ft") return {recipe("multicond").tasks, "multicond", "wr"};
  fail(ErrorKind::config, "unknown system '" + system + "'");
}

inline bool is_derived(const std::string& system) { return !recipe(system).base.empty(); }

inline std::size_t task_senones(const ExperimentConfig& c, const std::string& task) {
  return c.data.languages.at(task == "lr" ? "lr" : "wr").senones;
}

inline NetworkSpec system_spec(const ExperimentConfig& c, const std::string& system) {
  std::map<std::string, std::size_t> heads;
  for (const auto& [task, _] : recipe(system).tasks) heads[task] = task_senones(c, task);
  return make_tdnn_spec(c.data.feature_dim, c.network.units, c.network.contexts, c.network.prefinal_units, heads);
}

/// Head evaluated for each test condition of a system.
inline std::vector<std::pair<std::string, std::string>> system_conditions(const ExperimentConfig& c,
                                                                          const std::string& system) {
  const auto& tasks = recipe(system).tasks;
  std::vector<std::pair<std::string, std::string>> out;
  for (const char* lang : {"wr", "lr"}) {
    if (!tasks.contains(lang)) continue;
    for (const auto& dom : c.test_domains()) {
      const std::string cond = condition_name(lang, dom);
      const std::string head = (cond == "wr_tgt" && tasks.contains("wr_tgt")) ? "wr_tgt" : lang;
      out.emplace_back(cond, head);
    }
  }
  return out;
}

/// Frame error in percent: frames whose argmax logit (first on ties) differs
/// from the label.
inline double evaluate(const Network& net, const std::string& task, const Corpus& corpus) {
  if (corpus.empty()) fail(ErrorKind::data, "evaluate: empty corpus");
  if (corpus.feature_dim != net.spec.input_dim)
    fail(ErrorKind::shape, "evaluate: corpus feature_dim " + std::to_string(corpus.feature_dim) +
                               " vs network input_dim " + std::to_string(net.spec.input_dim));
  corpus.validate(net.senones(task));
  std::size_t errors = 0, total = 0;
  for (const Utterance& u : corpus.utterances) {
    const ForwardPass pass = forward(net, task, u.frames);
    const Matrix& logits = pass.logits();
    for (std::size_t t = 0; t < logits.rows(); ++t) {
      auto row = logits.row(t);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best != u.labels[t]) ++errors;
    }
    total += logits.rows();
  }
  return 100.0 * static_cast<double>(errors) / static_cast<double>(total);
}

/// JSONL training log sink.
class TrainLog {
 public:
  explicit TrainLog(const fs::path& path) : os_(path, std::ios::trunc) {
    if (!os_) fail(ErrorKind::data, "cannot open log " + path.string());
  }

  TrainHooks hooks() {
    TrainHooks h;
    h.log = [this](const TrainRecord& r) {
      nlohmann::json j{{"v", kResultsVersion}, {"stage", r.stage}, {"step", r.step}, {"task", r.task},
                       {"lr", r.lr}, {"loss", r.loss}, {"clipped_layers", r.clipped_layers}};
      os_ << j.dump() << "\n";
    };
    return h;
  }

 private:
  std::ofstream os_;
};

inline TrainConfig stage_config(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig cfg = base;
  cfg.seed = seed;
  return cfg;
}

/// Step 1 (and the baselines): builds and trains a non-derived system.
inline Network train_base_system(const ExperimentConfig& c, const CorpusSet& data, std::uint64_t seed,
                                 const std::string& system, const TrainHooks& hooks = {}) {
  const SystemRecipe r = recipe(system);
  if (!r.base.empty())
    fail(ErrorKind::config, "system '" + system + "' is derived from '" + r.base + "'; use adapt and graft");
  Network net = build_network(system_spec(c, system), Rng(seed).derive("init/" + system));

  std::map<std::string, Corpus> merged;
  std::vector<const Matrix*> frames;
  for (const auto& [task, roles] : r.tasks) {
    Corpus corpus = data.train_corpus(roles.front());
    for (std::size_t i = 1; i < roles.size(); ++i) corpus = Corpus::concat(corpus, data.train_corpus(roles[i]));
    merged.emplace(task, std::move(corpus));
  }
  for (const auto& [_, corpus] : merged)
    for (const auto& u : corpus.utterances) frames.push_back(&u.frames);
  net.input_norm = estimate_input_norm(frames, c.data.feature_dim);

  const TrainConfig cfg = stage_config(c.train, Rng(seed).derive("train/" + system).seed());
  if (merged.size() == 1) {
    train_single_task(net, merged.begin()->first, merged.begin()->second, cfg, hooks);
  } else {
    std::map<std::string, const Corpus*> tasks;
    for (const auto& [task, corpus] : merged) tasks[task] = &corpus;
    train_multitask(net, tasks, cfg, hooks);
  }
  return net;
}

struct AdaptResult {
  Network adapted;
  Network grafted;
};

inline std::string epochs_label(double e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

/// Steps 2 and 3: adapt trunk layers 1..k of `base` on the WR target corpus
/// through `task`'s frozen head, then graft the adapted trunk back onto
/// `base`. The adaptation seed depends only on (seed, base system, k, epochs).
inline AdaptResult adapt_and_graft(const ExperimentConfig& c, const Network& base, const std::string& base_system,
                                   const std::string& task, const Corpus& wr_tgt, std::uint64_t seed,
                                   std::size_t k, double epochs, const TrainHooks& hooks = {}) {
  TrainConfig cfg = stage_config(
      c.adapt.train,
      Rng(seed).derive("adapt/" + base_system + "/k" + std::to_string(k) + "/e" + epochs_label(epochs)).seed());
  cfg.epochs = epochs;
  AdaptResult r{base, {}};
  adapt_shared_layers(r.adapted, task, wr_tgt, k, cfg, hooks);
  r.grafted = transfer_shared_layers(r.adapted, base, base.trunk_depth());
  return r;
}

inline std::vector<ResultRow> evaluate_system(const ExperimentConfig& c, const Network& net, const std::string& system,
                                              const CorpusSet& data, std::uint64_t seed, const std::string& hash) {
  std::vector<ResultRow> rows;
  for (const auto& [cond, head] : system_conditions(c, system)) {
    const auto [lang, dom] = split_condition(cond);
    rows.push_back({system, cond, lang, dom, evaluate(net, head, data.test_corpus(cond)), seed, hash});
  }
  return rows;
}

// ------------------------------------------------------------ seed job

using Progress = std::function<void(const std::string&)>;

struct SweepPoint {
  std::size_t k = 0;
  double epochs = 0.0;
};

inline std::string sweep_point_dir(std::size_t k, double e) { return "k" + std::to_string(k) + "-e" + epochs_label(e); }

/// Per-seed argmin of LR-target error over the sweep grid (grid order breaks ties).
inline SweepPoint sweep_argmin(const std::vector<SweepRow>& rows, std::uint64_t seed) {
  const SweepRow* best = nullptr;
  for (const auto& r : rows)
    if (r.seed == seed && (!best || r.lr_tgt < best->lr_tgt)) best = &r;
  if (!best) fail(ErrorKind::incomplete, "no sweep rows for seed " + std::to_string(seed));
  return {best->k_layers, best->epochs};
}

inline std::vector<std::string> base_systems_needed(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const auto& s : all_systems()) {
    if (is_derived(s)) continue;
    bool need = c.has_system(s);
    for (const auto& d : all_systems())
      if (c.has_system(d) && recipe(d).base == s) need = true;
    if (need) out.push_back(s);
  }
  return out;
}

/// Adaptations of the multilingual network keyed by (k, epochs), shared by
/// the sweep and the proposed system.
struct AdaptCache {
  std::map<std::pair<std::size_t, double>, AdaptResult> entries;

  const AdaptResult& get(const ExperimentConfig& c, const Network& multiling, const Corpus& wr_tgt,
                         std::uint64_t seed, std::size_t k, double e, const fs::path& log_path) {
    auto key = std::make_pair(k, e);
    auto it = entries.find(key);
    if (it != entries.end()) return it->second;
    TrainLog log(log_path);
    return entries.emplace(key, adapt_and_graft(c, multiling, "multiling", "wr", wr_tgt, seed, k, e, log.hooks()))
        .first->second;
  }
};

/// One adaptation + graft of the shared multilingual checkpoint per grid
/// point; grafted checkpoints go to <seed dir>/sweep/k<k>-e<epochs>/.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& c, std::uint64_t seed, const fs::path& dir,
                                       const CorpusSet& data, const Network& multiling, const std::string& hash,
                                       AdaptCache& cache) {
  std::vector<SweepRow> rows;
  const Corpus& wr_tgt = data.train_corpus("wr_tgt");
  for (std::size_t k : c.sweep.k_layers)
    for (double e : c.sweep.epochs) {
      const fs::path pdir = dir / "sweep" / sweep_point_dir(k, e);
      fs::create_directories(pdir);
      const AdaptResult& r = cache.get(c, multiling, wr_tgt, seed, k, e, pdir / "train.jsonl");
      save_checkpoint(r.grafted, pdir / "model.ckpt");
      rows.push_back({k, e, seed, evaluate(r.grafted, "lr", data.test_corpus("lr_tgt")),
                      evaluate(r.grafted, "wr", data.test_corpus("wr_tgt")), hash});
    }
  return rows;
}

/// Everything for one seed: data, every selected system, the sweep, and
/// oracle estimates. Writes corpora, checkpoints and logs under seed-<seed>/.
inline ResultsTable run_seed(const ExperimentConfig& c, std::uint64_t seed, const fs::path& out,
                             const std::string& hash, const Progress& progress = {}) {
  using clock = std::chrono::steady_clock;
  auto say = [&](const std::string& m) {
    if (progress) progress("[seed " + std::to_string(seed) + "] " + m);
  };
  const fs::path dir = seed_dir(out, seed);
  fs::create_directories(dir);
  const World world = make_world(c, seed);
  write_corpora(sample_corpora(c, world, seed), dir / "data");
  const CorpusSet data = read_corpora(c, dir / "data");
  say("corpora written");

  ResultsTable table;
  std::map<std::string, Network> nets;
  for (const auto& system : base_systems_needed(c)) {
    const auto t0 = clock::now();
    fs::create_directories(dir / system);
    TrainLog log(dir / system / "train.jsonl");
    Network net = train_base_system(c, data, seed, system, log.hooks());
    save_checkpoint(net, dir / system / "model.ckpt");
    if (c.has_system(system)) {
      auto rows = evaluate_system(c, net, system, data, seed, hash);
      table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    }
    say(system + " trained in " + fmt(std::chrono::duration<double>(clock::now() - t0).count(), 1) + " s");
    nets.emplace(system, std::move(net));
  }

  const Corpus& wr_tgt = data.train_corpus("wr_tgt");
  AdaptCache cache;
  if (c.has_system("proposed")) {
    const auto t0 = clock::now();
    const auto sweep_rows = run_sweep(c, seed, dir, data, nets.at("multiling"), hash, cache);
    table.sweep.insert(table.sweep.end(), sweep_rows.begin(), sweep_rows.end());
    say("sweep of " + std::to_string(sweep_rows.size()) + " points in " +
        fmt(std::chrono::duration<double>(clock::now() - t0).count(), 1) + " s");

    fs::create_directories(dir / "proposed");
    const AdaptResult& r = cache.get(c, nets.at("multiling"), wr_tgt, seed, c.adapt.k_layers, c.adapt.train.epochs,
                                     dir / "proposed" / "train.jsonl");
    const fs::path shared_log = dir / "sweep" / sweep_point_dir(c.adapt.k_layers, c.adapt.train.epochs) / "train.jsonl";
    if (fs::exists(shared_log))
      fs::copy_file(shared_log, dir / "proposed" / "train.jsonl", fs::copy_options::overwrite_existing);
    save_checkpoint(r.adapted, dir / "proposed" / "adapted.ckpt");
    save_checkpoint(r.grafted, dir / "proposed" / "model.ckpt");
    auto rows = evaluate_system(c, r.grafted, "proposed", data, seed, hash);
    table.rows.insert(table.rows.end(), rows.begin(), rows.end());
  }

  for (const std::string system : {"multitask3_ft", "multicond_ft"}) {
    if (!c.has_system(system)) continue;
    const SystemRecipe rec = recipe(system);
    SweepPoint p{c.adapt.k_layers, c.adapt.train.epochs};
    if (c.finetune == "sweep") p = sweep_argmin(table.sweep, seed);
    fs::create_directories(dir / system);
    TrainLog log(dir / system / "train.jsonl");
    const AdaptResult r =
        adapt_and_graft(c, nets.at(rec.base), rec.base, rec.adapt_task, wr_tgt, seed, p.k, p.epochs, log.hooks());
    save_checkpoint(r.adapted, dir / system / "adapted.ckpt");
    save_checkpoint(r.grafted, dir / system / "model.ckpt");
    auto rows = evaluate_system(c, r.grafted, system, data, seed, hash);
    table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    say(system + " adapted with k=" + std::to_string(p.k) + " epochs=" + epochs_label(p.epochs));
  }

  for (const auto& cond : test_conditions(c)) {
    const auto [lang, dom] = split_condition(cond);
    const OracleEstimate e = bayes_oracle_error(world.languages.at(lang), world.domains.at(dom),
                                                c.data.oracle_samples, Rng(seed).derive("oracle/" + cond));
    table.oracle.push_back({cond, seed, 100.0 * e.error, 100.0 * e.std_error, e.samples});
  }
  say("done");
  return table;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. The first exception
/// (by index) is rethrown after all workers finish.
inline void run_jobs(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_config(const ExperimentConfig& c, const fs::path& out) {
  fs::create_directories(out);
  binary::Writer w;
  w.bytes(c.source.dump(2) + "\n");
  w.save(out / "config.json");
}

/// All seeds, all selected systems. Results are sorted before writing so the
/// files are independent of job scheduling.
inline ResultsTable run_all(const ExperimentConfig& c, const fs::path& out, const Progress& progress = {}) {
  write_config(c, out);
  const std::string hash = config_hash(c);
  std::vector<ResultsTable> per_seed(c.seeds.size());
  std::mutex mu;
  Progress locked = [&](const std::string& m) {
    if (!progress) return;
    std::lock_guard<std::mutex> lock(mu);
    progress(m);
  };
  run_jobs(c.seeds.size(), c.jobs, [&](std::size_t i) { per_seed[i] = run_seed(c, c.seeds[i], out, hash, locked); });
  ResultsTable all;
  for (const auto& t : per_seed) all.append(t);
  all.sort();
  save_results(all, out);
  return all;
}

}  // namespace xlac::pipeline
