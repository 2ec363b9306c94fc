#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlac/error.hpp"
#include "xlac/numerics/rng.hpp"
#include "xlac/training/optimizer.hpp"

namespace xlac::pipeline {

using nlohmann::json;

// Systems in report order.
inline const std::vector<std::string>& all_systems() {
  static const std::vector<std::string> names{"oracle_lr_tgt", "mono_wr_src", "mono_lr_src",
                                              "multiling",     "proposed",    "multitask3",
                                              "multitask3_ft", "multicond",   "multicond_ft"};
  return names;
}

struct LanguageConfig {
  std::size_t senones = 0;
  std::string base;  // empty: independent draw
  double alpha = 0.0;
  bool share_mixing_map = false;  // reuse the base language's feature subspace
};

struct DomainConfig {
  std::string channel = "identity";  // identity | orthogonal
  double strength = 0.0;             // orthogonal: size of the perturbation before orthonormalizing
  double noise_std = 0.0;
  double gain_min = 1.0, gain_max = 1.0;
};

struct DataConfig {
  std::size_t feature_dim = 0;
  std::size_t latent_dim = 0;
  double mean_scale = 1.0;
  double var_min = 0.5, var_max = 1.0;
  double self_loop = 0.8;
  double mean_utt_len = 100;
  std::map<std::string, LanguageConfig> languages;  // must contain "wr" and "lr"
  std::map<std::string, DomainConfig> domains;      // must contain "src" and "tgt"
  std::map<std::string, std::size_t> train_frames;  // lr_src, wr_src, wr_tgt, lr_tgt
  std::size_t test_frames = 0;                      // per test condition
  std::size_t oracle_samples = 20000;
};

struct NetworkConfig {
  std::size_t units = 650;
  std::size_t prefinal_units = 650;
  std::vector<std::vector<int>> contexts;
};

struct AdaptConfig {
  TrainConfig train;
  std::size_t k_layers = 3;
};

struct SweepConfig {
  std::vector<std::size_t> k_layers;
  std::vector<double> epochs;
};

struct ReportConfig {
  double margin = 1.0;       // required gap for proposed < multiling < mono
  double slack = 0.3;        // proposed vs multitask3 / multicond
  double ft_band = 0.5;      // |ft - untuned|
  double sweep_spread = 2.0;
};

struct ExperimentConfig {
  std::string profile;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::size_t jobs = 1;
  DataConfig data;
  NetworkConfig network;
  TrainConfig train;
  AdaptConfig adapt;
  std::string finetune = "sweep";  // "sweep": per-seed sweep argmin; "adapt": the adapt block's (k, epochs)
  std::vector<std::string> systems;
  SweepConfig sweep;
  ReportConfig report;
  json source;  // merged configuration as parsed

  bool has_system(const std::string& s) const {
    return std::find(systems.begin(), systems.end(), s) != systems.end();
  }

  std::vector<std::string> test_domains() const {
    std::vector<std::string> out{"src", "tgt"};
    for (const auto& [name, _] : data.domains)
      if (name != "src" && name != "tgt") out.push_back(name);
    return out;
  }

  bool needs_sweep() const {
    if (!has_system("proposed")) return false;
    return finetune == "sweep" || has_system("multitask3_ft") || has_system("multicond_ft") ||
           !sweep.k_layers.empty();
  }
};

/// Full-scale base profile ("paper"). Dimensions follow the described system (43-dim
/// input, 7 TDNN layers of 650 units, minibatch 256, lr 0.0015 decaying 10x,
/// max-change 2, 3 epochs, 5 seeds). Corpus budgets keep the 200:40 hour
/// WR:LR source ratio at 100 frames per second.
inline json paper_profile() {
  return json::parse(R"({
  "profile": "paper",
  "seeds": [1, 2, 3, 4, 5],
  "output_dir": "out-paper",
  "jobs": 1,
  "data": {
    "feature_dim": 43,
    "latent_dim": 43,
    "mean_scale": 1.0,
    "var_min": 0.5,
    "var_max": 1.0,
    "self_loop": 0.8,
    "mean_utt_len": 300,
    "languages": {
      "wr": {"senones": 40},
      "lr": {"senones": 30, "base": "wr", "alpha": 0.7}
    },
    "domains": {
      "src": {"channel": "identity", "noise_std": 0.5, "gain": [1.0, 1.0]},
      "tgt": {"channel": "orthogonal", "strength": 0.6, "noise_std": 0.3, "gain": [0.8, 1.25]},
      "tb": {"channel": "orthogonal", "strength": 0.7, "noise_std": 0.3, "gain": [0.8, 1.25]}
    },
    "train_frames": {"wr_src": 72000000, "lr_src": 14400000, "wr_tgt": 54000000, "lr_tgt": 10800000},
    "test_frames": 1080000,
    "oracle_samples": 100000
  },
  "network": {
    "units": 650,
    "prefinal_units": 650,
    "contexts": [[-1, 0, 1], [-1, 0, 1], [-1, 0, 1], [-3, 0, 3], [-3, 0, 3], [-3, 0, 3], [0]]
  },
  "train": {
    "initial_lr": 0.0015, "final_lr_factor": 10, "epochs": 3, "minibatch": 256,
    "max_change": 2.0, "chunk_frames": 8
  },
  "adapt": {
    "initial_lr": 0.0015, "final_lr_factor": 10, "epochs": 1, "minibatch": 256,
    "max_change": 2.0, "chunk_frames": 8, "continue_decay": false, "k_layers": 3
  },
  "finetune": "sweep",
  "systems": ["oracle_lr_tgt", "mono_wr_src", "mono_lr_src", "multiling", "proposed",
              "multitask3", "multitask3_ft", "multicond", "multicond_ft"],
  "sweep": {"k_layers": [1, 2, 3, 4, 5, 6], "epochs": [0.5, 1, 2, 3]},
  "report": {"margin": 1.0, "slack": 0.3, "ft_band": 0.5, "sweep_spread": 2.0}
})");
}

/// Desk profile: a patch over the full-scale profile sized for a single CPU core.
inline json desk_patch() {
  return json::parse(R"({
  "profile": "desk",
  "output_dir": "out-desk",
  "data": {
    "feature_dim": 16,
    "latent_dim": 8,
    "mean_scale": 1.5,
    "mean_utt_len": 100,
    "languages": {"lr": {"share_mixing_map": true}},
    "domains": {"tgt": {"strength": 0.1, "noise_std": 0.2}, "tb": {"strength": 0.15}},
    "train_frames": {"wr_src": 24000, "lr_src": 18000, "wr_tgt": 24000, "lr_tgt": 36000},
    "test_frames": 6000,
    "oracle_samples": 20000
  },
  "network": {"units": 64, "prefinal_units": 64},
  "train": {"initial_lr": 0.1, "epochs": 6, "minibatch": 64, "chunk_frames": 16},
  "adapt": {"initial_lr": 0.03, "minibatch": 64, "chunk_frames": 16}
})");
}

inline json profile_json(const std::string& name) {
  json base = paper_profile();
  if (name == "paper") return base;
  if (name == "desk") {
    base.merge_patch(desk_patch());
    return base;
  }
  fail(ErrorKind::config, "unknown profile '" + name + "' (expected paper or desk)");
}

namespace detail {

inline std::string path_join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

/// Rejects keys that the schema does not know, so typos are config errors.
inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(ErrorKind::config, "config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorKind::config, "config: unknown key '" + path_join(where, key) + "'");
  }
}

template <typename T>
T get(const json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::config, "config: missing '" + path_join(where, key) + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, "config: '" + path_join(where, key) + "' has the wrong type: " + j.at(key).dump());
  }
}

template <typename T>
T get_or(const json& j, const std::string& where, const char* key, T fallback) {
  return j.contains(key) ? get<T>(j, where, key) : fallback;
}

inline std::size_t get_count(const json& j, const std::string& where, const char* key) {
  const json& v = j.contains(key) ? j.at(key) : json();
  if (!v.is_number_unsigned()) {
    if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<std::size_t>();
    fail(ErrorKind::config, "config: '" + path_join(where, key) + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline TrainConfig parse_train(const json& j, const std::string& where, bool adapt) {
  if (adapt)
    check_keys(j, where, {"initial_lr", "final_lr_factor", "epochs", "minibatch", "max_change",
                          "chunk_frames", "continue_decay", "k_layers"});
  else
    check_keys(j, where, {"initial_lr", "final_lr_factor", "epochs", "minibatch", "max_change", "chunk_frames"});
  TrainConfig t;
  t.initial_lr = get<double>(j, where, "initial_lr");
  t.final_lr_factor = get<double>(j, where, "final_lr_factor");
  t.epochs = get<double>(j, where, "epochs");
  t.minibatch = get_count(j, where, "minibatch");
  t.max_change = get<double>(j, where, "max_change");
  t.chunk_frames = get_count(j, where, "chunk_frames");
  if (adapt) t.continue_decay = get_or<bool>(j, where, "continue_decay", false);
  try {
    t.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, where + ": " + e.what());
  }
  return t;
}

}  // namespace detail

/// Builds a validated ExperimentConfig from merged JSON.
inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  check_keys(j, "", {"profile", "seeds", "output_dir", "jobs", "data", "network", "train", "adapt",
                     "finetune", "systems", "sweep", "report"});
  ExperimentConfig c;
  c.source = j;
  c.profile = get<std::string>(j, "", "profile");
  c.seeds = get<std::vector<std::uint64_t>>(j, "", "seeds");
  if (c.seeds.empty()) fail(ErrorKind::config, "config: 'seeds' must not be empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    fail(ErrorKind::config, "config: duplicate seeds");
  c.output_dir = get<std::string>(j, "", "output_dir");
  c.jobs = get_count(j, "", "jobs");
  if (c.jobs < 1) fail(ErrorKind::config, "config: 'jobs' must be >= 1");

  const json& d = j.at("data");
  check_keys(d, "data", {"feature_dim", "latent_dim", "mean_scale", "var_min", "var_max", "self_loop",
                         "mean_utt_len", "languages", "domains", "train_frames", "test_frames",
                         "oracle_samples"});
  c.data.feature_dim = get_count(d, "data", "feature_dim");
  c.data.latent_dim = get_count(d, "data", "latent_dim");
  c.data.mean_scale = get<double>(d, "data", "mean_scale");
  c.data.var_min = get<double>(d, "data", "var_min");
  c.data.var_max = get<double>(d, "data", "var_max");
  c.data.self_loop = get<double>(d, "data", "self_loop");
  c.data.mean_utt_len = get<double>(d, "data", "mean_utt_len");
  c.data.test_frames = get_count(d, "data", "test_frames");
  c.data.oracle_samples = get_count(d, "data", "oracle_samples");
  if (c.data.feature_dim == 0 || c.data.latent_dim == 0 || c.data.latent_dim > c.data.feature_dim)
    fail(ErrorKind::config, "config: need 0 < data.latent_dim <= data.feature_dim");
  if (!(c.data.self_loop >= 0 && c.data.self_loop < 1))
    fail(ErrorKind::config, "config: data.self_loop must be in [0,1)");
  if (!(c.data.mean_utt_len >= 1)) fail(ErrorKind::config, "config: data.mean_utt_len must be >= 1");
  if (!(c.data.var_min > 0 && c.data.var_max >= c.data.var_min))
    fail(ErrorKind::config, "config: need 0 < data.var_min <= data.var_max");
  if (c.data.test_frames == 0) fail(ErrorKind::config, "config: data.test_frames must be > 0");
  if (c.data.oracle_samples < 10000) fail(ErrorKind::config, "config: data.oracle_samples must be >= 10000");

  if (!d.contains("languages") || !d.at("languages").is_object())
    fail(ErrorKind::config, "config: data.languages must be an object");
  for (const auto& [name, lj] : d.at("languages").items()) {
    const std::string where = "data.languages." + name;
    check_keys(lj, where, {"senones", "base", "alpha", "share_mixing_map"});
    LanguageConfig l;
    l.senones = get_count(lj, where, "senones");
    if (l.senones < 2) fail(ErrorKind::config, "config: " + where + ".senones must be >= 2");
    l.base = get_or<std::string>(lj, where, "base", "");
    l.alpha = get_or<double>(lj, where, "alpha", 0.0);
    if (!(l.alpha >= 0 && l.alpha <= 1)) fail(ErrorKind::config, "config: " + where + ".alpha outside [0,1]");
    l.share_mixing_map = get_or<bool>(lj, where, "share_mixing_map", false);
    c.data.languages[name] = l;
  }
  for (const char* need : {"wr", "lr"})
    if (!c.data.languages.contains(need))
      fail(ErrorKind::config, std::string("config: data.languages must define '") + need + "'");
  if (c.data.languages.size() != 2)
    fail(ErrorKind::config, "config: data.languages takes exactly 'wr' and 'lr'");
  for (const auto& [name, l] : c.data.languages)
    if (!l.base.empty() && (!c.data.languages.contains(l.base) || c.data.languages.at(l.base).base != ""))
      fail(ErrorKind::config, "config: language " + name + " has base '" + l.base +
                                  "', which must be a defined language without a base");

  if (!d.contains("domains") || !d.at("domains").is_object())
    fail(ErrorKind::config, "config: data.domains must be an object");
  for (const auto& [name, dj] : d.at("domains").items()) {
    const std::string where = "data.domains." + name;
    check_keys(dj, where, {"channel", "strength", "noise_std", "gain"});
    DomainConfig dc;
    dc.channel = get<std::string>(dj, where, "channel");
    if (dc.channel != "identity" && dc.channel != "orthogonal")
      fail(ErrorKind::config, "config: " + where + ".channel must be identity or orthogonal");
    dc.strength = get_or<double>(dj, where, "strength", 0.0);
    dc.noise_std = get<double>(dj, where, "noise_std");
    const auto gain = get<std::vector<double>>(dj, where, "gain");
    if (gain.size() != 2 || !(gain[0] > 0 && gain[1] >= gain[0]))
      fail(ErrorKind::config, "config: " + where + ".gain must be [min, max] with 0 < min <= max");
    dc.gain_min = gain[0];
    dc.gain_max = gain[1];
    if (!(dc.noise_std >= 0)) fail(ErrorKind::config, "config: " + where + ".noise_std must be >= 0");
    c.data.domains[name] = dc;
  }
  for (const char* need : {"src", "tgt"})
    if (!c.data.domains.contains(need))
      fail(ErrorKind::config, std::string("config: data.domains must define '") + need + "'");

  const json& tf = d.at("train_frames");
  check_keys(tf, "data.train_frames", {"lr_src", "wr_src", "wr_tgt", "lr_tgt"});
  for (const char* role : {"lr_src", "wr_src", "wr_tgt", "lr_tgt"}) {
    c.data.train_frames[role] = get_count(tf, "data.train_frames", role);
    if (c.data.train_frames[role] == 0)
      fail(ErrorKind::config, std::string("config: data.train_frames.") + role + " must be > 0");
  }

  const json& n = j.at("network");
  check_keys(n, "network", {"units", "prefinal_units", "contexts"});
  c.network.units = get_count(n, "network", "units");
  c.network.prefinal_units = get_count(n, "network", "prefinal_units");
  c.network.contexts = get<std::vector<std::vector<int>>>(n, "network", "contexts");
  if (c.network.contexts.empty()) fail(ErrorKind::config, "config: network.contexts must not be empty");

  c.train = parse_train(j.at("train"), "train", false);
  c.adapt.train = parse_train(j.at("adapt"), "adapt", true);
  c.adapt.k_layers = get_count(j.at("adapt"), "adapt", "k_layers");
  if (c.adapt.k_layers < 1 || c.adapt.k_layers > c.network.contexts.size())
    fail(ErrorKind::config, "config: adapt.k_layers outside [1, trunk depth]");

  c.finetune = get<std::string>(j, "", "finetune");
  if (c.finetune != "sweep" && c.finetune != "adapt")
    fail(ErrorKind::config, "config: finetune must be 'sweep' or 'adapt'");

  c.systems = get<std::vector<std::string>>(j, "", "systems");
  if (c.systems.empty()) fail(ErrorKind::config, "config: 'systems' must not be empty");
  for (const auto& s : c.systems)
    if (std::find(all_systems().begin(), all_systems().end(), s) == all_systems().end())
      fail(ErrorKind::config, "config: unknown system '" + s + "'");

  const json& sw = j.at("sweep");
  check_keys(sw, "sweep", {"k_layers", "epochs"});
  c.sweep.k_layers = get<std::vector<std::size_t>>(sw, "sweep", "k_layers");
  c.sweep.epochs = get<std::vector<double>>(sw, "sweep", "epochs");
  for (auto k : c.sweep.k_layers)
    if (k < 1 || k > c.network.contexts.size()) fail(ErrorKind::config, "config: sweep.k_layers entry outside [1, trunk depth]");
  for (double e : c.sweep.epochs)
    if (!(e > 0)) fail(ErrorKind::config, "config: sweep.epochs entries must be > 0");
  if (c.has_system("proposed") && (c.sweep.k_layers.empty() || c.sweep.epochs.empty()))
    fail(ErrorKind::config, "config: the sweep grid must be non-empty when 'proposed' is selected");
  if ((c.has_system("multitask3_ft") || c.has_system("multicond_ft")) && c.finetune == "sweep" &&
      !c.has_system("proposed"))
    fail(ErrorKind::config, "config: finetune 'sweep' needs the 'proposed' system");

  const json& r = j.at("report");
  check_keys(r, "report", {"margin", "slack", "ft_band", "sweep_spread"});
  c.report.margin = get<double>(r, "report", "margin");
  c.report.slack = get<double>(r, "report", "slack");
  c.report.ft_band = get<double>(r, "report", "ft_band");
  c.report.sweep_spread = get<double>(r, "report", "sweep_spread");
  return c;
}

/// Hash of everything that determines a result row except the seed list,
/// output location and job count; rows are regenerable from (hash, seed).
inline std::string config_hash(const ExperimentConfig& c) {
  json j = c.source;
  j.erase("seeds");
  j.erase("output_dir");
  j.erase("jobs");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(xlac::detail::fnv1a64(j.dump())));
  return buf;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::config, "cannot open config file " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Merge order: built-in profile, then the config file (if any), then
/// command-line overrides. A config file may name its own profile.
inline ExperimentConfig load_config(const std::optional<std::string>& profile,
                                    const std::optional<std::filesystem::path>& file,
                                    const json& overrides = json::object()) {
  json file_json = file ? read_json_file(*file) : json::object();
  std::string name = profile.value_or(file_json.value("profile", std::string("desk")));
  json merged = profile_json(name);
  merged.merge_patch(file_json);
  merged["profile"] = name;
  merged.merge_patch(overrides);
  return parse_config(merged);
}

}  // namespace xlac::pipeline
