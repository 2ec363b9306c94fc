#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "xlac/binary_io.hpp"
#include "xlac/error.hpp"

namespace xlac::pipeline {

inline constexpr int kResultsVersion = 1;

struct ResultRow {
  std::string system;
  std::string condition;  // <language>_<domain>
  std::string language;
  std::string domain;
  double frame_error = 0.0;  // percent
  std::uint64_t seed = 0;
  std::string config_hash;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct SweepRow {
  std::size_t k_layers = 0;
  double epochs = 0.0;
  std::uint64_t seed = 0;
  double lr_tgt = 0.0;  // percent frame error
  double wr_tgt = 0.0;
  std::string config_hash;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

/// Monte-Carlo Bayes error of one test condition, for calibration.
struct OracleRow {
  std::string condition;
  std::uint64_t seed = 0;
  double error = 0.0;  // percent
  double std_error = 0.0;
  std::size_t samples = 0;

  friend bool operator==(const OracleRow&, const OracleRow&) = default;
};

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (0 for a single seed)
  std::size_t n = 0;
};

inline Stats summarize(const std::vector<double>& v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// Relative improvement of b over a, (a - b) / a.
inline double relative_improvement(double a, double b) {
  if (a == 0.0) fail(ErrorKind::numeric, "relative_improvement: baseline is zero");
  return (a - b) / a;
}

struct ResultsTable {
  std::vector<ResultRow> rows;
  std::vector<SweepRow> sweep;
  std::vector<OracleRow> oracle;

  friend bool operator==(const ResultsTable&, const ResultsTable&) = default;

  std::optional<Stats> stats(const std::string& system, const std::string& condition) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.system == system && r.condition == condition) v.push_back(r.frame_error);
    if (v.empty()) return std::nullopt;
    return summarize(v);
  }

  std::optional<Stats> oracle_stats(const std::string& condition) const {
    std::vector<double> v;
    for (const auto& r : oracle)
      if (r.condition == condition) v.push_back(r.error);
    if (v.empty()) return std::nullopt;
    return summarize(v);
  }

  /// Canonical order so files do not depend on job scheduling.
  void sort() {
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
      return std::tie(a.system, a.condition, a.seed) < std::tie(b.system, b.condition, b.seed);
    });
    std::sort(sweep.begin(), sweep.end(), [](const SweepRow& a, const SweepRow& b) {
      return std::tie(a.k_layers, a.epochs, a.seed) < std::tie(b.k_layers, b.epochs, b.seed);
    });
    std::sort(oracle.begin(), oracle.end(), [](const OracleRow& a, const OracleRow& b) {
      return std::tie(a.condition, a.seed) < std::tie(b.condition, b.seed);
    });
  }

  void append(const ResultsTable& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    sweep.insert(sweep.end(), other.sweep.begin(), other.sweep.end());
    oracle.insert(oracle.end(), other.oracle.begin(), other.oracle.end());
  }
};

namespace detail {

inline void write_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines) {
  std::string text;
  for (const auto& l : lines) text += l.dump() + "\n";
  binary::Writer w;
  w.bytes(text);
  w.save(path);
}

inline std::vector<nlohmann::json> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::data, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (j.at("v") != kResultsVersion)
        fail(ErrorKind::data, path.string() + ":" + std::to_string(n) + ": unsupported record version");
      out.push_back(std::move(j));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace detail

inline void save_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::vector<nlohmann::json> lines;
  for (const auto& r : rows)
    lines.push_back({{"v", kResultsVersion}, {"k_layers", r.k_layers}, {"epochs", r.epochs},
                     {"seed", r.seed}, {"lr_tgt", r.lr_tgt}, {"wr_tgt", r.wr_tgt},
                     {"config_hash", r.config_hash}});
  detail::write_lines(path, lines);
}

// results.jsonl, sweep.jsonl and oracle.jsonl: one JSON record per line, each
// carrying "v" (the format version).
inline void save_results(const ResultsTable& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<nlohmann::json> lines;
  for (const auto& r : t.rows)
    lines.push_back({{"v", kResultsVersion}, {"system", r.system}, {"condition", r.condition},
                     {"language", r.language}, {"domain", r.domain}, {"frame_error", r.frame_error},
                     {"seed", r.seed}, {"config_hash", r.config_hash}});
  detail::write_lines(dir / "results.jsonl", lines);
  save_sweep(t.sweep, dir / "sweep.jsonl");
  lines.clear();
  for (const auto& r : t.oracle)
    lines.push_back({{"v", kResultsVersion}, {"condition", r.condition}, {"seed", r.seed},
                     {"error", r.error}, {"std_error", r.std_error}, {"samples", r.samples}});
  detail::write_lines(dir / "oracle.jsonl", lines);
}

inline ResultsTable load_results(const std::filesystem::path& dir) {
  ResultsTable t;
  try {
    for (const auto& j : detail::read_lines(dir / "results.jsonl"))
      t.rows.push_back({j.at("system").get<std::string>(), j.at("condition").get<std::string>(),
                        j.at("language").get<std::string>(), j.at("domain").get<std::string>(),
                        j.at("frame_error").get<double>(), j.at("seed").get<std::uint64_t>(),
                        j.at("config_hash").get<std::string>()});
    if (std::filesystem::exists(dir / "sweep.jsonl"))
      for (const auto& j : detail::read_lines(dir / "sweep.jsonl"))
        t.sweep.push_back({j.at("k_layers").get<std::size_t>(), j.at("epochs").get<double>(),
                           j.at("seed").get<std::uint64_t>(), j.at("lr_tgt").get<double>(),
                           j.at("wr_tgt").get<double>(), j.at("config_hash").get<std::string>()});
    if (std::filesystem::exists(dir / "oracle.jsonl"))
      for (const auto& j : detail::read_lines(dir / "oracle.jsonl"))
        t.oracle.push_back({j.at("condition").get<std::string>(), j.at("seed").get<std::uint64_t>(),
                            j.at("error").get<double>(), j.at("std_error").get<double>(),
                            j.at("samples").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, "results in " + dir.string() + ": " + e.what());
  }
  return t;
}

/// Fixed-width text table; the first column is left-aligned, the rest right.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) { rows_.push_back(std::move(header)); }

  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_) {
      width.resize(std::max(width.size(), r.size()), 0);
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream os;
    for (std::size_t ri = 0; ri < rows_.size(); ++ri) {
      const auto& r = rows_[ri];
      std::string line;
      for (std::size_t i = 0; i < r.size(); ++i) {
        const std::string pad(width[i] - r[i].size(), ' ');
        line += i == 0 ? r[i] + pad : "  " + pad + r[i];
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      os << line << "\n";
      if (ri == 0) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < width.size(); ++i) total += width[i] + (i ? 2 : 0);
        os << std::string(total, '-') << "\n";
      }
    }
    return os.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

inline std::string fmt(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::string fmt_stats(const std::optional<Stats>& s) {
  if (!s) return "---";
  return fmt(s->mean) + " +- " + fmt(s->std);
}

}  // namespace xlac::pipeline
