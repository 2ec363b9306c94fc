#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "xlac/binary_io.hpp"
#include "xlac/synthdata/corpus.hpp"

namespace xlac {

// Corpus directory layout (version 1):
//   manifest.json   {"format": "xlac-corpus", "version": 1, "feature_dim": d,
//                    "utterances": [{"id", "language", "domain", "frames",
//                                    "features", "labels"}, ...]}
//   <id>.feats      "XLFT", u32 version, u64 rows, u64 cols, rows*cols f64
//   <id>.labels     "XLLB", u32 version, u64 count, count u32
// All integers and floats are little-endian. File names in the manifest are
// relative to the directory.

inline constexpr std::uint32_t kCorpusFormatVersion = 1;

namespace detail {

inline void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..")
    fail(ErrorKind::data, "corpus: utterance id '" + id + "' is not a valid file stem");
}

}  // namespace detail

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "xlac-corpus";
  manifest["version"] = kCorpusFormatVersion;
  manifest["feature_dim"] = corpus.feature_dim;
  manifest["utterances"] = nlohmann::json::array();
  for (const Utterance& u : corpus.utterances) {
    detail::check_id(u.id);
    binary::Writer feats;
    feats.bytes("XLFT");
    feats.u32(kCorpusFormatVersion);
    feats.u64(u.frames.rows());
    feats.u64(u.frames.cols());
    feats.f64s(u.frames.data());
    feats.save(dir / (u.id + ".feats"));

    binary::Writer labels;
    labels.bytes("XLLB");
    labels.u32(kCorpusFormatVersion);
    labels.u64(u.labels.size());
    for (std::uint32_t l : u.labels) labels.u32(l);
    labels.save(dir / (u.id + ".labels"));

    manifest["utterances"].push_back({{"id", u.id},
                                      {"language", u.language},
                                      {"domain", u.domain},
                                      {"frames", u.frames.rows()},
                                      {"features", u.id + ".feats"},
                                      {"labels", u.id + ".labels"}});
  }
  binary::Writer m;
  m.bytes(manifest.dump(1) + "\n");
  m.save(dir / "manifest.json");
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    fail(ErrorKind::data, "corpus: no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    std::ifstream is(manifest_path);
    manifest = nlohmann::json::parse(is);
    if (manifest.at("format") != "xlac-corpus")
      fail(ErrorKind::data, "corpus: " + manifest_path.string() + " is not an xlac corpus manifest");
    if (manifest.at("version") != kCorpusFormatVersion)
      fail(ErrorKind::data, "corpus: unsupported manifest version " + manifest.at("version").dump());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, "corpus: malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  Corpus corpus;
  try {
    corpus.feature_dim = manifest.at("feature_dim").get<std::size_t>();
    for (const auto& entry : manifest.at("utterances")) {
      Utterance u;
      u.id = entry.at("id").get<std::string>();
      detail::check_id(u.id);
      u.language = entry.at("language").get<std::string>();
      u.domain = entry.at("domain").get<std::string>();
      const auto frames = entry.at("frames").get<std::size_t>();
      const auto feats_path = dir / entry.at("features").get<std::string>();
      const auto labels_path = dir / entry.at("labels").get<std::string>();
      try {
        auto f = binary::Reader::load(feats_path);
        if (f.bytes(4) != "XLFT" || f.u32() != kCorpusFormatVersion)
          fail(ErrorKind::data, "corpus: bad header in " + feats_path.string());
        const auto rows = f.u64(), cols = f.u64();
        if (rows != frames || cols != corpus.feature_dim)
          fail(ErrorKind::data, "corpus: " + feats_path.string() + " shape disagrees with manifest");
        u.frames = Matrix(f.checked_size(rows, 8 * cols), cols);
        f.f64s(u.frames.data());
        if (!f.at_end()) fail(ErrorKind::data, "corpus: trailing bytes in " + feats_path.string());

        auto l = binary::Reader::load(labels_path);
        if (l.bytes(4) != "XLLB" || l.u32() != kCorpusFormatVersion)
          fail(ErrorKind::data, "corpus: bad header in " + labels_path.string());
        const auto count = l.checked_size(l.u64(), 4);
        if (count != frames) fail(ErrorKind::data, "corpus: " + labels_path.string() + " count disagrees with manifest");
        u.labels.resize(count);
        for (auto& v : u.labels) v = l.u32();
        if (!l.at_end()) fail(ErrorKind::data, "corpus: trailing bytes in " + labels_path.string());
      } catch (const binary::Truncated&) {
        fail(ErrorKind::data, "corpus: truncated file for utterance " + u.id);
      }
      corpus.utterances.push_back(std::move(u));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, "corpus: malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  corpus.validate();
  return corpus;
}

}  // namespace xlac
