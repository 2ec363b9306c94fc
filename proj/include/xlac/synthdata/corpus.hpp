#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "xlac/numerics/matrix.hpp"

namespace xlac {

struct Utterance {
  std::string id;
  Matrix frames;  // T x feature_dim
  std::vector<std::uint32_t> labels;
  std::string language;
  std::string domain;
};

struct Corpus {
  std::size_t feature_dim = 0;
  std::vector<Utterance> utterances;

  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& u : utterances) n += u.frames.rows();
    return n;
  }

  bool empty() const { return utterances.empty(); }

  /// Checks shape invariants and, when `senones` is non-zero, the label range.
  void validate(std::size_t senones = 0) const {
    std::set<std::string> ids;
    for (const auto& u : utterances) {
      if (u.frames.rows() == 0) fail(ErrorKind::data, "utterance " + u.id + " has no frames");
      if (u.frames.cols() != feature_dim)
        fail(ErrorKind::data, "utterance " + u.id + " has width " + std::to_string(u.frames.cols()) +
                                  ", corpus feature_dim is " + std::to_string(feature_dim));
      if (u.labels.size() != u.frames.rows())
        fail(ErrorKind::data, "utterance " + u.id + " label count differs from frame count");
      if (senones != 0)
        for (auto l : u.labels)
          if (l >= senones)
            fail(ErrorKind::data, "utterance " + u.id + " label " + std::to_string(l) +
                                      " exceeds senone count " + std::to_string(senones));
      if (!ids.insert(u.id).second) fail(ErrorKind::data, "duplicate utterance id " + u.id);
    }
  }

  /// Concatenation used for multi-condition training; ids must stay unique.
  static Corpus concat(const Corpus& a, const Corpus& b) {
    if (a.feature_dim != b.feature_dim) fail(ErrorKind::data, "Corpus::concat: feature_dim mismatch");
    Corpus c = a;
    c.utterances.insert(c.utterances.end(), b.utterances.begin(), b.utterances.end());
    c.validate();
    return c;
  }
};

}  // namespace xlac
