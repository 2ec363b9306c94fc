#pragma once

#include <string>

#include "xlac/model/network.hpp"

namespace xlac {

/// Replaces trunk layers [0, boundary) of `original` with those of `adapted`
/// and keeps every head of `original`. The input transform travels with the
/// trunk. Provenance continues from `adapted` plus a graft record.
inline Network transfer_shared_layers(const Network& adapted, const Network& original,
                                      std::size_t boundary) {
  if (boundary == 0 || boundary > adapted.trunk_depth() || boundary > original.trunk_depth())
    fail(ErrorKind::config, "transfer_shared_layers: boundary " + std::to_string(boundary) +
                                " outside trunk depth " + std::to_string(original.trunk_depth()));
  std::string diff;
  if (adapted.spec.input_dim != original.spec.input_dim)
    diff += "  input_dim: adapted " + std::to_string(adapted.spec.input_dim) + " vs original " +
            std::to_string(original.spec.input_dim) + "\n";
  for (std::size_t i = 0; i < boundary; ++i) {
    const LayerSpec& a = adapted.spec.trunk[i];
    const LayerSpec& o = original.spec.trunk[i];
    if (!(a == o))
      diff += "  trunk layer " + std::to_string(i + 1) + ": adapted " + a.name + " " +
              Matrix::shape_string(a.in_dim, a.out_dim) + " vs original " + o.name + " " +
              Matrix::shape_string(o.in_dim, o.out_dim) + "\n";
  }
  if (!diff.empty())
    fail(ErrorKind::shape, "transfer_shared_layers: trunk specs differ below boundary:\n" + diff);

  Network result = original;
  result.input_norm = adapted.input_norm;
  for (std::size_t i = 0; i < boundary; ++i) result.layers[i] = adapted.layers[i];
  result.provenance = adapted.provenance;
  result.record("graft boundary=" + std::to_string(boundary) + " heads=" +
                [&] {
                  std::string s;
                  for (const auto& t : original.spec.task_names()) s += (s.empty() ? "" : ",") + t;
                  return s;
                }());
  return result;
}

}  // namespace xlac
