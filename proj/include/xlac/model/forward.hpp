#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "xlac/model/network.hpp"
#include "xlac/numerics/layer_stack.hpp"

namespace xlac {

/// Row t of the result concatenates rows t+o of `features` for each offset o,
/// with out-of-range frames clamped to the nearest valid frame.
inline Matrix splice_context(const Matrix& features, std::span<const int> context) {
  if (features.rows() == 0) fail(ErrorKind::shape, "splice_context: empty input");
  if (context.empty()) fail(ErrorKind::shape, "splice_context: empty context");
  const auto t_max = static_cast<long>(features.rows()) - 1;
  const std::size_t d = features.cols();
  Matrix out(features.rows(), d * context.size());
  for (std::size_t t = 0; t < features.rows(); ++t) {
    for (std::size_t c = 0; c < context.size(); ++c) {
      const long s = std::clamp(static_cast<long>(t) + context[c], 0L, t_max);
      auto src = features.row(static_cast<std::size_t>(s));
      std::copy(src.begin(), src.end(), out.row(t).begin() + static_cast<long>(c * d));
    }
  }
  return out;
}

/// A run of consecutive target frames [begin, end) within one utterance.
struct Segment {
  const Matrix* frames = nullptr;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
};

/// Which rows each trunk layer must compute for a set of segments, and how
/// they splice together. Each segment is expanded by the receptive field of
/// the layers above, clamped to its utterance.
struct TrunkLayout {
  struct Range {
    std::size_t begin, end;  // frames within the utterance
  };
  std::vector<std::vector<Range>> ranges;  // [level][segment]; level 0 = input frames
  std::vector<std::vector<std::size_t>> offsets;  // row offset of each segment per level
  std::vector<std::size_t> level_rows;
  std::vector<SpliceTable> tables;  // one per trunk layer
};

inline TrunkLayout build_trunk_layout(const std::vector<std::vector<int>>& contexts,
                                      std::span<const Segment> segments) {
  const std::size_t depth = contexts.size();
  TrunkLayout lay;
  lay.ranges.assign(depth + 1, std::vector<TrunkLayout::Range>(segments.size()));
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    const std::size_t t_count = seg.frames->rows();
    if (seg.begin >= seg.end || seg.end > t_count)
      fail(ErrorKind::shape, "segment [" + std::to_string(seg.begin) + "," +
                                 std::to_string(seg.end) + ") outside utterance of " +
                                 std::to_string(t_count) + " frames");
    lay.ranges[depth][s] = {seg.begin, seg.end};
    for (std::size_t l = depth; l-- > 0;) {
      const auto& ctx = contexts[l];
      const auto [lo, hi] = lay.ranges[l + 1][s];
      const long b = std::max(0L, static_cast<long>(lo) + ctx.front());
      const long e = std::min(static_cast<long>(t_count) - 1, static_cast<long>(hi) - 1 + ctx.back());
      lay.ranges[l][s] = {static_cast<std::size_t>(b), static_cast<std::size_t>(e) + 1};
    }
  }
  lay.offsets.assign(depth + 1, std::vector<std::size_t>(segments.size()));
  lay.level_rows.assign(depth + 1, 0);
  for (std::size_t l = 0; l <= depth; ++l) {
    std::size_t off = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      lay.offsets[l][s] = off;
      off += lay.ranges[l][s].end - lay.ranges[l][s].begin;
    }
    lay.level_rows[l] = off;
  }
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& ctx = contexts[l];
    SpliceTable table;
    table.identity = false;
    table.rows = lay.level_rows[l + 1];
    table.width = ctx.size();
    table.source.reserve(table.rows * table.width);
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const long t_max = static_cast<long>(segments[s].frames->rows()) - 1;
      const auto below = lay.ranges[l][s];
      const auto here = lay.ranges[l + 1][s];
      for (std::size_t t = here.begin; t < here.end; ++t)
        for (int o : ctx) {
          const long src = std::clamp(static_cast<long>(t) + o, 0L, t_max);
          table.source.push_back(
              static_cast<std::uint32_t>(lay.offsets[l][s] + static_cast<std::size_t>(src) - below.begin));
        }
    }
    if (ctx.size() == 1 && ctx.front() == 0 && table.rows == lay.level_rows[l]) table.identity = true;
    lay.tables.push_back(std::move(table));
  }
  return lay;
}

/// Result of a forward pass through the trunk and one head. `stack` points
/// into the network's parameters, so the network must outlive it.
struct ForwardPass {
  std::vector<StackLayer> stack;
  std::vector<std::size_t> layer_ids;  // network layer index of each stack entry
  StackCache cache;
  std::size_t trunk_depth = 0;

  const Matrix& logits() const { return cache.final_output(); }
  const Matrix& trunk_output() const { return cache.outputs.at(trunk_depth - 1); }
};

inline ForwardPass forward_segments(const Network& net, const std::string& task,
                                    std::span<const Segment> segments) {
  const std::size_t head = net.head_layer(task);
  const std::size_t d = net.spec.input_dim;
  for (const Segment& s : segments)
    if (s.frames->cols() != d)
      fail(ErrorKind::shape, "forward: frame width " + std::to_string(s.frames->cols()) +
                                 " does not match network input_dim " + std::to_string(d));
  const auto contexts = net.spec.trunk_contexts();
  TrunkLayout lay = build_trunk_layout(contexts, segments);

  Matrix input(lay.level_rows[0], d);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto r = lay.ranges[0][s];
    for (std::size_t t = r.begin; t < r.end; ++t) {
      auto src = segments[s].frames->row(t);
      auto dst = input.row(lay.offsets[0][s] + t - r.begin);
      for (std::size_t j = 0; j < d; ++j)
        dst[j] = (src[j] - net.input_norm.shift[j]) * net.input_norm.scale[j];
    }
  }

  ForwardPass pass;
  pass.trunk_depth = net.trunk_depth();
  for (std::size_t l = 0; l < net.trunk_depth(); ++l) {
    pass.stack.push_back({&net.layers[l], Activation::relu, std::move(lay.tables[l])});
    pass.layer_ids.push_back(l);
  }
  const std::size_t rows = lay.level_rows.back();
  pass.stack.push_back({&net.layers[head], Activation::relu, SpliceTable::pass_through(rows)});
  pass.layer_ids.push_back(head);
  pass.stack.push_back({&net.layers[head + 1], Activation::identity, SpliceTable::pass_through(rows)});
  pass.layer_ids.push_back(head + 1);
  pass.cache = forward_stack(pass.stack, input);
  return pass;
}

/// Whole-utterance forward pass; logits have one row per frame.
inline ForwardPass forward(const Network& net, const std::string& task, const Matrix& frames) {
  if (frames.rows() == 0) fail(ErrorKind::shape, "forward: empty utterance");
  const Segment seg{&frames, 0, frames.rows()};
  return forward_segments(net, task, std::span<const Segment>(&seg, 1));
}

}  // namespace xlac
