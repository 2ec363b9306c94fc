#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xlac/model/network.hpp"
#include "xlac/numerics/layer_stack.hpp"

namespace xlac {

/// Optimizer and loop settings. Defaults are the full-scale values; smaller
/// desk profiles override them from configuration.
struct TrainConfig {
  double initial_lr = 0.0015;
  double final_lr_factor = 10.0;  // final lr = initial_lr / final_lr_factor
  double epochs = 3.0;
  std::size_t minibatch = 256;    // frames per minibatch
  double max_change = 2.0;        // per-layer cap on the update norm
  std::uint64_t seed = 0;
  std::size_t chunk_frames = 8;   // consecutive frames per training example
  // Start adaptation from the already-decayed rate (initial/final_factor)
  // instead of restarting at initial_lr.
  bool continue_decay = false;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::config, "TrainConfig: " + m); };
    if (!(initial_lr > 0)) bad("initial_lr must be > 0");
    if (!(final_lr_factor >= 1)) bad("final_lr_factor must be >= 1");
    if (!(epochs > 0)) bad("epochs must be > 0");
    if (minibatch < 1) bad("minibatch must be >= 1");
    if (!(max_change > 0)) bad("max_change must be > 0");
    if (chunk_frames < 1) bad("chunk_frames must be >= 1");
  }

  std::size_t chunks_per_minibatch() const { return std::max<std::size_t>(1, minibatch / chunk_frames); }
};

/// Rounds to 15 significant decimal digits. Learning rates are configured as
/// decimals, and 0.0015 / 10 in binary floating point is one ulp away from
/// 0.00015; rounding keeps decimal endpoints exact and preserves monotonicity.
inline double round_decimal15(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return std::strtod(buf, nullptr);
}

/// lr(p) = initial_lr * final_lr_factor^(-p) for progress p in [0, 1].
inline double lr_schedule(const TrainConfig& cfg, double progress) {
  if (!(progress >= 0.0 && progress <= 1.0))
    fail(ErrorKind::config, "lr_schedule: progress " + std::to_string(progress) + " outside [0,1]");
  const double start = cfg.continue_decay ? round_decimal15(cfg.initial_lr / cfg.final_lr_factor)
                                          : cfg.initial_lr;
  if (progress == 0.0) return start;
  if (progress == 1.0) return round_decimal15(start / cfg.final_lr_factor);
  return round_decimal15(start * std::pow(cfg.final_lr_factor, -progress));
}

using Gradients = std::vector<std::optional<LayerGrad>>;  // indexed by network layer

/// Hook for a gradient preconditioner (e.g. natural gradient). Called once
/// per layer with a gradient before the update is formed.
using Preconditioner = std::function<void(std::size_t layer, LayerGrad& grad)>;

struct ClipReport {
  std::vector<double> raw_norm;      // ||delta|| before clipping, 0 for untouched layers
  std::vector<double> applied_norm;  // ||delta|| actually applied
  std::vector<bool> clipped;

  std::vector<std::size_t> clipped_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clipped.size(); ++i)
      if (clipped[i]) out.push_back(i);
    return out;
  }
};

/// Plain SGD step with per-layer max-change. For each layer with a gradient
/// and nonzero mask scale, delta = -lr * scale * grad; when the l2 norm of
/// delta over (W, b) jointly exceeds max_change it is rescaled to exactly
/// max_change. Layers with scale 0 or no gradient are left untouched.
inline ClipReport apply_update(Network& net, Gradients& grads, double lr, const FreezeMask& mask,
                               double max_change, const Preconditioner& precondition = {}) {
  mask.check_covers(net);
  if (grads.size() != net.layer_count())
    fail(ErrorKind::shape, "apply_update: " + std::to_string(grads.size()) + " gradient slots for " +
                               std::to_string(net.layer_count()) + " layers");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (grads[i] && (!all_finite(grads[i]->weight.data()) || !all_finite(grads[i]->bias)))
      fail(ErrorKind::numeric, "apply_update: non-finite gradient in layer " +
                                   net.layer_names()[i]);

  const std::size_t n = net.layer_count();
  ClipReport report{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
                    std::vector<bool>(n, false)};
  for (std::size_t i = 0; i < n; ++i) {
    if (!grads[i] || mask.frozen(i)) continue;
    LayerGrad& g = *grads[i];
    LayerParams& p = net.layers[i];
    if (g.weight.rows() != p.weight.rows() || g.weight.cols() != p.weight.cols() ||
        g.bias.size() != p.bias.size())
      fail(ErrorKind::shape, "apply_update: gradient shape mismatch in layer " + net.layer_names()[i]);
    if (precondition) precondition(i, g);
    const double step = -lr * mask.scale[i];
    const double norm =
        std::abs(step) * std::sqrt(squared_norm(g.weight.data()) + squared_norm(g.bias));
    double factor = step;
    report.raw_norm[i] = norm;
    report.applied_norm[i] = norm;
    if (norm > max_change) {
      factor = step * (max_change / norm);
      report.clipped[i] = true;
      report.applied_norm[i] = max_change;
    }
    auto w = p.weight.data();
    auto gw = g.weight.data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] += factor * gw[k];
    for (std::size_t k = 0; k < p.bias.size(); ++k) p.bias[k] += factor * g.bias[k];
  }
  return report;
}

}  // namespace xlac
