#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xlac/error.hpp"
#include "xlac/numerics/layer_stack.hpp"
#include "xlac/numerics/matrix.hpp"
#include "xlac/numerics/rng.hpp"

namespace xlac {

enum class LayerKind { tdnn_affine_relu, affine_relu, softmax_output };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::tdnn_affine_relu: return "tdnn_affine_relu";
    case LayerKind::affine_relu: return "affine_relu";
    case LayerKind::softmax_output: return "softmax_output";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "tdnn_affine_relu") return LayerKind::tdnn_affine_relu;
  if (s == "affine_relu") return LayerKind::affine_relu;
  if (s == "softmax_output") return LayerKind::softmax_output;
  fail(ErrorKind::data, "unknown layer kind '" + s + "'");
}

/// One parameterized layer. `in_dim` is the spliced input width, i.e. the
/// width of the layer below times the number of context offsets.
struct LayerSpec {
  LayerKind kind = LayerKind::tdnn_affine_relu;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<int> context{0};
  std::string name;

  std::size_t context_width() const { return kind == LayerKind::softmax_output ? 1 : context.size(); }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct HeadSpec {
  LayerSpec prefinal;
  LayerSpec output;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<LayerSpec> trunk;
  std::map<std::string, HeadSpec> heads;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

  /// All layers in parameter order: trunk first, then each head (sorted by
  /// task name) as prefinal, output.
  std::vector<const LayerSpec*> ordered_layers() const {
    std::vector<const LayerSpec*> out;
    for (const auto& l : trunk) out.push_back(&l);
    for (const auto& [_, h] : heads) {
      out.push_back(&h.prefinal);
      out.push_back(&h.output);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const LayerSpec* l : ordered_layers()) n += l->in_dim * l->out_dim + l->out_dim;
    return n;
  }

  std::vector<std::string> task_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : heads) names.push_back(name);
    return names;
  }

  std::vector<std::vector<int>> trunk_contexts() const {
    std::vector<std::vector<int>> c;
    for (const auto& l : trunk) c.push_back(l.context);
    return c;
  }

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorKind::config, "NetworkSpec: " + msg); };
    if (input_dim == 0) bad("input_dim must be positive");
    if (trunk.empty()) bad("trunk has no layers");
    if (heads.empty()) bad("at least one head is required");
    std::vector<std::string> names;
    auto check_layer = [&](const LayerSpec& l) {
      if (l.name.empty() || l.name.find_first_of(" \t\n") != std::string::npos)
        bad("invalid layer name '" + l.name + "'");
      if (l.in_dim == 0 || l.out_dim == 0) bad("layer " + l.name + " has a zero dimension");
      if (l.kind == LayerKind::softmax_output) {
        if (!l.context.empty()) bad("softmax_output layer " + l.name + " must have empty context");
      } else {
        if (l.context.empty()) bad("layer " + l.name + " has empty context");
        if (!std::is_sorted(l.context.begin(), l.context.end()) ||
            std::adjacent_find(l.context.begin(), l.context.end()) != l.context.end())
          bad("layer " + l.name + " context must be sorted and distinct");
      }
      names.push_back(l.name);
    };
    auto check_chain = [&](const std::string& below_name, std::size_t below_dim, const LayerSpec& l) {
      if (l.in_dim != below_dim * l.context_width())
        bad("dimension chain broken between " + below_name + " (out " + std::to_string(below_dim) +
            ") and " + l.name + " (in " + std::to_string(l.in_dim) + ", context width " +
            std::to_string(l.context_width()) + ")");
    };
    std::string below = "input";
    std::size_t below_dim = input_dim;
    for (const auto& l : trunk) {
      check_layer(l);
      if (l.kind == LayerKind::softmax_output) bad("trunk layer " + l.name + " cannot be softmax_output");
      check_chain(below, below_dim, l);
      below = l.name;
      below_dim = l.out_dim;
    }
    for (const auto& [task, h] : heads) {
      if (task.empty() || task.find_first_of(" \t\n") != std::string::npos)
        bad("invalid head name '" + task + "'");
      check_layer(h.prefinal);
      check_layer(h.output);
      if (h.prefinal.kind != LayerKind::affine_relu)
        bad("head " + task + " prefinal must be affine_relu");
      if (h.output.kind != LayerKind::softmax_output)
        bad("head " + task + " output must be softmax_output");
      check_chain(below, below_dim, h.prefinal);
      check_chain(h.prefinal.name, h.prefinal.out_dim, h.output);
    }
    std::sort(names.begin(), names.end());
    if (auto it = std::adjacent_find(names.begin(), names.end()); it != names.end())
      bad("duplicate layer name '" + *it + "'");
  }

  /// Line-oriented text form used inside checkpoints.
  std::string canonical_text() const {
    std::ostringstream os;
    auto layer_line = [&](const LayerSpec& l) {
      os << "layer " << l.name << ' ' << to_string(l.kind) << ' ' << l.in_dim << ' ' << l.out_dim
         << ' ';
      if (l.context.empty()) os << '-';
      for (std::size_t i = 0; i < l.context.size(); ++i) os << (i ? "," : "") << l.context[i];
      os << '\n';
    };
    os << "xlac-network 1\n";
    os << "input_dim " << input_dim << '\n';
    os << "trunk " << trunk.size() << '\n';
    for (const auto& l : trunk) layer_line(l);
    os << "heads " << heads.size() << '\n';
    for (const auto& [task, h] : heads) {
      os << "head " << task << '\n';
      layer_line(h.prefinal);
      layer_line(h.output);
    }
    return os.str();
  }

  static NetworkSpec parse_canonical(const std::string& text) {
    std::istringstream is(text);
    auto bad = [](const std::string& msg) -> void {
      fail(ErrorKind::data, "network spec text: " + msg);
    };
    auto expect = [&](const std::string& key) {
      std::string k;
      if (!(is >> k) || k != key) bad("expected '" + key + "'");
    };
    auto read_layer = [&]() {
      expect("layer");
      LayerSpec l;
      std::string kind, ctx;
      if (!(is >> l.name >> kind >> l.in_dim >> l.out_dim >> ctx)) bad("truncated layer line");
      l.kind = parse_layer_kind(kind);
      l.context.clear();
      if (ctx != "-") {
        std::istringstream cs(ctx);
        std::string part;
        while (std::getline(cs, part, ',')) {
          try {
            l.context.push_back(std::stoi(part));
          } catch (const std::exception&) {
            bad("bad context '" + ctx + "'");
          }
        }
      }
      return l;
    };
    NetworkSpec spec;
    int version = 0;
    expect("xlac-network");
    if (!(is >> version) || version != 1) bad("unsupported spec version");
    expect("input_dim");
    if (!(is >> spec.input_dim)) bad("bad input_dim");
    std::size_t n = 0;
    expect("trunk");
    if (!(is >> n)) bad("bad trunk count");
    for (std::size_t i = 0; i < n; ++i) spec.trunk.push_back(read_layer());
    expect("heads");
    if (!(is >> n)) bad("bad head count");
    for (std::size_t i = 0; i < n; ++i) {
      expect("head");
      std::string task;
      if (!(is >> task)) bad("missing head name");
      HeadSpec h;
      h.prefinal = read_layer();
      h.output = read_layer();
      spec.heads.emplace(task, std::move(h));
    }
    return spec;
  }
};

/// Builds the TDNN trunk + per-task heads layout. `contexts` gives one
/// offset list per trunk layer.
inline NetworkSpec make_tdnn_spec(std::size_t input_dim, std::size_t trunk_units,
                                  const std::vector<std::vector<int>>& contexts,
                                  std::size_t prefinal_units,
                                  const std::map<std::string, std::size_t>& senones_per_task) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  std::size_t below = input_dim;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    LayerSpec l{LayerKind::tdnn_affine_relu, below * contexts[i].size(), trunk_units, contexts[i],
                "tdnn" + std::to_string(i + 1)};
    spec.trunk.push_back(l);
    below = trunk_units;
  }
  for (const auto& [task, senones] : senones_per_task) {
    HeadSpec h;
    h.prefinal = {LayerKind::affine_relu, below, prefinal_units, {0}, task + ".prefinal"};
    h.output = {LayerKind::softmax_output, prefinal_units, senones, {}, task + ".output"};
    spec.heads.emplace(task, h);
  }
  spec.validate();
  return spec;
}

/// Fixed per-dimension input transform (x - shift) * scale.
struct InputNorm {
  std::vector<double> shift;
  std::vector<double> scale;

  static InputNorm identity(std::size_t dim) { return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)}; }

  friend bool operator==(const InputNorm&, const InputNorm&) = default;
};

struct Network {
  NetworkSpec spec;
  InputNorm input_norm;
  std::vector<LayerParams> layers;  // spec.ordered_layers() order
  std::vector<std::string> provenance;

  std::size_t trunk_depth() const { return spec.trunk.size(); }
  std::size_t layer_count() const { return layers.size(); }

  bool has_head(const std::string& task) const { return spec.heads.contains(task); }

  /// Index of the head's prefinal layer; the output layer follows it.
  std::size_t head_layer(const std::string& task) const {
    std::size_t idx = trunk_depth();
    for (const auto& [name, _] : spec.heads) {
      if (name == task) return idx;
      idx += 2;
    }
    std::string known;
    for (const auto& [name, _] : spec.heads) known += (known.empty() ? "" : ", ") + name;
    fail(ErrorKind::config, "unknown task '" + task + "' (known tasks: " + known + ")");
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> names;
    for (const LayerSpec* l : spec.ordered_layers()) names.push_back(l->name);
    return names;
  }

  std::size_t senones(const std::string& task) const {
    head_layer(task);
    return spec.heads.at(task).output.out_dim;
  }

  void record(std::string stage) { provenance.push_back(std::move(stage)); }
};

inline bool bitwise_equal(const LayerParams& a, const LayerParams& b) {
  return bitwise_equal(a.weight, b.weight) && bitwise_equal(a.bias, b.bias);
}

inline bool bitwise_equal(const Network& a, const Network& b) {
  if (!(a.spec == b.spec) || a.provenance != b.provenance || a.layers.size() != b.layers.size())
    return false;
  if (!bitwise_equal(a.input_norm.shift, b.input_norm.shift) ||
      !bitwise_equal(a.input_norm.scale, b.input_norm.scale))
    return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (!bitwise_equal(a.layers[i], b.layers[i])) return false;
  return true;
}

/// Weights uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases zero.
/// Each layer draws from its own substream keyed by layer name.
inline Network build_network(const NetworkSpec& spec, const Rng& rng) {
  spec.validate();
  Network net;
  net.spec = spec;
  net.input_norm = InputNorm::identity(spec.input_dim);
  for (const LayerSpec* l : spec.ordered_layers()) {
    Rng r = rng.derive("init/" + l->name);
    const double a = std::sqrt(6.0 / static_cast<double>(l->in_dim + l->out_dim));
    LayerParams p{Matrix(l->in_dim, l->out_dim), std::vector<double>(l->out_dim, 0.0)};
    for (double& w : p.weight.data()) w = r.uniform(-a, a);
    net.layers.push_back(std::move(p));
  }
  return net;
}

/// Per-layer learning-rate scale; 0 freezes a layer.
struct FreezeMask {
  std::vector<double> scale;

  static FreezeMask all(const Network& net, double s = 1.0) {
    return {std::vector<double>(net.layer_count(), s)};
  }

  /// Trains trunk layers [0, k) only; every other trunk layer and all heads
  /// are frozen.
  static FreezeMask trunk_prefix(const Network& net, std::size_t k) {
    FreezeMask m = all(net, 0.0);
    for (std::size_t i = 0; i < k && i < net.trunk_depth(); ++i) m.scale[i] = 1.0;
    return m;
  }

  bool frozen(std::size_t layer) const { return scale.at(layer) == 0.0; }

  void check_covers(const Network& net) const {
    if (scale.size() != net.layer_count())
      fail(ErrorKind::config, "FreezeMask covers " + std::to_string(scale.size()) +
                                  " layers, network has " + std::to_string(net.layer_count()));
    for (double s : scale)
      if (!(s >= 0.0 && s <= 1.0)) fail(ErrorKind::config, "FreezeMask scale outside [0,1]");
  }
};

/// Estimates per-dimension mean/variance normalization over the given frame
/// matrices. Dimensions with (near) zero variance keep unit scale.
inline InputNorm estimate_input_norm(const std::vector<const Matrix*>& frame_sets, std::size_t dim) {
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  double n = 0;
  for (const Matrix* m : frame_sets) {
    if (m->cols() != dim) fail(ErrorKind::shape, "estimate_input_norm: frame width mismatch");
    for (std::size_t i = 0; i < m->rows(); ++i) {
      auto r = m->row(i);
      for (std::size_t j = 0; j < dim; ++j) {
        sum[j] += r[j];
        sq[j] += r[j] * r[j];
      }
    }
    n += static_cast<double>(m->rows());
  }
  InputNorm norm = InputNorm::identity(dim);
  if (n == 0) return norm;
  for (std::size_t j = 0; j < dim; ++j) {
    const double mean = sum[j] / n;
    const double var = std::max(sq[j] / n - mean * mean, 0.0);
    norm.shift[j] = mean;
    norm.scale[j] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return norm;
}

}  // namespace xlac
