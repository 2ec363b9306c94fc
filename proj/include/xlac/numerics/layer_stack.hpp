#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xlac/numerics/kernels.hpp"
#include "xlac/numerics/matrix.hpp"

namespace xlac {

struct LayerParams {
  Matrix weight;  // in x out
  std::vector<double> bias;
};

struct LayerGrad {
  Matrix weight;
  std::vector<double> bias;
};

enum class Activation { relu, identity };

/// Describes how a layer's input rows are assembled from the rows of the
/// layer below: output row r concatenates below-rows source[r*width + c]
/// for c in [0, width). An identity table passes rows through unchanged.
struct SpliceTable {
  std::size_t rows = 0;
  std::size_t width = 1;
  std::vector<std::uint32_t> source;
  bool identity = true;

  static SpliceTable pass_through(std::size_t rows) { return {rows, 1, {}, true}; }
};

inline Matrix gather_rows(const Matrix& below, const SpliceTable& table) {
  if (table.identity) return below;
  const std::size_t d = below.cols();
  Matrix out(table.rows, d * table.width);
  for (std::size_t r = 0; r < table.rows; ++r) {
    double* dst = out.row(r).data();
    for (std::size_t c = 0; c < table.width; ++c) {
      const std::uint32_t s = table.source[r * table.width + c];
      const double* src = below.row(s).data();
      std::copy(src, src + d, dst + c * d);
    }
  }
  return out;
}

/// Adjoint of gather_rows: accumulates spliced-input gradients back onto the
/// rows they were copied from.
inline void scatter_add_rows(const Matrix& grad_spliced, const SpliceTable& table,
                             Matrix& grad_below) {
  if (table.identity) {
    auto g = grad_below.data();
    auto s = grad_spliced.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i];
    return;
  }
  const std::size_t d = grad_below.cols();
  for (std::size_t r = 0; r < table.rows; ++r) {
    const double* src = grad_spliced.row(r).data();
    for (std::size_t c = 0; c < table.width; ++c) {
      double* dst = grad_below.row(table.source[r * table.width + c]).data();
      const double* part = src + c * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += part[j];
    }
  }
}

struct StackLayer {
  const LayerParams* params = nullptr;
  Activation activation = Activation::relu;
  SpliceTable splice;
};

/// Per-layer spliced inputs and post-activation outputs of one forward pass.
struct StackCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;

  const Matrix& final_output() const { return outputs.back(); }
};

inline StackCache forward_stack(std::span<const StackLayer> layers, const Matrix& input) {
  StackCache cache;
  cache.inputs.reserve(layers.size());
  cache.outputs.reserve(layers.size());
  const Matrix* below = &input;
  for (const StackLayer& layer : layers) {
    cache.inputs.push_back(gather_rows(*below, layer.splice));
    Matrix out;
    affine_forward_into(cache.inputs.back(), layer.params->weight, layer.params->bias, out);
    if (layer.activation == Activation::relu) relu_inplace(out);
    cache.outputs.push_back(std::move(out));
    below = &cache.outputs.back();
  }
  return cache;
}

/// Backpropagates `dlogits` through the stack. Only layers flagged in
/// `trainable` get gradient storage; propagation stops at the lowest
/// trainable layer since nothing below it needs an input gradient.
inline std::vector<std::optional<LayerGrad>> backward_chain(std::span<const StackLayer> layers,
                                                            const StackCache& cache,
                                                            const Matrix& dlogits,
                                                            const std::vector<bool>& trainable) {
  const std::size_t n = layers.size();
  if (cache.inputs.size() != n || cache.outputs.size() != n || trainable.size() != n)
    fail(ErrorKind::shape, "backward_chain: cache holds " + std::to_string(cache.outputs.size()) +
                               " layers, stack has " + std::to_string(n));
  std::vector<std::optional<LayerGrad>> grads(n);
  if (n == 0) return grads;
  if (dlogits.rows() != cache.outputs.back().rows() ||
      dlogits.cols() != cache.outputs.back().cols())
    fail(ErrorKind::shape, "backward_chain: dlogits " + dlogits.shape_string() + " vs output " +
                               cache.outputs.back().shape_string());

  std::size_t lowest = n;
  for (std::size_t i = 0; i < n; ++i)
    if (trainable[i]) {
      lowest = i;
      break;
    }
  if (lowest == n) return grads;

  Matrix grad = dlogits;
  for (std::size_t l = n; l-- > lowest;) {
    const StackLayer& layer = layers[l];
    const Matrix& x = cache.inputs[l];
    if (x.cols() != layer.params->weight.rows() || grad.cols() != layer.params->weight.cols())
      fail(ErrorKind::shape, "backward_chain: cache/stack mismatch at layer " + std::to_string(l));
    if (layer.activation == Activation::relu) relu_backward_inplace(cache.outputs[l], grad);
    if (trainable[l]) {
      LayerGrad g{Matrix(x.cols(), grad.cols()), std::vector<double>(grad.cols(), 0.0)};
      accumulate_at_b(x, grad, g.weight);
      accumulate_column_sums(grad, g.bias);
      grads[l] = std::move(g);
    }
    if (l == lowest) break;
    const Matrix dx = matmul_bt(grad, layer.params->weight);
    const Matrix& below = cache.outputs[l - 1];
    Matrix grad_below(below.rows(), below.cols());
    scatter_add_rows(dx, layer.splice, grad_below);
    grad = std::move(grad_below);
  }
  return grads;
}

}  // namespace xlac
