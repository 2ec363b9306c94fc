#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xlac/binary_io.hpp"
#include "xlac/model/network.hpp"

namespace xlac {

// Checkpoint layout (all integers little-endian):
//
//   "XLAC"                    magic
//   u32                       format version
//   u64 + bytes               NetworkSpec::canonical_text()
//   u32                       number of tensors
//   per tensor: u64+bytes name, u64 rows, u64 cols
//   f64 payload               every tensor in table order
//   u32                       number of provenance records
//   per record: u64 + bytes
//
// Tensors are input_norm.shift, input_norm.scale, then <layer>.weight and
// <layer>.bias for each layer in parameter order.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[] = "XLAC";

enum class CheckpointErrc { io, version_mismatch, truncated, shape_corrupt };

inline const char* to_string(CheckpointErrc c) {
  switch (c) {
    case CheckpointErrc::io: return "io";
    case CheckpointErrc::version_mismatch: return "version_mismatch";
    case CheckpointErrc::truncated: return "truncated";
    case CheckpointErrc::shape_corrupt: return "shape_corrupt";
  }
  return "?";
}

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : Error(ErrorKind::data, "checkpoint " + std::string(to_string(code)) + ": " + what),
        code_(code) {}

  CheckpointErrc code() const noexcept { return code_; }

 private:
  CheckpointErrc code_;
};

namespace detail {

struct TensorEntry {
  std::string name;
  std::uint64_t rows, cols;
};

inline std::vector<TensorEntry> tensor_table(const NetworkSpec& spec) {
  std::vector<TensorEntry> t;
  t.push_back({"input_norm.shift", 1, spec.input_dim});
  t.push_back({"input_norm.scale", 1, spec.input_dim});
  for (const LayerSpec* l : spec.ordered_layers()) {
    t.push_back({l->name + ".weight", l->in_dim, l->out_dim});
    t.push_back({l->name + ".bias", 1, l->out_dim});
  }
  return t;
}

inline void write_checkpoint(binary::Writer& w, const Network& net) {
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.text(net.spec.canonical_text());
  const auto table = tensor_table(net.spec);
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& e : table) {
    w.text(e.name);
    w.u64(e.rows);
    w.u64(e.cols);
  }
  w.f64s(net.input_norm.shift);
  w.f64s(net.input_norm.scale);
  for (const LayerParams& p : net.layers) {
    w.f64s(p.weight.data());
    w.f64s(p.bias);
  }
  w.u32(static_cast<std::uint32_t>(net.provenance.size()));
  for (const auto& rec : net.provenance) w.text(rec);
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Network& net) {
  binary::Writer w;
  detail::write_checkpoint(w, net);
  return w.buffer();
}

inline void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  binary::Writer w;
  detail::write_checkpoint(w, net);
  try {
    w.save(path);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrc::io, e.what());
  }
}

/// Parses a checkpoint image. Either returns a complete network or throws;
/// no partially built network escapes.
inline Network parse_checkpoint(std::vector<char> bytes) {
  binary::Reader r(std::move(bytes));
  try {
    if (r.bytes(4) != std::string_view(kCheckpointMagic, 4))
      throw CheckpointError(CheckpointErrc::version_mismatch, "bad magic (not an XLAC checkpoint)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
      throw CheckpointError(CheckpointErrc::version_mismatch,
                            "format version " + std::to_string(version) + ", expected " +
                                std::to_string(kCheckpointVersion));
    Network net;
    try {
      net.spec = NetworkSpec::parse_canonical(r.text());
      net.spec.validate();
    } catch (const binary::Truncated&) {
      throw;
    } catch (const Error& e) {
      throw CheckpointError(CheckpointErrc::shape_corrupt, std::string("spec: ") + e.what());
    }
    const auto expected = detail::tensor_table(net.spec);
    const std::uint32_t count = r.u32();
    if (count != expected.size())
      throw CheckpointError(CheckpointErrc::shape_corrupt,
                            "tensor table has " + std::to_string(count) + " entries, spec implies " +
                                std::to_string(expected.size()));
    for (const auto& e : expected) {
      const std::string name = r.text();
      const std::uint64_t rows = r.u64(), cols = r.u64();
      if (name != e.name || rows != e.rows || cols != e.cols)
        throw CheckpointError(CheckpointErrc::shape_corrupt,
                              "tensor " + name + " " + Matrix::shape_string(rows, cols) +
                                  " does not match spec " + e.name + " " +
                                  Matrix::shape_string(e.rows, e.cols));
    }
    net.input_norm.shift.resize(net.spec.input_dim);
    net.input_norm.scale.resize(net.spec.input_dim);
    r.f64s(net.input_norm.shift);
    r.f64s(net.input_norm.scale);
    for (const LayerSpec* l : net.spec.ordered_layers()) {
      LayerParams p{Matrix(l->in_dim, l->out_dim), std::vector<double>(l->out_dim)};
      r.f64s(p.weight.data());
      r.f64s(p.bias);
      net.layers.push_back(std::move(p));
    }
    const std::uint32_t records = r.u32();
    for (std::uint32_t i = 0; i < records; ++i) net.provenance.push_back(r.text());
    if (!r.at_end())
      throw CheckpointError(CheckpointErrc::shape_corrupt,
                            std::to_string(r.remaining()) + " trailing bytes after provenance");
    return net;
  } catch (const binary::Truncated&) {
    throw CheckpointError(CheckpointErrc::truncated, "file ends before the declared contents");
  }
}

inline Network load_checkpoint(const std::filesystem::path& path) {
  std::vector<char> bytes;
  try {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointErrc::io, "cannot open " + path.string());
    bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrc::io, e.what());
  }
  return parse_checkpoint(std::move(bytes));
}

}  // namespace xlac
