#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xlac/error.hpp"

namespace xlac::binary {

/// Little-endian writer over an in-memory buffer.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }

  void text(std::string_view s) {
    u64(s.size());
    bytes(s);
  }

  const std::vector<char>& buffer() const { return buf_; }

  /// Writes to `path` through a temporary file and rename, so readers never
  /// observe a half-written file.
  void save(const std::filesystem::path& path) const {
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) fail(ErrorKind::data, "cannot open " + tmp.string() + " for writing");
      os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!os) fail(ErrorKind::data, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::vector<char> buf_;
};

/// Thrown by Reader when the buffer ends early.
struct Truncated {};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  static Reader load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::data, "cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return Reader(std::move(buf));
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(buf_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(buf_[pos_ + i])} << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  void f64s(std::span<double> out) {
    need(out.size() * 8);
    for (double& x : out) x = f64();
  }

  std::string text() { return bytes(checked_size(u64(), 1)); }

  /// Guards length fields against values larger than the remaining data.
  std::size_t checked_size(std::uint64_t count, std::size_t elem_bytes) {
    if (elem_bytes != 0 && count > remaining() / elem_bytes) throw Truncated{};
    return static_cast<std::size_t>(count);
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Truncated{};
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace xlac::binary
