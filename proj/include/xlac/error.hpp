#pragma once

#include <stdexcept>
#include <string>

namespace xlac {

/// Broad failure category. The CLI maps each kind onto a distinct exit code.
enum class ErrorKind {
  shape,       // operand dimensions do not conform
  config,      // invalid configuration or arguments
  data,        // malformed or missing corpus / checkpoint data
  numeric,     // NaN/Inf encountered during training
  incomplete,  // results table is missing cells
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::incomplete: return "incomplete";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace xlac
