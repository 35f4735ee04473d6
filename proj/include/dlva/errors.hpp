// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dlva {

// Error categories. The CLI maps these onto process exit codes:
// usage -> 1, data/format -> 2, numeric -> 3.
enum class ErrorKind {
  dimension,
  index,
  degenerate_row,
  config,
  usage,
  data,
  format,
  generation,
  numeric,
  stage,
  capacity,
  ordering,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::index: return "index error";
    case ErrorKind::degenerate_row: return "degenerate row";
    case ErrorKind::config: return "config error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::data: return "data error";
    case ErrorKind::format: return "format error";
    case ErrorKind::generation: return "generation error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::stage: return "stage error";
    case ErrorKind::capacity: return "capacity error";
    case ErrorKind::ordering: return "ordering violation";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config:
    case ErrorKind::stage:
      return 1;
    case ErrorKind::numeric:
      return 3;
    default:
      return 2;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace dlva
