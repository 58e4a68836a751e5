#pragma once

#include <stdexcept>
#include <string>

namespace hiad {

enum class ErrorKind {
  config,
  geometry,
  contract,
  io,
  format,
  ingestion,
  fit,
  numeric,
  calibration,
  undefined_metric,
};

/// Base exception for every failure raised by the engine. The kind decides the
/// process exit code used by the command-line tool.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config error";
    case ErrorKind::geometry: return "geometry error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::format: return "format error";
    case ErrorKind::ingestion: return "ingestion error";
    case ErrorKind::fit: return "fit error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::calibration: return "calibration error";
    case ErrorKind::undefined_metric: return "undefined metric";
  }
  return "error";
}

/// 2 = configuration, 3 = data, 4 = numeric.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::geometry:
    case ErrorKind::contract:
      return 2;
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::ingestion:
      return 3;
    case ErrorKind::fit:
    case ErrorKind::numeric:
    case ErrorKind::calibration:
    case ErrorKind::undefined_metric:
      return 4;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace hiad
