// Error types shared by every amtkit module.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace amt {

/// Machine-readable failure category. The CLI maps each code to an exit status.
enum class ErrorCode {
  Internal,   // E_INTERNAL
  Input,      // E_INPUT: unreadable or malformed user input
  Model,      // E_MODEL: missing or incompatible checkpoint
  Data,       // E_DATA: dataset or tensor file problems
  Shape,      // E_SHAPE: tensor shape contract violated
  Checksum,   // E_CHECKSUM
  Manifest,   // E_MANIFEST
  Network,    // E_NET
  Config,     // E_CONFIG
};

const char* error_code_name(ErrorCode code);
int exit_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// Violated precondition on shapes or value ranges.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorCode::Shape, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};

class RangeError : public Error {
 public:
  explicit RangeError(const std::string& what) : Error(ErrorCode::Input, what) {}
};

/// Malformed binary input; offset is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(ErrorCode::Input, what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string detail_;
  std::size_t offset_;
};

/// Emit a warning line on stderr unless warnings are silenced.
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace amt
