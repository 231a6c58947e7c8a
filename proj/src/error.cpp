#include "amt/error.hpp"

#include <atomic>
#include <iostream>

namespace amt {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Internal: return "E_INTERNAL";
    case ErrorCode::Input: return "E_INPUT";
    case ErrorCode::Model: return "E_MODEL";
    case ErrorCode::Data: return "E_DATA";
    case ErrorCode::Shape: return "E_SHAPE";
    case ErrorCode::Checksum: return "E_CHECKSUM";
    case ErrorCode::Manifest: return "E_MANIFEST";
    case ErrorCode::Network: return "E_NET";
    case ErrorCode::Config: return "E_CONFIG";
  }
  return "E_INTERNAL";
}

int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Input:
    case ErrorCode::Model:
    case ErrorCode::Manifest:
    case ErrorCode::Config:
      return 2;
    case ErrorCode::Data:
    case ErrorCode::Shape:
    case ErrorCode::Checksum:
      return 3;
    case ErrorCode::Network:
      return 4;
    case ErrorCode::Internal:
      return 1;
  }
  return 1;
}

namespace {
std::atomic<bool> g_warnings{true};
}

void set_warnings_enabled(bool enabled) { g_warnings = enabled; }

void warn(const std::string& message) {
  if (g_warnings) std::cerr << "warning: " << message << '\n';
}

}  // namespace amt
