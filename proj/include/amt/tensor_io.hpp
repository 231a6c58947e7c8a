// Binary container for activation and feature tensors.
//
// Little-endian layout: "AMTT" | u32 version | u32 frames | u32 bins | u32 channels |
// f64 hop_s | frames*bins*channels f64 (frame-major, then bin, then channel) | u32 crc32.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amt/tensor.hpp"

namespace amt {

inline constexpr std::uint32_t kTensorFileVersion = 1;

std::vector<std::uint8_t> encode_tensor(const ActivationTensor& t);
/// Throws Error(E_DATA) on bad magic, version, size or checksum.
ActivationTensor decode_tensor(const std::vector<std::uint8_t>& bytes);

/// Atomic write (temporary file + rename).
void write_tensor_file(const std::string& path, const ActivationTensor& t);
/// Error messages are prefixed with the path.
ActivationTensor read_tensor_file(const std::string& path);

/// Reads a whole file; throws Error(code) naming the path when it cannot be opened.
std::vector<std::uint8_t> read_file_bytes(const std::string& path, ErrorCode code = ErrorCode::Input);
/// Writes to path + ".tmp" and renames over path.
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_file_atomic(const std::string& path, const std::string& text);

}  // namespace amt
