#include "amt/tensor_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace amt {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'M', 'T', 'T'};
constexpr std::size_t kHeader = 4 + 4 * 4 + 8;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t pos) {
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  return v;
}

std::uint32_t checksum(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const ActivationTensor& t) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kTensorFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.frames()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.bins()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.channels()));
  put<double>(out, t.grid.hop_s);
  out.reserve(out.size() + 8 * static_cast<std::size_t>(t.frames()) * t.bins() * t.channels() + 4);
  for (int k = 0; k < t.frames(); ++k)
    for (int b = 0; b < t.bins(); ++b)
      for (int c = 0; c < t.channels(); ++c) put<double>(out, t.values(k, b, c));
  put<std::uint32_t>(out, checksum(out.data(), out.size()));
  return out;
}

ActivationTensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeader + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::Data, "not a tensor file");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kTensorFileVersion)
    throw Error(ErrorCode::Data, "unsupported tensor file version " + std::to_string(version));
  const auto frames = get<std::uint32_t>(bytes, 8), bins = get<std::uint32_t>(bytes, 12),
             channels = get<std::uint32_t>(bytes, 16);
  const double hop = get<double>(bytes, 20);
  const std::uint64_t count = std::uint64_t(frames) * bins * channels;
  if (bytes.size() != kHeader + 8 * count + 4) throw Error(ErrorCode::Data, "tensor file truncated or oversized");
  if (checksum(bytes.data(), bytes.size() - 4) != get<std::uint32_t>(bytes, bytes.size() - 4))
    throw Error(ErrorCode::Data, "tensor file checksum mismatch");
  if (!(hop > 0.0)) throw Error(ErrorCode::Data, "tensor file has a non-positive hop");
  ActivationTensor t{Tensor3d(frames, bins, channels), {hop, static_cast<int>(frames)}};
  std::size_t pos = kHeader;
  for (std::uint32_t k = 0; k < frames; ++k)
    for (std::uint32_t b = 0; b < bins; ++b)
      for (std::uint32_t c = 0; c < channels; ++c, pos += 8) t.values(k, b, c) = get<double>(bytes, pos);
  if (!t.values.all_finite()) throw Error(ErrorCode::Data, "tensor file holds non-finite values");
  return t;
}

void write_tensor_file(const std::string& path, const ActivationTensor& t) { write_file_atomic(path, encode_tensor(t)); }

ActivationTensor read_tensor_file(const std::string& path) {
  try {
    return decode_tensor(read_file_bytes(path, ErrorCode::Data));
  } catch (const Error& e) {
    if (std::string(e.what()).rfind(path, 0) == 0) throw;
    throw Error(ErrorCode::Data, path + ": " + e.what());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path, ErrorCode code) {
  std::ifstream is(path, std::ios::binary);
  if (!is || std::filesystem::is_directory(path)) throw Error(code, path + ": cannot open file");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::Input, path + ": cannot write file");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error(ErrorCode::Input, path + ": cannot write file");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::Input, path + ": cannot write file");
  }
}

void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace amt
