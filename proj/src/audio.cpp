#include "amt/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "amt/error.hpp"

namespace amt {

void AudioClip::validate() const {
  if (samples.size() == 0) throw ContractError("audio clip is empty");
  if (!(sample_rate > 0)) throw ContractError("sample rate must be positive");
  if (!samples.allFinite()) throw ContractError("audio clip contains non-finite samples");
}

namespace {

std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
  return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
         std::uint32_t(b[at + 3]) << 24;
}
std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

void put16(std::vector<std::uint8_t>& o, std::uint16_t v) {
  o.push_back(std::uint8_t(v));
  o.push_back(std::uint8_t(v >> 8));
}
void put32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) o.push_back(std::uint8_t(v >> s));
}

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw ParseError("not a RIFF/WAVE file", 0);

  int format = 0, channels = 0, bits = 0;
  double rate = 0;
  std::size_t data_at = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t len = le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (len < 16 || body + 16 > b.size()) throw ParseError("truncated fmt chunk", pos);
      format = le16(b, body);
      channels = le16(b, body + 2);
      rate = le32(b, body + 4);
      bits = le16(b, body + 14);
      if (format == 0xFFFE && len >= 40) format = le16(b, body + 24);  // WAVE_FORMAT_EXTENSIBLE
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      data_at = body;
      data_len = std::min<std::size_t>(len, b.size() - body);
    }
    pos = body + len + (len & 1);
  }
  if (channels == 0) throw ParseError("missing fmt chunk", 12);
  if (data_at == 0) throw ParseError("missing data chunk", 12);
  if (!((format == 1 && bits == 16) || (format == 3 && bits == 32)))
    throw ParseError("unsupported WAV encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                         " bits); expected 16-bit PCM or 32-bit float",
                     20);

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t n = data_len / frame_bytes;
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t at = data_at + i * frame_bytes + c * (bits / 8);
      if (format == 1) {
        acc += static_cast<std::int16_t>(le16(b, at)) / 32768.0;
      } else {
        std::uint32_t raw = le32(b, at);
        float f;
        std::memcpy(&f, &raw, 4);
        acc += f;
      }
    }
    clip.samples[static_cast<Eigen::Index>(i)] = acc / channels;
  }
  return clip;
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip, WavFormat format) {
  const bool pcm = format == WavFormat::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_len = n * (bits / 8);
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));

  std::vector<std::uint8_t> o;
  o.reserve(44 + data_len);
  o.insert(o.end(), {'R', 'I', 'F', 'F'});
  put32(o, 36 + data_len);
  o.insert(o.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(o, 16);
  put16(o, pcm ? 1 : 3);
  put16(o, 1);
  put32(o, rate);
  put32(o, rate * (bits / 8));
  put16(o, bits / 8);
  put16(o, bits);
  o.insert(o.end(), {'d', 'a', 't', 'a'});
  put32(o, data_len);
  for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
    const double x = std::clamp(clip.samples[i], -1.0, 1.0);
    if (pcm) {
      put16(o, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(x * 32767.0))));
    } else {
      const float f = static_cast<float>(x);
      std::uint32_t raw;
      std::memcpy(&raw, &f, 4);
      put32(o, raw);
    }
  }
  return o;
}

AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Input, "cannot open WAV file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

void write_wav(const std::string& path, const AudioClip& clip, WavFormat format) {
  auto bytes = encode_wav(clip, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Input, "cannot write WAV file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace amt
