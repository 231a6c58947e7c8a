// Mono audio clips and RIFF/WAVE I/O (16-bit PCM and 32-bit float).
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace amt {

inline constexpr double kDefaultSampleRate = 44100.0;

struct AudioClip {
  Eigen::VectorXd samples;
  double sample_rate = kDefaultSampleRate;

  double duration() const { return samples.size() / sample_rate; }
  /// Throws ContractError if empty, non-finite or the rate is not positive.
  void validate() const;
};

enum class WavFormat { Pcm16, Float32 };

/// Multichannel files are mixed down to mono. Throws ParseError on malformed data.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const AudioClip& clip, WavFormat format = WavFormat::Pcm16);

AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip, WavFormat format = WavFormat::Pcm16);

}  // namespace amt
