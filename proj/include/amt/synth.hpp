// Additive sonification of symbolic music for auditioning and synthetic training data.
#pragma once

#include <cstdint>

#include "amt/audio.hpp"
#include "amt/midi.hpp"

namespace amt {

struct SynthParams {
  double sample_rate = kDefaultSampleRate;
  int partials = 4;
  double partial_rolloff = 0.5;  // amplitude ratio between successive partials
  double decay_per_s = 2.0;      // exponential amplitude decay of pitched notes
  double attack_s = 0.005;
  double release_s = 0.02;
  double drum_length_s = 0.12;
  double peak = 0.9;             // output peak after normalization
  double tail_s = 0.0;           // silence appended after the last offset
  std::uint64_t seed = 0;        // drum noise
};

/// Pitched streams become harmonic tones at equal-tempered frequencies with exponential
/// decay; the "drums" stream becomes filtered noise bursts (kick low-passed, snare
/// band-limited, hi-hat high-passed). The result is peak-normalized. An empty document
/// gives one second of silence and a warning.
AudioClip sonify(const MidiDocument& doc, const SynthParams& params = {});

}  // namespace amt
