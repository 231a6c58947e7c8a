#include "amt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "amt/error.hpp"
#include "amt/tensor.hpp"

namespace amt {

namespace {

void add_tone(Eigen::VectorXd& out, const NoteEvent& n, const SynthParams& p) {
  const double sr = p.sample_rate;
  const Eigen::Index first = static_cast<Eigen::Index>(std::llround(n.onset_s * sr));
  const Eigen::Index last = std::min<Eigen::Index>(out.size(), std::llround(n.offset_s * sr));
  const double f0 = midi_to_hz(n.pitch);
  const double gain = n.velocity / 127.0;
  for (Eigen::Index i = std::max<Eigen::Index>(0, first); i < last; ++i) {
    const double t = (i - first) / sr;
    const double to_end = (last - i) / sr;
    double env = gain * std::exp(-p.decay_per_s * t);
    if (t < p.attack_s) env *= t / p.attack_s;
    if (to_end < p.release_s) env *= to_end / p.release_s;
    double s = 0.0, amp = 1.0;
    for (int k = 1; k <= p.partials; ++k, amp *= p.partial_rolloff) {
      const double f = k * f0;
      if (f >= sr / 2) break;
      s += amp * std::sin(2.0 * std::numbers::pi * f * t);
    }
    out(i) += env * s;
  }
}

void add_drum(Eigen::VectorXd& out, const NoteEvent& n, const SynthParams& p, std::mt19937_64& rng) {
  const double sr = p.sample_rate;
  const Eigen::Index first = std::max<Eigen::Index>(0, std::llround(n.onset_s * sr));
  const Eigen::Index len = static_cast<Eigen::Index>(p.drum_length_s * sr);
  const std::string cls = drum_key_to_class(n.pitch);
  // One-pole smoothing coefficient and decay per drum type.
  double lowpass = 0.5, decay = 30.0;
  bool highpass = false;
  if (cls == "kick") {
    lowpass = 0.02;
    decay = 25.0;
  } else if (cls == "hihat") {
    highpass = true;
    decay = 60.0;
  }
  const double gain = n.velocity / 127.0 * (cls == "kick" ? 4.0 : 1.0);
  double state = 0.0, prev = 0.0;
  for (Eigen::Index j = 0; j < len && first + j < out.size(); ++j) {
    const double noise = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    state += lowpass * (noise - state);
    double v = state;
    if (highpass) {
      v = noise - prev;
      prev = noise;
    }
    out(first + j) += gain * std::exp(-decay * j / sr) * v;
  }
}

}  // namespace

AudioClip sonify(const MidiDocument& doc, const SynthParams& p) {
  if (!(p.sample_rate > 0)) throw ConfigError("sonify: sample rate must be positive");
  AudioClip clip;
  clip.sample_rate = p.sample_rate;
  if (doc.note_count() == 0) {
    warn("sonify: document has no notes, writing silence");
    clip.samples = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.sample_rate));
    return clip;
  }
  double end = doc.end_time();
  for (const auto& s : doc.streams)
    if (s.instrument == "drums")
      for (const auto& n : s.notes) end = std::max(end, n.onset_s + p.drum_length_s);
  clip.samples = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(std::ceil((end + p.tail_s) * p.sample_rate)));
  std::mt19937_64 rng(p.seed);
  for (const auto& s : doc.streams)
    for (const auto& n : s.notes) {
      if (s.instrument == "drums") add_drum(clip.samples, n, p, rng);
      else add_tone(clip.samples, n, p);
    }
  const double peak = clip.samples.cwiseAbs().maxCoeff();
  if (peak > 0) clip.samples *= p.peak / peak;
  return clip;
}

}  // namespace amt
