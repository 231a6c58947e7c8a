#include "amt/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "amt/error.hpp"

namespace amt {

void DecodeParams::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError(std::string("decode params: ") + name + " must lie in (0, 1)");
  };
  unit(act_threshold, "act_threshold");
  unit(onset_threshold, "onset_threshold");
  for (double d : {min_note_s, merge_gap_s, drum_separation_s, beat_separation_s})
    if (!(d >= 0.0)) throw ConfigError("decode params: durations must be non-negative");
}

namespace {

constexpr double kEps = 1e-9;

void require_channels(const ActivationTensor& act, int channels, const char* what) {
  if (act.values.channels() != channels)
    throw ContractError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                        std::to_string(act.values.channels()));
}

/// frames x semitones: max over the sub-bins of each semitone.
Eigen::MatrixXd semitone_max(const Eigen::MatrixXd& m, const PitchAxis& axis) {
  if (m.cols() != axis.n_bins())
    throw ContractError("pitch axis has " + std::to_string(axis.n_bins()) + " bins, tensor has " +
                        std::to_string(m.cols()));
  const int bps = axis.bins_per_semitone;
  Eigen::MatrixXd out(m.rows(), axis.n_semitones);
  for (int s = 0; s < axis.n_semitones; ++s) out.col(s) = m.middleCols(s * bps, bps).rowwise().maxCoeff();
  return out;
}

struct Span {
  int first, end;  // frames [first, end)
};

/// Note spans of one semitone. `onset` marks onset frames; `offset` may be null.
std::vector<Span> track_semitone(const Eigen::VectorXd& act, const Eigen::VectorXd& onset,
                                 const Eigen::VectorXd* offset, const DecodeParams& p) {
  const int T = static_cast<int>(act.size());
  std::vector<Span> spans;
  int start = -1;
  auto is_onset = [&](int k) { return onset(k) >= p.onset_threshold; };
  auto offset_peak = [&](int k) {
    if (!offset) return false;
    const auto& f = *offset;
    if (f(k) < p.act_threshold) return false;
    const bool rise = k == 0 || f(k) >= f(k - 1);
    const bool fall = k == T - 1 || f(k) > f(k + 1);
    return rise && fall;
  };
  for (int k = 0; k < T; ++k) {
    const bool on = act(k) >= p.act_threshold;
    if (start >= 0) {
      if (!on) {
        spans.push_back({start, k});
        start = -1;
      } else if (k > start && is_onset(k) && !is_onset(k - 1)) {
        spans.push_back({start, k});
        start = k;
      }
    }
    if (start < 0 && on && is_onset(k)) start = k;
    if (start >= 0 && offset_peak(k) && k >= start) {
      spans.push_back({start, k + 1});
      start = -1;
    }
  }
  if (start >= 0) spans.push_back({start, T});
  return spans;
}

/// Merge, drop short notes and convert to NoteEvents.
void emit_notes(std::vector<Span> spans, int pitch, const TimeGrid& grid, const DecodeParams& p,
                const std::string& instrument, const Eigen::VectorXd& confidence, std::vector<NoteEvent>& out) {
  std::vector<Span> merged;
  for (const Span& s : spans) {
    if (!merged.empty()) {
      const double gap = (s.first - merged.back().end) * grid.hop_s;
      if (gap > kEps && gap <= p.merge_gap_s + kEps) {
        merged.back().end = s.end;
        continue;
      }
    }
    merged.push_back(s);
  }
  for (const Span& s : merged) {
    const double onset = s.first * grid.hop_s, offset = s.end * grid.hop_s;
    if (offset - onset < p.min_note_s - kEps) continue;
    NoteEvent n;
    n.onset_s = onset;
    n.offset_s = offset;
    n.pitch = pitch;
    n.instrument = instrument;
    n.confidence = confidence.segment(s.first, s.end - s.first).mean();
    out.push_back(n);
  }
}

void sort_notes(std::vector<NoteEvent>& notes) {
  std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return a.onset_s != b.onset_s ? a.onset_s < b.onset_s : a.pitch < b.pitch;
  });
}

std::vector<NoteEvent> decode_channel(const Eigen::MatrixXd& act, const Eigen::MatrixXd* onset,
                                      const Eigen::MatrixXd* offset, const TimeGrid& grid, const DecodeParams& p,
                                      const PitchAxis& axis, const std::string& instrument) {
  const Eigen::MatrixXd a = semitone_max(act, axis);
  Eigen::MatrixXd o, f;
  if (onset) {
    o = semitone_max(*onset, axis);
  } else {
    // Rising edges of the activation stand in for the onset channel.
    o = Eigen::MatrixXd::Zero(a.rows(), a.cols());
    for (Eigen::Index s = 0; s < a.cols(); ++s)
      for (Eigen::Index k = 0; k < a.rows(); ++k)
        if (a(k, s) >= p.act_threshold && (k == 0 || a(k - 1, s) < p.act_threshold)) o(k, s) = 1.0;
  }
  if (offset) f = semitone_max(*offset, axis);
  std::vector<NoteEvent> notes;
  for (int s = 0; s < axis.n_semitones; ++s) {
    Eigen::VectorXd as = a.col(s), os = o.col(s), fs;
    if (offset) fs = f.col(s);
    auto spans = track_semitone(as, os, offset ? &fs : nullptr, p);
    emit_notes(std::move(spans), axis.low_pitch + s, grid, p, instrument, as, notes);
  }
  sort_notes(notes);
  return notes;
}

}  // namespace

std::vector<NoteEvent> decode_piano_notes(const ActivationTensor& act, const DecodeParams& p, const PitchAxis& axis) {
  p.validate();
  require_channels(act, 3, "decode_piano_notes");
  const auto& v = act.values;
  return decode_channel(v.channel(0), &v.channel(1), &v.channel(2), act.grid, p, axis, "piano");
}

std::vector<NoteStream> decode_multi_instrument(const ActivationTensor& act, const DecodeParams& p,
                                                const PitchAxis& axis) {
  p.validate();
  const auto& vocab = multi_instrument_vocabulary();
  require_channels(act, static_cast<int>(vocab.size()), "decode_multi_instrument");
  std::vector<NoteStream> streams;
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    auto notes = decode_channel(act.values.channel(static_cast<int>(c)), nullptr, nullptr, act.grid, p, axis, vocab[c]);
    if (!notes.empty()) streams.push_back({vocab[c], std::move(notes)});
  }
  return streams;
}

std::vector<int> pick_peaks(const Eigen::Ref<const Eigen::VectorXd>& x, double threshold, int min_separation_frames) {
  const int T = static_cast<int>(x.size());
  std::vector<int> candidates;
  for (int i = 0; i < T;) {
    int j = i;
    while (j + 1 < T && x(j + 1) == x(i)) ++j;
    const bool left = i == 0 || x(i - 1) < x(i);
    const bool right = j == T - 1 || x(j + 1) < x(j);
    if (left && right && x(i) >= threshold) candidates.push_back(i);
    i = j + 1;
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) { return x(a) > x(b); });
  std::vector<int> accepted;
  for (int c : candidates) {
    bool clear = true;
    for (int a : accepted)
      if (std::abs(a - c) < min_separation_frames) {
        clear = false;
        break;
      }
    if (clear) accepted.push_back(c);
  }
  std::sort(accepted.begin(), accepted.end());
  return accepted;
}

namespace {
int separation_frames(double seconds, double hop) { return static_cast<int>(std::ceil(seconds / hop - kEps)); }
}  // namespace

std::vector<DrumEvent> decode_drums(const ActivationTensor& act, const DecodeParams& p,
                                    const std::vector<std::string>& classes) {
  p.validate();
  require_channels(act, 1, "decode_drums");
  const auto& m = act.values.channel(0);
  if (m.cols() != static_cast<Eigen::Index>(classes.size()))
    throw ContractError("decode_drums: expected " + std::to_string(classes.size()) + " classes, got " +
                        std::to_string(m.cols()));
  const int sep = separation_frames(p.drum_separation_s, act.grid.hop_s);
  std::vector<DrumEvent> events;
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (int k : pick_peaks(m.col(static_cast<Eigen::Index>(c)), p.act_threshold, sep))
      events.push_back({k * act.grid.hop_s, classes[c], m(k, static_cast<Eigen::Index>(c))});
  std::stable_sort(events.begin(), events.end(),
                   [](const DrumEvent& a, const DrumEvent& b) { return a.onset_s < b.onset_s; });
  return events;
}

std::vector<NoteEvent> decode_vocal(const ActivationTensor& salience, const ActivationTensor& seg,
                                    const DecodeParams& p, const PitchAxis& axis) {
  p.validate();
  require_channels(salience, 1, "decode_vocal salience");
  require_channels(seg, 1, "decode_vocal segmentation");
  const auto& sal = salience.values.channel(0);
  const auto& sg = seg.values.channel(0);
  if (sal.rows() != sg.rows())
    throw ContractError("decode_vocal: salience has " + std::to_string(sal.rows()) + " frames, segmentation has " +
                        std::to_string(sg.rows()));
  if (sg.cols() != 2) throw ContractError("decode_vocal: segmentation needs 2 columns [voicing, onset]");
  if (sal.cols() != axis.n_bins())
    throw ContractError("decode_vocal: salience has " + std::to_string(sal.cols()) + " bins, axis has " +
                        std::to_string(axis.n_bins()));
  const int T = static_cast<int>(sg.rows());
  const double hop = seg.grid.hop_s;
  // Onset peaks, one per plateau.
  std::vector<bool> onset_peak(T, false);
  for (int k : pick_peaks(sg.col(1), p.onset_threshold, 1)) onset_peak[k] = true;

  std::vector<NoteEvent> notes;
  auto emit = [&](int first, int end) {
    if ((end - first) * hop < p.min_note_s - kEps) return;
    std::vector<double> pitches;
    for (int k = first; k < end; ++k) {
      // A flat-topped maximum reads at the centre of its run, not its lowest bin.
      Eigen::Index b;
      const double peak = sal.row(k).maxCoeff(&b);
      Eigen::Index last = b;
      while (last + 1 < sal.cols() && sal(k, last + 1) == peak) ++last;
      pitches.push_back(0.5 * (axis.bin_pitch(static_cast<int>(b)) + axis.bin_pitch(static_cast<int>(last))));
    }
    std::sort(pitches.begin(), pitches.end());
    const std::size_t n = pitches.size();
    const double median = n % 2 ? pitches[n / 2] : 0.5 * (pitches[n / 2 - 1] + pitches[n / 2]);
    NoteEvent note;
    note.onset_s = first * hop;
    note.offset_s = end * hop;
    note.pitch = static_cast<int>(std::lround(median));
    note.instrument = "voice";
    note.confidence = sg.col(0).segment(first, end - first).mean();
    notes.push_back(note);
  };
  int start = -1;
  for (int k = 0; k <= T; ++k) {
    const bool voiced = k < T && sg(k, 0) >= p.act_threshold;
    if (start >= 0 && (!voiced || (onset_peak[k] && k > start))) {
      emit(start, k);
      start = voiced ? k : -1;
    } else if (start < 0 && voiced) {
      start = k;
    }
  }
  sort_notes(notes);
  return notes;
}

std::vector<ChordSegment> decode_chords(const ActivationTensor& probs) {
  require_channels(probs, 1, "decode_chords");
  const auto& m = probs.values.channel(0);
  if (m.cols() != kNumChordClasses)
    throw ContractError("decode_chords: expected 25 classes, got " + std::to_string(m.cols()));
  const double hop = probs.grid.hop_s;
  std::vector<ChordSegment> out;
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    if (std::abs(m.row(k).sum() - 1.0) > 1e-4)
      throw ContractError("decode_chords: row " + std::to_string(k) + " sums to " + std::to_string(m.row(k).sum()));
    int best = 0;
    for (int c = 1; c < kNumChordClasses; ++c)
      if (m(k, c) > m(k, best)) best = c;
    if (!out.empty() && out.back().label == best) {
      out.back().end_s = (k + 1) * hop;
    } else {
      out.push_back({k * hop, (k + 1) * hop, best});
    }
  }
  return out;
}

BeatAnnotation decode_beats(const ActivationTensor& probs, const DecodeParams& p) {
  p.validate();
  require_channels(probs, 1, "decode_beats");
  const auto& m = probs.values.channel(0);
  if (m.cols() != 2) throw ContractError("decode_beats: expected 2 columns [beat, downbeat]");
  BeatAnnotation out;
  const double hop = probs.grid.hop_s;
  for (int k : pick_peaks(m.col(0), p.act_threshold, separation_frames(p.beat_separation_s, hop))) {
    out.beats_s.push_back(k * hop);
    if (m(k, 1) >= p.act_threshold) out.downbeats_s.push_back(k * hop);
  }
  return out;
}

}  // namespace amt
