#include "amt/targets.hpp"

#include <algorithm>

#include "amt/error.hpp"

namespace amt {

namespace {

struct FrameSpan {
  int first = 0;
  int end = 0;  // exclusive
  bool empty() const { return end <= first; }
};

FrameSpan span_of(const NoteEvent& n, const TimeGrid& grid) {
  return {std::max(0, grid.frame_of(n.onset_s)), std::min(grid.n_frames, grid.frame_end(n.offset_s))};
}

void require_grid(const TimeGrid& grid) {
  if (!(grid.hop_s > 0) || grid.n_frames <= 0) throw ContractError("target grid needs a positive hop and frame count");
}

void paint_notes(const std::vector<NoteEvent>& notes, const TimeGrid& grid, const PitchAxis& axis, Eigen::MatrixXd& act,
                 Eigen::MatrixXd* onset, Eigen::MatrixXd* offset) {
  const int bps = axis.bins_per_semitone;
  for (const auto& n : notes) {
    if (!axis.contains(n.pitch)) continue;
    const FrameSpan s = span_of(n, grid);
    if (s.empty() || s.first >= grid.n_frames) continue;
    const int b0 = axis.first_bin(n.pitch);
    act.block(s.first, b0, s.end - s.first, bps).setOnes();
    if (onset) onset->block(s.first, b0, 1, bps).setOnes();
    if (offset) offset->block(s.end - 1, b0, 1, bps).setOnes();
  }
}

}  // namespace

ActivationTensor render_piano_targets(const std::vector<NoteEvent>& notes, const TimeGrid& grid,
                                      const PitchAxis& axis) {
  require_grid(grid);
  ActivationTensor out{Tensor3d(grid.n_frames, axis.n_bins(), 3), grid};
  paint_notes(notes, grid, axis, out.values.channel(0), &out.values.channel(1), &out.values.channel(2));
  return out;
}

ActivationTensor render_multi_instrument_targets(const MidiDocument& doc, const TimeGrid& grid,
                                                 const PitchAxis& axis) {
  require_grid(grid);
  const auto& vocab = multi_instrument_vocabulary();
  ActivationTensor out{Tensor3d(grid.n_frames, axis.n_bins(), static_cast<int>(vocab.size())), grid};
  for (const auto& stream : doc.streams) {
    auto it = std::find(vocab.begin(), vocab.end(), stream.instrument);
    if (it == vocab.end()) continue;
    paint_notes(stream.notes, grid, axis, out.values.channel(static_cast<int>(it - vocab.begin())), nullptr, nullptr);
  }
  return out;
}

ActivationTensor render_drum_targets(const std::vector<DrumEvent>& events, const TimeGrid& grid,
                                     const std::vector<std::string>& classes) {
  require_grid(grid);
  ActivationTensor out{Tensor3d(grid.n_frames, static_cast<int>(classes.size()), 1), grid};
  for (const auto& e : events) {
    auto it = std::find(classes.begin(), classes.end(), e.drum_class);
    const int k = grid.frame_of(e.onset_s);
    if (it == classes.end() || k < 0 || k >= grid.n_frames) continue;
    out.values.channel(0)(k, static_cast<int>(it - classes.begin())) = 1.0;
  }
  return out;
}

ActivationTensor render_beat_targets(const BeatAnnotation& beats, const TimeGrid& grid) {
  require_grid(grid);
  ActivationTensor out{Tensor3d(grid.n_frames, 2, 1), grid};
  auto mark = [&](const std::vector<double>& times, int col) {
    for (double t : times) {
      const int k = grid.frame_of(t);
      if (k >= 0 && k < grid.n_frames) out.values.channel(0)(k, col) = 1.0;
    }
  };
  mark(beats.beats_s, 0);
  mark(beats.downbeats_s, 1);
  return out;
}

ActivationTensor render_chord_targets(const std::vector<ChordSegment>& segments, const TimeGrid& grid) {
  require_grid(grid);
  ActivationTensor out{Tensor3d(grid.n_frames, kNumChordClasses, 1), grid};
  for (int k = 0; k < grid.n_frames; ++k) {
    const double centre = (k + 0.5) * grid.hop_s;
    int label = kNoChord;
    for (const auto& s : segments)
      if (centre >= s.start_s && centre < s.end_s) label = s.label;
    if (label < 0 || label >= kNumChordClasses) throw RangeError("chord label index " + std::to_string(label));
    out.values.channel(0)(k, label) = 1.0;
  }
  return out;
}

ActivationTensor render_vocal_pitch_targets(const std::vector<NoteEvent>& notes, const TimeGrid& grid,
                                            const PitchAxis& axis) {
  require_grid(grid);
  ActivationTensor out{Tensor3d(grid.n_frames, axis.n_bins(), 1), grid};
  paint_notes(notes, grid, axis, out.values.channel(0), nullptr, nullptr);
  return out;
}

ActivationTensor render_vocal_seg_targets(const std::vector<NoteEvent>& notes, const TimeGrid& grid) {
  require_grid(grid);
  ActivationTensor out{Tensor3d(grid.n_frames, 2, 1), grid};
  auto& m = out.values.channel(0);
  for (const auto& n : notes) {
    const FrameSpan s = span_of(n, grid);
    if (s.empty() || s.first >= grid.n_frames) continue;
    m.block(s.first, 0, s.end - s.first, 1).setOnes();
    m(s.first, 1) = 1.0;
  }
  return out;
}

}  // namespace amt
