// Activation tensors -> notes, note streams, drum events, chord segments and beat grids.
#pragma once

#include <vector>

#include "amt/midi.hpp"
#include "amt/tensor.hpp"

namespace amt {

struct DecodeParams {
  double act_threshold = 0.5;
  double onset_threshold = 0.5;
  double min_note_s = 0.05;
  double merge_gap_s = 0.02;
  double drum_separation_s = 0.05;
  double beat_separation_s = 0.2;

  /// Thresholds in (0, 1), durations >= 0; throws ConfigError otherwise.
  void validate() const;
};

/// act: frames x bins x 3 [activation, onset, offset] on `axis`.
///
/// Per semitone (max over its sub-bins) a note starts where onset >= onset_threshold and
/// activation >= act_threshold, and a new onset edge inside a note splits it. A note ends
/// at the first frame whose activation falls below act_threshold (offset at that frame's
/// start) or at an offset-channel local maximum >= act_threshold (offset at that frame's
/// end), whichever comes first. Same-pitch notes separated by 0 < gap <= merge_gap_s are
/// merged, then notes shorter than min_note_s dropped. Pitch = axis low pitch + semitone.
std::vector<NoteEvent> decode_piano_notes(const ActivationTensor& act, const DecodeParams& p = {},
                                          const PitchAxis& axis = PitchAxis::piano(4));

/// act: frames x bins x 11 activation channels in multi_instrument_vocabulary() order.
/// Onsets are the upward act_threshold crossings; one stream per instrument with notes.
std::vector<NoteStream> decode_multi_instrument(const ActivationTensor& act, const DecodeParams& p = {},
                                                const PitchAxis& axis = PitchAxis::piano(4));

/// act: frames x classes x 1. Events at local maxima >= act_threshold, a plateau counting
/// once at its first frame; within a class, peaks are accepted by decreasing height
/// (earlier frame first on ties) unless closer than drum_separation_s to an accepted one.
std::vector<DrumEvent> decode_drums(const ActivationTensor& act, const DecodeParams& p = {},
                                    const std::vector<std::string>& classes = default_drum_classes());

/// salience: frames x bins x 1 on `axis`; seg: frames x 2 x 1 [voicing, onset].
/// Voiced runs split at onset peaks; pitch = nearest semitone to the median per-frame
/// salience argmax pitch. A tied maximum spanning adjacent bins reads at the run's centre.
std::vector<NoteEvent> decode_vocal(const ActivationTensor& salience, const ActivationTensor& seg,
                                    const DecodeParams& p = {}, const PitchAxis& axis = PitchAxis::piano(4));

/// probs: frames x 25 x 1, rows summing to 1 within 1e-4. Argmax per frame (lower index on
/// ties), equal neighbours merged; segments partition [0, frames * hop].
std::vector<ChordSegment> decode_chords(const ActivationTensor& probs);

/// probs: frames x 2 x 1 [beat, downbeat]. Beats are peaks of channel 0 picked like drum
/// events with beat_separation_s; downbeats are the beats whose channel-1 value at the
/// same frame reaches act_threshold.
BeatAnnotation decode_beats(const ActivationTensor& probs, const DecodeParams& p = {});

/// Peak picking shared by the drum and beat decoders; returns frame indices ascending.
std::vector<int> pick_peaks(const Eigen::Ref<const Eigen::VectorXd>& x, double threshold, int min_separation_frames);

}  // namespace amt
