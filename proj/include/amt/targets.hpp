// Ideal (noise-free) activation tensors rendered from symbolic ground truth. These are
// the training targets of every model and the inputs of the decoder round-trip oracles.
#pragma once

#include <vector>

#include "amt/midi.hpp"
#include "amt/tensor.hpp"

namespace amt {

/// frames x axis bins x 3 [activation, onset, offset]. A note covers frames
/// [frame_of(onset), frame_end(offset)); its onset mark sits on the first of those frames
/// and its offset mark on the last. Every sub-bin of the semitone is set.
ActivationTensor render_piano_targets(const std::vector<NoteEvent>& notes, const TimeGrid& grid,
                                      const PitchAxis& axis = PitchAxis::piano(4));

/// frames x axis bins x 11, channel i = multi_instrument_vocabulary()[i] activation.
/// Streams with other instruments are skipped.
ActivationTensor render_multi_instrument_targets(const MidiDocument& doc, const TimeGrid& grid,
                                                 const PitchAxis& axis = PitchAxis::piano(4));

/// frames x classes x 1 with a 1 at frame_of(onset) of every event.
ActivationTensor render_drum_targets(const std::vector<DrumEvent>& events, const TimeGrid& grid,
                                     const std::vector<std::string>& classes = default_drum_classes());

/// frames x 2 x 1 [beat, downbeat] impulses.
ActivationTensor render_beat_targets(const BeatAnnotation& beats, const TimeGrid& grid);

/// frames x 25 x 1 one-hot rows; frame k takes the label of the segment containing its
/// centre, or no-chord when none does.
ActivationTensor render_chord_targets(const std::vector<ChordSegment>& segments, const TimeGrid& grid);

/// frames x axis bins x 1 salience: the sub-bins of each sounding note's semitone.
ActivationTensor render_vocal_pitch_targets(const std::vector<NoteEvent>& notes, const TimeGrid& grid,
                                            const PitchAxis& axis = PitchAxis::piano(4));

/// frames x 2 x 1 [voicing, onset].
ActivationTensor render_vocal_seg_targets(const std::vector<NoteEvent>& notes, const TimeGrid& grid);

}  // namespace amt
