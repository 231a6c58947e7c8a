// Note/chord/beat/drum data model, Standard MIDI File I/O and piano-roll rendering.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amt/tensor.hpp"

namespace amt {

inline constexpr int kDefaultVelocity = 80;

/// One transcribed note. Invariants: offset_s > onset_s, pitch in 21..108 for pitched tasks.
struct NoteEvent {
  double onset_s = 0.0;
  double offset_s = 0.0;
  int pitch = 60;
  int velocity = kDefaultVelocity;
  std::string instrument = "piano";
  double confidence = 1.0;

  double duration() const { return offset_s - onset_s; }
};

/// Notes of one instrument, sorted by onset, with no same-pitch overlap.
struct NoteStream {
  std::string instrument = "piano";
  std::vector<NoteEvent> notes;
};

struct MidiDocument {
  std::vector<NoteStream> streams;
  double tempo_bpm = 120.0;
  int ticks_per_quarter = 480;

  std::size_t note_count() const;
  /// All notes of all streams sorted by (onset, pitch).
  std::vector<NoteEvent> all_notes() const;
  double end_time() const;
};

/// Builds a single-stream document, normalizing the note list first.
MidiDocument make_document(std::vector<NoteEvent> notes, const std::string& instrument = "piano");

/// Sorts by onset and truncates same-pitch overlaps so the later note wins.
/// Notes that become empty are dropped.
void normalize_stream(NoteStream& stream);
/// True when the stream is onset-sorted and free of same-pitch overlap.
bool is_valid_stream(const NoteStream& stream);

struct DrumEvent {
  double onset_s = 0.0;
  std::string drum_class = "kick";
  double confidence = 1.0;
};

/// Default drum vocabulary and its General MIDI key numbers.
const std::vector<std::string>& default_drum_classes();
int drum_class_to_key(std::string_view drum_class);
/// Empty string when the key maps to none of the default classes.
std::string drum_key_to_class(int key);

/// 25 chord classes: 12 major (C..B), 12 minor (C..B), then no-chord.
inline constexpr int kNumChordClasses = 25;
inline constexpr int kNoChord = 24;
const std::array<std::string, kNumChordClasses>& chord_vocabulary();
std::string chord_label(int index);
/// -1 for a label outside the vocabulary.
int chord_index(std::string_view label);

struct ChordSegment {
  double start_s = 0.0;
  double end_s = 0.0;
  int label = kNoChord;  // index into chord_vocabulary()
};

struct BeatAnnotation {
  std::vector<double> beats_s;
  std::vector<double> downbeats_s;

  /// Strictly increasing lists and every downbeat present in beats (within 1e-6 s).
  bool is_valid() const;
};

/// General MIDI program and channel conventions for instrument labels.
/// Known labels: the 11 ensemble classes, "voice", "drums"; others are written as
/// "program:N" and read back the same way.
int instrument_to_program(std::string_view instrument);
std::string program_to_instrument(int program);
const std::vector<std::string>& multi_instrument_vocabulary();

/// Parse a format 0 or format 1 Standard MIDI File.
/// Throws ParseError naming the byte offset on malformed or truncated input.
MidiDocument read_midi(std::span<const std::uint8_t> bytes);
/// Format-1 writer: a tempo track followed by one track per stream.
/// Throws RangeError when a pitch or velocity falls outside 0..127.
std::vector<std::uint8_t> write_midi(const MidiDocument& doc);

MidiDocument read_midi_file(const std::string& path);
void write_midi_file(const MidiDocument& doc, const std::string& path);

struct PianoRoll {
  /// Channel 0: sounding, channel 1: onset.
  ActivationTensor roll;
  int dropped_notes = 0;
};

/// Binary piano roll: bin (k, p) is 1 iff a note of pitch p sounds during frame k.
/// Every sub-bin of a semitone is set. Notes outside the axis are dropped and counted.
/// n_frames <= 0 sizes the grid to cover the last offset.
PianoRoll midi_to_pianoroll(const MidiDocument& doc, double hop_s, const PitchAxis& axis, int n_frames = 0);

}  // namespace amt
