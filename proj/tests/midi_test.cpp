#include "amt/midi.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

namespace amt {
namespace {

using Bytes = std::vector<std::uint8_t>;

Bytes header(int format, int ntracks, int tpq = 480) {
  return {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, std::uint8_t(format), 0, std::uint8_t(ntracks),
          std::uint8_t(tpq >> 8), std::uint8_t(tpq)};
}

void append_track(Bytes& out, const Bytes& body) {
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  const auto n = static_cast<std::uint32_t>(body.size());
  out.insert(out.end(), {std::uint8_t(n >> 24), std::uint8_t(n >> 16), std::uint8_t(n >> 8), std::uint8_t(n)});
  out.insert(out.end(), body.begin(), body.end());
}

// 480 ticks encode as the two-byte varlen 0x83 0x60.
TEST(ReadMidi, SingleNoteTickToSeconds) {
  Bytes f = header(0, 1);
  append_track(f, {0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20,  // 500000 us/quarter = 120 BPM
                   0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00});
  const MidiDocument doc = read_midi(f);
  ASSERT_EQ(doc.streams.size(), 1u);
  ASSERT_EQ(doc.streams[0].notes.size(), 1u);
  const NoteEvent& n = doc.streams[0].notes[0];
  EXPECT_DOUBLE_EQ(n.onset_s, 0.0);
  EXPECT_DOUBLE_EQ(n.offset_s, 0.5);
  EXPECT_EQ(n.pitch, 60);
  EXPECT_EQ(n.velocity, 100);
  EXPECT_EQ(n.instrument, "piano");
  EXPECT_DOUBLE_EQ(doc.tempo_bpm, 120.0);
}

TEST(ReadMidi, EmptyTrackList) {
  const MidiDocument doc = read_midi(header(1, 0));
  EXPECT_TRUE(doc.streams.empty());
}

TEST(ReadMidi, OverlappingSamePitchLastOnWins) {
  Bytes f = header(0, 1);
  // on@0, on@240, off@480, off@720 (all pitch 60), running status for the repeats
  append_track(f, {0x00, 0x90, 60, 90, 0x81, 0x70, 60, 70, 0x81, 0x70, 0x80, 60, 0, 0x81, 0x70, 60, 0,
                   0x00, 0xFF, 0x2F, 0x00});
  const MidiDocument doc = read_midi(f);
  ASSERT_EQ(doc.streams.size(), 1u);
  const auto& notes = doc.streams[0].notes;
  ASSERT_EQ(notes.size(), 2u);
  EXPECT_DOUBLE_EQ(notes[0].onset_s, 0.0);
  EXPECT_DOUBLE_EQ(notes[0].offset_s, 0.25);
  EXPECT_DOUBLE_EQ(notes[1].onset_s, 0.25);
  EXPECT_DOUBLE_EQ(notes[1].offset_s, 0.5);
  EXPECT_TRUE(is_valid_stream(doc.streams[0]));
}

TEST(ReadMidi, NoteOnVelocityZeroAndUnpairedNoteClosedAtTrackEnd) {
  Bytes f = header(0, 1);
  append_track(f, {0x00, 0x90, 64, 80, 0x83, 0x60, 0x90, 64, 0,  // vel-0 note-on ends E4 at 480
                   0x00, 0x90, 67, 80, 0x87, 0x40, 0xFF, 0x2F, 0x00});  // G4 never released, track ends at 1440
  const MidiDocument doc = read_midi(f);
  ASSERT_EQ(doc.note_count(), 2u);
  const auto notes = doc.all_notes();
  EXPECT_DOUBLE_EQ(notes[0].offset_s, 0.5);
  EXPECT_EQ(notes[1].pitch, 67);
  EXPECT_DOUBLE_EQ(notes[1].offset_s, 1.5);
}

TEST(ReadMidi, Format0ChannelsBecomeStreams) {
  Bytes f = header(0, 1);
  append_track(f, {0x00, 0xC1, 40, 0x00, 0x90, 60, 80, 0x00, 0x91, 72, 80, 0x00, 0x99, 36, 100,
                   0x83, 0x60, 0x80, 60, 0, 0x00, 0x81, 72, 0, 0x00, 0x89, 36, 0, 0x00, 0xFF, 0x2F, 0x00});
  const MidiDocument doc = read_midi(f);
  ASSERT_EQ(doc.streams.size(), 3u);
  EXPECT_EQ(doc.streams[0].instrument, "piano");
  EXPECT_EQ(doc.streams[1].instrument, "violin");
  EXPECT_EQ(doc.streams[2].instrument, "drums");
}

TEST(ReadMidi, MalformedHeaderReportsOffset) {
  Bytes f{'M', 'T', 'h', 'x', 0, 0, 0, 6};
  try {
    read_midi(f);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(ReadMidi, TruncatedTrackReportsOffset) {
  Bytes f = header(0, 1);
  append_track(f, {0x00, 0x90, 60, 80, 0x83, 0x60, 0x80, 60, 0});
  f.resize(f.size() - 4);  // chunk length now exceeds the data
  try {
    read_midi(f);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 18u);
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
  }

  Bytes g = header(0, 1);
  append_track(g, {0x00, 0x90, 60});  // note-on missing its velocity byte
  try {
    read_midi(g);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 14u + 8u + 3u);
  }
}

TEST(ReadMidi, UnsupportedFormatRejected) {
  EXPECT_THROW(read_midi(header(2, 0)), ParseError);
}

TEST(WriteMidi, ZeroNoteDocumentHasTempoOnly) {
  MidiDocument doc;
  doc.tempo_bpm = 90.0;
  const Bytes bytes = write_midi(doc);
  const Bytes tempo_meta{0xFF, 0x51, 0x03};
  EXPECT_NE(std::search(bytes.begin(), bytes.end(), tempo_meta.begin(), tempo_meta.end()), bytes.end());
  const MidiDocument back = read_midi(bytes);
  EXPECT_TRUE(back.streams.empty());
  EXPECT_NEAR(back.tempo_bpm, 90.0, 1e-3);
}

TEST(WriteMidi, TwoInstrumentsTwoTracksDistinctPrograms) {
  MidiDocument doc;
  doc.streams.push_back({"piano", {{0.0, 0.5, 60, 80, "piano", 1.0}}});
  doc.streams.push_back({"cello", {{0.25, 1.0, 48, 80, "cello", 1.0}}});
  const Bytes bytes = write_midi(doc);
  EXPECT_EQ(bytes[11], 3);  // tempo track + two note tracks
  const MidiDocument back = read_midi(bytes);
  ASSERT_EQ(back.streams.size(), 2u);
  EXPECT_EQ(back.streams[0].instrument, "piano");
  EXPECT_EQ(back.streams[1].instrument, "cello");
  EXPECT_NE(instrument_to_program("piano"), instrument_to_program("cello"));
}

TEST(WriteMidi, PitchOutsideRangeThrows) {
  MidiDocument doc = make_document({{0.0, 0.5, 128, 80, "piano", 1.0}});
  EXPECT_THROW(write_midi(doc), RangeError);
  doc.streams[0].notes[0].pitch = -1;
  EXPECT_THROW(write_midi(doc), RangeError);
}

TEST(WriteMidi, RoundTripRandomDocuments) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 120; ++trial) {
    MidiDocument doc = test::random_document(rng, 50, 1 + trial % 3, 0.05, 0.0, 0, 127);
    std::erase_if(doc.streams, [](const NoteStream& s) { return s.notes.empty(); });
    doc.tempo_bpm = 60.0 + trial;
    const MidiDocument back = read_midi(write_midi(doc));
    const double tick = 60.0 / (doc.tempo_bpm * doc.ticks_per_quarter);
    ASSERT_EQ(back.streams.size(), doc.streams.size());
    EXPECT_NEAR(back.tempo_bpm, doc.tempo_bpm, 1e-3);
    const double tps = 1.0 / tick;
    for (std::size_t s = 0; s < doc.streams.size(); ++s) {
      // Notes whose onsets share a tick after quantization come back pitch-ordered.
      auto a = doc.streams[s].notes;
      std::stable_sort(a.begin(), a.end(), [&](const NoteEvent& x, const NoteEvent& y) {
        return std::make_pair(std::llround(x.onset_s * tps), x.pitch) < std::make_pair(std::llround(y.onset_s * tps), y.pitch);
      });
      const auto& b = back.streams[s].notes;
      EXPECT_EQ(back.streams[s].instrument, doc.streams[s].instrument);
      ASSERT_EQ(a.size(), b.size()) << "trial " << trial;
      for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].pitch, b[i].pitch);
        EXPECT_EQ(a[i].velocity, b[i].velocity);
        EXPECT_LE(std::abs(a[i].onset_s - b[i].onset_s), tick);
        EXPECT_LE(std::abs(a[i].offset_s - b[i].offset_s), tick);
      }
      EXPECT_TRUE(is_valid_stream(back.streams[s]));
    }
    // read∘write on the quantized document is exact up to float rounding.
    const MidiDocument again = read_midi(write_midi(back));
    ASSERT_EQ(again.note_count(), back.note_count());
    const auto x = back.all_notes(), y = again.all_notes();
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i].onset_s, y[i].onset_s, 1e-9);
  }
}

TEST(NormalizeStream, TruncatesOverlapAndDropsEmpty) {
  NoteStream s{"piano",
               {{0.0, 1.0, 60, 80, "piano", 1.0}, {0.5, 1.5, 60, 80, "piano", 1.0}, {0.5, 0.7, 60, 80, "piano", 1.0}}};
  normalize_stream(s);
  EXPECT_TRUE(is_valid_stream(s));
  ASSERT_EQ(s.notes.size(), 2u);
  EXPECT_DOUBLE_EQ(s.notes[0].offset_s, 0.5);
}

TEST(PianoRoll, SingleNoteFrames3To7) {
  const MidiDocument doc = make_document({{0.06, 0.16, 60, 80, "piano", 1.0}});
  const PianoRoll pr = midi_to_pianoroll(doc, 0.02, PitchAxis::piano(1), 10);
  const auto& roll = pr.roll.values.channel(0);
  const auto& onset = pr.roll.values.channel(1);
  const int row = 60 - 21;
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(roll(k, row), (k >= 3 && k <= 7) ? 1.0 : 0.0) << k;
    EXPECT_EQ(onset(k, row), k == 3 ? 1.0 : 0.0) << k;
  }
  EXPECT_EQ(roll.sum(), 5.0);
}

TEST(PianoRoll, EmptyDocumentAllZero) {
  const PianoRoll pr = midi_to_pianoroll(MidiDocument{}, 0.02, PitchAxis::piano(4), 5);
  EXPECT_EQ(pr.roll.values.channel(0).sum(), 0.0);
  EXPECT_EQ(pr.roll.frames(), 5);
}

TEST(PianoRoll, TriadColumnSumThree) {
  const MidiDocument doc = make_document(
      {{0.0, 1.0, 60, 80, "piano", 1.0}, {0.0, 1.0, 64, 80, "piano", 1.0}, {0.0, 1.0, 67, 80, "piano", 1.0}});
  const PianoRoll pr = midi_to_pianoroll(doc, 0.02, PitchAxis::piano(1));
  EXPECT_EQ(pr.roll.frames(), 50);
  for (int k = 0; k < 50; ++k) EXPECT_EQ(pr.roll.values.channel(0).row(k).sum(), 3.0);
}

TEST(PianoRoll, OutOfRangeNotesDroppedAndCounted) {
  const MidiDocument doc = make_document({{0.0, 1.0, 10, 80, "piano", 1.0}, {0.0, 1.0, 60, 80, "piano", 1.0}});
  const PianoRoll pr = midi_to_pianoroll(doc, 0.02, PitchAxis::piano(4));
  EXPECT_EQ(pr.dropped_notes, 1);
  EXPECT_EQ(pr.roll.values.channel(0).sum(), 50.0 * 4);
}

// Per-pitch runs tile each note's [onset, offset) frame interval exactly.
TEST(PianoRoll, RunsTileNoteIntervals) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const MidiDocument doc = test::random_document(rng, 30, 1, 0.03, 0.05);
    const PianoRoll pr = midi_to_pianoroll(doc, 0.02, PitchAxis::piano(1));
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(pr.roll.frames(), 88);
    for (const auto& n : doc.streams[0].notes)
      for (int k = 0; k < pr.roll.frames(); ++k)
        if (k * 0.02 < n.offset_s && (k + 1) * 0.02 > n.onset_s) expect(k, n.pitch - 21) = 1.0;
    EXPECT_EQ(pr.roll.values.channel(0), expect) << "trial " << trial;
  }
}

TEST(ChordVocabulary, TwentyFiveLabels) {
  EXPECT_EQ(chord_label(0), "C:maj");
  EXPECT_EQ(chord_label(12 + 9), "A:min");
  EXPECT_EQ(chord_label(kNoChord), "N");
  EXPECT_EQ(chord_index("G:maj"), 7);
  EXPECT_EQ(chord_index("H:maj"), -1);
}

TEST(BeatAnnotation, DownbeatsMustBeBeats) {
  BeatAnnotation a{{0.5, 1.0, 1.5}, {0.5}};
  EXPECT_TRUE(a.is_valid());
  a.downbeats_s = {0.75};
  EXPECT_FALSE(a.is_valid());
  a = {{0.5, 0.5}, {}};
  EXPECT_FALSE(a.is_valid());
}

}  // namespace
}  // namespace amt
