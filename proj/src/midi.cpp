#include "amt/midi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>

namespace amt {

std::size_t MidiDocument::note_count() const {
  std::size_t n = 0;
  for (const auto& s : streams) n += s.notes.size();
  return n;
}

std::vector<NoteEvent> MidiDocument::all_notes() const {
  std::vector<NoteEvent> out;
  for (const auto& s : streams) out.insert(out.end(), s.notes.begin(), s.notes.end());
  std::stable_sort(out.begin(), out.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset_s, a.pitch) < std::tie(b.onset_s, b.pitch);
  });
  return out;
}

double MidiDocument::end_time() const {
  double t = 0.0;
  for (const auto& s : streams)
    for (const auto& n : s.notes) t = std::max(t, n.offset_s);
  return t;
}

void normalize_stream(NoteStream& stream) {
  auto& notes = stream.notes;
  std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset_s, a.pitch) < std::tie(b.onset_s, b.pitch);
  });
  // Last-on wins: a later note of the same pitch truncates the one still sounding.
  std::map<int, std::size_t> sounding;
  for (std::size_t i = 0; i < notes.size(); ++i) {
    auto it = sounding.find(notes[i].pitch);
    if (it != sounding.end() && notes[it->second].offset_s > notes[i].onset_s)
      notes[it->second].offset_s = notes[i].onset_s;
    sounding[notes[i].pitch] = i;
  }
  std::erase_if(notes, [](const NoteEvent& n) { return !(n.offset_s > n.onset_s); });
}

bool is_valid_stream(const NoteStream& stream) {
  std::map<int, double> last_offset;
  for (std::size_t i = 0; i < stream.notes.size(); ++i) {
    const auto& n = stream.notes[i];
    if (!(n.offset_s > n.onset_s)) return false;
    if (i > 0 && n.onset_s < stream.notes[i - 1].onset_s) return false;
    auto it = last_offset.find(n.pitch);
    if (it != last_offset.end() && it->second > n.onset_s + 1e-12) return false;
    last_offset[n.pitch] = n.offset_s;
  }
  return true;
}

MidiDocument make_document(std::vector<NoteEvent> notes, const std::string& instrument) {
  MidiDocument doc;
  NoteStream stream{instrument, std::move(notes)};
  for (auto& n : stream.notes) n.instrument = instrument;
  normalize_stream(stream);
  doc.streams.push_back(std::move(stream));
  return doc;
}

const std::vector<std::string>& default_drum_classes() {
  static const std::vector<std::string> classes{"kick", "snare", "hihat"};
  return classes;
}

int drum_class_to_key(std::string_view drum_class) {
  if (drum_class == "kick") return 36;
  if (drum_class == "snare") return 38;
  if (drum_class == "hihat") return 42;
  throw RangeError("unknown drum class '" + std::string(drum_class) + "'");
}

std::string drum_key_to_class(int key) {
  switch (key) {
    case 35: case 36: return "kick";
    case 37: case 38: case 40: return "snare";
    case 42: case 44: case 46: return "hihat";
    default: return {};
  }
}

const std::array<std::string, kNumChordClasses>& chord_vocabulary() {
  static const std::array<std::string, kNumChordClasses> vocab = [] {
    static const char* roots[] = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
    std::array<std::string, kNumChordClasses> v;
    for (int i = 0; i < 12; ++i) {
      v[i] = std::string(roots[i]) + ":maj";
      v[12 + i] = std::string(roots[i]) + ":min";
    }
    v[kNoChord] = "N";
    return v;
  }();
  return vocab;
}

std::string chord_label(int index) {
  if (index < 0 || index >= kNumChordClasses) throw RangeError("chord index out of range: " + std::to_string(index));
  return chord_vocabulary()[index];
}

int chord_index(std::string_view label) {
  const auto& v = chord_vocabulary();
  for (int i = 0; i < kNumChordClasses; ++i)
    if (v[i] == label) return i;
  return -1;
}

bool BeatAnnotation::is_valid() const {
  auto increasing = [](const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
  };
  if (!increasing(beats_s) || !increasing(downbeats_s)) return false;
  for (double d : downbeats_s) {
    auto it = std::lower_bound(beats_s.begin(), beats_s.end(), d - 1e-6);
    if (it == beats_s.end() || std::abs(*it - d) > 1e-6) return false;
  }
  return true;
}

namespace {

struct ProgramLabel {
  int program;
  const char* label;
};

// General MIDI programs (0-based) for the known labels. First entry wins on write.
constexpr ProgramLabel kPrograms[] = {
    {0, "piano"},   {1, "piano"},   {2, "piano"},     {3, "piano"},       {4, "piano"},
    {5, "piano"},   {6, "harpsichord"}, {40, "violin"}, {41, "viola"},    {42, "cello"},
    {43, "contrabass"}, {60, "horn"}, {68, "oboe"},   {70, "bassoon"},    {71, "clarinet"},
    {73, "flute"},  {53, "voice"},
};

constexpr int kDrumChannel = 9;

}  // namespace

const std::vector<std::string>& multi_instrument_vocabulary() {
  static const std::vector<std::string> vocab{"piano",   "violin",  "viola",    "cello",
                                              "flute",   "horn",    "bassoon",  "clarinet",
                                              "harpsichord", "contrabass", "oboe"};
  return vocab;
}

int instrument_to_program(std::string_view instrument) {
  for (const auto& p : kPrograms)
    if (instrument == p.label) return p.program;
  if (instrument.starts_with("program:")) {
    int prog = std::stoi(std::string(instrument.substr(8)));
    if (prog < 0 || prog > 127) throw RangeError("program out of range in label '" + std::string(instrument) + "'");
    return prog;
  }
  return 0;
}

std::string program_to_instrument(int program) {
  for (const auto& p : kPrograms)
    if (p.program == program) return p.label;
  return "program:" + std::to_string(program);
}

// ---------------------------------------------------------------------------
// Reading

namespace {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ >= bytes_.size(); }

  void require(std::size_t n, const char* what) const {
    if (remaining() < n) throw ParseError(std::string("truncated MIDI data reading ") + what, pos_);
  }
  std::uint8_t u8(const char* what = "byte") {
    require(1, what);
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    require(1, "byte");
    return bytes_[pos_];
  }
  std::uint16_t u16() {
    require(2, "16-bit field");
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] << 8 | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    require(4, "32-bit field");
    std::uint32_t v = std::uint32_t(bytes_[pos_]) << 24 | std::uint32_t(bytes_[pos_ + 1]) << 16 |
                      std::uint32_t(bytes_[pos_ + 2]) << 8 | std::uint32_t(bytes_[pos_ + 3]);
    pos_ += 4;
    return v;
  }
  std::uint32_t varlen() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8("variable-length quantity");
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", pos_);
  }
  std::string tag() {
    require(4, "chunk tag");
    std::string t(bytes_.begin() + pos_, bytes_.begin() + pos_ + 4);
    pos_ += 4;
    return t;
  }
  void skip(std::size_t n, const char* what) {
    require(n, what);
    pos_ += n;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    require(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct RawNote {
  std::uint64_t on_tick;
  std::uint64_t off_tick;
  int pitch;
  int velocity;
  int channel;
  int program;
};

struct RawTrack {
  std::vector<RawNote> notes;
  std::uint64_t end_tick = 0;
};

struct TempoChange {
  std::uint64_t tick;
  std::uint32_t usec_per_quarter;
};

RawTrack parse_track(ByteReader& r, std::vector<TempoChange>& tempos) {
  RawTrack track;
  std::uint64_t tick = 0;
  std::uint8_t running = 0;
  std::array<int, 16> program{};
  // (channel, pitch) -> index into track.notes of the sounding note
  std::map<std::pair<int, int>, std::size_t> sounding;

  auto close = [&](int ch, int pitch, std::uint64_t at) {
    auto it = sounding.find({ch, pitch});
    if (it == sounding.end()) return;
    track.notes[it->second].off_tick = at;
    sounding.erase(it);
  };

  while (!r.done()) {
    tick += r.varlen();
    std::uint8_t status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else {
      if (running == 0) throw ParseError("data byte without running status", r.pos());
      status = running;
    }

    if (status == 0xFF) {
      std::uint8_t type = r.u8("meta type");
      std::uint32_t len = r.varlen();
      auto data = r.take(len, "meta event payload");
      if (type == 0x51 && len == 3) {
        std::uint32_t usec = std::uint32_t(data[0]) << 16 | std::uint32_t(data[1]) << 8 | data[2];
        if (usec > 0) tempos.push_back({tick, usec});
      } else if (type == 0x2F) {
        break;
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      r.skip(r.varlen(), "sysex payload");
      continue;
    }
    if (status >= 0xF0) throw ParseError("unsupported system message in track", r.pos() - 1);

    running = status;
    const int kind = status & 0xF0;
    const int ch = status & 0x0F;
    switch (kind) {
      case 0x80:
      case 0x90: {
        int pitch = r.u8("note number") & 0x7F;
        int vel = r.u8("velocity") & 0x7F;
        if (kind == 0x90 && vel > 0) {
          close(ch, pitch, tick);
          sounding[{ch, pitch}] = track.notes.size();
          track.notes.push_back({tick, tick, pitch, vel, ch, program[ch]});
        } else {
          close(ch, pitch, tick);
        }
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0:
        r.skip(2, "channel message data");
        break;
      case 0xC0:
        program[ch] = r.u8("program number") & 0x7F;
        break;
      case 0xD0:
        r.skip(1, "channel pressure");
        break;
      default:
        throw ParseError("unknown status byte", r.pos() - 1);
    }
  }
  track.end_tick = tick;
  for (auto& [key, idx] : sounding) track.notes[idx].off_tick = tick;
  return track;
}

/// Piecewise-linear tick -> seconds map built from tempo changes.
class TempoMap {
 public:
  TempoMap(std::vector<TempoChange> changes, int tpq) : tpq_(tpq) {
    std::stable_sort(changes.begin(), changes.end(), [](auto& a, auto& b) { return a.tick < b.tick; });
    if (changes.empty() || changes.front().tick != 0) changes.insert(changes.begin(), {0, 500000});
    double t = 0.0;
    for (std::size_t i = 0; i < changes.size(); ++i) {
      if (i > 0) t += seconds_per_tick(changes[i - 1].usec_per_quarter) * double(changes[i].tick - changes[i - 1].tick);
      segments_.push_back({changes[i].tick, t, changes[i].usec_per_quarter});
    }
  }

  double seconds(std::uint64_t tick) const {
    auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                               [](std::uint64_t t, const Segment& s) { return t < s.tick; });
    const Segment& s = *std::prev(it);
    return s.start_s + seconds_per_tick(s.usec) * double(tick - s.tick);
  }

  std::uint32_t first_tempo() const { return segments_.front().usec; }

 private:
  struct Segment {
    std::uint64_t tick;
    double start_s;
    std::uint32_t usec;
  };
  double seconds_per_tick(std::uint32_t usec) const { return usec * 1e-6 / tpq_; }

  int tpq_;
  std::vector<Segment> segments_;
};

}  // namespace

MidiDocument read_midi(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.tag() != "MThd") throw ParseError("missing MThd header", 0);
  const std::uint32_t header_len = r.u32();
  if (header_len < 6) throw ParseError("MThd chunk shorter than 6 bytes", 4);
  const std::uint16_t format = r.u16();
  const std::uint16_t ntracks = r.u16();
  const std::size_t division_pos = r.pos();
  const std::uint16_t division = r.u16();
  r.skip(header_len - 6, "header padding");
  if (format > 1) throw ParseError("unsupported MIDI format " + std::to_string(format), 8);
  if (division == 0) throw ParseError("zero ticks per quarter", division_pos);

  int tpq = division;
  double smpte_seconds_per_tick = 0.0;
  if (division & 0x8000) {
    const int fps = -static_cast<std::int8_t>(division >> 8);
    const int ticks_per_frame = division & 0xFF;
    if (fps <= 0 || ticks_per_frame == 0) throw ParseError("invalid SMPTE division", division_pos);
    smpte_seconds_per_tick = 1.0 / (double(fps == 29 ? 29.97 : fps) * ticks_per_frame);
    tpq = 480;
  }

  std::vector<RawTrack> tracks;
  std::vector<TempoChange> tempos;
  for (int t = 0; t < ntracks; ++t) {
    // Skip foreign chunks until the next track.
    for (;;) {
      const std::size_t chunk_pos = r.pos();
      std::string tag = r.tag();
      std::uint32_t len = r.u32();
      if (tag != "MTrk") {
        r.skip(len, "unknown chunk");
        continue;
      }
      if (r.remaining() < len) throw ParseError("track chunk length exceeds file size", chunk_pos + 4);
      ByteReader sub(r.take(len, "track chunk"));
      try {
        tracks.push_back(parse_track(sub, tempos));
      } catch (const ParseError& e) {
        throw ParseError("track " + std::to_string(t) + ": " + e.detail(), chunk_pos + 8 + e.offset());
      }
      break;
    }
  }

  MidiDocument doc;
  doc.ticks_per_quarter = tpq;
  TempoMap tempo_map(tempos, tpq);
  doc.tempo_bpm = 60e6 / tempo_map.first_tempo();
  auto to_seconds = [&](std::uint64_t tick) {
    return smpte_seconds_per_tick > 0 ? tick * smpte_seconds_per_tick : tempo_map.seconds(tick);
  };

  for (const auto& track : tracks) {
    // One stream per (channel, instrument) in order of first appearance.
    std::vector<std::pair<int, std::string>> keys;
    std::vector<NoteStream> streams;
    for (const auto& rn : track.notes) {
      if (rn.off_tick <= rn.on_tick) continue;
      std::string inst = rn.channel == kDrumChannel ? "drums" : program_to_instrument(rn.program);
      auto key = std::make_pair(rn.channel, inst);
      auto it = std::find(keys.begin(), keys.end(), key);
      std::size_t idx = static_cast<std::size_t>(it - keys.begin());
      if (it == keys.end()) {
        keys.push_back(key);
        streams.push_back(NoteStream{inst, {}});
      }
      NoteEvent n;
      n.onset_s = to_seconds(rn.on_tick);
      n.offset_s = to_seconds(rn.off_tick);
      n.pitch = rn.pitch;
      n.velocity = rn.velocity;
      n.instrument = inst;
      n.confidence = 1.0;
      streams[idx].notes.push_back(n);
    }
    for (auto& s : streams) {
      normalize_stream(s);
      if (!s.notes.empty()) doc.streams.push_back(std::move(s));
    }
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Writing

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(std::uint8_t(v >> s));
}

void put_varlen(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while ((v >>= 7) != 0) buf[n++] = std::uint8_t(0x80 | (v & 0x7F));
  while (n > 0) out.push_back(buf[--n]);
}

void put_track(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& body) {
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
}

struct TrackEvent {
  std::uint64_t tick;
  int order;  // note-offs sort before note-ons at the same tick
  std::array<std::uint8_t, 3> bytes;
};

}  // namespace

std::vector<std::uint8_t> write_midi(const MidiDocument& doc) {
  if (!(doc.tempo_bpm > 0)) throw RangeError("tempo must be positive");
  if (doc.ticks_per_quarter <= 0 || doc.ticks_per_quarter > 0x7FFF)
    throw RangeError("ticks_per_quarter out of range: " + std::to_string(doc.ticks_per_quarter));

  const double ticks_per_second = doc.ticks_per_quarter * doc.tempo_bpm / 60.0;
  const std::uint32_t usec = static_cast<std::uint32_t>(std::llround(60e6 / doc.tempo_bpm));

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'M', 'T', 'h', 'd'});
  put_u32(out, 6);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(doc.streams.size() + 1));
  put_u16(out, static_cast<std::uint16_t>(doc.ticks_per_quarter));

  {
    std::vector<std::uint8_t> tempo_track{0x00, 0xFF, 0x51, 0x03, std::uint8_t(usec >> 16), std::uint8_t(usec >> 8),
                                          std::uint8_t(usec), 0x00, 0xFF, 0x2F, 0x00};
    put_track(out, tempo_track);
  }

  int next_channel = 0;
  for (const auto& stream : doc.streams) {
    int channel;
    if (stream.instrument == "drums") {
      channel = kDrumChannel;
    } else {
      if (next_channel == kDrumChannel) ++next_channel;
      if (next_channel > 15) throw RangeError("more than 15 pitched streams do not fit in MIDI channels");
      channel = next_channel++;
    }

    std::vector<TrackEvent> events;
    for (const auto& n : stream.notes) {
      if (n.pitch < 0 || n.pitch > 127) throw RangeError("note pitch " + std::to_string(n.pitch) + " outside 0..127");
      if (n.velocity < 1 || n.velocity > 127)
        throw RangeError("note velocity " + std::to_string(n.velocity) + " outside 1..127");
      if (n.onset_s < 0) throw RangeError("negative note onset");
      auto on = static_cast<std::uint64_t>(std::llround(n.onset_s * ticks_per_second));
      auto off = static_cast<std::uint64_t>(std::llround(n.offset_s * ticks_per_second));
      if (off <= on) off = on + 1;
      const auto p = static_cast<std::uint8_t>(n.pitch);
      events.push_back({on, 1, {std::uint8_t(0x90 | channel), p, std::uint8_t(n.velocity)}});
      events.push_back({off, 0, {std::uint8_t(0x80 | channel), p, 0}});
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const TrackEvent& a, const TrackEvent& b) { return std::tie(a.tick, a.order) < std::tie(b.tick, b.order); });

    std::vector<std::uint8_t> body;
    if (channel != kDrumChannel) {
      body.insert(body.end(), {0x00, std::uint8_t(0xC0 | channel), std::uint8_t(instrument_to_program(stream.instrument))});
    }
    std::uint64_t last = 0;
    for (const auto& e : events) {
      put_varlen(body, static_cast<std::uint32_t>(e.tick - last));
      body.insert(body.end(), e.bytes.begin(), e.bytes.end());
      last = e.tick;
    }
    body.insert(body.end(), {0x00, 0xFF, 0x2F, 0x00});
    put_track(out, body);
  }
  return out;
}

MidiDocument read_midi_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Input, "cannot open MIDI file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_midi(bytes);
}

void write_midi_file(const MidiDocument& doc, const std::string& path) {
  auto bytes = write_midi(doc);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Input, "cannot write MIDI file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------

PianoRoll midi_to_pianoroll(const MidiDocument& doc, double hop_s, const PitchAxis& axis, int n_frames) {
  if (!(hop_s > 0)) throw ContractError("piano roll hop must be positive");
  TimeGrid grid{hop_s, 0};
  grid.n_frames = n_frames > 0 ? n_frames : std::max(1, grid.frame_end(doc.end_time()));

  PianoRoll out;
  out.roll.grid = grid;
  out.roll.values = Tensor3d(grid.n_frames, axis.n_bins(), 2);
  auto& frame = out.roll.values.channel(0);
  auto& onset = out.roll.values.channel(1);
  for (const auto& s : doc.streams) {
    for (const auto& n : s.notes) {
      if (!axis.contains(n.pitch)) {
        ++out.dropped_notes;
        continue;
      }
      const int k0 = std::max(0, grid.frame_of(n.onset_s));
      const int k1 = std::min(grid.n_frames, grid.frame_end(n.offset_s));
      if (k0 >= grid.n_frames || k1 <= k0) continue;
      const int b0 = axis.first_bin(n.pitch);
      frame.block(k0, b0, k1 - k0, axis.bins_per_semitone).setOnes();
      onset.block(k0, b0, 1, axis.bins_per_semitone).setOnes();
    }
  }
  return out;
}

}  // namespace amt
