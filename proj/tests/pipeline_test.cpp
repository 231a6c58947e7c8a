#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "amt/audio.hpp"
#include "amt/decoders.hpp"
#include "amt/evaluation.hpp"
#include "amt/pipeline.hpp"
#include "amt/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace amt;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(fs::temp_directory_path() / ("amtkit_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }

 private:
  fs::path path_;
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Internal;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return read_file_bytes(p.string()); }

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

/// Tiny models keep the pipeline tests fast.
PipelineConfig small_config() {
  PipelineConfig c = PipelineConfig::defaults();
  for (auto& [t, m] : c.models) m.width = std::min(m.width, 4);
  c.models[Task::Chord].width = 8;
  for (auto& [t, tc] : c.training) tc.epochs = 3;
  return c;
}

SyntheticParams short_clips() {
  SyntheticParams p;
  p.clip_s = 1.0;
  p.notes_per_clip = 3;
  return p;
}

}  // namespace

TEST(TensorIo, RoundTripIsExact) {
  ActivationTensor t{Tensor3d(5, 7, 3), {0.02, 5}};
  for (int c = 0; c < 3; ++c) t.values.channel(c).setRandom();
  ActivationTensor back = decode_tensor(encode_tensor(t));
  EXPECT_TRUE(back.values == t.values);
  EXPECT_EQ(back.grid.hop_s, 0.02);
  EXPECT_EQ(back.grid.n_frames, 5);
}

TEST(TensorIo, CorruptionIsDataError) {
  ActivationTensor t{Tensor3d(4, 4, 1), {0.01, 4}};
  auto b = encode_tensor(t);
  auto truncated = b;
  truncated.pop_back();
  EXPECT_EQ(code_of([&] { decode_tensor(truncated); }), ErrorCode::Data);
  auto flipped = b;
  flipped[40] ^= 1;
  EXPECT_EQ(code_of([&] { decode_tensor(flipped); }), ErrorCode::Data);
  TempDir dir("tio");
  write_text(dir.path() / "bad.tensor", "garbage");
  EXPECT_NE(message_of([&] { read_tensor_file(dir / "bad.tensor"); }).find("bad.tensor"), std::string::npos);
}

TEST(PipelineConfigTest, JsonRoundTrip) {
  PipelineConfig c = PipelineConfig::defaults();
  c.decode.act_threshold = 0.4;
  c.training[Task::Chord].epochs = 7;
  c.models[Task::Beat].hidden = 9;
  PipelineConfig back = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.decode.act_threshold, 0.4);
  EXPECT_EQ(back.models[Task::Beat].hidden, 9);
}

TEST(PipelineConfigTest, PartialJsonKeepsDefaults) {
  auto c = PipelineConfig::from_json(R"({"decode": {"min_note_s": 0.1}, "training": {"music": {"optimizer": "sgd"}}})");
  EXPECT_EQ(c.decode.min_note_s, 0.1);
  EXPECT_EQ(c.decode.act_threshold, 0.5);
  EXPECT_EQ(c.training[Task::Music].optimizer, Optimizer::Sgd);
}

TEST(PipelineConfigTest, RejectsBadInput) {
  EXPECT_THROW(PipelineConfig::from_json(R"({"decoder": {}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(R"({"decode": {"act_threshold": 2}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(R"({"decode": {"act_threshold": "high"}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(R"({"training": {"music": {"optimizer": "rmsprop"}}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(R"({"models": {"music": {"pitch_bins": 88}}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(R"({"models": {"guitar": {}}})"), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json("{"), ConfigError);
  EXPECT_EQ(code_of([] { PipelineConfig::from_file("/nonexistent/config.json"); }), ErrorCode::Config);
}

TEST(PipelineConfigTest, CheckedInDefaultsMatch) {
  const auto c = PipelineConfig::from_file(std::string(AMTKIT_SOURCE_DIR) + "/configs/default.json");
  EXPECT_EQ(c.to_json(), PipelineConfig::defaults().to_json());
}

TEST(PipelineConfigTest, CheckpointResolution) {
  PipelineConfig c = PipelineConfig::defaults();
  ::unsetenv(kCheckpointDirEnv);
  EXPECT_EQ(checkpoint_path(Task::Music, c), "data/checkpoints/music.ckpt");
  ::setenv(kCheckpointDirEnv, "/models", 1);
  EXPECT_EQ(checkpoint_path(Task::Beat, c), "/models/beat.ckpt");
  c.checkpoint_dir = "/cfg";
  EXPECT_EQ(checkpoint_path(Task::Beat, c), "/cfg/beat.ckpt");
  ::unsetenv(kCheckpointDirEnv);
  EXPECT_EQ(checkpoint_path(Task::Beat, c, "/x/model.ckpt"), "/x/model.ckpt");
  TempDir dir("ckres");
  EXPECT_EQ(checkpoint_path(Task::VocalSeg, c, dir.path().string()), (dir.path() / "vocal_seg.ckpt").string());
}

TEST(Sidecars, RoundTrip) {
  std::vector<ChordSegment> chords{{0.0, 0.46, 0}, {0.46, 1.0, 13}, {1.0, 2.3, kNoChord}};
  auto back = parse_chord_segments(format_chord_segments(chords));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].label, 13);
  EXPECT_DOUBLE_EQ(back[2].end_s, 2.3);
  EXPECT_THROW(parse_chord_segments("0 1 X:maj\n"), Error);

  BeatAnnotation beats{{0.5, 1.0, 1.5, 2.0}, {0.5, 2.0}};
  auto b = parse_beats(format_beats(beats));
  EXPECT_EQ(b.beats_s, beats.beats_s);
  EXPECT_EQ(b.downbeats_s, beats.downbeats_s);
  EXPECT_THROW(parse_beats("1.0 0\n0.5 0\n"), Error);
}

TEST(Synthetic, MusicLayoutAndDeterminism) {
  TempDir a("syn_a"), b("syn_b");
  const auto cfg = small_config();
  generate_synthetic_dataset(CliTask::Music, 8, 5, a.path().string(), cfg, short_clips());
  generate_synthetic_dataset(CliTask::Music, 8, 5, b.path().string(), cfg, short_clips());
  int wav = 0, tensors = 0, mid = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(bytes(e.path()), bytes(b.path() / rel)) << rel;
    wav += e.path().extension() == ".wav";
    mid += e.path().extension() == ".mid";
    tensors += rel.begin()->string() == "targets";
  }
  EXPECT_EQ(wav, 8);
  EXPECT_EQ(tensors, 8);
  EXPECT_EQ(mid, 8);
}

TEST(Synthetic, DifferentSeedsDiffer) {
  TempDir a("seed_a"), b("seed_b");
  generate_synthetic_dataset(CliTask::Music, 1, 1, a.path().string(), small_config(), short_clips());
  generate_synthetic_dataset(CliTask::Music, 1, 2, b.path().string(), small_config(), short_clips());
  EXPECT_NE(bytes(a.path() / "midi/0000.mid"), bytes(b.path() / "midi/0000.mid"));
}

TEST(Synthetic, TargetsDecodeToGroundTruth) {
  const auto cfg = small_config();
  SyntheticParams p = short_clips();
  p.clip_s = 2.0;
  p.notes_per_clip = 6;
  TempDir dir("oracle");
  auto root = [&](const char* t) { return (dir.path() / t).string(); };
  for (CliTask t : {CliTask::Music, CliTask::Drum, CliTask::Vocal, CliTask::Chord, CliTask::Beat})
    generate_synthetic_dataset(t, 4, 3, root(cli_task_name(t).c_str()), cfg, p);
  for (int i = 0; i < 4; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "%04d", i);
    const std::string s = id;
    auto target = [&](const char* t, const char* model) {
      return read_tensor_file(root(t) + "/targets/" + s + "." + model + ".tensor");
    };
    auto truth = [&](const char* t) { return read_midi_file(root(t) + "/midi/" + s + ".mid").all_notes(); };

    EXPECT_EQ(note_f1(truth("music"), decode_piano_notes(target("music", "music"))).f1, 1.0);

    auto drums = decode_drums(target("drum", "drum"));
    auto ref_drums = truth("drum");
    ASSERT_EQ(drums.size(), ref_drums.size());
    for (std::size_t k = 0; k < drums.size(); ++k) {
      EXPECT_NEAR(drums[k].onset_s, ref_drums[k].onset_s, 1.1e-3);  // one MIDI tick at 120 BPM, 480 ppq
      EXPECT_EQ(drum_class_to_key(drums[k].drum_class), ref_drums[k].pitch);
    }

    auto vocal = decode_vocal(target("vocal", "vocal_pitch"), target("vocal", "vocal_seg"));
    EXPECT_EQ(note_f1(truth("vocal"), vocal).f1, 1.0);

    auto chords_ref = parse_chord_segments(std::string(
        reinterpret_cast<const char*>(bytes(root("chord") + "/labels/" + s + ".chords.txt").data()),
        bytes(root("chord") + "/labels/" + s + ".chords.txt").size()));
    EXPECT_DOUBLE_EQ(chord_accuracy(chords_ref, decode_chords(target("chord", "chord"))), 1.0);

    auto beat_bytes = bytes(root("beat") + "/labels/" + s + ".beats.txt");
    auto beats_ref = parse_beats(std::string(beat_bytes.begin(), beat_bytes.end()));
    auto r = beat_f_measure(beats_ref, decode_beats(target("beat", "beat")));
    EXPECT_EQ(r.beats.f1, 1.0);
    EXPECT_EQ(r.downbeats.f1, 1.0);
  }
}

TEST(TrainCli, EmptyDatasetIsDataError) {
  TempDir dir("empty");
  fs::create_directories(dir.path() / "targets");
  EXPECT_EQ(code_of([&] { train_cli(CliTask::Music, dir.path().string(), small_config(), dir / "out"); }),
            ErrorCode::Data);
  EXPECT_EQ(code_of([&] { train_cli(CliTask::Music, dir / "missing", small_config(), dir / "out"); }),
            ErrorCode::Data);
}

TEST(TrainCli, CorruptFeatureFileIsNamed) {
  TempDir dir("corrupt");
  generate_synthetic_dataset(CliTask::Beat, 2, 1, dir / "set", small_config(), short_clips());
  write_text(dir.path() / "set/features/0001.beat.tensor", "not a tensor");
  Error err(ErrorCode::Internal, "");
  try {
    train_cli(CliTask::Beat, dir / "set", small_config(), dir / "out");
  } catch (const Error& e) {
    err = e;
  }
  EXPECT_EQ(err.code(), ErrorCode::Data);
  EXPECT_NE(std::string(err.what()).find("0001.beat.tensor"), std::string::npos) << err.what();
}

TEST(TrainCli, ZeroEpochsKeepsInitialization) {
  TempDir dir("zero");
  auto cfg = small_config();
  cfg.training[Task::Beat].epochs = 0;
  generate_synthetic_dataset(CliTask::Beat, 2, 1, dir / "set", cfg, short_clips());
  auto r = train_cli(CliTask::Beat, dir / "set", cfg, dir / "out");
  ASSERT_EQ(r.checkpoints.size(), 1u);
  EXPECT_EQ(bytes(r.checkpoints[0]), save_checkpoint(build_model(cfg.models[Task::Beat])));
}

TEST(TrainCli, LossDecreasesAndHistoryIsWritten) {
  TempDir dir("train");
  auto cfg = small_config();
  cfg.training[Task::VocalPitch].epochs = cfg.training[Task::VocalSeg].epochs = 6;
  generate_synthetic_dataset(CliTask::Vocal, 2, 1, dir / "set", cfg, short_clips());
  auto r = train_cli(CliTask::Vocal, dir / "set", cfg, dir / "out");
  ASSERT_EQ(r.checkpoints.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(fs::exists(r.checkpoints[i]));
    ASSERT_EQ(r.histories[i].size(), 6u);
    EXPECT_LT(r.histories[i].back(), r.histories[i].front());
  }
  std::ifstream hist(dir.path() / "out/vocal_seg.history.txt");
  int lines = 0;
  for (std::string l; std::getline(hist, l);) ++lines;
  EXPECT_EQ(lines, 6);
}

class TranscribeTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = small_config();
    cfg_.checkpoint_dir = (dir_.path() / "ckpt").string();
    cfg_.output_dir = (dir_.path() / "out").string();
    generate_synthetic_dataset(CliTask::Music, 2, 9, dir_ / "music", cfg_, short_clips());
    generate_synthetic_dataset(CliTask::Beat, 1, 9, dir_ / "beat", cfg_, short_clips());
    train_cli(CliTask::Music, dir_ / "music", cfg_, cfg_.checkpoint_dir);
    train_cli(CliTask::Beat, dir_ / "beat", cfg_, cfg_.checkpoint_dir);
  }
  TempDir dir_{"transcribe"};
  PipelineConfig cfg_;
};

TEST_F(TranscribeTest, MusicWritesParseableMidi) {
  const std::string out = transcribe(CliTask::Music, dir_ / "music/clips/0000.wav", cfg_);
  EXPECT_EQ(fs::path(out).filename(), "0000.mid");
  EXPECT_NO_THROW(read_midi_file(out));
  for (const auto& e : fs::directory_iterator(cfg_.output_dir)) EXPECT_NE(e.path().extension(), ".tmp");
  // Same inputs give byte-identical output.
  const auto first = bytes(out);
  transcribe(CliTask::Music, dir_ / "music/clips/0000.wav", cfg_);
  EXPECT_EQ(bytes(out), first);
}

TEST_F(TranscribeTest, BeatWritesMonotoneTimes) {
  const std::string out = transcribe(CliTask::Beat, dir_ / "beat/clips/0000.mid", cfg_);
  auto b = bytes(out);
  EXPECT_TRUE(parse_beats(std::string(b.begin(), b.end())).is_valid());
}

TEST_F(TranscribeTest, ErrorsCarryCodes) {
  EXPECT_EQ(code_of([&] { transcribe(CliTask::Music, dir_ / "none.wav", cfg_); }), ErrorCode::Input);
  EXPECT_EQ(code_of([&] { transcribe(CliTask::Chord, dir_ / "music/clips/0000.wav", cfg_); }), ErrorCode::Model);
  write_text(dir_.path() / "bad.wav", "RIFF????");
  EXPECT_EQ(code_of([&] { transcribe(CliTask::Music, dir_ / "bad.wav", cfg_); }), ErrorCode::Input);
  // A beat checkpoint cannot drive music transcription.
  TranscribeOptions wrong;
  wrong.model_path = cfg_.checkpoint_dir + "/beat.ckpt";
  EXPECT_EQ(code_of([&] { transcribe(CliTask::Music, dir_ / "music/clips/0000.wav", cfg_, wrong); }),
            ErrorCode::Model);
  TranscribeOptions bad_threshold;
  bad_threshold.threshold = 1.5;
  EXPECT_EQ(code_of([&] { transcribe(CliTask::Music, dir_ / "music/clips/0000.wav", cfg_, bad_threshold); }),
            ErrorCode::Config);
}

TEST_F(TranscribeTest, BatchMatchesSequential) {
  std::vector<std::string> inputs{dir_ / "music/clips/0000.wav", dir_ / "music/clips/0001.wav"};
  TranscribeOptions o1, o2;
  o1.output = dir_ / "seq";
  o2.output = dir_ / "par";
  auto seq = transcribe_batch(CliTask::Music, inputs, cfg_, o1, 1);
  auto par = transcribe_batch(CliTask::Music, inputs, cfg_, o2, 2);
  ASSERT_EQ(seq.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(bytes(seq[i]), bytes(par[i]));
  inputs.push_back(dir_ / "missing.wav");
  EXPECT_EQ(code_of([&] { transcribe_batch(CliTask::Music, inputs, cfg_, o2, 2); }), ErrorCode::Input);
}

TEST_F(TranscribeTest, EvaluateAgainstGroundTruth) {
  const std::string ref = dir_ / "music/midi/0000.mid";
  const std::string text = evaluate_files(CliTask::Music, ref, ref);
  EXPECT_NE(text.find("note.f1=1\n"), std::string::npos) << text;
  EXPECT_NE(text.find("stream.f1=1\n"), std::string::npos) << text;
  const std::string beats = dir_ / "beat/labels/0000.beats.txt";
  EXPECT_NE(evaluate_files(CliTask::Beat, beats, beats).find("beat.f1=1\n"), std::string::npos);
}

TEST(SonifyFile, EmptyMidiGivesSilentWav) {
  TempDir dir("sonify");
  write_midi_file(MidiDocument{}, dir / "empty.mid");
  sonify_file(dir / "empty.mid", dir / "empty.wav");
  AudioClip clip = read_wav(dir / "empty.wav");
  EXPECT_GT(clip.samples.size(), 0);
  EXPECT_EQ(clip.samples.cwiseAbs().maxCoeff(), 0.0);
}
