// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "amt/decoders.hpp"
#include "amt/error.hpp"
#include "amt/evaluation.hpp"
#include "amt/features.hpp"
#include "amt/models.hpp"
#include "amt/nn/gradcheck.hpp"
#include "amt/pipeline.hpp"
#include "amt/targets.hpp"
#include "amt/tensor_io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace amt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path.string());
  return {bytes.begin(), bytes.end()};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("amtkit_acceptance_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// --- 1 -----------------------------------------------------------------------------

Outcome round_trip_oracle() {
  std::mt19937 rng(2024);
  double worst_onset = 0.0;
  int notes = 0;
  for (int d = 0; d < 100; ++d) {
    MidiDocument doc = test::random_document(rng, 30);
    const auto ref = doc.all_notes();
    TimeGrid grid{kMusicHop, 0};
    grid.n_frames = grid.frame_end(doc.end_time()) + 2;
    const auto est = decode_piano_notes(render_piano_targets(ref, grid));
    if (note_f1(ref, est, kMusicHop + 1e-9).f1 != 1.0 || est.size() != ref.size())
      return {false, "document " + std::to_string(d) + " not recovered"};
    // Every reference note has an estimate of the same pitch within one frame.
    for (const auto& r : ref) {
      double best = 1e9;
      for (const auto& e : est)
        if (e.pitch == r.pitch) best = std::min(best, std::abs(e.onset_s - r.onset_s));
      worst_onset = std::max(worst_onset, best);
    }
    if (note_f1(ref, est).f1 != 1.0) return {false, "note_f1 < 1 on document " + std::to_string(d)};
    notes += static_cast<int>(ref.size());
  }
  const bool ok = worst_onset <= kMusicHop + 1e-9;
  return {ok, std::to_string(notes) + " notes, worst onset error " + fmt("%.4f s", worst_onset)};
}

// --- 2 -----------------------------------------------------------------------------

Outcome overfit_closure() {
  const fs::path root = scratch("overfit");
  const fs::path set = root / "set", out = root / "out";
  fs::create_directories(out);
  PipelineConfig config = PipelineConfig::defaults();
  const int n_clips = 8;
  generate_synthetic_dataset(CliTask::Music, n_clips, 5, set.string(), config);

  Model model = build_model(config.models.at(Task::Music));
  const auto data = load_training_set(Task::Music, set.string(), config);
  const std::string ckpt = (root / "music.ckpt").string();

  auto evaluate = [&] {
    save_checkpoint_file(model, ckpt);
    int n_ref = 0, n_est = 0, n_match = 0;
    for (int i = 0; i < n_clips; ++i) {
      char id[8];
      std::snprintf(id, sizeof id, "%04d", i);
      const std::string est_path =
          transcribe(CliTask::Music, (set / "clips" / (std::string(id) + ".wav")).string(), config,
                     {ckpt, (out / (std::string(id) + ".mid")).string(), std::nullopt});
      const MetricReport r = note_f1(read_midi_file((set / "midi" / (std::string(id) + ".mid")).string()).all_notes(),
                                     read_midi_file(est_path).all_notes());
      n_ref += r.n_ref;
      n_est += r.n_est;
      n_match += r.n_match;
    }
    return MetricReport::from_counts(n_ref, n_est, n_match);
  };

  TrainConfig tc = config.training.at(Task::Music);
  tc.epochs = 200;
  MetricReport best;
  int epochs_run = 0;
  tc.on_epoch = [&](int epoch, double) {
    epochs_run = epoch + 1;
    if (epochs_run % 10 != 0) return true;
    best = evaluate();
    return best.f1 < 0.95;
  };
  train(model, data, tc);
  if (epochs_run % 10 != 0) best = evaluate();
  fs::remove_all(root);
  return {best.f1 >= 0.9, "micro note F1 " + fmt("%.3f", best.f1) + " (" + std::to_string(best.n_match) + "/" +
                              std::to_string(best.n_ref) + " ref, " + std::to_string(best.n_est) + " est) after " +
                              std::to_string(epochs_run) + " epochs"};
}

// --- 3 -----------------------------------------------------------------------------

Outcome gradient_checks() {
  double worst = 0.0;
  std::string worst_name;
  int n = 0;
  for (const auto& check : nn::standard_gradient_checks())
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const double err = check.run(seed);
      ++n;
      if (!std::isfinite(err) || err > worst) {
        worst = err;
        worst_name = check.name;
      }
    }
  return {worst <= 1e-4, std::to_string(n) + " checks, worst " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

// --- 4 -----------------------------------------------------------------------------

AudioClip noise(std::mt19937& rng, double seconds) {
  std::normal_distribution<double> g(0.0, 0.2);
  AudioClip c;
  c.samples.resize(static_cast<Eigen::Index>(seconds * c.sample_rate));
  for (Eigen::Index i = 0; i < c.samples.size(); ++i) c.samples[i] = g(rng);
  return c;
}

Outcome resolution_contracts() {
  std::mt19937 rng(4);
  std::ostringstream bad;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) bad << what << "; ";
  };
  const PipelineConfig config = PipelineConfig::defaults();
  for (int trial = 0; trial < 3; ++trial) {
    const AudioClip clip = noise(rng, 1.0 + trial * 0.7);

    const SpectralFeature stack = feature_stack(clip, config.music_features);
    expect(stack.grid.hop_s == 0.02, "music feature hop");
    const ActivationTensor music = forward(build_model(config.models.at(Task::Music)), stack);
    expect(music.bins() == 352 && music.channels() == 3 && music.frames() == stack.frames(),
           "music shape " + music.values.shape_string());
    expect(music.grid.hop_s == 0.02, "music output hop");
    const ActivationTensor multi = forward(build_model(config.models.at(Task::MultiInstrument)), stack);
    expect(multi.bins() == 352 && multi.channels() == 11 && multi.frames() == stack.frames(),
           "multi shape " + multi.values.shape_string());

    const ChromaFeature chroma = nnls_chroma(clip, config.chord_features);
    expect(chroma.grid.hop_s == 0.23, "chord hop");
    const ActivationTensor chord = forward(build_model(config.models.at(Task::Chord)), chroma);
    expect(chord.bins() == 25 && chord.channels() == 1 && chord.frames() == chroma.grid.n_frames &&
               chord.grid.hop_s == 0.23,
           "chord shape " + chord.values.shape_string());
    for (int f = 0; f < chord.frames(); ++f)
      expect(std::abs(chord.values.channel(0).row(f).sum() - 1.0) < 1e-9 && chord.values.channel(0).row(f).minCoeff() >= 0.0,
             "chord row " + std::to_string(f) + " not a distribution");

    const BeatPreprocessResult drum_in = drum_features(clip, config.drum_features);
    expect(drum_in.feature.grid.hop_s == 0.01, "drum hop");
    const ActivationTensor drum = forward(build_model(config.models.at(Task::Drum)), drum_in.feature);
    expect(drum.frames() == drum_in.feature.frames() && drum.grid.hop_s == 0.01, "drum output grid");

    const MidiDocument doc = test::random_document(rng, 20);
    const SymbolicFeature sym = midi_symbolic_features(doc);
    expect(sym.grid.hop_s == 0.01, "beat hop");
    const ActivationTensor beat = forward(build_model(config.models.at(Task::Beat)), sym);
    expect(beat.frames() == sym.grid.n_frames && beat.bins() == 2 && beat.grid.hop_s == 0.01, "beat shape " + beat.values.shape_string());
  }
  const std::string msg = bad.str();
  return {msg.empty(), msg.empty() ? "music 352x3 @20ms, multi 11ch, chord 25-way @230ms, drum/beat @10ms" : msg};
}

// --- 5 -----------------------------------------------------------------------------

int argmax(const Eigen::RowVectorXd& r, int from, int len) {
  Eigen::Index i;
  r.segment(from, len).maxCoeff(&i);
  return from + static_cast<int>(i);
}

Outcome feature_oracles() {
  std::ostringstream detail;
  bool ok = true;
  double slowest = 0.0;

  // 200 Hz at 8 kHz repeats every 40 samples.
  auto t0 = Clock::now();
  const AudioClip periodic = test::harmonic(200.0, 0.5, 12, 8000.0, 0.8);
  const SpectralFeature spec = compute_spectrogram(periodic, 0.128, 0.016);
  const SpectralFeature gc = generalized_cepstrum(spec, 0.6);
  const Eigen::RowVectorXd gc_row = gc.data.channel(0).row(gc.frames() / 2);
  const int period = argmax(gc_row, 16, 60);
  const bool gc_ok = std::abs(period - 40) <= 1;
  slowest = std::max(slowest, seconds_since(t0));
  detail << "GC peak " << period << " (period 40); ";

  t0 = Clock::now();
  const SpectralFeature g2 = gcos(gc, 0.6);
  const Eigen::RowVectorXd g2_row = g2.data.channel(0).row(g2.frames() / 2);
  const double bin_hz = 8000.0 / spec.fft_size;
  const int f0_bin = static_cast<int>(std::lround(200.0 / bin_hz));
  const int g_peak = argmax(g2_row, 4, f0_bin + 3 - 4);
  const bool gcos_ok = std::abs(g_peak - f0_bin) <= 1 && g2_row[g_peak] >= 0.5 * g2_row.maxCoeff();
  slowest = std::max(slowest, seconds_since(t0));
  detail << "GCoS peak bin " << g_peak << " (f0 bin " << f0_bin << "); ";

  t0 = Clock::now();
  const AudioClip triad = test::mix({test::sine(261.63, 1.0), test::sine(329.63, 1.0), test::sine(392.00, 1.0)});
  const ChromaFeature chroma = nnls_chroma(triad);
  const Eigen::MatrixXd treble = chroma.data.middleRows(1, chroma.grid.n_frames - 2).rightCols(12);
  const double ceg = treble.col(0).sum() + treble.col(4).sum() + treble.col(7).sum();
  const double share = treble.sum() > 0 ? ceg / treble.sum() : 0.0;
  const bool nnls_ok = share >= 0.8;
  slowest = std::max(slowest, seconds_since(t0));
  detail << "C-major treble share " << fmt("%.3f", share) << "; slowest " << fmt("%.2f s", slowest);

  ok = gc_ok && gcos_ok && nnls_ok && slowest < 5.0;
  return {ok, detail.str()};
}

// --- 6 -----------------------------------------------------------------------------

Outcome beat_pipeline() {
  const double period = 0.5;  // 120 BPM
  MidiDocument doc;
  BeatAnnotation truth;
  NoteStream clicks{"piano", {}};
  for (int i = 0; i < 16; ++i) {
    const double t = 0.5 + i * period;
    const bool down = i % 4 == 0;
    truth.beats_s.push_back(t);
    if (down) truth.downbeats_s.push_back(t);
    NoteEvent n;
    n.onset_s = t;
    n.offset_s = t + 0.1;
    n.pitch = down ? 84 : 72;
    n.velocity = down ? 110 : 70;
    clicks.notes.push_back(n);
  }
  doc.streams.push_back(clicks);

  const PipelineConfig config = PipelineConfig::defaults();
  const SymbolicFeature sym = midi_symbolic_features(doc);
  const std::vector<TrainExample> data{{sym, render_beat_targets(truth, sym.grid)}};
  Model model = build_model(config.models.at(Task::Beat));
  TrainConfig tc = config.training.at(Task::Beat);
  tc.epochs = 400;
  BeatReport report;
  int epochs_run = 0;
  tc.on_epoch = [&](int epoch, double) {
    epochs_run = epoch + 1;
    if (epochs_run % 10 != 0) return true;
    report = beat_f_measure(truth, decode_beats(forward(model, sym), config.decode));
    return report.beats.f1 < 1.0 || report.downbeats.f1 < 1.0;
  };
  train(model, data, tc);
  report = beat_f_measure(truth, decode_beats(forward(model, sym), config.decode));
  return {report.beats.f1 == 1.0 && report.downbeats.f1 == 1.0,
          "beat F " + fmt("%.3f", report.beats.f1) + ", downbeat F " + fmt("%.3f", report.downbeats.f1) + " after " +
              std::to_string(epochs_run) + " epochs"};
}

// --- 7 -----------------------------------------------------------------------------

int exhaustive_matches(const std::vector<NoteEvent>& ref, const std::vector<NoteEvent>& est, std::size_t i,
                       std::vector<bool>& used, double tol) {
  if (i == ref.size()) return 0;
  int best = exhaustive_matches(ref, est, i + 1, used, tol);
  for (std::size_t j = 0; j < est.size(); ++j)
    if (!used[j] && est[j].pitch == ref[i].pitch && std::abs(est[j].onset_s - ref[i].onset_s) <= tol) {
      used[j] = true;
      best = std::max(best, 1 + exhaustive_matches(ref, est, i + 1, used, tol));
      used[j] = false;
    }
  return best;
}

std::vector<NoteEvent> small_list(std::mt19937& rng, int max_notes) {
  std::uniform_int_distribution<int> count(0, max_notes), pitch(60, 61);
  std::uniform_real_distribution<double> onset(0.0, 0.3);
  std::vector<NoteEvent> v(count(rng));
  for (auto& n : v) {
    n.pitch = pitch(rng);
    n.onset_s = onset(rng);
    n.offset_s = n.onset_s + 0.2;
  }
  return v;
}

Outcome metric_identities() {
  std::mt19937 rng(7);
  std::ostringstream bad;

  const MidiDocument doc = test::random_document(rng, 25);
  const auto notes = doc.all_notes();
  if (note_f1(notes, notes).f1 != 1.0) bad << "note_f1 identity; ";
  TimeGrid grid{kMusicHop, grid.frame_end(doc.end_time()) + 1};
  const ActivationTensor roll = render_piano_targets(notes, grid);
  if (frame_f1(roll, roll).f1 != 1.0) bad << "frame_f1 identity; ";
  const std::vector<ChordSegment> chords{{0.0, 1.0, 0}, {1.0, 2.5, 21}, {2.5, 3.0, kNoChord}};
  if (chord_accuracy(chords, chords) != 1.0) bad << "chord_accuracy identity; ";
  BeatAnnotation beats{{0.5, 1.0, 1.5, 2.0}, {0.5, 2.0}};
  const BeatReport br = beat_f_measure(beats, beats);
  if (br.beats.f1 != 1.0 || br.downbeats.f1 != 1.0) bad << "beat_f_measure identity; ";

  for (int i = 0; i < 100; ++i) {
    const auto a = test::random_document(rng, 12).all_notes();
    auto b = a;
    std::uniform_real_distribution<double> jitter(-0.08, 0.08);
    for (auto& n : b) n.onset_s = std::max(0.0, n.onset_s + jitter(rng));
    if (!b.empty() && i % 3 == 0) b.pop_back();
    if (note_f1(a, b).f1 != note_f1(b, a).f1) bad << "note swap " << i << "; ";
    const ActivationTensor ra = render_piano_targets(a, grid), rb = render_piano_targets(b, grid);
    if (frame_f1(ra, rb).f1 != frame_f1(rb, ra).f1) bad << "frame swap " << i << "; ";
  }

  int trials = 0;
  for (; trials < 500; ++trials) {
    const auto ref = small_list(rng, 8), est = small_list(rng, 8);
    std::vector<bool> used(est.size(), false);
    if (note_f1(ref, est).n_match != exhaustive_matches(ref, est, 0, used, 0.05)) {
      bad << "oracle mismatch at trial " << trials << "; ";
      break;
    }
  }
  const std::string msg = bad.str();
  return {msg.empty(), msg.empty() ? "identities, 100 swap cases, " + std::to_string(trials) + " oracle trials" : msg};
}

// --- 8 -----------------------------------------------------------------------------

ModelInput random_input(Task task, std::mt19937& rng) {
  const PipelineConfig config = PipelineConfig::defaults();
  const AudioClip clip = noise(rng, 1.2);
  switch (task) {
    case Task::Chord: return nnls_chroma(clip, config.chord_features);
    case Task::Drum: return drum_features(clip, config.drum_features).feature;
    case Task::Beat: return midi_symbolic_features(test::random_document(rng, 10));
    default: return feature_stack(clip, config.music_features);
  }
}

Outcome cli_end_to_end() {
  const fs::path source = AMTKIT_SOURCE_DIR;
  const fs::path fixtures = source / "data" / "fixtures", checkpoints = source / "data" / "checkpoints";
  const fs::path out = scratch("cli");
  std::ostringstream bad;

  struct Case {
    const char* task;
    const char* input;
    const char* output;
  };
  const Case cases[] = {{"music", "piano.wav", "piano.mid"},
                        {"drum", "drums.wav", "drums.mid"},
                        {"vocal", "vocal.wav", "vocal.mid"},
                        {"chord", "chords.wav", "chords.chords.txt"},
                        {"beat", "click.mid", "click.beats.txt"}};
  for (const Case& c : cases) {
    const fs::path output = out / c.output;
    const std::string cmd = std::string("\"") + AMTKIT_CLI_PATH + "\" " + c.task + " transcribe --model-path \"" +
                            checkpoints.string() + "\" --output \"" + output.string() + "\" \"" +
                            (fixtures / c.input).string() + "\" > /dev/null 2> \"" + (out / "stderr.txt").string() +
                            "\"";
    const int status = std::system(cmd.c_str());
    if (status != 0) {
      bad << c.task << " exit " << status << "; ";
      continue;
    }
    try {
      const std::string name = c.task;
      if (name == "chord") {
        auto segs = parse_chord_segments(read_text(output));
        if (segs.empty()) bad << "chord: no segments; ";
      } else if (name == "beat") {
        if (!parse_beats(read_text(output)).is_valid()) bad << "beat: invalid annotation; ";
      } else {
        (void)read_midi_file(output.string());
      }
    } catch (const std::exception& e) {
      bad << c.task << " output unparseable: " << e.what() << "; ";
    }
  }

  std::mt19937 rng(8);
  for (Task task : {Task::Music, Task::MultiInstrument, Task::Drum, Task::VocalPitch, Task::VocalSeg, Task::Chord,
                    Task::Beat}) {
    ModelConfig mc = ModelConfig::defaults(task);
    mc.seed = 31;
    const Model model = build_model(mc);
    const Model loaded = load_checkpoint(save_checkpoint(model));
    const ModelInput input = random_input(task, rng);
    if (!(forward(model, input).values == forward(loaded, input).values)) bad << task_name(task) << " checkpoint forward differs; ";
  }
  fs::remove_all(out);
  const std::string msg = bad.str();
  return {msg.empty(), msg.empty() ? "5 transcribe commands exit 0 with parseable output; 7 checkpoints bit-exact" : msg};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_s;
  };
  const Criterion criteria[] = {
      {"round-trip transcription oracle", round_trip_oracle, 60.0},
      {"overfit closure", overfit_closure, 600.0},
      {"gradient correctness", gradient_checks, 0.0},
      {"resolution contracts", resolution_contracts, 0.0},
      {"feature oracles", feature_oracles, 0.0},
      {"beat pipeline", beat_pipeline, 0.0},
      {"metric identities", metric_identities, 0.0},
      {"CLI end-to-end", cli_end_to_end, 0.0},
  };
  int failures = 0;
  int index = 0;
  for (const Criterion& c : criteria) {
    ++index;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f s", c.budget_s) + " budget";
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << index << " " << c.name << ": " << o.detail << " ("
              << fmt("%.1f s", secs) << ")" << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() / ("amtkit_acceptance_" + std::to_string(::getpid())));
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
