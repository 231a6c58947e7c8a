#include "amt/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "amt/audio.hpp"
#include "amt/evaluation.hpp"
#include "amt/nn/layers.hpp"
#include "amt/synth.hpp"
#include "amt/targets.hpp"
#include "amt/tensor_io.hpp"

namespace amt {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string cli_task_name(CliTask task) {
  switch (task) {
    case CliTask::Music: return "music";
    case CliTask::Drum: return "drum";
    case CliTask::Vocal: return "vocal";
    case CliTask::Chord: return "chord";
    case CliTask::Beat: return "beat";
  }
  return "?";
}

CliTask parse_cli_task(const std::string& name) {
  for (CliTask t : {CliTask::Music, CliTask::Drum, CliTask::Vocal, CliTask::Chord, CliTask::Beat})
    if (cli_task_name(t) == name) return t;
  throw Error(ErrorCode::Input, "unknown task '" + name + "' (expected music, drum, vocal, chord or beat)");
}

std::vector<Task> model_tasks(CliTask task) {
  switch (task) {
    case CliTask::Music: return {Task::Music};
    case CliTask::Drum: return {Task::Drum};
    case CliTask::Vocal: return {Task::VocalPitch, Task::VocalSeg};
    case CliTask::Chord: return {Task::Chord};
    case CliTask::Beat: return {Task::Beat};
  }
  return {};
}

namespace {

const std::vector<Task>& all_tasks() {
  static const std::vector<Task> tasks{Task::Music, Task::MultiInstrument, Task::Drum, Task::VocalPitch,
                                       Task::VocalSeg,  Task::Chord,           Task::Beat};
  return tasks;
}

// ---------------------------------------------------------------------------
// Strict JSON field binding

class Fields {
 public:
  explicit Fields(std::string scope) : scope_(std::move(scope)) {}

  template <typename T>
  Fields& add(const std::string& key, T& target) {
    setters_[key] = [this, key, &target](const json& v) {
      try {
        target = v.get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config: bad value for " + scope_ + key + ": " + v.dump());
      }
    };
    getters_.emplace_back(key, [&target] { return json(target); });
    return *this;
  }

  void read(const json& obj) const {
    if (!obj.is_object()) throw ConfigError("config: " + scope_ + " must be an object");
    for (const auto& [key, value] : obj.items()) {
      auto it = setters_.find(key);
      if (it == setters_.end()) throw ConfigError("config: unknown key '" + scope_ + key + "'");
      it->second(value);
    }
  }

  json write() const {
    json out = json::object();
    for (const auto& [key, get] : getters_) out[key] = get();
    return out;
  }

 private:
  std::string scope_;
  std::map<std::string, std::function<void(const json&)>> setters_;
  std::vector<std::pair<std::string, std::function<json()>>> getters_;
};

Fields music_fields(FeatureStackParams& p, int& bps) {
  Fields f("features.music.");
  f.add("window_s", p.window_s).add("hop_s", p.hop_s).add("gamma_spectrum", p.gamma_spectrum);
  f.add("gamma_cepstrum", p.gamma_cepstrum).add("lifter_s", p.lifter_s).add("cutoff_hz", p.cutoff_hz);
  f.add("bins_per_semitone", bps);
  return f;
}

Fields drum_fields(DrumFeatureParams& p, int& bps) {
  Fields f("features.drum.");
  f.add("window_s", p.window_s).add("hop_s", p.hop_s).add("gamma_spectrum", p.gamma_spectrum);
  f.add("bins_per_semitone", bps);
  return f;
}

Fields chord_fields(ChromaParams& p) {
  Fields f("features.chord.");
  f.add("hop_s", p.hop_s).add("window_s", p.window_s).add("bins_per_semitone", p.bins_per_semitone);
  f.add("partials", p.partials).add("partial_decay", p.partial_decay).add("max_iterations", p.max_iterations);
  f.add("tolerance", p.tolerance).add("treble_split", p.treble_split);
  return f;
}

Fields decode_fields(DecodeParams& p) {
  Fields f("decode.");
  f.add("act_threshold", p.act_threshold).add("onset_threshold", p.onset_threshold);
  f.add("min_note_s", p.min_note_s).add("merge_gap_s", p.merge_gap_s);
  f.add("drum_separation_s", p.drum_separation_s).add("beat_separation_s", p.beat_separation_s);
  return f;
}

Fields train_fields(TrainConfig& t, std::string& optimizer, const std::string& task) {
  Fields f("training." + task + ".");
  f.add("epochs", t.epochs).add("batch_size", t.batch_size).add("learning_rate", t.learning_rate);
  f.add("optimizer", optimizer).add("channel_weights", t.channel_weights);
  f.add("segmentation_weight", t.segmentation_weight).add("positive_weight", t.positive_weight);
  f.add("seed", t.seed);
  return f;
}

Optimizer parse_optimizer(const std::string& name, const std::string& task) {
  if (name == "sgd") return Optimizer::Sgd;
  if (name == "adam") return Optimizer::Adam;
  throw ConfigError("config: training." + task + ".optimizer must be \"sgd\" or \"adam\", got \"" + name + "\"");
}

json model_to_json(const ModelConfig& c) {
  json out = json::object();
  std::istringstream is(c.to_text());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "task") continue;
    if (key == "attention") out[key] = value == "1";
    else if (key == "output_bias") out[key] = std::stod(value);
    else if (key == "seed") out[key] = std::stoull(value);
    else out[key] = std::stoi(value);
  }
  return out;
}

ModelConfig model_from_json(Task task, const ModelConfig& base, const json& obj) {
  if (!obj.is_object()) throw ConfigError("config: models." + task_name(task) + " must be an object");
  std::string text = base.to_text();
  for (const auto& [key, value] : obj.items()) {
    if (key == "task") throw ConfigError("config: models." + task_name(task) + ".task cannot be overridden");
    std::string v;
    if (value.is_boolean()) v = value.get<bool>() ? "1" : "0";
    else if (value.is_number()) v = value.dump();
    else throw ConfigError("config: bad value for models." + task_name(task) + "." + key + ": " + value.dump());
    text += key + "=" + v + "\n";
  }
  try {
    return ModelConfig::from_text(text);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (in models." + task_name(task) + ")");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// PipelineConfig

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  for (Task t : all_tasks()) {
    c.models[t] = ModelConfig::defaults(t);
    TrainConfig tc;
    tc.optimizer = Optimizer::Adam;
    tc.learning_rate = 0.003;
    tc.epochs = 100;
    c.training[t] = tc;
  }
  c.training[Task::Beat].learning_rate = 0.01;
  return c;
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  PipelineConfig c = defaults();
  for (const auto& [key, value] : root.items()) {
    if (key == "checkpoint_dir" || key == "output_dir") {
      if (!value.is_string()) throw ConfigError("config: " + key + " must be a string");
      (key == "checkpoint_dir" ? c.checkpoint_dir : c.output_dir) = value.get<std::string>();
    } else if (key == "workers") {
      if (!value.is_number_integer()) throw ConfigError("config: workers must be an integer");
      c.workers = value.get<int>();
    } else if (key == "features") {
      if (!value.is_object()) throw ConfigError("config: features must be an object");
      for (const auto& [name, sub] : value.items()) {
        if (name == "music") {
          int bps = c.music_features.axis.bins_per_semitone;
          music_fields(c.music_features, bps).read(sub);
          c.music_features.axis = PitchAxis::piano(bps);
        } else if (name == "drum") {
          int bps = c.drum_features.axis.bins_per_semitone;
          drum_fields(c.drum_features, bps).read(sub);
          c.drum_features.axis = PitchAxis::piano(bps);
        } else if (name == "chord") {
          chord_fields(c.chord_features).read(sub);
        } else {
          throw ConfigError("config: unknown key 'features." + name + "'");
        }
      }
    } else if (key == "decode") {
      decode_fields(c.decode).read(value);
    } else if (key == "models" || key == "training") {
      if (!value.is_object()) throw ConfigError("config: " + key + " must be an object");
      for (const auto& [name, sub] : value.items()) {
        Task t;
        try {
          t = parse_task(name);
        } catch (const ConfigError&) {
          throw ConfigError("config: unknown key '" + key + "." + name + "'");
        }
        if (key == "models") {
          c.models[t] = model_from_json(t, c.models[t], sub);
        } else {
          std::string opt = c.training[t].optimizer == Optimizer::Adam ? "adam" : "sgd";
          train_fields(c.training[t], opt, name).read(sub);
          c.training[t].optimizer = parse_optimizer(opt, name);
        }
      }
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  auto bytes = read_file_bytes(path, ErrorCode::Config);
  try {
    return from_json(std::string(bytes.begin(), bytes.end()));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string PipelineConfig::to_json() const {
  PipelineConfig copy = *this;  // Fields binds mutable references
  json root = json::object();
  root["checkpoint_dir"] = checkpoint_dir;
  root["output_dir"] = output_dir;
  root["workers"] = workers;
  int music_bps = copy.music_features.axis.bins_per_semitone, drum_bps = copy.drum_features.axis.bins_per_semitone;
  root["features"]["music"] = music_fields(copy.music_features, music_bps).write();
  root["features"]["drum"] = drum_fields(copy.drum_features, drum_bps).write();
  root["features"]["chord"] = chord_fields(copy.chord_features).write();
  root["decode"] = decode_fields(copy.decode).write();
  for (Task t : all_tasks()) {
    root["models"][task_name(t)] = model_to_json(models.at(t));
    std::string opt = training.at(t).optimizer == Optimizer::Adam ? "adam" : "sgd";
    root["training"][task_name(t)] = train_fields(copy.training[t], opt, task_name(t)).write();
  }
  return root.dump(2) + "\n";
}

void PipelineConfig::validate() const {
  decode.validate();
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (!(music_features.hop_s > 0.0) || !(drum_features.hop_s > 0.0) || !(chord_features.hop_s > 0.0))
    throw ConfigError("config: feature hops must be positive");
  for (Task t : all_tasks()) {
    if (!models.count(t) || !training.count(t)) throw ConfigError("config: missing settings for " + task_name(t));
    const ModelConfig& m = models.at(t);
    if (m.task != t) throw ConfigError("config: models." + task_name(t) + " has task " + task_name(m.task));
    m.validate();
    training.at(t).validate();
    // Shapes the features will produce must match what the models expect.
    const auto expect = [&](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("config: models." + task_name(t) + " " + what);
    };
    switch (t) {
      case Task::Music:
      case Task::MultiInstrument:
      case Task::VocalPitch:
      case Task::VocalSeg:
        expect(m.pitch_bins == music_features.axis.n_bins(), "pitch_bins does not match features.music");
        expect(std::abs(m.hop_s() - music_features.hop_s) < 1e-9, "hop does not match features.music.hop_s");
        break;
      case Task::Drum:
        expect(m.pitch_bins == drum_features.axis.n_bins(), "pitch_bins does not match features.drum");
        expect(std::abs(m.hop_s() - drum_features.hop_s) < 1e-9, "hop does not match features.drum.hop_s");
        break;
      case Task::Chord:
        expect(std::abs(m.hop_s() - chord_features.hop_s) < 1e-9, "hop does not match features.chord.hop_s");
        break;
      case Task::Beat: break;
    }
  }
}

std::string PipelineConfig::resolved_checkpoint_dir() const {
  if (!checkpoint_dir.empty()) return checkpoint_dir;
  if (const char* env = std::getenv(kCheckpointDirEnv); env && *env) return env;
  return "data/checkpoints";
}

std::string checkpoint_path(Task task, const PipelineConfig& config, const std::string& model_path) {
  const std::string file = task_name(task) + ".ckpt";
  if (model_path.empty()) return (fs::path(config.resolved_checkpoint_dir()) / file).string();
  if (fs::is_directory(model_path)) return (fs::path(model_path) / file).string();
  return model_path;
}

// ---------------------------------------------------------------------------
// Sidecars

namespace {

std::string fmt_time(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

std::vector<std::vector<std::string>> split_lines(const std::string& text, std::size_t fields, const char* kind) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> row;
    for (std::string tok; ls >> tok;) row.push_back(tok);
    if (row.size() != fields)
      throw Error(ErrorCode::Input, std::string(kind) + " file line " + std::to_string(lineno) + ": expected " +
                                        std::to_string(fields) + " fields");
    rows.push_back(std::move(row));
  }
  return rows;
}

double parse_time(const std::string& s, const char* kind) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::Input, std::string(kind) + " file: bad time '" + s + "'");
  }
}

}  // namespace

std::string format_chord_segments(const std::vector<ChordSegment>& segments) {
  std::string out;
  for (const auto& s : segments) out += fmt_time(s.start_s) + " " + fmt_time(s.end_s) + " " + chord_label(s.label) + "\n";
  return out;
}

std::vector<ChordSegment> parse_chord_segments(const std::string& text) {
  std::vector<ChordSegment> out;
  for (const auto& row : split_lines(text, 3, "chord")) {
    ChordSegment s{parse_time(row[0], "chord"), parse_time(row[1], "chord"), chord_index(row[2])};
    if (s.label < 0) throw Error(ErrorCode::Input, "chord file: unknown label '" + row[2] + "'");
    if (!(s.end_s > s.start_s)) throw Error(ErrorCode::Input, "chord file: empty segment at " + row[0]);
    out.push_back(s);
  }
  return out;
}

std::string format_beats(const BeatAnnotation& beats) {
  std::string out;
  std::size_t d = 0;
  for (double b : beats.beats_s) {
    while (d < beats.downbeats_s.size() && beats.downbeats_s[d] < b - 1e-6) ++d;
    const bool down = d < beats.downbeats_s.size() && std::abs(beats.downbeats_s[d] - b) <= 1e-6;
    out += fmt_time(b) + (down ? " 1\n" : " 0\n");
  }
  return out;
}

BeatAnnotation parse_beats(const std::string& text) {
  BeatAnnotation out;
  for (const auto& row : split_lines(text, 2, "beat")) {
    const double t = parse_time(row[0], "beat");
    if (row[1] != "0" && row[1] != "1") throw Error(ErrorCode::Input, "beat file: is_downbeat must be 0 or 1");
    out.beats_s.push_back(t);
    if (row[1] == "1") out.downbeats_s.push_back(t);
  }
  if (!out.is_valid()) throw Error(ErrorCode::Input, "beat file: times must be strictly increasing");
  return out;
}

// ---------------------------------------------------------------------------
// Features

namespace {

/// Prefixes an error with the file it came from, optionally recoding it.
template <typename F>
auto with_file(const std::string& path, std::optional<ErrorCode> code, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    const std::string msg = e.what();
    throw Error(code.value_or(e.code()), msg.find(path) != std::string::npos ? msg : path + ": " + msg);
  }
}

ModelInput compute_from_clip(Task task, const AudioClip& clip, const PipelineConfig& config) {
  switch (task) {
    case Task::Drum: return drum_features(clip, config.drum_features).feature;
    case Task::Chord: return nnls_chroma(clip, config.chord_features);
    case Task::Beat: throw Error(ErrorCode::Internal, "beat input is MIDI, not audio");
    default: return feature_stack(clip, config.music_features);
  }
}

}  // namespace

ModelInput compute_input(Task task, const std::string& input_path, const PipelineConfig& config) {
  if (!fs::exists(input_path)) throw Error(ErrorCode::Input, input_path + ": no such file");
  if (task == Task::Beat)
    return with_file(input_path, std::nullopt, [&] { return ModelInput{midi_symbolic_features(read_midi_file(input_path))}; });
  AudioClip clip = with_file(input_path, std::nullopt, [&] { return read_wav(input_path); });
  return compute_from_clip(task, clip, config);
}

ActivationTensor input_to_tensor(const ModelInput& input) {
  if (const auto* s = std::get_if<SpectralFeature>(&input)) return {s->data, s->grid};
  if (const auto* c = std::get_if<ChromaFeature>(&input)) {
    Tensor3d values(static_cast<int>(c->data.rows()), static_cast<int>(c->data.cols()), 0);
    values.add_channel(c->data);
    return {std::move(values), c->grid};
  }
  const auto& sym = std::get<SymbolicFeature>(input);
  Eigen::MatrixXd stacked = sym.stacked();
  Tensor3d values(static_cast<int>(stacked.rows()), static_cast<int>(stacked.cols()), 0);
  values.add_channel(std::move(stacked));
  return {std::move(values), sym.grid};
}

ModelInput tensor_to_input(Task task, const ActivationTensor& t, const PipelineConfig& config) {
  if (task == Task::Chord) {
    if (t.channels() != 1) throw Error(ErrorCode::Data, "chroma tensor must have 1 channel");
    ChromaFeature c;
    c.data = t.values.channel(0);
    c.grid = t.grid;
    c.converged.assign(t.frames(), true);
    return c;
  }
  if (task == Task::Beat) {
    if (t.channels() != 1 || t.bins() != 130) throw Error(ErrorCode::Data, "symbolic tensor must be frames x 130 x 1");
    SymbolicFeature s;
    const auto& m = t.values.channel(0);
    s.pianoroll = m.leftCols(128);
    s.spectral_flux = m.col(128);
    s.ioi = m.col(129);
    s.grid = t.grid;
    return s;
  }
  SpectralFeature f;
  f.data = t.values;
  f.grid = t.grid;
  f.pitch_axis = task == Task::Drum ? config.drum_features.axis : config.music_features.axis;
  f.channel_names = task == Task::Drum ? std::vector<std::string>{"spectrogram", "beat_phase"}
                                       : std::vector<std::string>{"spectrogram", "GC", "GCoS"};
  return f;
}

// ---------------------------------------------------------------------------
// Transcription

std::string default_output_name(CliTask task, const std::string& input_path) {
  const std::string stem = fs::path(input_path).stem().string();
  switch (task) {
    case CliTask::Chord: return stem + ".chords.txt";
    case CliTask::Beat: return stem + ".beats.txt";
    default: return stem + ".mid";
  }
}

namespace {

Model load_for(Task task, const PipelineConfig& config, const std::string& model_path) {
  return load_checkpoint_file(checkpoint_path(task, config, model_path));
}

std::string resolve_output(CliTask task, const std::string& input_path, const PipelineConfig& config,
                           const std::string& output) {
  fs::path out = output.empty() ? fs::path(config.output_dir) : fs::path(output);
  if (output.empty() || fs::is_directory(out) || output.back() == '/') {
    fs::create_directories(out);
    return (out / default_output_name(task, input_path)).string();
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  return out.string();
}

MidiDocument drums_to_document(const std::vector<DrumEvent>& events) {
  std::vector<NoteEvent> notes;
  for (const auto& e : events) {
    NoteEvent n;
    n.onset_s = e.onset_s;
    n.offset_s = e.onset_s + 0.1;
    n.pitch = drum_class_to_key(e.drum_class);
    n.instrument = "drums";
    n.confidence = e.confidence;
    notes.push_back(n);
  }
  return make_document(std::move(notes), "drums");
}

}  // namespace

std::string transcribe(CliTask task, const std::string& input_path, const PipelineConfig& config,
                       const TranscribeOptions& options) {
  DecodeParams dp = config.decode;
  if (options.threshold) {
    dp.act_threshold = dp.onset_threshold = *options.threshold;
    dp.validate();
  }
  std::string out_bytes;
  std::vector<std::uint8_t> midi_bytes;
  if (!fs::exists(input_path)) throw Error(ErrorCode::Input, input_path + ": no such file");

  switch (task) {
    case CliTask::Music: {
      Model model = load_for(Task::Music, config, options.model_path);
      if (model.config.task != Task::Music && model.config.task != Task::MultiInstrument)
        throw Error(ErrorCode::Model, "music needs a music or multi_instrument checkpoint, got " +
                                          task_name(model.config.task));
      ActivationTensor act = forward(model, compute_input(model.config.task, input_path, config));
      const PitchAxis& axis = config.music_features.axis;
      MidiDocument doc;
      if (model.config.task == Task::Music) doc = make_document(decode_piano_notes(act, dp, axis), "piano");
      else doc.streams = decode_multi_instrument(act, dp, axis);
      midi_bytes = write_midi(doc);
      break;
    }
    case CliTask::Drum: {
      Model model = load_for(Task::Drum, config, options.model_path);
      ActivationTensor act = forward(model, compute_input(Task::Drum, input_path, config));
      midi_bytes = write_midi(drums_to_document(decode_drums(act, dp)));
      break;
    }
    case CliTask::Vocal: {
      Model pitch = load_for(Task::VocalPitch, config, options.model_path);
      Model seg = load_for(Task::VocalSeg, config, options.model_path);
      if (pitch.config.task != Task::VocalPitch || seg.config.task != Task::VocalSeg)
        throw Error(ErrorCode::Model, "vocal needs vocal_pitch.ckpt and vocal_seg.ckpt in the model directory");
      ModelInput input = compute_input(Task::VocalPitch, input_path, config);
      auto notes = decode_vocal(forward(pitch, input), forward(seg, input), dp, config.music_features.axis);
      midi_bytes = write_midi(make_document(std::move(notes), "voice"));
      break;
    }
    case CliTask::Chord: {
      Model model = load_for(Task::Chord, config, options.model_path);
      out_bytes = format_chord_segments(decode_chords(forward(model, compute_input(Task::Chord, input_path, config))));
      break;
    }
    case CliTask::Beat: {
      Model model = load_for(Task::Beat, config, options.model_path);
      out_bytes = format_beats(decode_beats(forward(model, compute_input(Task::Beat, input_path, config)), dp));
      break;
    }
  }
  const std::string out = resolve_output(task, input_path, config, options.output);
  if (!midi_bytes.empty()) write_file_atomic(out, midi_bytes);
  else write_file_atomic(out, out_bytes);
  return out;
}

std::vector<std::string> transcribe_batch(CliTask task, const std::vector<std::string>& inputs,
                                          const PipelineConfig& config, const TranscribeOptions& options,
                                          int workers) {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  TranscribeOptions per_file = options;
  if (inputs.size() > 1) {
    // Several inputs always go to a directory.
    fs::path dir = options.output.empty() ? fs::path(config.output_dir) : fs::path(options.output);
    if (fs::exists(dir) && !fs::is_directory(dir))
      throw Error(ErrorCode::Input, dir.string() + ": output must be a directory for several inputs");
    fs::create_directories(dir);
    per_file.output = dir.string() + "/";
  }
  std::vector<std::string> outputs(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < inputs.size();) {
      try {
        outputs[i] = transcribe(task, inputs[i], config, per_file);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::min<int>(workers, static_cast<int>(inputs.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return outputs;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::string clip_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

std::string clip_extension(Task task) { return task == Task::Beat ? ".mid" : ".wav"; }

}  // namespace

std::vector<TrainExample> load_training_set(Task task, const std::string& dataset_dir, const PipelineConfig& config) {
  const fs::path root(dataset_dir);
  if (!fs::is_directory(root)) throw Error(ErrorCode::Data, dataset_dir + ": dataset directory not found");
  const std::string suffix = "." + task_name(task) + ".tensor";
  std::vector<std::string> ids;
  if (fs::is_directory(root / "targets"))
    for (const auto& entry : fs::directory_iterator(root / "targets")) {
      const std::string name = entry.path().filename().string();
      if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
        ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  if (ids.empty())
    throw Error(ErrorCode::Data, dataset_dir + ": dataset is empty (no targets/*" + suffix + " files)");
  std::sort(ids.begin(), ids.end());

  std::vector<TrainExample> out;
  for (const auto& id : ids) {
    const fs::path feature = root / "features" / (id + suffix);
    ModelInput input;
    if (fs::exists(feature)) {
      input = tensor_to_input(task, read_tensor_file(feature.string()), config);
    } else {
      const fs::path clip = root / "clips" / (id + clip_extension(task));
      if (!fs::exists(clip)) throw Error(ErrorCode::Data, clip.string() + ": missing clip for target " + id);
      input = with_file(clip.string(), ErrorCode::Data, [&] { return compute_input(task, clip.string(), config); });
    }
    ActivationTensor target = read_tensor_file((root / "targets" / (id + suffix)).string());
    if (target.frames() != input_to_tensor(input).frames())
      throw Error(ErrorCode::Data, (root / "targets" / (id + suffix)).string() + ": target has " +
                                       std::to_string(target.frames()) + " frames, features have " +
                                       std::to_string(input_to_tensor(input).frames()));
    out.push_back({std::move(input), std::move(target)});
  }
  return out;
}

TrainResult train_cli(CliTask task, const std::string& dataset_dir, const PipelineConfig& config,
                      const std::string& out_dir, const std::string& init_model_path) {
  config.validate();
  TrainResult result;
  fs::create_directories(out_dir);
  std::vector<Task> tasks = model_tasks(task);
  if (task == CliTask::Music) {
    // A dataset generated for multi-instrument training carries only those targets.
    const fs::path targets = fs::path(dataset_dir) / "targets";
    bool music = false, multi = false;
    if (fs::is_directory(targets))
      for (const auto& e : fs::directory_iterator(targets)) {
        const std::string n = e.path().filename().string();
        music |= n.find(".music.tensor") != std::string::npos;
        multi |= n.find(".multi_instrument.tensor") != std::string::npos;
      }
    if (multi && !music) tasks = {Task::MultiInstrument};
  }
  for (Task t : tasks) {
    auto data = load_training_set(t, dataset_dir, config);
    Model model = init_model_path.empty() ? build_model(config.models.at(t))
                                          : load_checkpoint_file(checkpoint_path(t, config, init_model_path));
    if (model.config.task != t)
      throw Error(ErrorCode::Model, "initial checkpoint is for " + task_name(model.config.task) + ", expected " +
                                        task_name(t));
    auto history = train(model, data, config.training.at(t));
    const std::string ckpt = (fs::path(out_dir) / (task_name(t) + ".ckpt")).string();
    save_checkpoint_file(model, ckpt);
    std::ostringstream hist;
    hist.precision(17);
    for (double v : history) hist << v << "\n";
    write_file_atomic((fs::path(out_dir) / (task_name(t) + ".history.txt")).string(), hist.str());
    result.checkpoints.push_back(ckpt);
    result.histories.push_back(std::move(history));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

struct ClipTruth {
  MidiDocument doc;
  std::vector<ChordSegment> chords;
  BeatAnnotation beats;
};

double uniform(nn::Rng& rng, double lo, double hi) { return rng.uniform(lo, hi); }

bool collides(const std::vector<NoteEvent>& notes, const NoteEvent& n, double gap) {
  for (const auto& o : notes)
    if (o.pitch == n.pitch && n.onset_s < o.offset_s + gap && o.onset_s < n.offset_s + gap) return true;
  return false;
}

std::vector<NoteEvent> random_notes(nn::Rng& rng, const SyntheticParams& p, int count, bool monophonic) {
  std::vector<NoteEvent> notes;
  const double last_onset = std::max(0.05, p.clip_s - 0.3);
  for (int attempt = 0; static_cast<int>(notes.size()) < count && attempt < 50 * count; ++attempt) {
    NoteEvent n;
    n.pitch = p.low_pitch + static_cast<int>(rng.below(p.high_pitch - p.low_pitch + 1));
    // Onsets on the 20 ms grid keep the rendered targets exact.
    n.onset_s = std::round(uniform(rng, 0.02, last_onset) / kMusicHop) * kMusicHop;
    n.offset_s = std::min(n.onset_s + std::round(uniform(rng, 0.16, 0.6) / kMusicHop) * kMusicHop, p.clip_s - 0.06);
    n.velocity = 64 + static_cast<int>(rng.below(48));
    if (n.offset_s - n.onset_s < 0.1) continue;
    if (collides(notes, n, 0.08)) continue;
    if (monophonic) {
      bool overlap = false;
      for (const auto& o : notes) overlap |= n.onset_s < o.offset_s + 0.08 && o.onset_s < n.offset_s + 0.08;
      if (overlap) continue;
    }
    notes.push_back(n);
  }
  std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return a.onset_s != b.onset_s ? a.onset_s < b.onset_s : a.pitch < b.pitch;
  });
  return notes;
}

ClipTruth random_truth(Task task, nn::Rng& rng, const SyntheticParams& p) {
  ClipTruth truth;
  switch (task) {
    case Task::Music:
      truth.doc = make_document(random_notes(rng, p, p.notes_per_clip, false), "piano");
      break;
    case Task::MultiInstrument: {
      const auto& vocab = multi_instrument_vocabulary();
      const std::size_t a = rng.below(vocab.size());
      std::size_t b = rng.below(vocab.size() - 1);
      if (b >= a) ++b;
      auto notes = random_notes(rng, p, p.notes_per_clip, false);
      NoteStream sa{vocab[a], {}}, sb{vocab[b], {}};
      for (std::size_t i = 0; i < notes.size(); ++i) {
        notes[i].instrument = i % 2 ? vocab[b] : vocab[a];
        (i % 2 ? sb : sa).notes.push_back(notes[i]);
      }
      for (NoteStream* s : {&sa, &sb})
        if (!s->notes.empty()) truth.doc.streams.push_back(*s);
      break;
    }
    case Task::VocalPitch:
    case Task::VocalSeg:
      truth.doc = make_document(random_notes(rng, p, p.notes_per_clip, true), "voice");
      break;
    case Task::Drum: {
      NoteStream drums{"drums", {}};
      const auto& classes = default_drum_classes();
      for (int i = 0; i < 2 * p.notes_per_clip; ++i) {
        NoteEvent n;
        n.instrument = "drums";
        n.pitch = drum_class_to_key(classes[rng.below(classes.size())]);
        n.onset_s = std::round(uniform(rng, 0.05, p.clip_s - 0.2) / kDrumHop) * kDrumHop;
        n.offset_s = n.onset_s + 0.1;
        if (!collides(drums.notes, n, 0.05)) drums.notes.push_back(n);
      }
      normalize_stream(drums);
      truth.doc.streams.push_back(drums);
      break;
    }
    case Task::Chord: {
      std::vector<NoteEvent> notes;
      double t = 0.0;
      while (t < p.clip_s - 1e-9) {
        const int frames = 2 + static_cast<int>(rng.below(3));
        const double end = std::min(p.clip_s, t + frames * kChordHop);
        const int label = static_cast<int>(rng.below(kNumChordClasses));
        if (!truth.chords.empty() && truth.chords.back().label == label) truth.chords.back().end_s = end;
        else truth.chords.push_back({t, end, label});
        if (label != kNoChord) {
          const int root = label % 12;
          const int third = label < 12 ? 4 : 3;
          for (int pitch : {48 + root, 60 + root, 60 + root + third, 60 + root + 7}) {
            NoteEvent n;
            n.onset_s = t;
            n.offset_s = end;
            n.pitch = pitch;
            notes.push_back(n);
          }
        }
        t = end;
      }
      // Adjacent chords sharing a pitch re-articulate it.
      MidiDocument doc;
      NoteStream s{"piano", notes};
      std::sort(s.notes.begin(), s.notes.end(),
                [](const NoteEvent& a, const NoteEvent& b) { return a.onset_s < b.onset_s; });
      doc.streams.push_back(std::move(s));
      truth.doc = std::move(doc);
      break;
    }
    case Task::Beat: {
      const double bpm = 120.0;
      const double period = 60.0 / bpm;
      const double start = std::round(uniform(rng, 0.0, period) / kBeatHop) * kBeatHop;
      const int phase = static_cast<int>(rng.below(4));
      NoteStream s{"piano", {}};
      int i = 0;
      for (double b = start; b < p.clip_s - 0.1; b += period, ++i) {
        const double tb = std::round(b / kBeatHop) * kBeatHop;
        const bool down = (i + phase) % 4 == 0;
        truth.beats.beats_s.push_back(tb);
        if (down) truth.beats.downbeats_s.push_back(tb);
        NoteEvent n;
        n.onset_s = tb;
        n.offset_s = tb + 0.1;
        n.pitch = down ? 84 : 72;
        n.velocity = down ? 110 : 70;
        s.notes.push_back(n);
      }
      truth.doc.streams.push_back(std::move(s));
      break;
    }
  }
  return truth;
}

ActivationTensor render_target(Task task, const ClipTruth& truth, const TimeGrid& grid) {
  switch (task) {
    case Task::Music: return render_piano_targets(truth.doc.all_notes(), grid);
    case Task::MultiInstrument: return render_multi_instrument_targets(truth.doc, grid);
    case Task::VocalPitch: return render_vocal_pitch_targets(truth.doc.all_notes(), grid);
    case Task::VocalSeg: return render_vocal_seg_targets(truth.doc.all_notes(), grid);
    case Task::Drum: {
      std::vector<DrumEvent> events;
      for (const auto& n : truth.doc.all_notes()) events.push_back({n.onset_s, drum_key_to_class(n.pitch), 1.0});
      return render_drum_targets(events, grid);
    }
    case Task::Chord: return render_chord_targets(truth.chords, grid);
    case Task::Beat: return render_beat_targets(truth.beats, grid);
  }
  throw Error(ErrorCode::Internal, "unhandled task");
}

}  // namespace

void generate_synthetic_dataset(CliTask task, int n_clips, std::uint64_t seed, const std::string& out_dir,
                                const PipelineConfig& config, const SyntheticParams& params) {
  if (n_clips < 1) throw Error(ErrorCode::Input, "n_clips must be >= 1");
  if (params.low_pitch < kLowestPitch || params.high_pitch > kHighestPitch || params.low_pitch > params.high_pitch)
    throw Error(ErrorCode::Input, "synthetic pitch range must lie within 21..108");
  if (!(params.clip_s >= 0.5)) throw Error(ErrorCode::Input, "synthetic clips must be at least 0.5 s long");
  const fs::path root(out_dir);
  for (const char* sub : {"clips", "features", "targets", "midi", "labels"}) fs::create_directories(root / sub);

  std::vector<Task> tasks = model_tasks(task);
  if (task == CliTask::Music && params.multi_instrument) tasks = {Task::MultiInstrument};
  nn::Rng rng(seed);
  for (int i = 0; i < n_clips; ++i) {
    const std::string id = clip_id(i);
    ClipTruth truth = random_truth(tasks.front(), rng, params);
    std::optional<AudioClip> audio;
    if (task == CliTask::Beat) {
      write_file_atomic((root / "clips" / (id + ".mid")).string(), write_midi(truth.doc));
    } else {
      SynthParams sp;
      sp.seed = seed * 1000003ULL + static_cast<std::uint64_t>(i);
      AudioClip clip = sonify(truth.doc, sp);
      const Eigen::Index n = static_cast<Eigen::Index>(std::llround(params.clip_s * clip.sample_rate));
      Eigen::VectorXd fixed = Eigen::VectorXd::Zero(n);
      const Eigen::Index keep = std::min(n, clip.samples.size());
      fixed.head(keep) = clip.samples.head(keep);
      clip.samples = std::move(fixed);
      // Features come from the stored 16-bit file so training sees what transcription sees.
      auto wav = encode_wav(clip);
      write_file_atomic((root / "clips" / (id + ".wav")).string(), wav);
      audio = decode_wav(wav);
    }
    for (Task t : tasks) {
      ModelInput input = task == CliTask::Beat ? ModelInput{midi_symbolic_features(truth.doc)}
                                               : compute_from_clip(t, *audio, config);
      ActivationTensor feature = input_to_tensor(input);
      // The last chord frame reaches past the clip end; its label covers that overhang.
      if (t == Task::Chord && !truth.chords.empty())
        truth.chords.back().end_s = std::max(truth.chords.back().end_s, feature.grid.duration());
      write_tensor_file((root / "features" / (id + "." + task_name(t) + ".tensor")).string(), feature);
      write_tensor_file((root / "targets" / (id + "." + task_name(t) + ".tensor")).string(),
                        render_target(t, truth, feature.grid));
    }
    if (task == CliTask::Chord) write_file_atomic((root / "labels" / (id + ".chords.txt")).string(), format_chord_segments(truth.chords));
    else if (task == CliTask::Beat) write_file_atomic((root / "labels" / (id + ".beats.txt")).string(), format_beats(truth.beats));
    else write_file_atomic((root / "midi" / (id + ".mid")).string(), write_midi(truth.doc));
  }
}

// ---------------------------------------------------------------------------
// Sonify and evaluate

void sonify_file(const std::string& midi_path, const std::string& wav_path, std::uint64_t seed) {
  MidiDocument doc = with_file(midi_path, std::nullopt, [&] { return read_midi_file(midi_path); });
  SynthParams p;
  p.seed = seed;
  write_file_atomic(wav_path, encode_wav(sonify(doc, p)));
}

std::string evaluate_files(CliTask task, const std::string& reference_path, const std::string& estimate_path) {
  auto text = [](const std::string& path) {
    auto bytes = read_file_bytes(path, ErrorCode::Input);
    return std::string(bytes.begin(), bytes.end());
  };
  auto midi = [](const std::string& path) { return with_file(path, std::nullopt, [&] { return read_midi_file(path); }); };
  switch (task) {
    case CliTask::Chord: {
      auto ref = with_file(reference_path, std::nullopt, [&] { return parse_chord_segments(text(reference_path)); });
      auto est = with_file(estimate_path, std::nullopt, [&] { return parse_chord_segments(text(estimate_path)); });
      char buf[64];
      std::snprintf(buf, sizeof buf, "chord.accuracy=%.6f\n", chord_accuracy(ref, est));
      return buf;
    }
    case CliTask::Beat: {
      auto ref = with_file(reference_path, std::nullopt, [&] { return parse_beats(text(reference_path)); });
      auto est = with_file(estimate_path, std::nullopt, [&] { return parse_beats(text(estimate_path)); });
      return beat_f_measure(ref, est).to_text();
    }
    case CliTask::Music: {
      MidiDocument ref = midi(reference_path), est = midi(estimate_path);
      return note_f1(ref.all_notes(), est.all_notes()).to_text("note") +
             note_f1_streams(ref.streams, est.streams).to_text("stream");
    }
    default: {
      // Drum hits compare by General MIDI key, vocal notes by pitch.
      MidiDocument ref = midi(reference_path), est = midi(estimate_path);
      return note_f1(ref.all_notes(), est.all_notes()).to_text("note");
    }
  }
}

}  // namespace amt
