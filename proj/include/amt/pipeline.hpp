// End-to-end orchestration behind the amtkit command line: configuration, transcription,
// training from a dataset directory, synthetic data generation and sonification.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "amt/decoders.hpp"
#include "amt/features.hpp"
#include "amt/models.hpp"

namespace amt {

/// Command-line task names; "music" also serves multi-instrument checkpoints.
enum class CliTask { Music, Drum, Vocal, Chord, Beat };
std::string cli_task_name(CliTask task);
/// Throws Error(E_INPUT) for names outside {music, drum, vocal, chord, beat}.
CliTask parse_cli_task(const std::string& name);
/// Model tasks behind a CLI task (vocal has two).
std::vector<Task> model_tasks(CliTask task);

struct PipelineConfig {
  FeatureStackParams music_features;  // music, multi_instrument and vocal
  DrumFeatureParams drum_features;
  ChromaParams chord_features;
  DecodeParams decode;
  std::map<Task, ModelConfig> models;  // every task present, defaults unless overridden
  std::map<Task, TrainConfig> training;
  std::string checkpoint_dir;  // empty: $AMTKIT_CHECKPOINT_DIR, else data/checkpoints
  std::string output_dir = ".";
  int workers = 1;

  static PipelineConfig defaults();
  /// JSON text; unknown keys and bad values throw ConfigError. Missing keys keep defaults.
  static PipelineConfig from_json(const std::string& text);
  static PipelineConfig from_file(const std::string& path);
  std::string to_json() const;
  void validate() const;

  std::string resolved_checkpoint_dir() const;
};

inline constexpr const char* kCheckpointDirEnv = "AMTKIT_CHECKPOINT_DIR";

/// Checkpoint location for a model task: `model_path` itself when it names a file,
/// model_path/<task>.ckpt when it names a directory, else the configured directory.
std::string checkpoint_path(Task task, const PipelineConfig& config, const std::string& model_path = "");

// ---------------------------------------------------------------------------
// Sidecar text formats

/// One "start end label" line per segment, times with 6 decimals.
std::string format_chord_segments(const std::vector<ChordSegment>& segments);
std::vector<ChordSegment> parse_chord_segments(const std::string& text);
/// One "time is_downbeat" line per beat.
std::string format_beats(const BeatAnnotation& beats);
BeatAnnotation parse_beats(const std::string& text);

// ---------------------------------------------------------------------------
// Features as stored tensors

/// Model input of a model task computed from a file (WAV, or MIDI for beat).
ModelInput compute_input(Task task, const std::string& input_path, const PipelineConfig& config);
ActivationTensor input_to_tensor(const ModelInput& input);
/// Inverse of input_to_tensor for the feature a model task consumes.
ModelInput tensor_to_input(Task task, const ActivationTensor& t, const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Operations

struct TranscribeOptions {
  std::string model_path;         // file or directory; empty uses the checkpoint directory
  std::string output;             // file or directory; empty uses config.output_dir
  std::optional<double> threshold;  // overrides the activation and onset thresholds
};

/// Default output file name for an input: <stem>.mid, <stem>.chords.txt or <stem>.beats.txt.
std::string default_output_name(CliTask task, const std::string& input_path);

/// Runs features -> model -> decoder -> writer for one file and returns the output path.
/// Outputs are written atomically.
std::string transcribe(CliTask task, const std::string& input_path, const PipelineConfig& config,
                       const TranscribeOptions& options = {});

/// Transcribes several files on up to `workers` threads; outputs go to options.output
/// (a directory) or config.output_dir. Returns output paths in input order. The first
/// failure is rethrown after all workers finish.
std::vector<std::string> transcribe_batch(CliTask task, const std::vector<std::string>& inputs,
                                          const PipelineConfig& config, const TranscribeOptions& options,
                                          int workers);

/// Dataset layout (written by generate_synthetic_dataset):
///   clips/NNNN.wav (NNNN.mid for beat)     input audio or MIDI
///   features/NNNN.<task>.tensor           model input for each model task
///   targets/NNNN.<task>.tensor            ideal model output
///   midi/NNNN.mid                         ground-truth notes (music, drum, vocal)
///   labels/NNNN.chords.txt, NNNN.beats.txt  ground truth for chord and beat
/// Feature files are computed from the clip when absent.
std::vector<TrainExample> load_training_set(Task task, const std::string& dataset_dir, const PipelineConfig& config);

struct TrainResult {
  std::vector<std::string> checkpoints;  // one per model task
  std::vector<std::vector<double>> histories;
};

/// Trains every model behind `task` on dataset_dir and writes <out_dir>/<model task>.ckpt
/// plus <model task>.history.txt (one loss per epoch). An existing checkpoint at
/// `init_model_path` (file or directory) is fine-tuned instead of a fresh model.
/// Throws Error(E_DATA) for an empty dataset or unreadable files, naming the file.
TrainResult train_cli(CliTask task, const std::string& dataset_dir, const PipelineConfig& config,
                      const std::string& out_dir, const std::string& init_model_path = "");

struct SyntheticParams {
  double clip_s = 1.8;
  int notes_per_clip = 4;
  int low_pitch = 48;
  int high_pitch = 77;
  bool multi_instrument = false;  // music only: two instruments per clip, 11-channel targets
};

/// Random ground truth per clip rendered through sonify (MIDI for beat) plus features and
/// ideal targets in the layout above. Deterministic per seed.
void generate_synthetic_dataset(CliTask task, int n_clips, std::uint64_t seed, const std::string& out_dir,
                                const PipelineConfig& config = PipelineConfig::defaults(),
                                const SyntheticParams& params = {});

/// MIDI file -> peak-normalized WAV. An empty document gives a silent second.
void sonify_file(const std::string& midi_path, const std::string& wav_path, std::uint64_t seed = 0);

/// Metrics of an estimate file against a reference file of the same kind, as key=value text.
std::string evaluate_files(CliTask task, const std::string& reference_path, const std::string& estimate_path);

}  // namespace amt
