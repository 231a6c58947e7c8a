// Toy-scale networks for every transcription task: construction, inference, training
// and checkpoint persistence.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "amt/features.hpp"
#include "amt/nn/layers.hpp"
#include "amt/tensor.hpp"

namespace amt {

enum class Task { Music, MultiInstrument, Drum, VocalPitch, VocalSeg, Chord, Beat };

std::string task_name(Task task);
/// Accepts the names produced by task_name ("music", "multi_instrument", ...).
Task parse_task(const std::string& name);

struct ModelConfig {
  Task task = Task::Music;
  int width = 6;            // base conv channels, or dense width for chord
  int depth = 1;            // residual blocks (conv nets) / recurrent layers (beat)
  int pitch_bins = 352;     // bins of the spectral input and pitch-wise outputs
  int in_channels = 3;      // spectral input channels
  int input_dim = 0;        // per-frame input size for chord (24) and beat (130)
  int out_channels = 3;
  int hidden = 25;          // recurrent hidden size per direction / dense hidden size
  int kernel_time = 3;
  int kernel_pitch = 3;
  int attention_patch = 11; // pitch positions per bottleneck attention token
  bool attention = true;
  double output_bias = -2.0;  // initial logit of sigmoid heads
  int chunk_frames = 0;       // inference window, 0 = whole input
  std::uint64_t seed = 0;

  static ModelConfig defaults(Task task);
  /// Throws ConfigError on non-positive dimensions or an out_channels/task mismatch.
  void validate() const;
  /// Frame hop the task's input and output live on.
  double hop_s() const;

  /// One "key=value" per line; from_text rejects unknown keys.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

namespace detail {
class Network;
}

/// A built network. Copies share the immutable architecture and own their parameters.
struct Model {
  ModelConfig config;
  nn::ParameterSet parameters;
  std::shared_ptr<const detail::Network> network;
  int epochs_trained = 0;
  std::vector<double> loss_history;
};

Model build_model(const ModelConfig& config);
std::int64_t count_params(const Model& model);

using ModelInput = std::variant<SpectralFeature, ChromaFeature, SymbolicFeature>;

/// Frames out = frames in. Sigmoid heads for every task except chord (25-way softmax).
/// Shapes: music frames x pitch_bins x 3 [activation, onset, offset]; multi_instrument
/// frames x pitch_bins x 11; vocal_pitch frames x pitch_bins x 1; drum frames x classes x 1;
/// vocal_seg frames x 2 x 1 [voicing, onset]; chord frames x 25 x 1; beat frames x 2 x 1
/// [beat, downbeat]. Throws ContractError naming the mismatched axis.
ActivationTensor forward(const Model& model, const ModelInput& input);

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 1;
  double learning_rate = 0.01;
  Optimizer optimizer = Optimizer::Sgd;
  /// Per output channel loss weights (e.g. beat vs downbeat); empty means all 1.
  std::vector<double> channel_weights;
  /// Weight of the chord boundary (segmentation) loss relative to the label loss.
  double segmentation_weight = 0.5;
  /// Extra weight on positive targets of sigmoid heads.
  double positive_weight = 1.0;
  std::uint64_t seed = 0;
  /// Called after every epoch with the epoch index and mean loss; returning false stops
  /// training early.
  std::function<bool(int epoch, double loss)> on_epoch;

  void validate() const;
};

struct TrainExample {
  ModelInput input;
  ActivationTensor target;  // shaped like forward's output
};

/// Loss of one example under the current parameters (no update).
double example_loss(const Model& model, const TrainExample& example, const TrainConfig& tc);

/// Mini-batch gradient descent; appends one mean loss per epoch to model.loss_history and
/// returns the history of this call. Throws Error(E_DATA) naming epoch and batch on a
/// non-finite loss.
std::vector<double> train(Model& model, const std::vector<TrainExample>& dataset, const TrainConfig& tc);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian layout:
//   "AMTCKPT\0" | u32 version | u32 n + config text | u32 epochs_trained |
//   u32 n + n f64 loss history | u32 tensor count |
//   per tensor: u32 n + name, u32 rows, u32 cols, rows*cols f64 column-major |
//   u32 crc32 of all preceding bytes

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> save_checkpoint(const Model& model);
/// Throws Error(E_MODEL) on a bad magic, version, checksum, truncation or parameter mismatch.
Model load_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint_file(const Model& model, const std::string& path);
Model load_checkpoint_file(const std::string& path);

}  // namespace amt
