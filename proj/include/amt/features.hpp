// Input representations: spectrogram / generalized cepstrum / GCoS stack, NNLS chroma,
// symbolic MIDI features and beat-informed drum preprocessing.
#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "amt/audio.hpp"
#include "amt/midi.hpp"
#include "amt/tensor.hpp"

namespace amt {

/// frames x bins x channels, entries finite and >= 0.
///
/// Bins are either linear FFT bins (fft_size > 0, bin b at b * sample_rate / fft_size Hz,
/// or quefrency b samples for cepstral channels) or a log-pitch axis (pitch_axis set).
struct SpectralFeature {
  Tensor3d data;
  TimeGrid grid;
  std::vector<std::string> channel_names;
  double sample_rate = kDefaultSampleRate;
  int fft_size = 0;
  std::optional<PitchAxis> pitch_axis;

  int frames() const { return data.frames(); }
  int bins() const { return data.bins(); }
  int channels() const { return data.channels(); }
};

/// frames x 24: columns 0..11 bass pitch classes (C..B), 12..23 treble pitch classes.
struct ChromaFeature {
  Eigen::MatrixXd data;
  TimeGrid grid{kChordHop, 0};
  /// Per-frame flag: false when the NNLS solver hit its iteration cap.
  std::vector<bool> converged;
};

/// 10 ms symbolic features for beat tracking.
struct SymbolicFeature {
  Eigen::MatrixXd pianoroll;      // frames x 128, binary
  Eigen::VectorXd spectral_flux;  // frames
  Eigen::VectorXd ioi;            // frames, seconds since last onset, clipped at kMaxIoi
  TimeGrid grid{kBeatHop, 0};

  static constexpr double kMaxIoi = 4.0;

  /// [pianoroll | flux | ioi] as a frames x 130 matrix.
  Eigen::MatrixXd stacked() const;
};

// ---------------------------------------------------------------------------
// Spectral chain

/// Hann-windowed magnitude STFT. Frame k is centred on sample k * hop; the clip is
/// zero-padded at both ends and the frame count is ceil(len / hop). A clip shorter
/// than one window yields a single frame and a warning.
SpectralFeature compute_spectrogram(const AudioClip& clip, double window_s, double hop_s);

/// Per frame: rectified inverse DFT of the power-compressed spectrum (x -> x^gamma).
/// Quefrency bins below lifter_s are zeroed. Shape is preserved.
SpectralFeature generalized_cepstrum(const SpectralFeature& spec, double gamma, double lifter_s = 0.002);

/// Per frame: rectified forward DFT of the power-compressed cepstrum. Frequency bins
/// below cutoff_hz are zeroed. Shape is preserved.
SpectralFeature gcos(const SpectralFeature& gc, double gamma, double cutoff_hz = 27.5);

/// Resamples linear-frequency bins (is_quefrency = false) or quefrency bins onto a
/// log-pitch axis. Each pitch bin takes the max over the source bins inside its
/// quarter-bin band, or linear interpolation at its centre when the band is empty.
class PitchProjection {
 public:
  PitchProjection(const PitchAxis& axis, int fft_size, double sample_rate, bool is_quefrency);

  Eigen::RowVectorXd apply(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  Eigen::MatrixXd apply_frames(const Eigen::MatrixXd& frames_by_bins) const;
  const PitchAxis& axis() const { return axis_; }

 private:
  struct Source {
    int first = 0;
    int last = -1;       // inclusive max range; empty when last < first
    int lower = 0;       // interpolation neighbours when the range is empty
    double weight = 0.0;
  };
  PitchAxis axis_;
  int n_source_ = 0;
  std::vector<Source> sources_;
};

struct FeatureStackParams {
  double window_s = 0.0929;
  double hop_s = kMusicHop;
  double gamma_spectrum = 0.6;
  double gamma_cepstrum = 0.6;
  double lifter_s = 0.002;
  double cutoff_hz = 27.5;
  PitchAxis axis = PitchAxis::piano(4);
};

/// Three channels [spectrogram, GC, GCoS] on the pitch axis, each max-normalized to 1.
/// The spectrogram channel is the power-compressed magnitude that feeds the cepstrum.
SpectralFeature feature_stack(const AudioClip& clip, const FeatureStackParams& params = {});

// ---------------------------------------------------------------------------
// Chroma

struct ChromaParams {
  double hop_s = kChordHop;
  double window_s = 0.3715;     // rounded up to a power of two in samples
  int bins_per_semitone = 3;
  int partials = 8;
  double partial_decay = 0.6;
  int max_iterations = 500;
  double tolerance = 1e-6;
  int treble_split = 60;         // notes >= this pitch fold into the treble chroma
};

/// Idealized harmonic note profiles: rows = log-frequency bins of the chroma spectrum,
/// columns = the 88 piano notes.
Eigen::MatrixXd nnls_dictionary(const PitchAxis& spectrum_axis, const ChromaParams& params);

struct NnlsResult {
  Eigen::VectorXd solution;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;  // ||D a - s||_2
};

/// min ||D a - s|| subject to a >= 0 by projected gradient from a = 0 with step 1/L,
/// L the largest eigenvalue of D^T D. The residual never exceeds ||s||.
NnlsResult solve_nnls(const Eigen::MatrixXd& dictionary, const Eigen::VectorXd& target, int max_iterations,
                      double tolerance);

/// 24-bin bass/treble NNLS chromagram at 230 ms frames.
ChromaFeature nnls_chroma(const AudioClip& clip, const ChromaParams& params = {});

// ---------------------------------------------------------------------------
// Symbolic and drum features

/// Throws Error(E_INPUT, "no notes") for an empty document.
SymbolicFeature midi_symbolic_features(const MidiDocument& doc, int n_frames = 0);

struct BeatPreprocessResult {
  SpectralFeature feature;        // input channels plus "beat_phase"
  std::vector<int> beat_frames;
  double inter_beat_s = 0.0;
  bool tempo_failed = false;
};

/// Onset-strength autocorrelation tempo estimate plus dynamic-programming beat
/// placement; appends a channel holding the phase in [0, 1) of each frame within its
/// inter-beat interval.
BeatPreprocessResult beat_informed_preprocess(const SpectralFeature& spec);

/// Spectrogram on a semitone axis at 10 ms with the beat-phase channel appended.
struct DrumFeatureParams {
  double window_s = 0.0464;
  double hop_s = kDrumHop;
  double gamma_spectrum = 0.6;
  PitchAxis axis = PitchAxis::piano(1);
};
BeatPreprocessResult drum_features(const AudioClip& clip, const DrumFeatureParams& params = {});

}  // namespace amt
