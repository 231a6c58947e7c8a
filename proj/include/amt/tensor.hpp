// Dense frames x bins x channels tensors and the time/pitch axes they live on.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "amt/error.hpp"

namespace amt {

/// Uniform frame grid. Frame k covers the half-open interval [k*hop_s, (k+1)*hop_s).
struct TimeGrid {
  double hop_s = 0.02;
  int n_frames = 0;

  double frame_start(int k) const { return k * hop_s; }
  double duration() const { return n_frames * hop_s; }
  /// Index of the frame containing time t (half-open membership).
  int frame_of(double t) const { return static_cast<int>(std::floor(t / hop_s + 1e-9)); }
  /// One past the last frame that intersects [.., t).
  int frame_end(double t) const { return static_cast<int>(std::ceil(t / hop_s - 1e-9)); }
};

inline constexpr double kMusicHop = 0.020;
inline constexpr double kDrumHop = 0.010;
inline constexpr double kBeatHop = 0.010;
inline constexpr double kChordHop = 0.230;

inline constexpr int kLowestPitch = 21;   // A0
inline constexpr int kHighestPitch = 108; // C8

/// Log-frequency pitch axis: bins_per_semitone bins per semitone starting at low_pitch.
/// The sub-bins of a semitone are centred symmetrically around it, so with 4 bins per
/// semitone the bins sit at -37.5, -12.5, +12.5 and +37.5 cents.
struct PitchAxis {
  int low_pitch = kLowestPitch;
  int n_semitones = kHighestPitch - kLowestPitch + 1;
  int bins_per_semitone = 4;

  int n_bins() const { return n_semitones * bins_per_semitone; }
  int high_pitch() const { return low_pitch + n_semitones - 1; }
  /// Fractional MIDI pitch at the centre of bin b.
  double bin_pitch(int b) const {
    return low_pitch + (b - 0.5 * (bins_per_semitone - 1)) / bins_per_semitone;
  }
  double bin_frequency(int b) const { return 440.0 * std::pow(2.0, (bin_pitch(b) - 69.0) / 12.0); }
  int semitone_of_bin(int b) const { return b / bins_per_semitone; }
  int first_bin(int pitch) const { return (pitch - low_pitch) * bins_per_semitone; }
  bool contains(int pitch) const { return pitch >= low_pitch && pitch <= high_pitch(); }

  static PitchAxis piano(int bins_per_semitone = 4) { return {kLowestPitch, 88, bins_per_semitone}; }
  static PitchAxis full_midi() { return {0, 128, 1}; }
};

inline double midi_to_hz(double pitch) { return 440.0 * std::pow(2.0, (pitch - 69.0) / 12.0); }
inline double hz_to_midi(double hz) { return 69.0 + 12.0 * std::log2(hz / 440.0); }

/// frames x bins x channels, stored as one frames x bins matrix per channel.
template <typename Scalar>
class Tensor3 {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Tensor3() = default;
  Tensor3(int frames, int bins, int channels)
      : frames_(frames), bins_(bins), data_(channels, Matrix::Zero(frames, bins)) {}

  static Tensor3 Zero(int frames, int bins, int channels) { return Tensor3(frames, bins, channels); }

  int frames() const { return frames_; }
  int bins() const { return bins_; }
  int channels() const { return static_cast<int>(data_.size()); }

  Matrix& channel(int c) { return data_.at(c); }
  const Matrix& channel(int c) const { return data_.at(c); }

  Scalar& operator()(int frame, int bin, int ch) { return data_[ch](frame, bin); }
  Scalar operator()(int frame, int bin, int ch) const { return data_[ch](frame, bin); }

  void add_channel(Matrix m) {
    if (m.rows() != frames_ || m.cols() != bins_)
      throw ContractError("channel shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          " does not match tensor frames x bins " + std::to_string(frames_) + "x" +
                          std::to_string(bins_));
    data_.push_back(std::move(m));
  }

  Scalar max_coeff() const {
    Scalar m = Scalar(0);
    bool first = true;
    for (const auto& ch : data_)
      if (ch.size() > 0) {
        m = first ? ch.maxCoeff() : std::max(m, ch.maxCoeff());
        first = false;
      }
    return m;
  }

  bool all_finite() const {
    for (const auto& ch : data_)
      if (!ch.allFinite()) return false;
    return true;
  }

  bool same_shape(const Tensor3& o) const {
    return frames_ == o.frames_ && bins_ == o.bins_ && channels() == o.channels();
  }

  std::string shape_string() const {
    return std::to_string(frames_) + "x" + std::to_string(bins_) + "x" + std::to_string(channels());
  }

  friend bool operator==(const Tensor3& a, const Tensor3& b) {
    if (!a.same_shape(b)) return false;
    for (int c = 0; c < a.channels(); ++c)
      if (a.data_[c] != b.data_[c]) return false;
    return true;
  }

 private:
  int frames_ = 0;
  int bins_ = 0;
  std::vector<Matrix> data_;
};

using Tensor3d = Tensor3<double>;

/// Model output / decoder input: values in [0,1] on a time grid.
struct ActivationTensor {
  Tensor3d values;
  TimeGrid grid;

  int frames() const { return values.frames(); }
  int bins() const { return values.bins(); }
  int channels() const { return values.channels(); }
};

}  // namespace amt
