#include "amt/features.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "amt/error.hpp"

namespace amt {

namespace {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

Eigen::VectorXd hann(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw ConfigError("compression exponent must lie in (0, 1], got " + std::to_string(gamma));
}

/// Magnitude spectrum (bins 0..nfft/2) of one windowed frame starting at sample `start`.
class FrameAnalyzer {
 public:
  FrameAnalyzer(int window, int nfft) : window_(hann(window)), nfft_(nfft), buffer_(nfft) {
    scale_ = 2.0 / window_.sum();
  }

  Eigen::RowVectorXd magnitude(const Eigen::VectorXd& x, Eigen::Index start) {
    std::fill(buffer_.begin(), buffer_.end(), 0.0);
    const Eigen::Index n = x.size();
    for (int i = 0; i < window_.size(); ++i) {
      const Eigen::Index idx = start + i;
      if (idx >= 0 && idx < n) buffer_[i] = x[idx] * window_[i];
    }
    fft_.fwd(spectrum_, buffer_);
    Eigen::RowVectorXd mag(nfft_ / 2 + 1);
    for (int b = 0; b <= nfft_ / 2; ++b) mag[b] = std::abs(spectrum_[b]) * scale_;
    return mag;
  }

 private:
  Eigen::VectorXd window_;
  int nfft_;
  double scale_;
  std::vector<double> buffer_;
  std::vector<std::complex<double>> spectrum_;
  Eigen::FFT<double> fft_;
};

/// Rebuilds the even-symmetric length-n sequence from its first n/2+1 values after
/// power compression, transforms it and keeps the rectified real half.
Eigen::RowVectorXd symmetric_transform(const Eigen::RowVectorXd& half, int n, double gamma, bool inverse,
                                       Eigen::FFT<double>& fft) {
  std::vector<std::complex<double>> full(n), out;
  for (int k = 0; k <= n / 2; ++k) {
    const double v = half[k] > 0 ? std::pow(half[k], gamma) : 0.0;
    full[k] = v;
    if (k > 0 && k < n - k) full[n - k] = v;
  }
  if (inverse)
    fft.inv(out, full);
  else
    fft.fwd(out, full);
  Eigen::RowVectorXd result(n / 2 + 1);
  for (int k = 0; k <= n / 2; ++k) result[k] = std::max(0.0, out[k].real());
  return result;
}

SpectralFeature transform_feature(const SpectralFeature& in, double gamma, bool inverse, int zero_below,
                                  const std::string& name) {
  check_gamma(gamma);
  if (in.fft_size <= 0 || in.bins() != in.fft_size / 2 + 1)
    throw ContractError("expected a linear-bin feature with fft_size/2+1 bins");
  const int n = in.fft_size;
  Eigen::FFT<double> fft;
  SpectralFeature out = in;
  out.data = Tensor3d(in.frames(), in.bins(), 1);
  out.channel_names = {name};
  auto& dst = out.data.channel(0);
  const auto& src = in.data.channel(0);
  for (int k = 0; k < in.frames(); ++k) {
    Eigen::RowVectorXd row = symmetric_transform(src.row(k), n, gamma, inverse, fft);
    row.head(std::min<int>(zero_below, static_cast<int>(row.size()))).setZero();
    dst.row(k) = row;
  }
  return out;
}

void normalize_max(Eigen::MatrixXd& m) {
  const double mx = m.size() ? m.maxCoeff() : 0.0;
  if (mx > 0) m /= mx;
}

}  // namespace

// ---------------------------------------------------------------------------

SpectralFeature compute_spectrogram(const AudioClip& clip, double window_s, double hop_s) {
  clip.validate();
  if (!(hop_s > 0 && window_s >= hop_s))
    throw ConfigError("spectrogram requires window_s >= hop_s > 0");
  const double sr = clip.sample_rate;
  const int win = std::max(1, static_cast<int>(std::floor(window_s * sr + 1e-9)));
  const int hop = std::max(1, static_cast<int>(std::lround(hop_s * sr)));
  const int nfft = next_pow2(win);
  const auto len = clip.samples.size();

  const bool short_clip = len < win;
  if (short_clip) warn("clip shorter than one analysis window; emitting a single zero-padded frame");
  const int n_frames = short_clip ? 1 : static_cast<int>((len + hop - 1) / hop);

  SpectralFeature out;
  out.sample_rate = sr;
  out.fft_size = nfft;
  out.grid = TimeGrid{hop / sr, n_frames};
  out.channel_names = {"spectrogram"};
  out.data = Tensor3d(n_frames, nfft / 2 + 1, 1);

  FrameAnalyzer analyzer(win, nfft);
  auto& dst = out.data.channel(0);
  for (int k = 0; k < n_frames; ++k) {
    const Eigen::Index start = short_clip ? 0 : Eigen::Index(k) * hop - win / 2;
    dst.row(k) = analyzer.magnitude(clip.samples, start);
  }
  return out;
}

SpectralFeature generalized_cepstrum(const SpectralFeature& spec, double gamma, double lifter_s) {
  const int cutoff = static_cast<int>(std::ceil(lifter_s * spec.sample_rate - 1e-9));
  return transform_feature(spec, gamma, /*inverse=*/true, cutoff, "GC");
}

SpectralFeature gcos(const SpectralFeature& gc, double gamma, double cutoff_hz) {
  const int cutoff = static_cast<int>(std::ceil(cutoff_hz * gc.fft_size / gc.sample_rate - 1e-9));
  return transform_feature(gc, gamma, /*inverse=*/false, cutoff, "GCoS");
}

// ---------------------------------------------------------------------------

PitchProjection::PitchProjection(const PitchAxis& axis, int fft_size, double sample_rate, bool is_quefrency)
    : axis_(axis), n_source_(fft_size / 2 + 1), sources_(axis.n_bins()) {
  const double half_band = std::pow(2.0, 1.0 / (24.0 * axis.bins_per_semitone));
  const int max_index = fft_size / 2;
  for (int b = 0; b < axis.n_bins(); ++b) {
    const double fc = axis.bin_frequency(b);
    const double lo = fc / half_band, hi = fc * half_band;
    Source& s = sources_[b];
    double x;
    if (!is_quefrency) {
      s.first = static_cast<int>(std::ceil(lo * fft_size / sample_rate));
      s.last = std::min(max_index, static_cast<int>(std::ceil(hi * fft_size / sample_rate)) - 1);
      x = fc * fft_size / sample_rate;
    } else {
      s.first = std::max(1, static_cast<int>(std::floor(sample_rate / hi)) + 1);
      s.last = std::min(max_index, static_cast<int>(std::floor(sample_rate / lo)));
      x = sample_rate / fc;
    }
    s.lower = static_cast<int>(std::floor(x));
    s.weight = x - s.lower;
    if (s.lower < 0 || s.lower + 1 > max_index) s.lower = -1;
  }
}

Eigen::RowVectorXd PitchProjection::apply(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (row.size() != n_source_) throw ContractError("pitch projection expects " + std::to_string(n_source_) + " bins");
  Eigen::RowVectorXd out(axis_.n_bins());
  for (int b = 0; b < axis_.n_bins(); ++b) {
    const Source& s = sources_[b];
    if (s.first <= s.last)
      out[b] = row.segment(s.first, s.last - s.first + 1).maxCoeff();
    else if (s.lower >= 0)
      out[b] = (1.0 - s.weight) * row[s.lower] + s.weight * row[s.lower + 1];
    else
      out[b] = 0.0;
  }
  return out;
}

Eigen::MatrixXd PitchProjection::apply_frames(const Eigen::MatrixXd& frames_by_bins) const {
  Eigen::MatrixXd out(frames_by_bins.rows(), axis_.n_bins());
  for (Eigen::Index k = 0; k < frames_by_bins.rows(); ++k) out.row(k) = apply(frames_by_bins.row(k));
  return out;
}

SpectralFeature feature_stack(const AudioClip& clip, const FeatureStackParams& p) {
  check_gamma(p.gamma_spectrum);
  check_gamma(p.gamma_cepstrum);
  const SpectralFeature spec = compute_spectrogram(clip, p.window_s, p.hop_s);
  const SpectralFeature gc = generalized_cepstrum(spec, p.gamma_spectrum, p.lifter_s);
  const SpectralFeature gcs = gcos(gc, p.gamma_cepstrum, p.cutoff_hz);

  const PitchProjection freq_proj(p.axis, spec.fft_size, spec.sample_rate, false);
  const PitchProjection quef_proj(p.axis, spec.fft_size, spec.sample_rate, true);

  SpectralFeature out;
  out.sample_rate = spec.sample_rate;
  out.grid = spec.grid;
  out.pitch_axis = p.axis;
  out.channel_names = {"spectrogram", "GC", "GCoS"};
  out.data = Tensor3d(spec.frames(), p.axis.n_bins(), 0);

  Eigen::MatrixXd compressed = spec.data.channel(0).array().pow(p.gamma_spectrum).matrix();
  Eigen::MatrixXd channels[3] = {freq_proj.apply_frames(compressed), quef_proj.apply_frames(gc.data.channel(0)),
                                 freq_proj.apply_frames(gcs.data.channel(0))};
  for (auto& c : channels) {
    normalize_max(c);
    out.data.add_channel(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// NNLS chroma

namespace {

PitchAxis chroma_spectrum_axis(double sample_rate, int bins_per_semitone) {
  const int top = std::min(kHighestPitch + 36, static_cast<int>(std::floor(hz_to_midi(0.45 * sample_rate))));
  return PitchAxis{kLowestPitch, top - kLowestPitch + 1, bins_per_semitone};
}

}  // namespace

Eigen::MatrixXd nnls_dictionary(const PitchAxis& axis, const ChromaParams& p) {
  const int n_notes = kHighestPitch - kLowestPitch + 1;
  const double centre_offset = 0.5 * (axis.bins_per_semitone - 1);
  constexpr double kSpread = 1.5;  // triangular kernel half-width in bins
  Eigen::MatrixXd dict = Eigen::MatrixXd::Zero(axis.n_bins(), n_notes);
  for (int n = 0; n < n_notes; ++n) {
    double amp = 1.0;
    for (int h = 1; h <= p.partials; ++h, amp *= p.partial_decay) {
      const double pitch = kLowestPitch + n + 12.0 * std::log2(double(h));
      const double x = (pitch - axis.low_pitch) * axis.bins_per_semitone + centre_offset;
      for (int b = static_cast<int>(std::floor(x - kSpread)); b <= static_cast<int>(std::ceil(x + kSpread)); ++b) {
        if (b < 0 || b >= axis.n_bins()) continue;
        const double w = std::max(0.0, 1.0 - std::abs(b - x) / kSpread);
        dict(b, n) += amp * w;
      }
    }
  }
  return dict;
}

NnlsResult solve_nnls(const Eigen::MatrixXd& D, const Eigen::VectorXd& s, int max_iterations, double tolerance) {
  const Eigen::MatrixXd gram = D.transpose() * D;
  const Eigen::VectorXd dts = D.transpose() * s;
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double ss = s.squaredNorm();

  auto residual_sq = [&](const Eigen::VectorXd& a) {
    return std::max(0.0, a.dot(gram * a) - 2.0 * a.dot(dts) + ss);
  };

  NnlsResult r;
  r.solution = Eigen::VectorXd::Zero(D.cols());
  double prev = ss;
  if (ss == 0.0 || lipschitz <= 0.0) {
    r.converged = true;
    r.residual = std::sqrt(ss);
    return r;
  }
  for (int it = 1; it <= max_iterations; ++it) {
    r.solution = (r.solution - (gram * r.solution - dts) / lipschitz).cwiseMax(0.0);
    r.iterations = it;
    const double cur = residual_sq(r.solution);
    if (std::abs(prev - cur) <= tolerance * std::max(prev, 1e-300)) {
      r.converged = true;
      prev = cur;
      break;
    }
    prev = cur;
  }
  r.residual = std::sqrt(prev);
  return r;
}

ChromaFeature nnls_chroma(const AudioClip& clip, const ChromaParams& p) {
  clip.validate();
  const double sr = clip.sample_rate;
  const int hop = std::max(1, static_cast<int>(std::lround(p.hop_s * sr)));
  if (clip.samples.size() < hop) throw ContractError("chroma needs at least one full chord frame of audio");
  const int win = std::max(1, static_cast<int>(std::floor(p.window_s * sr + 1e-9)));
  const int nfft = next_pow2(win);
  const int n_frames = static_cast<int>((clip.samples.size() + hop - 1) / hop);

  const PitchAxis axis = chroma_spectrum_axis(sr, p.bins_per_semitone);
  const PitchProjection proj(axis, nfft, sr, false);
  const Eigen::MatrixXd dict = nnls_dictionary(axis, p);

  ChromaFeature out;
  out.grid = TimeGrid{hop / sr, n_frames};
  out.data = Eigen::MatrixXd::Zero(n_frames, 24);
  out.converged.assign(n_frames, true);

  FrameAnalyzer analyzer(win, nfft);
  for (int k = 0; k < n_frames; ++k) {
    const Eigen::Index centre = Eigen::Index(k) * hop + hop / 2;
    const Eigen::VectorXd s = proj.apply(analyzer.magnitude(clip.samples, centre - win / 2)).transpose();
    const NnlsResult r = solve_nnls(dict, s, p.max_iterations, p.tolerance);
    out.converged[k] = r.converged;
    for (int n = 0; n < r.solution.size(); ++n) {
      const int pitch = kLowestPitch + n;
      const int col = (pitch >= p.treble_split ? 12 : 0) + pitch % 12;
      out.data(k, col) += r.solution[n];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Symbolic features

Eigen::MatrixXd SymbolicFeature::stacked() const {
  Eigen::MatrixXd out(pianoroll.rows(), pianoroll.cols() + 2);
  out << pianoroll, spectral_flux, ioi;
  return out;
}

SymbolicFeature midi_symbolic_features(const MidiDocument& doc, int n_frames) {
  if (doc.note_count() == 0) throw Error(ErrorCode::Input, "no notes");
  const PianoRoll pr = midi_to_pianoroll(doc, kBeatHop, PitchAxis::full_midi(), n_frames);

  SymbolicFeature f;
  f.grid = pr.roll.grid;
  f.pianoroll = pr.roll.values.channel(0);
  const int T = f.grid.n_frames;
  f.spectral_flux = Eigen::VectorXd::Zero(T);
  for (int k = 0; k < T; ++k) {
    Eigen::RowVectorXd diff = k == 0 ? Eigen::RowVectorXd(f.pianoroll.row(0))
                                     : Eigen::RowVectorXd(f.pianoroll.row(k) - f.pianoroll.row(k - 1));
    f.spectral_flux[k] = diff.cwiseMax(0.0).sum();
  }

  std::vector<bool> onset(T, false);
  for (const auto& s : doc.streams)
    for (const auto& n : s.notes) {
      const int k = f.grid.frame_of(n.onset_s);
      if (k >= 0 && k < T) onset[k] = true;
    }
  f.ioi = Eigen::VectorXd::Constant(T, SymbolicFeature::kMaxIoi);
  int last = -1;
  for (int k = 0; k < T; ++k) {
    if (onset[k]) last = k;
    if (last >= 0) f.ioi[k] = std::min(SymbolicFeature::kMaxIoi, (k - last) * f.grid.hop_s);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Beat-informed preprocessing

namespace {

constexpr double kMinBeatPeriod = 0.25;  // 240 BPM
constexpr double kMaxBeatPeriod = 1.5;   // 40 BPM
constexpr double kPriorPeriod = 0.5;     // 120 BPM
constexpr double kTightness = 100.0;

std::vector<int> place_beats(const Eigen::VectorXd& onset, int period) {
  const int T = static_cast<int>(onset.size());
  Eigen::VectorXd score(T);
  std::vector<int> back(T, -1);
  for (int t = 0; t < T; ++t) {
    double best = 0.0;
    int arg = -1;
    for (int tau = std::max(0, t - 2 * period); tau <= t - std::max(1, period / 2); ++tau) {
      const double lg = std::log(double(t - tau) / period);
      const double cand = score[tau] - kTightness * lg * lg;
      if (arg < 0 || cand > best) {
        best = cand;
        arg = tau;
      }
    }
    if (arg >= 0 && best > 0.0) {
      score[t] = onset[t] + best;
      back[t] = arg;
    } else {
      score[t] = onset[t];
    }
  }
  int t = T - 1;
  for (int k = std::max(0, T - period); k < T; ++k)
    if (score[k] > score[t]) t = k;
  std::vector<int> beats;
  for (; t >= 0; t = back[t]) beats.push_back(t);
  std::reverse(beats.begin(), beats.end());
  return beats;
}

}  // namespace

BeatPreprocessResult beat_informed_preprocess(const SpectralFeature& spec) {
  const double hop = spec.grid.hop_s;
  if (std::abs(hop - kDrumHop) > 1e-3) throw ContractError("beat-informed preprocessing expects a 10 ms grid");
  const int T = spec.frames();
  const auto& x = spec.data.channel(0);

  Eigen::VectorXd onset = Eigen::VectorXd::Zero(T);
  for (int k = 1; k < T; ++k) onset[k] = (x.row(k) - x.row(k - 1)).cwiseMax(0.0).sum();

  BeatPreprocessResult r;
  r.feature = spec;
  Eigen::MatrixXd phase = Eigen::MatrixXd::Zero(T, spec.bins());

  const double mean = T > 0 ? onset.mean() : 0.0;
  const Eigen::VectorXd centred = onset.array() - mean;
  const double sd = T > 1 ? std::sqrt(centred.squaredNorm() / T) : 0.0;
  const int min_lag = static_cast<int>(std::lround(kMinBeatPeriod / hop));
  const int max_lag = std::min(T - 1, static_cast<int>(std::lround(kMaxBeatPeriod / hop)));

  int period = -1;
  if (sd > 1e-9) {
    double best = 0.0;
    for (int lag = min_lag; lag <= max_lag; ++lag) {
      const double ac = centred.head(T - lag).dot(centred.tail(T - lag)) / (T - lag);
      const double octaves = std::log2(lag * hop / kPriorPeriod);
      const double weighted = ac * std::exp(-0.5 * octaves * octaves);
      if (ac > 0 && weighted > best) {
        best = weighted;
        period = lag;
      }
    }
  }

  if (period < 0) {
    r.tempo_failed = true;
    warn("beat tracker could not estimate a tempo; beat-phase channel left at zero");
  } else {
    r.inter_beat_s = period * hop;
    r.beat_frames = place_beats(centred.cwiseMax(0.0) / sd, period);
    const auto& b = r.beat_frames;
    for (int k = 0; k < T; ++k) {
      double ph;
      auto it = std::upper_bound(b.begin(), b.end(), k);
      if (it != b.begin() && it != b.end()) {
        const int lo = *std::prev(it), hi = *it;
        ph = double(k - lo) / (hi - lo);
      } else {
        const int ref = it == b.begin() ? b.front() : b.back();
        const double cycles = double(k - ref) / period;
        ph = cycles - std::floor(cycles);
      }
      phase.row(k).setConstant(ph);
    }
  }
  r.feature.data.add_channel(std::move(phase));
  r.feature.channel_names.push_back("beat_phase");
  return r;
}

BeatPreprocessResult drum_features(const AudioClip& clip, const DrumFeatureParams& p) {
  check_gamma(p.gamma_spectrum);
  const SpectralFeature spec = compute_spectrogram(clip, p.window_s, p.hop_s);
  const PitchProjection proj(p.axis, spec.fft_size, spec.sample_rate, false);
  SpectralFeature f;
  f.sample_rate = spec.sample_rate;
  f.grid = spec.grid;
  f.pitch_axis = p.axis;
  f.channel_names = {"spectrogram"};
  f.data = Tensor3d(spec.frames(), p.axis.n_bins(), 0);
  Eigen::MatrixXd m = proj.apply_frames(Eigen::MatrixXd(spec.data.channel(0).array().pow(p.gamma_spectrum)));
  normalize_max(m);
  f.data.add_channel(std::move(m));
  return beat_informed_preprocess(f);
}

}  // namespace amt
