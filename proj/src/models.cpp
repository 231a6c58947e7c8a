#include "amt/models.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "amt/error.hpp"
#include "amt/midi.hpp"

namespace amt {

using nn::Index;
using nn::Matrix;
using nn::Session;
using nn::Var;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string task_name(Task task) {
  switch (task) {
    case Task::Music: return "music";
    case Task::MultiInstrument: return "multi_instrument";
    case Task::Drum: return "drum";
    case Task::VocalPitch: return "vocal_pitch";
    case Task::VocalSeg: return "vocal_seg";
    case Task::Chord: return "chord";
    case Task::Beat: return "beat";
  }
  return "unknown";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::Music, Task::MultiInstrument, Task::Drum, Task::VocalPitch, Task::VocalSeg, Task::Chord,
                 Task::Beat})
    if (task_name(t) == name) return t;
  throw ConfigError("unknown task '" + name + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::defaults(Task task) {
  ModelConfig c;
  c.task = task;
  switch (task) {
    case Task::Music:
      c.chunk_frames = 256;
      break;
    case Task::MultiInstrument:
      c.out_channels = 11;
      c.chunk_frames = 256;
      break;
    case Task::Drum:
      c.pitch_bins = 88;
      c.in_channels = 2;
      c.out_channels = static_cast<int>(default_drum_classes().size());
      c.hidden = 32;
      c.chunk_frames = 1000;
      break;
    case Task::VocalPitch:
      c.out_channels = 1;
      c.chunk_frames = 256;
      break;
    case Task::VocalSeg:
      c.out_channels = 2;
      c.hidden = 32;
      c.chunk_frames = 256;
      break;
    case Task::Chord:
      c.input_dim = 24;
      c.out_channels = kNumChordClasses;
      c.width = 32;
      c.output_bias = 0.0;
      break;
    case Task::Beat:
      c.input_dim = 130;
      c.out_channels = 2;
      c.depth = 2;
      c.attention = false;
      break;
  }
  return c;
}

double ModelConfig::hop_s() const {
  switch (task) {
    case Task::Drum:
    case Task::Beat: return kDrumHop;
    case Task::Chord: return kChordHop;
    default: return kMusicHop;
  }
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(width, "width");
  positive(hidden, "hidden");
  positive(out_channels, "out_channels");
  if (depth < 0) throw ConfigError("model config: depth must be non-negative");
  if (chunk_frames < 0) throw ConfigError("model config: chunk_frames must be non-negative");
  int expected = 0;
  switch (task) {
    case Task::Music: expected = 3; break;
    case Task::MultiInstrument: expected = 11; break;
    case Task::Drum: expected = static_cast<int>(default_drum_classes().size()); break;
    case Task::VocalPitch: expected = 1; break;
    case Task::VocalSeg: expected = 2; break;
    case Task::Chord: expected = kNumChordClasses; break;
    case Task::Beat: expected = 2; break;
  }
  if (out_channels != expected)
    throw ConfigError("model config: task " + task_name(task) + " needs out_channels=" + std::to_string(expected) +
                      ", got " + std::to_string(out_channels));
  switch (task) {
    case Task::Music:
    case Task::MultiInstrument:
      positive(pitch_bins, "pitch_bins");
      positive(in_channels, "in_channels");
      positive(attention_patch, "attention_patch");
      if (pitch_bins % 4 != 0 || (pitch_bins / 4) % attention_patch != 0)
        throw ConfigError("model config: pitch_bins must be divisible by 4 * attention_patch");
      break;
    case Task::Drum:
      positive(in_channels, "in_channels");
      if (pitch_bins <= 0 || pitch_bins % 8 != 0) throw ConfigError("model config: drum pitch_bins must divide by 8");
      break;
    case Task::VocalSeg:
      positive(in_channels, "in_channels");
      if (pitch_bins <= 0 || pitch_bins % 16 != 0)
        throw ConfigError("model config: vocal_seg pitch_bins must divide by 16");
      break;
    case Task::VocalPitch:
      positive(in_channels, "in_channels");
      positive(pitch_bins, "pitch_bins");
      break;
    case Task::Chord:
    case Task::Beat:
      positive(input_dim, "input_dim");
      if (task == Task::Beat) positive(depth, "depth");
      break;
  }
  if (kernel_time <= 0 || kernel_pitch <= 0 || kernel_time % 2 == 0 || kernel_pitch % 2 == 0)
    throw ConfigError("model config: kernel sizes must be odd and positive");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "task=" << task_name(task) << "\n"
     << "width=" << width << "\n"
     << "depth=" << depth << "\n"
     << "pitch_bins=" << pitch_bins << "\n"
     << "in_channels=" << in_channels << "\n"
     << "input_dim=" << input_dim << "\n"
     << "out_channels=" << out_channels << "\n"
     << "hidden=" << hidden << "\n"
     << "kernel_time=" << kernel_time << "\n"
     << "kernel_pitch=" << kernel_pitch << "\n"
     << "attention_patch=" << attention_patch << "\n"
     << "attention=" << (attention ? 1 : 0) << "\n"
     << "output_bias=" << output_bias << "\n"
     << "chunk_frames=" << chunk_frames << "\n"
     << "seed=" << seed << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!kv.count("task")) throw ConfigError("model config: missing task");
  ModelConfig c = defaults(parse_task(kv["task"]));
  kv.erase("task");
  for (const auto& [key, value] : kv) {
    try {
      if (key == "width") c.width = std::stoi(value);
      else if (key == "depth") c.depth = std::stoi(value);
      else if (key == "pitch_bins") c.pitch_bins = std::stoi(value);
      else if (key == "in_channels") c.in_channels = std::stoi(value);
      else if (key == "input_dim") c.input_dim = std::stoi(value);
      else if (key == "out_channels") c.out_channels = std::stoi(value);
      else if (key == "hidden") c.hidden = std::stoi(value);
      else if (key == "kernel_time") c.kernel_time = std::stoi(value);
      else if (key == "kernel_pitch") c.kernel_pitch = std::stoi(value);
      else if (key == "attention_patch") c.attention_patch = std::stoi(value);
      else if (key == "attention") c.attention = std::stoi(value) != 0;
      else if (key == "output_bias") c.output_bias = std::stod(value);
      else if (key == "chunk_frames") c.chunk_frames = std::stoi(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else throw ConfigError("model config: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("model config: bad value for " + key + ": '" + value + "'");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Networks

namespace detail {

class Network {
 public:
  virtual ~Network() = default;
  struct Heads {
    Var main;  // positions x K (map outputs) or frames x K
    Var aux;   // chord boundary logits, frames x 1
  };
  /// x: positions x channels for spectral tasks, frames x dim otherwise.
  virtual Heads logits(Session& s, Var x, int frames) const = 0;
  /// True when main covers every (frame, pitch bin) position.
  virtual bool map_output() const = 0;
};

namespace {

using nn::BiLstm;
using nn::Conv2d;
using nn::Dense;
using nn::ParameterSet;
using nn::ResBlock;
using nn::Rng;
using nn::SelfAttention;

Index key_dim_for(Index dim) { return std::min<Index>(16, dim); }

class UNet final : public Network {
 public:
  UNet(const ModelConfig& c, ParameterSet& ps, Rng& rng) : bins_(c.pitch_bins), patch_(c.attention_patch) {
    const int C = c.width, kt = c.kernel_time, kp = c.kernel_pitch;
    in_ = Conv2d::make(ps, rng, "enc.in", c.in_channels, C, kt, kp);
    for (int i = 0; i < c.depth; ++i) res_.push_back(ResBlock::make(ps, rng, "enc.res" + std::to_string(i), C, kt, kp));
    down_ = Conv2d::make(ps, rng, "enc.down", C, 2 * C, kt, kp);
    bottom_ = Conv2d::make(ps, rng, "bottleneck.conv", 2 * C, 2 * C, kt, kp);
    if (c.attention) {
      const Index dim = 2 * C * patch_;
      attention_ = SelfAttention::make(ps, rng, "bottleneck.attention", dim, key_dim_for(dim));
    }
    up2_ = Conv2d::make(ps, rng, "dec.up2", 4 * C, C, kt, kp);
    up1_ = Conv2d::make(ps, rng, "dec.up1", 2 * C, C, kt, kp);
    head_ = Conv2d::make(ps, rng, "head", C, c.out_channels, 1, 1);
    use_attention_ = c.attention;
    channels_ = C;
  }

  Heads logits(Session& s, Var x, int T) const override {
    const int F = bins_, F2 = F / 2, F4 = F / 4;
    Var e1 = nn::relu(in_(s, x, T, F));
    for (const auto& r : res_) e1 = r(s, e1, T, F);
    Var e2 = nn::relu(down_(s, nn::pool_width(e1, T, F, 2), T, F2));
    Var b = nn::relu(bottom_(s, nn::pool_width(e2, T, F2, 2), T, F4));
    if (use_attention_) {
      const int ch = 2 * channels_;
      auto idx = nn::patches_index(T, F4, ch, patch_);
      auto inv = nn::invert_index(idx);
      const Index tokens = static_cast<Index>(T) * (F4 / patch_);
      Var tok = nn::gather(b, std::move(idx), tokens, static_cast<Index>(ch) * patch_);
      b = nn::gather(attention_(s, tok), std::move(inv), static_cast<Index>(T) * F4, ch);
    }
    Var u2 = nn::relu(up2_(s, nn::concat_cols(nn::upsample_width(b, T, F4, 2), e2), T, F2));
    Var u1 = nn::relu(up1_(s, nn::concat_cols(nn::upsample_width(u2, T, F2, 2), e1), T, F));
    return {head_(s, u1, T, F), Var()};
  }
  bool map_output() const override { return true; }

 private:
  int bins_, patch_, channels_ = 0;
  bool use_attention_ = true;
  Conv2d in_, down_, bottom_, up2_, up1_, head_;
  std::vector<ResBlock> res_;
  SelfAttention attention_;
};

class DrumNet final : public Network {
 public:
  DrumNet(const ModelConfig& c, ParameterSet& ps, Rng& rng) : bins_(c.pitch_bins), use_attention_(c.attention) {
    const int C = c.width, kt = c.kernel_time, kp = c.kernel_pitch;
    conv_[0] = Conv2d::make(ps, rng, "conv1", c.in_channels, C, kt, kp);
    conv_[1] = Conv2d::make(ps, rng, "conv2", C, C, kt, kp);
    conv_[2] = Conv2d::make(ps, rng, "conv3", C, 2 * C, kt, kp);
    conv_[3] = Conv2d::make(ps, rng, "conv4", 2 * C, 2 * C, kt, kp);
    conv_[4] = Conv2d::make(ps, rng, "conv5", 2 * C, 2 * C, kt, kp);
    channels_ = 2 * C;
    const Index dim = static_cast<Index>(channels_) * (bins_ / 8);
    if (use_attention_) attention_ = SelfAttention::make(ps, rng, "attention", dim, key_dim_for(dim));
    fc1_ = Dense::make(ps, rng, "fc1", dim, c.hidden);
    fc2_ = Dense::make(ps, rng, "fc2", c.hidden, c.hidden);
    head_ = Dense::make(ps, rng, "head", c.hidden, c.out_channels);
  }

  Heads logits(Session& s, Var x, int T) const override {
    int F = bins_;
    Var h = nn::relu(conv_[0](s, x, T, F));
    h = nn::relu(conv_[1](s, h, T, F));
    h = nn::pool_width(h, T, F, 2);
    F /= 2;
    h = nn::relu(conv_[2](s, h, T, F));
    h = nn::relu(conv_[3](s, h, T, F));
    h = nn::pool_width(h, T, F, 2);
    F /= 2;
    h = nn::relu(conv_[4](s, h, T, F));
    h = nn::pool_width(h, T, F, 2);
    F /= 2;
    Var frames = nn::gather(h, nn::frames_index(T, F, channels_), T, static_cast<Index>(channels_) * F);
    if (use_attention_) frames = attention_(s, frames);
    Var z = nn::relu(fc1_(s, frames));
    z = nn::relu(fc2_(s, z));
    return {head_(s, z), Var()};
  }
  bool map_output() const override { return false; }

 private:
  int bins_, channels_ = 0;
  bool use_attention_;
  Conv2d conv_[5];
  SelfAttention attention_;
  Dense fc1_, fc2_, head_;
};

class VocalPitchNet final : public Network {
 public:
  VocalPitchNet(const ModelConfig& c, ParameterSet& ps, Rng& rng) : bins_(c.pitch_bins) {
    const int C = c.width, kt = c.kernel_time, kp = c.kernel_pitch;
    in_ = Conv2d::make(ps, rng, "conv_in", c.in_channels, C, kt, kp);
    for (int i = 0; i < c.depth; ++i) res_.push_back(ResBlock::make(ps, rng, "res" + std::to_string(i), C, kt, kp));
    head_ = Conv2d::make(ps, rng, "head", C, 1, 1, 1);
  }
  Heads logits(Session& s, Var x, int T) const override {
    Var h = nn::relu(in_(s, x, T, bins_));
    for (const auto& r : res_) h = r(s, h, T, bins_);
    return {head_(s, h, T, bins_), Var()};
  }
  bool map_output() const override { return true; }

 private:
  int bins_;
  Conv2d in_, head_;
  std::vector<ResBlock> res_;
};

class VocalSegNet final : public Network {
 public:
  VocalSegNet(const ModelConfig& c, ParameterSet& ps, Rng& rng) : bins_(c.pitch_bins), channels_(c.width) {
    const int C = c.width, kt = c.kernel_time, kp = c.kernel_pitch;
    in_ = Conv2d::make(ps, rng, "conv_in", c.in_channels, C, kt, kp);
    for (int i = 0; i < std::max(1, c.depth); ++i)
      res_.push_back(ResBlock::make(ps, rng, "res" + std::to_string(i), C, kt, kp));
    fc_ = Dense::make(ps, rng, "fc", static_cast<Index>(C) * (bins_ / 16), c.hidden);
    head_ = Dense::make(ps, rng, "head", c.hidden, 2);
  }
  Heads logits(Session& s, Var x, int T) const override {
    int F = bins_;
    Var h = nn::relu(in_(s, x, T, F));
    h = nn::pool_width(h, T, F, 4);
    F /= 4;
    for (const auto& r : res_) h = r(s, h, T, F);
    h = nn::pool_width(h, T, F, 4);
    F /= 4;
    Var frames = nn::gather(h, nn::frames_index(T, F, channels_), T, static_cast<Index>(channels_) * F);
    return {head_(s, nn::relu(fc_(s, frames))), Var()};
  }
  bool map_output() const override { return false; }

 private:
  int bins_, channels_;
  Conv2d in_;
  std::vector<ResBlock> res_;
  Dense fc_, head_;
};

class ChordNet final : public Network {
 public:
  ChordNet(const ModelConfig& c, ParameterSet& ps, Rng& rng) : use_attention_(c.attention) {
    const int W = c.width;
    embed_ = Dense::make(ps, rng, "enc.embed", c.input_dim, W);
    if (use_attention_) enc_attention_ = SelfAttention::make(ps, rng, "enc.attention", W, key_dim_for(W));
    enc_out_ = Dense::make(ps, rng, "enc.out", W, W);
    seg_head_ = Dense::make(ps, rng, "seg_head", W, 1);
    dec_in_ = Dense::make(ps, rng, "dec.in", W + 1, W);
    if (use_attention_) dec_attention_ = SelfAttention::make(ps, rng, "dec.attention", W, key_dim_for(W));
    head_ = Dense::make(ps, rng, "head", W, kNumChordClasses);
  }
  Heads logits(Session& s, Var x, int) const override {
    Var e = nn::relu(embed_(s, x));
    if (use_attention_) e = enc_attention_(s, e);
    e = nn::relu(enc_out_(s, e));
    Var seg = seg_head_(s, e);
    Var d = nn::relu(dec_in_(s, nn::concat_cols(e, nn::sigmoid(seg))));
    if (use_attention_) d = dec_attention_(s, d);
    return {head_(s, d), seg};
  }
  bool map_output() const override { return false; }

 private:
  bool use_attention_;
  Dense embed_, enc_out_, seg_head_, dec_in_, head_;
  SelfAttention enc_attention_, dec_attention_;
};

class BeatNet final : public Network {
 public:
  BeatNet(const ModelConfig& c, ParameterSet& ps, Rng& rng) : use_attention_(c.attention) {
    Index in = c.input_dim;
    for (int i = 0; i < c.depth; ++i) {
      layers_.push_back(BiLstm::make(ps, rng, "blstm" + std::to_string(i), in, c.hidden));
      in = 2 * c.hidden;
    }
    if (use_attention_) attention_ = SelfAttention::make(ps, rng, "attention", in, key_dim_for(in));
    head_ = Dense::make(ps, rng, "head", in, 2);
  }
  Heads logits(Session& s, Var x, int) const override {
    Var h = x;
    for (const auto& l : layers_) h = l(s, h);
    if (use_attention_) h = attention_(s, h);
    return {head_(s, h), Var()};
  }
  bool map_output() const override { return false; }

 private:
  bool use_attention_;
  std::vector<BiLstm> layers_;
  SelfAttention attention_;
  Dense head_;
};

}  // namespace
}  // namespace detail

Model build_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  nn::Rng rng(config.seed);
  std::shared_ptr<const detail::Network> net;
  switch (config.task) {
    case Task::Music:
    case Task::MultiInstrument: net = std::make_shared<detail::UNet>(config, m.parameters, rng); break;
    case Task::Drum: net = std::make_shared<detail::DrumNet>(config, m.parameters, rng); break;
    case Task::VocalPitch: net = std::make_shared<detail::VocalPitchNet>(config, m.parameters, rng); break;
    case Task::VocalSeg: net = std::make_shared<detail::VocalSegNet>(config, m.parameters, rng); break;
    case Task::Chord: net = std::make_shared<detail::ChordNet>(config, m.parameters, rng); break;
    case Task::Beat: net = std::make_shared<detail::BeatNet>(config, m.parameters, rng); break;
  }
  m.network = std::move(net);
  if (config.task != Task::Chord) m.parameters.value(m.parameters.find("head.b")).setConstant(config.output_bias);
  return m;
}

std::int64_t count_params(const Model& model) { return model.parameters.count(); }

// ---------------------------------------------------------------------------
// Inputs and outputs

namespace {

struct NetInput {
  Matrix x;
  int frames = 0;
  TimeGrid grid;
};

[[noreturn]] void axis_error(const std::string& task, const std::string& axis, long expected, long got) {
  throw ContractError(task + " model input: " + axis + " axis expected " + std::to_string(expected) + ", got " +
                      std::to_string(got));
}

void check_hop(const ModelConfig& c, double hop) {
  if (std::abs(hop - c.hop_s()) > 1e-9)
    throw ContractError(task_name(c.task) + " model input: time axis hop expected " + std::to_string(c.hop_s()) +
                        " s, got " + std::to_string(hop) + " s");
}

NetInput prepare_input(const ModelConfig& c, const ModelInput& input) {
  const std::string name = task_name(c.task);
  NetInput out;
  switch (c.task) {
    case Task::Chord: {
      const auto* f = std::get_if<ChromaFeature>(&input);
      if (!f) throw ContractError(name + " model input: expected a chroma feature");
      if (f->data.cols() != c.input_dim) axis_error(name, "chroma", c.input_dim, f->data.cols());
      check_hop(c, f->grid.hop_s);
      out.x = f->data;
      out.grid = f->grid;
      break;
    }
    case Task::Beat: {
      const auto* f = std::get_if<SymbolicFeature>(&input);
      if (!f) throw ContractError(name + " model input: expected a symbolic feature");
      check_hop(c, f->grid.hop_s);
      out.x = f->stacked();
      if (out.x.cols() != c.input_dim) axis_error(name, "feature", c.input_dim, out.x.cols());
      out.grid = f->grid;
      break;
    }
    default: {
      const auto* f = std::get_if<SpectralFeature>(&input);
      if (!f) throw ContractError(name + " model input: expected a spectral feature");
      if (f->bins() != c.pitch_bins) axis_error(name, "bins", c.pitch_bins, f->bins());
      if (f->channels() != c.in_channels) axis_error(name, "channels", c.in_channels, f->channels());
      check_hop(c, f->grid.hop_s);
      const int T = f->frames(), F = f->bins();
      out.x.resize(static_cast<Index>(T) * F, f->channels());
      for (int ch = 0; ch < f->channels(); ++ch)
        Eigen::Map<RowMajor>(out.x.col(ch).data(), T, F) = f->data.channel(ch);
      out.grid = f->grid;
      break;
    }
  }
  out.frames = static_cast<int>(c.task == Task::Chord || c.task == Task::Beat ? out.x.rows()
                                                                               : out.x.rows() / c.pitch_bins);
  if (out.frames <= 0) axis_error(name, "frames", 1, 0);
  out.grid.n_frames = out.frames;
  return out;
}

int rows_per_frame(const Model& m) { return m.network->map_output() ? m.config.pitch_bins : 1; }

/// Logits (or probabilities) for all frames, evaluated in overlapping windows when the
/// input is longer than chunk_frames.
Matrix network_probabilities(const Model& m, const NetInput& in) {
  const int rpf = rows_per_frame(m);
  const bool softmax = m.config.task == Task::Chord;
  auto run = [&](const Matrix& x, int frames) {
    nn::Tape tape(false);
    Session s(tape, m.parameters);
    Var z = m.network->logits(s, tape.constant(x), frames).main;
    return Matrix(softmax ? nn::softmax_rows(z).value() : nn::sigmoid(z).value());
  };
  const int T = in.frames, chunk = m.config.chunk_frames;
  if (chunk <= 0 || T <= chunk) return run(in.x, T);
  const int margin = 16;
  Matrix out(in.x.rows(), m.config.task == Task::Chord ? kNumChordClasses : 0);
  for (int start = 0; start < T; start += chunk) {
    const int stop = std::min(T, start + chunk);
    const int lo = std::max(0, start - margin), hi = std::min(T, stop + margin);
    Matrix part = run(in.x.middleRows(static_cast<Index>(lo) * rpf, static_cast<Index>(hi - lo) * rpf), hi - lo);
    if (out.cols() != part.cols()) out.resize(static_cast<Index>(T) * rpf, part.cols());
    out.middleRows(static_cast<Index>(start) * rpf, static_cast<Index>(stop - start) * rpf) =
        part.middleRows(static_cast<Index>(start - lo) * rpf, static_cast<Index>(stop - start) * rpf);
  }
  return out;
}

/// Rearranges an activation tensor into the network's output layout.
Matrix target_matrix(const Model& m, const ActivationTensor& target, int frames) {
  const auto& c = m.config;
  const std::string name = task_name(c.task);
  const Tensor3d& v = target.values;
  if (v.frames() != frames) axis_error(name, "target frames", frames, v.frames());
  if (m.network->map_output()) {
    if (v.bins() != c.pitch_bins) axis_error(name, "target bins", c.pitch_bins, v.bins());
    if (v.channels() != c.out_channels) axis_error(name, "target channels", c.out_channels, v.channels());
    Matrix t(static_cast<Index>(frames) * c.pitch_bins, c.out_channels);
    for (int ch = 0; ch < c.out_channels; ++ch)
      Eigen::Map<RowMajor>(t.col(ch).data(), frames, c.pitch_bins) = v.channel(ch);
    return t;
  }
  if (v.bins() != c.out_channels) axis_error(name, "target bins", c.out_channels, v.bins());
  if (v.channels() != 1) axis_error(name, "target channels", 1, v.channels());
  return v.channel(0);
}

}  // namespace

ActivationTensor forward(const Model& model, const ModelInput& input) {
  NetInput in = prepare_input(model.config, input);
  Matrix probs = network_probabilities(model, in);
  ActivationTensor out;
  out.grid = in.grid;
  if (model.network->map_output()) {
    const int T = in.frames, F = model.config.pitch_bins;
    out.values = Tensor3d(T, F, static_cast<int>(probs.cols()));
    for (Index ch = 0; ch < probs.cols(); ++ch)
      out.values.channel(static_cast<int>(ch)) = Eigen::Map<const RowMajor>(probs.col(ch).data(), T, F);
  } else {
    out.values = Tensor3d(in.frames, static_cast<int>(probs.cols()), 1);
    out.values.channel(0) = probs;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train config: epochs must be non-negative");
  if (batch_size <= 0) throw ConfigError("train config: batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("train config: learning_rate must be a finite non-negative number");
  if (!(positive_weight > 0.0)) throw ConfigError("train config: positive_weight must be positive");
  if (!(segmentation_weight >= 0.0)) throw ConfigError("train config: segmentation_weight must be non-negative");
  for (double w : channel_weights)
    if (!(w >= 0.0)) throw ConfigError("train config: channel weights must be non-negative");
}

namespace {

Var loss_on_tape(const Model& m, Session& s, const TrainExample& ex, const TrainConfig& tc) {
  NetInput in = prepare_input(m.config, ex.input);
  Matrix target = target_matrix(m, ex.target, in.frames);
  if (target.size() > 0 && (target.minCoeff() < 0.0 || target.maxCoeff() > 1.0))
    throw Error(ErrorCode::Data, "training target values must lie in [0, 1]");
  nn::Tape& tape = s.tape();
  auto heads = m.network->logits(s, tape.constant(in.x), in.frames);
  if (m.config.task == Task::Chord) {
    Var loss = nn::softmax_cross_entropy(heads.main, target);
    if (tc.segmentation_weight > 0.0) {
      Matrix boundary(in.frames, 1);
      Index prev = -1;
      for (int t = 0; t < in.frames; ++t) {
        Index label;
        target.row(t).maxCoeff(&label);
        boundary(t, 0) = label != prev ? 1.0 : 0.0;
        prev = label;
      }
      loss = loss + nn::bce_with_logits(heads.aux, boundary, tc.positive_weight) * tc.segmentation_weight;
    }
    return loss;
  }
  const int K = m.config.out_channels;
  if (!tc.channel_weights.empty() && static_cast<int>(tc.channel_weights.size()) != K)
    throw ConfigError("train config: expected " + std::to_string(K) + " channel weights, got " +
                      std::to_string(tc.channel_weights.size()));
  double total_weight = 0.0;
  Var loss;
  for (int k = 0; k < K; ++k) {
    const double w = tc.channel_weights.empty() ? 1.0 : tc.channel_weights[k];
    if (w == 0.0) continue;
    Var term = nn::bce_with_logits(nn::col_block(heads.main, k, 1), target.col(k), tc.positive_weight) * w;
    loss = loss.valid() ? loss + term : term;
    total_weight += w;
  }
  if (!loss.valid()) throw ConfigError("train config: all channel weights are zero");
  return loss * (1.0 / total_weight);
}

}  // namespace

double example_loss(const Model& model, const TrainExample& example, const TrainConfig& tc) {
  nn::Tape tape(false);
  Session s(tape, model.parameters);
  return loss_on_tape(model, s, example, tc).value()(0, 0);
}

std::vector<double> train(Model& model, const std::vector<TrainExample>& dataset, const TrainConfig& tc) {
  tc.validate();
  if (dataset.empty()) throw Error(ErrorCode::Data, "training dataset is empty");
  const std::size_t n_params = model.parameters.size();
  std::vector<Matrix> grads(n_params), m1, m2;
  if (tc.optimizer == Optimizer::Adam) {
    for (std::size_t i = 0; i < n_params; ++i) {
      const Matrix& v = model.parameters.value(static_cast<int>(i));
      m1.push_back(Matrix::Zero(v.rows(), v.cols()));
      m2.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
  }
  nn::Rng rng(tc.seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> history;
  long step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    int batch = 0;
    for (std::size_t first = 0; first < order.size(); first += tc.batch_size, ++batch) {
      const std::size_t last = std::min(order.size(), first + tc.batch_size);
      for (std::size_t i = 0; i < n_params; ++i) {
        const Matrix& v = model.parameters.value(static_cast<int>(i));
        grads[i] = Matrix::Zero(v.rows(), v.cols());
      }
      for (std::size_t j = first; j < last; ++j) {
        nn::Tape tape(true);
        Session s(tape, model.parameters);
        Var loss = loss_on_tape(model, s, dataset[order[j]], tc);
        const double value = loss.value()(0, 0);
        if (!std::isfinite(value))
          throw Error(ErrorCode::Data, "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                           std::to_string(batch) + " (example " + std::to_string(order[j]) + ")");
        epoch_loss += value;
        tape.backward(loss);
        s.accumulate_grads(grads);
      }
      const double scale = 1.0 / static_cast<double>(last - first);
      ++step;
      for (std::size_t i = 0; i < n_params; ++i) {
        Matrix& p = model.parameters.value(static_cast<int>(i));
        Matrix g = grads[i] * scale;
        if (tc.optimizer == Optimizer::Sgd) {
          p -= tc.learning_rate * g;
        } else {
          constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
          m1[i] = b1 * m1[i] + (1.0 - b1) * g;
          m2[i] = b2 * m2[i] + (1.0 - b2) * g.cwiseAbs2();
          const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
          const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
          p.array() -= tc.learning_rate * (m1[i].array() / c1) / ((m2[i].array() / c2).sqrt() + eps);
        }
      }
    }
    history.push_back(epoch_loss / static_cast<double>(dataset.size()));
    model.loss_history.push_back(history.back());
    ++model.epochs_trained;
    if (tc.on_epoch && !tc.on_epoch(epoch, history.back())) break;
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'M', 'T', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  void need(std::size_t k) {
    if (n_ - pos_ < k) throw Error(ErrorCode::Model, "checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string str() {
    const std::uint32_t k = u32();
    need(k);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), k);
    pos_ += k;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_, pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* p, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const Model& model) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(model.config.to_text());
  w.u32(static_cast<std::uint32_t>(model.epochs_trained));
  w.u32(static_cast<std::uint32_t>(model.loss_history.size()));
  for (double l : model.loss_history) w.f64(l);
  w.u32(static_cast<std::uint32_t>(model.parameters.size()));
  for (std::size_t i = 0; i < model.parameters.size(); ++i) {
    const Matrix& v = model.parameters.value(static_cast<int>(i));
    w.str(model.parameters.name(static_cast<int>(i)));
    w.u32(static_cast<std::uint32_t>(v.rows()));
    w.u32(static_cast<std::uint32_t>(v.cols()));
    for (Index j = 0; j < v.size(); ++j) w.f64(v.data()[j]);
  }
  w.u32(crc_of(w.out.data(), w.out.size()));
  return w.out;
}

Model load_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw Error(ErrorCode::Model, "not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (tail.u32() != crc_of(bytes.data(), body)) {
    // Distinguish a newer format from corruption when the version field is intact.
    Reader head(bytes.data() + sizeof kMagic, 4);
    const std::uint32_t version = head.u32();
    if (version != kCheckpointVersion)
      throw Error(ErrorCode::Model, "unsupported checkpoint version " + std::to_string(version));
    throw Error(ErrorCode::Model, "checkpoint checksum mismatch (corrupted or truncated)");
  }
  Reader r(bytes.data() + sizeof kMagic, body - sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::Model, "unsupported checkpoint version " + std::to_string(version));
  ModelConfig config;
  try {
    config = ModelConfig::from_text(r.str());
    Model m = build_model(config);
    m.epochs_trained = static_cast<int>(r.u32());
    const std::uint32_t n_loss = r.u32();
    r.need(static_cast<std::size_t>(n_loss) * 8);
    for (std::uint32_t i = 0; i < n_loss; ++i) m.loss_history.push_back(r.f64());
    const std::uint32_t n_tensors = r.u32();
    if (n_tensors != m.parameters.size())
      throw Error(ErrorCode::Model, "checkpoint has " + std::to_string(n_tensors) + " tensors, model expects " +
                                        std::to_string(m.parameters.size()));
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
      const std::string name = r.str();
      const int idx = m.parameters.find(name);
      if (idx < 0) throw Error(ErrorCode::Model, "checkpoint tensor '" + name + "' is not part of the model");
      Matrix& v = m.parameters.value(idx);
      const std::uint32_t rows = r.u32(), cols = r.u32();
      if (rows != v.rows() || cols != v.cols())
        throw Error(ErrorCode::Model, "checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                                          std::to_string(cols) + ", expected " + std::to_string(v.rows()) + "x" +
                                          std::to_string(v.cols()));
      r.need(static_cast<std::size_t>(rows) * cols * 8);
      for (Index j = 0; j < v.size(); ++j) v.data()[j] = r.f64();
    }
    if (r.pos() != body - sizeof kMagic) throw Error(ErrorCode::Model, "checkpoint has trailing bytes");
    return m;
  } catch (const ConfigError& e) {
    throw Error(ErrorCode::Model, std::string("checkpoint config invalid: ") + e.what());
  }
}

void save_checkpoint_file(const Model& model, const std::string& path) {
  const auto bytes = save_checkpoint(model);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::Input, "cannot write checkpoint " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error(ErrorCode::Input, "cannot write checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error(ErrorCode::Input, "cannot write checkpoint " + path);
}

Model load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Model, "checkpoint not found: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return load_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(ErrorCode::Model, path + ": " + e.what());
  }
}

}  // namespace amt
