// Named parameter storage and the layer building blocks used by the model zoo.
#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "amt/nn/tape.hpp"

namespace amt::nn {

/// Deterministic uniform draws independent of the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform(0.0, 1.0) * n) % n; }

 private:
  std::mt19937_64 engine_;
};

class ParameterSet {
 public:
  int add(const std::string& name, Matrix init);
  int find(const std::string& name) const;  // -1 when absent
  std::size_t size() const { return values_.size(); }
  const std::string& name(int i) const { return names_[i]; }
  Matrix& value(int i) { return values_[i]; }
  const Matrix& value(int i) const { return values_[i]; }
  std::int64_t count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::map<std::string, int> lookup_;
};

/// Binds a ParameterSet to one tape for one forward (and optional backward) pass.
class Session {
 public:
  Session(Tape& tape, const ParameterSet& params);
  Var param(int index);
  /// Uses an existing variable for a parameter instead of a fresh leaf.
  void bind(int index, Var v);
  Tape& tape() { return tape_; }
  /// Adds d(loss)/d(param) of every bound parameter into grads (sized like params).
  void accumulate_grads(std::vector<Matrix>& grads) const;

 private:
  Tape& tape_;
  const ParameterSet& params_;
  std::vector<Var> bound_;
};

/// Glorot-uniform matrix of the given shape.
Matrix glorot(Rng& rng, Index rows, Index cols, Index fan_in, Index fan_out);

struct Dense {
  int weight = -1, bias = -1;
  static Dense make(ParameterSet& ps, Rng& rng, const std::string& name, Index in, Index out);
  Var operator()(Session& s, Var x) const;
};

struct Conv2d {
  int weight = -1, bias = -1;
  int kh = 3, kw = 3;
  static Conv2d make(ParameterSet& ps, Rng& rng, const std::string& name, Index cin, Index cout, int kh, int kw);
  Var operator()(Session& s, Var x, int height, int width) const;
};

/// relu(x + conv(relu(conv(x)))), channel count preserved.
struct ResBlock {
  Conv2d first, second;
  static ResBlock make(ParameterSet& ps, Rng& rng, const std::string& name, Index channels, int kh, int kw);
  Var operator()(Session& s, Var x, int height, int width) const;
};

/// Single-head scaled dot-product self-attention over token rows with a residual path:
/// x + softmax(x Wq (x Wk)^T / sqrt(dk)) x Wv.
struct SelfAttention {
  int wq = -1, wk = -1, wv = -1;
  Index key_dim = 0;
  static SelfAttention make(ParameterSet& ps, Rng& rng, const std::string& name, Index dim, Index key_dim);
  Var operator()(Session& s, Var tokens) const;
};

/// LSTM with gate order (input, forget, cell, output) and a single bias vector.
struct Lstm {
  int wx = -1, wh = -1, bias = -1;
  Index hidden = 0;
  static Lstm make(ParameterSet& ps, Rng& rng, const std::string& name, Index in, Index hidden);
  /// x: frames x in -> frames x hidden; reverse runs the recurrence from the last frame.
  Var operator()(Session& s, Var x, bool reverse = false) const;
  static std::int64_t parameter_count(Index in, Index hidden) { return 4 * hidden * (in + hidden + 1); }
};

struct BiLstm {
  Lstm forward, backward;
  static BiLstm make(ParameterSet& ps, Rng& rng, const std::string& name, Index in, Index hidden);
  Var operator()(Session& s, Var x) const;  // frames x 2*hidden
};

}  // namespace amt::nn
