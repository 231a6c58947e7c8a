// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Feature maps are stored as positions x channels, with position p = t * width + f
// (t = frame, f = pitch/frequency bin), so every channel is one contiguous column.
#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <vector>

namespace amt::nn {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// With recording off no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every variable. loss must be 1x1.
  void backward(Var loss);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // -- used by op implementations --
  using Backward = std::function<void(Tape&, int self)>;
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  /// Gradient accumulator for node id, zero-initialized on first use.
  Matrix& grad_acc(int id);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };
  bool record_;
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, double s);
Var cwise_product(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
/// x (n x d) + b (1 x d) broadcast over rows.
Var add_row_bias(Var x, Var b);

Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var softmax_rows(Var x);

// ---------------------------------------------------------------------------
// Shape manipulation

/// out(i) = x(index[i]) over column-major linear indices; backward scatter-adds.
Var gather(Var x, std::vector<Index> index, Index rows, Index cols);
Var row(Var x, Index r);
Var stack_rows(const std::vector<Var>& rows);
Var col_block(Var x, Index first, Index n);
Var concat_cols(Var a, Var b);
Var sum(Var x);
Var mean(Var x);

// ---------------------------------------------------------------------------
// Feature-map ops (positions x channels, height x width positions)

/// Same-padded stride-1 2-D convolution. weight: (cin*kh*kw) x cout, bias: 1 x cout.
Var conv2d(Var x, Var weight, Var bias, int height, int width, int kh, int kw);
/// Average pooling by `factor` along the width axis (width must divide).
Var pool_width(Var x, int height, int width, int factor);
/// Nearest-neighbour upsampling by `factor` along the width axis.
Var upsample_width(Var x, int height, int width, int factor);

/// Index maps between a feature map and row-per-frame / row-per-patch layouts.
std::vector<Index> frames_index(int height, int width, int channels);
std::vector<Index> patches_index(int height, int width, int channels, int patch);
std::vector<Index> invert_index(const std::vector<Index>& index);

// ---------------------------------------------------------------------------
// Losses (mean over elements, 1x1 result)

/// Binary cross-entropy on logits; positives weighted by pos_weight.
Var bce_with_logits(Var logits, const Matrix& target, double pos_weight = 1.0);
/// Categorical cross-entropy between softmax(logits) rows and target distributions, mean over rows.
Var softmax_cross_entropy(Var logits, const Matrix& target);

}  // namespace amt::nn
