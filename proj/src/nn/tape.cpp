#include "amt/nn/tape.hpp"

#include <cmath>
#include <memory>

#include "amt/error.hpp"

namespace amt::nn {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Matrix value) { return push(std::move(value), {}, nullptr); }

Var Tape::variable(Matrix value) {
  Var v = push(std::move(value), {}, nullptr);
  nodes_.back().needs_grad = record_;
  return v;
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.tape() != this) throw ContractError("autodiff: operands recorded on different tapes");
      if (nodes_[in.id()].needs_grad) node.needs_grad = true;
    }
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_acc(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!record_) throw ContractError("autodiff: backward on a non-recording tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw ContractError("autodiff: loss must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_acc(loss.id()).setOnes();
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string("autodiff ") + op + ": shape " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
}

// Adds g into the accumulator of `target` when it participates in differentiation.
template <typename Expr>
void accumulate(Tape& t, int target, const Expr& g) {
  if (t.needs_grad(target)) t.grad_acc(target) += g;
}

}  // namespace

Var operator+(Var a, Var b) {
  require_same_shape(a, b, "add");
  int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    accumulate(t, ia, t.grad(self));
    accumulate(t, ib, t.grad(self));
  });
}

Var operator-(Var a, Var b) {
  require_same_shape(a, b, "sub");
  int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    accumulate(t, ia, t.grad(self));
    accumulate(t, ib, -t.grad(self));
  });
}

Var operator*(Var a, double s) {
  int ia = a.id();
  return a.tape()->push(a.value() * s, {a}, [ia, s](Tape& t, int self) { accumulate(t, ia, t.grad(self) * s); });
}

Var cwise_product(Var a, Var b) {
  require_same_shape(a, b, "cwise_product");
  int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    accumulate(t, ia, t.grad(self).cwiseProduct(t.value(ib)));
    accumulate(t, ib, t.grad(self).cwiseProduct(t.value(ia)));
  });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows())
    throw ContractError("autodiff matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()));
  int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_acc(ia).noalias() += t.grad(self) * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad_acc(ib).noalias() += t.value(ia).transpose() * t.grad(self);
  });
}

Var transpose(Var a) {
  int ia = a.id();
  return a.tape()->push(a.value().transpose(), {a},
                        [ia](Tape& t, int self) { accumulate(t, ia, t.grad(self).transpose()); });
}

Var add_row_bias(Var x, Var b) {
  if (b.rows() != 1 || b.cols() != x.cols())
    throw ContractError("autodiff add_row_bias: bias must be 1x" + std::to_string(x.cols()));
  int ix = x.id(), ib = b.id();
  Matrix out = x.value().rowwise() + b.value().row(0);
  return x.tape()->push(std::move(out), {x, b}, [ix, ib](Tape& t, int self) {
    accumulate(t, ix, t.grad(self));
    accumulate(t, ib, t.grad(self).colwise().sum());
  });
}

Var relu(Var x) {
  int ix = x.id();
  return x.tape()->push(x.value().cwiseMax(0.0), {x}, [ix](Tape& t, int self) {
    accumulate(t, ix, (t.value(ix).array() > 0.0).select(t.grad(self), 0.0));
  });
}

Var sigmoid(Var x) {
  int ix = x.id();
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return x.tape()->push(std::move(out), {x}, [ix](Tape& t, int self) {
    const Matrix& y = t.value(self);
    accumulate(t, ix, t.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var tanh(Var x) {
  int ix = x.id();
  Matrix out = x.value().array().tanh().matrix();
  return x.tape()->push(std::move(out), {x}, [ix](Tape& t, int self) {
    const Matrix& y = t.value(self);
    accumulate(t, ix, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

namespace {
Matrix softmax_of_rows(const Matrix& x) {
  Matrix out = x.colwise() - x.rowwise().maxCoeff();
  out = out.array().exp().matrix();
  Eigen::VectorXd s = out.rowwise().sum();
  for (Index r = 0; r < out.rows(); ++r) out.row(r) /= s(r);
  return out;
}
}  // namespace

Var softmax_rows(Var x) {
  int ix = x.id();
  return x.tape()->push(softmax_of_rows(x.value()), {x}, [ix](Tape& t, int self) {
    if (!t.needs_grad(ix)) return;
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Eigen::VectorXd dot = y.cwiseProduct(g).rowwise().sum();
    Matrix dx = g.colwise() - dot;
    t.grad_acc(ix) += y.cwiseProduct(dx);
  });
}

Var gather(Var x, std::vector<Index> index, Index rows, Index cols) {
  if (static_cast<Index>(index.size()) != rows * cols)
    throw ContractError("autodiff gather: index size does not match output shape");
  const Matrix& v = x.value();
  const Index n = v.size();
  Matrix out(rows, cols);
  for (Index i = 0; i < rows * cols; ++i) {
    if (index[i] < 0 || index[i] >= n) throw ContractError("autodiff gather: index out of range");
    out.data()[i] = v.data()[index[i]];
  }
  int ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix, index = std::move(index)](Tape& t, int self) {
    if (!t.needs_grad(ix)) return;
    Matrix& gx = t.grad_acc(ix);
    const Matrix& g = t.grad(self);
    for (std::size_t i = 0; i < index.size(); ++i) gx.data()[index[i]] += g.data()[i];
  });
}

Var row(Var x, Index r) {
  if (r < 0 || r >= x.rows()) throw ContractError("autodiff row: index out of range");
  int ix = x.id();
  return x.tape()->push(x.value().row(r), {x}, [ix, r](Tape& t, int self) {
    if (t.needs_grad(ix)) t.grad_acc(ix).row(r) += t.grad(self);
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ContractError("autodiff stack_rows: no rows");
  Tape* tape = rows.front().tape();
  const Index d = rows.front().cols();
  Matrix out(static_cast<Index>(rows.size()), d);
  std::vector<int> ids;
  ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].rows() != 1 || rows[i].cols() != d) throw ContractError("autodiff stack_rows: ragged rows");
    out.row(static_cast<Index>(i)) = rows[i].value();
    ids.push_back(rows[i].id());
  }
  // push() derives needs_grad from its listed inputs, so list one row that has it.
  Var anchor = rows.front();
  for (const Var& r : rows)
    if (tape->needs_grad(r.id())) anchor = r;
  return tape->push(std::move(out), {anchor}, [ids = std::move(ids)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (t.needs_grad(ids[i])) t.grad_acc(ids[i]) += g.row(static_cast<Index>(i));
  });
}

Var col_block(Var x, Index first, Index n) {
  if (first < 0 || n < 0 || first + n > x.cols()) throw ContractError("autodiff col_block: range out of bounds");
  int ix = x.id();
  return x.tape()->push(x.value().middleCols(first, n), {x}, [ix, first, n](Tape& t, int self) {
    if (t.needs_grad(ix)) t.grad_acc(ix).middleCols(first, n) += t.grad(self);
  });
}

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) throw ContractError("autodiff concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  int ia = a.id(), ib = b.id();
  Index ca = a.cols(), cb = b.cols();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib, ca, cb](Tape& t, int self) {
    accumulate(t, ia, t.grad(self).leftCols(ca));
    accumulate(t, ib, t.grad(self).rightCols(cb));
  });
}

Var sum(Var x) {
  int ix = x.id();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->push(std::move(out), {x}, [ix](Tape& t, int self) {
    if (t.needs_grad(ix)) t.grad_acc(ix).array() += t.grad(self)(0, 0);
  });
}

Var mean(Var x) {
  if (x.value().size() == 0) throw ContractError("autodiff mean: empty operand");
  return sum(x) * (1.0 / static_cast<double>(x.value().size()));
}

// ---------------------------------------------------------------------------

namespace {

// Column matrix of frames [y0, y1): rows are positions (y - y0) * width + x, columns
// are taps (ci * kh + dy) * kw + dx, so every tap is one contiguous column.
void im2col(const Matrix& x, int height, int width, int kh, int kw, int y0, int y1, Matrix& cols) {
  const Index cin = x.cols();
  const int ph = kh / 2, pw = kw / 2;
  cols.setZero(static_cast<Index>(y1 - y0) * width, cin * kh * kw);
  for (Index ci = 0; ci < cin; ++ci) {
    const double* src = x.col(ci).data();
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        double* dst = cols.col((ci * kh + dy) * kw + dx).data();
        const int oy = dy - ph, ox = dx - pw;
        const int x0 = std::max(0, -ox), x1 = std::min(width, width - ox);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= height || x1 <= x0) continue;
          const double* s = src + static_cast<Index>(sy) * width + ox;
          double* d = dst + static_cast<Index>(y - y0) * width;
          for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
        }
      }
    }
  }
}

void col2im_add(const Matrix& cols, Matrix& gx, int height, int width, int kh, int kw, int y0, int y1) {
  const Index cin = gx.cols();
  const int ph = kh / 2, pw = kw / 2;
  for (Index ci = 0; ci < cin; ++ci) {
    double* dst = gx.col(ci).data();
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const double* src = cols.col((ci * kh + dy) * kw + dx).data();
        const int oy = dy - ph, ox = dx - pw;
        const int x0 = std::max(0, -ox), x1 = std::min(width, width - ox);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= height || x1 <= x0) continue;
          double* d = dst + static_cast<Index>(sy) * width + ox;
          const double* s = src + static_cast<Index>(y - y0) * width;
          for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
        }
      }
    }
  }
}

// Frames per im2col tile, sized so a tile's column matrix stays around 256 KiB.
int tile_frames(int width, Index taps) {
  const Index per_frame = static_cast<Index>(width) * taps;
  return static_cast<int>(std::max<Index>(1, 32768 / std::max<Index>(1, per_frame)));
}

void require_map(const Var& x, int height, int width, const char* op) {
  if (height <= 0 || width <= 0 || x.rows() != static_cast<Index>(height) * width)
    throw ContractError(std::string("autodiff ") + op + ": map has " + std::to_string(x.rows()) +
                        " positions, expected " + std::to_string(height) + "x" + std::to_string(width));
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, int height, int width, int kh, int kw) {
  require_map(x, height, width, "conv2d");
  if (kh <= 0 || kw <= 0 || kh % 2 == 0 || kw % 2 == 0)
    throw ContractError("autodiff conv2d: kernel sizes must be odd and positive");
  if (weight.rows() != x.cols() * kh * kw)
    throw ContractError("autodiff conv2d: weight has " + std::to_string(weight.rows()) + " rows, expected " +
                        std::to_string(x.cols() * kh * kw));
  if (bias.rows() != 1 || bias.cols() != weight.cols())
    throw ContractError("autodiff conv2d: bias must be 1x" + std::to_string(weight.cols()));
  const Matrix& w = weight.value();
  const int tile = tile_frames(width, w.rows());
  Matrix out(x.rows(), w.cols());
  Matrix cols;
  for (int y0 = 0; y0 < height; y0 += tile) {
    const int y1 = std::min(height, y0 + tile);
    im2col(x.value(), height, width, kh, kw, y0, y1, cols);
    out.middleRows(static_cast<Index>(y0) * width, cols.rows()).noalias() = cols * w;
  }
  out.rowwise() += bias.value().row(0);
  int ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape()->push(std::move(out), {x, weight, bias}, [ix, iw, ib, height, width, kh, kw](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& w = t.value(iw);
    if (t.needs_grad(ib)) t.grad_acc(ib) += g.colwise().sum();
    const bool need_w = t.needs_grad(iw), need_x = t.needs_grad(ix);
    if (!need_w && !need_x) return;
    const int tile = tile_frames(width, w.rows());
    Matrix cols, gcols;
    for (int y0 = 0; y0 < height; y0 += tile) {
      const int y1 = std::min(height, y0 + tile);
      const auto g_tile = g.middleRows(static_cast<Index>(y0) * width, static_cast<Index>(y1 - y0) * width);
      if (need_w) {
        im2col(t.value(ix), height, width, kh, kw, y0, y1, cols);
        t.grad_acc(iw).noalias() += cols.transpose() * g_tile;
      }
      if (need_x) {
        gcols.noalias() = g_tile * w.transpose();
        col2im_add(gcols, t.grad_acc(ix), height, width, kh, kw, y0, y1);
      }
    }
  });
}

Var pool_width(Var x, int height, int width, int factor) {
  require_map(x, height, width, "pool_width");
  if (factor <= 0 || width % factor != 0) throw ContractError("autodiff pool_width: factor must divide width");
  const int ow = width / factor;
  const Index n = static_cast<Index>(height) * ow;
  Matrix out = Matrix::Zero(n, x.cols());
  const Matrix& v = x.value();
  for (Index c = 0; c < v.cols(); ++c)
    for (Index p = 0; p < n; ++p) {
      double s = 0.0;
      for (int i = 0; i < factor; ++i) s += v(p * factor + i, c);
      out(p, c) = s / factor;
    }
  int ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix, factor, n](Tape& t, int self) {
    if (!t.needs_grad(ix)) return;
    Matrix& gx = t.grad_acc(ix);
    const Matrix& g = t.grad(self);
    for (Index c = 0; c < g.cols(); ++c)
      for (Index p = 0; p < n; ++p)
        for (int i = 0; i < factor; ++i) gx(p * factor + i, c) += g(p, c) / factor;
  });
}

Var upsample_width(Var x, int height, int width, int factor) {
  require_map(x, height, width, "upsample_width");
  if (factor <= 0) throw ContractError("autodiff upsample_width: factor must be positive");
  const Index n = static_cast<Index>(height) * width;
  Matrix out(n * factor, x.cols());
  const Matrix& v = x.value();
  for (Index c = 0; c < v.cols(); ++c)
    for (Index p = 0; p < n; ++p)
      for (int i = 0; i < factor; ++i) out(p * factor + i, c) = v(p, c);
  int ix = x.id();
  return x.tape()->push(std::move(out), {x}, [ix, factor, n](Tape& t, int self) {
    if (!t.needs_grad(ix)) return;
    Matrix& gx = t.grad_acc(ix);
    const Matrix& g = t.grad(self);
    for (Index c = 0; c < g.cols(); ++c)
      for (Index p = 0; p < n; ++p)
        for (int i = 0; i < factor; ++i) gx(p, c) += g(p * factor + i, c);
  });
}

std::vector<Index> frames_index(int height, int width, int channels) {
  // out is height x (channels * width), column c * width + f.
  std::vector<Index> idx(static_cast<std::size_t>(height) * width * channels);
  const Index positions = static_cast<Index>(height) * width;
  for (int c = 0; c < channels; ++c)
    for (int f = 0; f < width; ++f)
      for (int t = 0; t < height; ++t) {
        const Index out_col = static_cast<Index>(c) * width + f;
        idx[out_col * height + t] = static_cast<Index>(c) * positions + static_cast<Index>(t) * width + f;
      }
  return idx;
}

std::vector<Index> patches_index(int height, int width, int channels, int patch) {
  if (patch <= 0 || width % patch != 0) throw ContractError("patches_index: patch must divide width");
  // out is (height * width / patch) x (channels * patch); token k = t * (width/patch) + j.
  const int per_row = width / patch;
  const Index tokens = static_cast<Index>(height) * per_row;
  const Index positions = static_cast<Index>(height) * width;
  std::vector<Index> idx(static_cast<std::size_t>(tokens * channels * patch));
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < patch; ++i)
      for (Index k = 0; k < tokens; ++k) {
        const Index t = k / per_row, j = k % per_row;
        const Index out_col = static_cast<Index>(c) * patch + i;
        idx[out_col * tokens + k] = static_cast<Index>(c) * positions + t * width + j * patch + i;
      }
  return idx;
}

std::vector<Index> invert_index(const std::vector<Index>& index) {
  std::vector<Index> inv(index.size(), -1);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= static_cast<Index>(index.size()) || inv[index[i]] != -1)
      throw ContractError("invert_index: not a permutation");
    inv[index[i]] = static_cast<Index>(i);
  }
  return inv;
}

// ---------------------------------------------------------------------------

Var bce_with_logits(Var logits, const Matrix& target, double pos_weight) {
  if (target.rows() != logits.rows() || target.cols() != logits.cols())
    throw ContractError("bce_with_logits: target shape differs from logits");
  const Matrix& z = logits.value();
  const double n = static_cast<double>(z.size());
  // -[w y log s(z) + (1 - y) log(1 - s(z))] with log s(z) = -softplus(-z).
  auto softplus = [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  double total = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    const double y = target.data()[i], v = z.data()[i];
    total += pos_weight * y * softplus(-v) + (1.0 - y) * softplus(v);
  }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  int iz = logits.id();
  return logits.tape()->push(std::move(out), {logits}, [iz, target, pos_weight, n](Tape& t, int self) {
    if (!t.needs_grad(iz)) return;
    const Matrix& z = t.value(iz);
    const double g = t.grad(self)(0, 0) / n;
    Matrix& gz = t.grad_acc(iz);
    for (Index i = 0; i < z.size(); ++i) {
      const double y = target.data()[i];
      const double s = 1.0 / (1.0 + std::exp(-z.data()[i]));
      gz.data()[i] += g * (-pos_weight * y * (1.0 - s) + (1.0 - y) * s);
    }
  });
}

Var softmax_cross_entropy(Var logits, const Matrix& target) {
  if (target.rows() != logits.rows() || target.cols() != logits.cols())
    throw ContractError("softmax_cross_entropy: target shape differs from logits");
  const Matrix& z = logits.value();
  Eigen::VectorXd mx = z.rowwise().maxCoeff();
  Matrix shifted = z.colwise() - mx;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix logp = shifted.colwise() - lse;
  const double rows = static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = -(target.cwiseProduct(logp)).sum() / rows;
  int iz = logits.id();
  return logits.tape()->push(std::move(out), {logits}, [iz, target, rows](Tape& t, int self) {
    if (!t.needs_grad(iz)) return;
    const Matrix p = softmax_of_rows(t.value(iz));
    Eigen::VectorXd mass = target.rowwise().sum();
    Matrix g = p.array().colwise() * mass.array();
    g -= target;
    t.grad_acc(iz) += g * (t.grad(self)(0, 0) / rows);
  });
}

}  // namespace amt::nn
