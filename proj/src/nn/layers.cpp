#include "amt/nn/layers.hpp"

#include <cmath>

#include "amt/error.hpp"

namespace amt::nn {

int ParameterSet::add(const std::string& name, Matrix init) {
  if (lookup_.count(name)) throw ContractError("duplicate parameter name " + name);
  names_.push_back(name);
  values_.push_back(std::move(init));
  const int id = static_cast<int>(values_.size()) - 1;
  lookup_[name] = id;
  return id;
}

int ParameterSet::find(const std::string& name) const {
  auto it = lookup_.find(name);
  return it == lookup_.end() ? -1 : it->second;
}

std::int64_t ParameterSet::count() const {
  std::int64_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Session::Session(Tape& tape, const ParameterSet& params) : tape_(tape), params_(params), bound_(params.size()) {}

Var Session::param(int index) {
  Var& v = bound_.at(static_cast<std::size_t>(index));
  if (!v.valid()) v = tape_.variable(params_.value(index));
  return v;
}

void Session::bind(int index, Var v) {
  const Matrix& expected = params_.value(index);
  if (v.rows() != expected.rows() || v.cols() != expected.cols())
    throw ContractError("session: bound variable has the wrong shape for " + params_.name(index));
  bound_.at(static_cast<std::size_t>(index)) = v;
}

void Session::accumulate_grads(std::vector<Matrix>& grads) const {
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i].valid() || bound_[i].grad().size() == 0) continue;
    grads[i] += bound_[i].grad();
  }
}

Matrix glorot(Rng& rng, Index rows, Index cols, Index fan_in, Index fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

Dense Dense::make(ParameterSet& ps, Rng& rng, const std::string& name, Index in, Index out) {
  Dense d;
  d.weight = ps.add(name + ".w", glorot(rng, in, out, in, out));
  d.bias = ps.add(name + ".b", Matrix::Zero(1, out));
  return d;
}

Var Dense::operator()(Session& s, Var x) const { return add_row_bias(matmul(x, s.param(weight)), s.param(bias)); }

Conv2d Conv2d::make(ParameterSet& ps, Rng& rng, const std::string& name, Index cin, Index cout, int kh, int kw) {
  Conv2d c;
  c.kh = kh;
  c.kw = kw;
  const Index taps = cin * kh * kw;
  c.weight = ps.add(name + ".w", glorot(rng, taps, cout, taps, cout * kh * kw));
  c.bias = ps.add(name + ".b", Matrix::Zero(1, cout));
  return c;
}

Var Conv2d::operator()(Session& s, Var x, int height, int width) const {
  return conv2d(x, s.param(weight), s.param(bias), height, width, kh, kw);
}

ResBlock ResBlock::make(ParameterSet& ps, Rng& rng, const std::string& name, Index channels, int kh, int kw) {
  ResBlock r;
  r.first = Conv2d::make(ps, rng, name + ".conv1", channels, channels, kh, kw);
  r.second = Conv2d::make(ps, rng, name + ".conv2", channels, channels, kh, kw);
  return r;
}

Var ResBlock::operator()(Session& s, Var x, int height, int width) const {
  Var h = relu(first(s, x, height, width));
  return relu(x + second(s, h, height, width));
}

SelfAttention SelfAttention::make(ParameterSet& ps, Rng& rng, const std::string& name, Index dim, Index key_dim) {
  SelfAttention a;
  a.key_dim = key_dim;
  a.wq = ps.add(name + ".q", glorot(rng, dim, key_dim, dim, key_dim));
  a.wk = ps.add(name + ".k", glorot(rng, dim, key_dim, dim, key_dim));
  // Small value projection keeps the block close to identity at initialization.
  Matrix wv = glorot(rng, dim, dim, dim, dim) * 0.1;
  a.wv = ps.add(name + ".v", std::move(wv));
  return a;
}

Var SelfAttention::operator()(Session& s, Var tokens) const {
  Var q = matmul(tokens, s.param(wq));
  Var k = matmul(tokens, s.param(wk));
  Var v = matmul(tokens, s.param(wv));
  Var weights = softmax_rows(matmul(q, transpose(k)) * (1.0 / std::sqrt(static_cast<double>(key_dim))));
  return tokens + matmul(weights, v);
}

Lstm Lstm::make(ParameterSet& ps, Rng& rng, const std::string& name, Index in, Index hidden) {
  Lstm l;
  l.hidden = hidden;
  l.wx = ps.add(name + ".wx", glorot(rng, in, 4 * hidden, in, 4 * hidden));
  l.wh = ps.add(name + ".wh", glorot(rng, hidden, 4 * hidden, hidden, 4 * hidden));
  Matrix b = Matrix::Zero(1, 4 * hidden);
  b.middleCols(hidden, hidden).setOnes();  // forget-gate bias
  l.bias = ps.add(name + ".b", std::move(b));
  return l;
}

Var Lstm::operator()(Session& s, Var x, bool reverse) const {
  const Index frames = x.rows();
  if (frames == 0) throw ContractError("lstm: empty sequence");
  Tape& tape = s.tape();
  Var gates_in = add_row_bias(matmul(x, s.param(wx)), s.param(bias));
  Var w_h = s.param(wh);
  Var h = tape.constant(Matrix::Zero(1, hidden));
  Var c = tape.constant(Matrix::Zero(1, hidden));
  std::vector<Var> outputs(static_cast<std::size_t>(frames));
  for (Index step = 0; step < frames; ++step) {
    const Index t = reverse ? frames - 1 - step : step;
    Var g = row(gates_in, t) + matmul(h, w_h);
    Var i = sigmoid(col_block(g, 0, hidden));
    Var f = sigmoid(col_block(g, hidden, hidden));
    Var u = tanh(col_block(g, 2 * hidden, hidden));
    Var o = sigmoid(col_block(g, 3 * hidden, hidden));
    c = cwise_product(f, c) + cwise_product(i, u);
    h = cwise_product(o, tanh(c));
    outputs[static_cast<std::size_t>(t)] = h;
  }
  return stack_rows(outputs);
}

BiLstm BiLstm::make(ParameterSet& ps, Rng& rng, const std::string& name, Index in, Index hidden) {
  BiLstm b;
  b.forward = Lstm::make(ps, rng, name + ".fwd", in, hidden);
  b.backward = Lstm::make(ps, rng, name + ".bwd", in, hidden);
  return b;
}

Var BiLstm::operator()(Session& s, Var x) const { return concat_cols(forward(s, x, false), backward(s, x, true)); }

}  // namespace amt::nn
