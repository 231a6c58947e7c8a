#include "amt/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "amt/error.hpp"
#include "amt/nn/layers.hpp"

namespace amt::nn {

namespace {

Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

double projected_value(const GradFunction& f, const std::vector<Matrix>& inputs, const Matrix& proj) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  Var out = f(tape, vars);
  return out.value().cwiseProduct(proj).sum();
}

}  // namespace

double gradient_check(const GradFunction& f, const std::vector<Matrix>& inputs, std::uint64_t seed, double h) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tape tape(true);
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  Var out = f(tape, vars);
  const Matrix proj = random_matrix(rng, out.rows(), out.cols());
  Var loss = sum(cwise_product(out, tape.constant(proj)));
  tape.backward(loss);

  double worst = 0.0;
  std::vector<Matrix> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix analytic = vars[k].grad();
    if (analytic.size() == 0) analytic = Matrix::Zero(inputs[k].rows(), inputs[k].cols());
    Matrix numeric(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = work[k].data()[i];
      work[k].data()[i] = orig + h;
      const double up = projected_value(f, work, proj);
      work[k].data()[i] = orig - h;
      const double down = projected_value(f, work, proj);
      work[k].data()[i] = orig;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double denom = analytic.norm() + numeric.norm();
    if (denom < 1e-12) continue;
    worst = std::max(worst, (analytic - numeric).norm() / denom);
  }
  return worst;
}

namespace {

// The layer's parameters become check inputs 1..n so both data and parameter
// gradients are verified.
double check_layer(std::uint64_t seed, Index in_rows, Index in_cols,
                   const std::function<void(ParameterSet&, Rng&)>& build,
                   const std::function<Var(Session&, Var)>& apply) {
  Rng rng(seed);
  ParameterSet ps;
  build(ps, rng);
  // Perturb zero-initialized biases so every parameter has a non-trivial gradient path.
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Matrix& v = ps.value(static_cast<int>(i));
    for (Index j = 0; j < v.size(); ++j) v.data()[j] += rng.uniform(-0.1, 0.1);
  }
  std::vector<Matrix> inputs{random_matrix(rng, in_rows, in_cols)};
  for (std::size_t i = 0; i < ps.size(); ++i) inputs.push_back(ps.value(static_cast<int>(i)));
  GradFunction f = [&](Tape& tape, const std::vector<Var>& vars) {
    Session s(tape, ps);
    for (std::size_t i = 1; i < vars.size(); ++i) s.bind(static_cast<int>(i - 1), vars[i]);
    return apply(s, vars[0]);
  };
  return gradient_check(f, inputs, seed);
}

double check_op(std::uint64_t seed, const std::vector<std::pair<Index, Index>>& shapes, const GradFunction& f,
                double scale = 1.0) {
  Rng rng(seed);
  std::vector<Matrix> inputs;
  for (auto [r, c] : shapes) inputs.push_back(random_matrix(rng, r, c, scale));
  return gradient_check(f, inputs, seed);
}

}  // namespace

std::vector<NamedGradCheck> standard_gradient_checks() {
  std::vector<NamedGradCheck> checks;
  checks.push_back({"elementwise", [](std::uint64_t seed) {
                      return check_op(seed, {{4, 3}, {4, 3}}, [](Tape&, const std::vector<Var>& v) {
                        return cwise_product(v[0] + v[1], v[0] - v[1]) * 0.7;
                      });
                    }});
  checks.push_back({"matmul_bias", [](std::uint64_t seed) {
                      return check_op(seed, {{5, 3}, {3, 4}, {1, 4}}, [](Tape&, const std::vector<Var>& v) {
                        return add_row_bias(matmul(v[0], transpose(transpose(v[1]))), v[2]);
                      });
                    }});
  checks.push_back({"activations", [](std::uint64_t seed) {
                      return check_op(seed, {{4, 5}}, [](Tape&, const std::vector<Var>& v) {
                        return concat_cols(sigmoid(v[0]), concat_cols(tanh(v[0]), relu(v[0])));
                      });
                    }});
  checks.push_back({"softmax", [](std::uint64_t seed) {
                      return check_op(seed, {{4, 6}}, [](Tape&, const std::vector<Var>& v) {
                        return softmax_rows(v[0] * 2.0);
                      });
                    }});
  checks.push_back({"reshape", [](std::uint64_t seed) {
                      return check_op(seed, {{3 * 4, 2}}, [](Tape&, const std::vector<Var>& v) {
                        Var frames = gather(v[0], frames_index(3, 4, 2), 3, 8);
                        Var patches = gather(v[0], patches_index(3, 4, 2, 2), 6, 4);
                        Var rows = stack_rows({row(patches, 4), row(patches, 1)});
                        return stack_rows({sum(cwise_product(frames, frames)),
                                           mean(cwise_product(col_block(patches, 1, 2), col_block(patches, 1, 2))),
                                           mean(cwise_product(rows, rows))});
                      });
                    }});
  checks.push_back({"pool_upsample", [](std::uint64_t seed) {
                      return check_op(seed, {{3 * 8, 2}}, [](Tape&, const std::vector<Var>& v) {
                        Var pooled = pool_width(v[0], 3, 8, 2);
                        return cwise_product(upsample_width(pooled, 3, 4, 2), v[0]);
                      });
                    }});
  checks.push_back({"conv2d", [](std::uint64_t seed) {
                      return check_layer(
                          seed, 4 * 5, 2,
                          [](ParameterSet& ps, Rng& rng) { Conv2d::make(ps, rng, "conv", 2, 3, 3, 5); },
                          [](Session& s, Var x) {
                            Conv2d c{0, 1, 3, 5};
                            return c(s, x, 4, 5);
                          });
                    }});
  checks.push_back({"dense", [](std::uint64_t seed) {
                      return check_layer(
                          seed, 5, 4, [](ParameterSet& ps, Rng& rng) { Dense::make(ps, rng, "dense", 4, 3); },
                          [](Session& s, Var x) { return Dense{0, 1}(s, x); });
                    }});
  checks.push_back({"resblock", [](std::uint64_t seed) {
                      return check_layer(
                          seed, 3 * 4, 2,
                          [](ParameterSet& ps, Rng& rng) { ResBlock::make(ps, rng, "res", 2, 3, 3); },
                          [](Session& s, Var x) {
                            ResBlock r{{0, 1, 3, 3}, {2, 3, 3, 3}};
                            return r(s, x, 3, 4);
                          });
                    }});
  checks.push_back({"attention", [](std::uint64_t seed) {
                      return check_layer(
                          seed, 6, 4,
                          [](ParameterSet& ps, Rng& rng) { SelfAttention::make(ps, rng, "att", 4, 3); },
                          [](Session& s, Var x) { return SelfAttention{0, 1, 2, 3}(s, x); });
                    }});
  checks.push_back({"lstm", [](std::uint64_t seed) {
                      return check_layer(
                          seed, 5, 3, [](ParameterSet& ps, Rng& rng) { Lstm::make(ps, rng, "lstm", 3, 4); },
                          [](Session& s, Var x) { return Lstm{0, 1, 2, 4}(s, x); });
                    }});
  checks.push_back({"bilstm", [](std::uint64_t seed) {
                      return check_layer(
                          seed, 4, 3, [](ParameterSet& ps, Rng& rng) { BiLstm::make(ps, rng, "bi", 3, 2); },
                          [](Session& s, Var x) {
                            BiLstm b{{0, 1, 2, 2}, {3, 4, 5, 2}};
                            return b(s, x);
                          });
                    }});
  checks.push_back({"bce_loss", [](std::uint64_t seed) {
                      Rng rng(seed + 17);
                      Matrix target(4, 3);
                      for (Index i = 0; i < target.size(); ++i) target.data()[i] = rng.uniform(0.0, 1.0) < 0.3;
                      return check_op(seed, {{4, 3}}, [target](Tape&, const std::vector<Var>& v) {
                        return bce_with_logits(v[0] * 3.0, target, 2.5);
                      });
                    }});
  checks.push_back({"cross_entropy_loss", [](std::uint64_t seed) {
                      Rng rng(seed + 23);
                      Matrix target = Matrix::Zero(5, 4);
                      for (Index r = 0; r < 5; ++r) target(r, static_cast<Index>(rng.below(4))) = 1.0;
                      return check_op(seed, {{5, 4}}, [target](Tape&, const std::vector<Var>& v) {
                        return softmax_cross_entropy(v[0] * 2.0, target);
                      });
                    }});
  return checks;
}

}  // namespace amt::nn
