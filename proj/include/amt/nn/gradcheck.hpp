// Finite-difference verification of the tape's analytic gradients.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "amt/nn/tape.hpp"

namespace amt::nn {

using GradFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||) of the gradient of
/// sum(f(inputs) .* R) for a random projection R, worst over all inputs. Central
/// differences with step h.
double gradient_check(const GradFunction& f, const std::vector<Matrix>& inputs, std::uint64_t seed,
                      double h = 1e-5);

struct NamedGradCheck {
  std::string name;
  /// Builds random inputs from the seed, returns the relative error.
  std::function<double(std::uint64_t seed)> run;
};

/// One check per op family and layer type used by the model zoo.
std::vector<NamedGradCheck> standard_gradient_checks();

}  // namespace amt::nn
