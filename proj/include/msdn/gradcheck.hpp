#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msdn/parameter.hpp"

namespace msdn {

struct GradcheckOptions {
  double step = 1e-5;        // central difference half-width
  double tolerance = 1e-4;   // max relative error allowed
  std::uint64_t seed = 2024;
  std::string corrupt;       // name of a check whose analytic gradient is perturbed
};

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0;
  bool passed = false;
};

using GradFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of sum(f(inputs) * R), R a fixed random
// weight, with central finite differences for every element of every input.
// The relative error of one input is |analytic - numeric|_inf divided by the
// larger of both inf-norms; the maximum over inputs is returned.
double max_gradient_error(const GradFunction& f, const std::vector<Tensor<double>>& inputs,
                          Rng& rng, double step = 1e-5, bool corrupt = false);

std::vector<std::string> gradcheck_names();

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace msdn
