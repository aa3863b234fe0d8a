#pragma once

#include <functional>
#include <vector>

#include "spacy/autodiff/tape.hpp"

namespace spacy::ad {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Builds a scalar on the tape from leaves holding the given parameter values.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares reverse-mode gradients with central differences, coordinate by
// coordinate. Relative error is |a - n| / max(|a|, |n|, floor). Throws
// DomainError if f is non-finite at a probe point.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& theta, double step = 1e-5,
                           double tol = 1e-4, double floor = 1e-6);

}  // namespace spacy::ad
