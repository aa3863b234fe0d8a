#pragma once

#include <Eigen/Dense>

#include "spacy/autodiff/ops.hpp"

namespace spacy::scm {

// Matrix exponential by scaling and squaring around an 18-term Taylor core.
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

// h(M) = tr(exp(M o M)) - D for a square M.
double acyclicity(const Eigen::MatrixXd& m);

// Same on the tape; m is (D, D). Gradient is exp(M o M)^T o 2M.
ad::Var acyclicity(ad::Var m);

}  // namespace spacy::scm
