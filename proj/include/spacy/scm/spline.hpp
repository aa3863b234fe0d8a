#pragma once

#include <array>
#include <cstddef>

#include "spacy/autodiff/ops.hpp"

namespace spacy::scm {

inline constexpr std::size_t kSplineBins = 8;
inline constexpr std::size_t kSplineParams = 3 * kSplineBins - 1;
inline constexpr double kSplineBound = 5.0;
inline constexpr double kMinBinSize = 1e-3;
inline constexpr double kMinDerivative = 1e-3;

// Unnormalized monotone rational-quadratic spline parameters for one scalar.
// Layout: widths [0, K), heights [K, 2K), interior derivatives [2K, 3K-1).
struct SplineParams {
  std::array<double, kSplineParams> raw{};
  double bound = kSplineBound;

  // Equal bins and unit derivatives, i.e. the identity map.
  static SplineParams identity(double bound = kSplineBound);
};

// Raw derivative value that maps to a unit knot derivative.
double identity_derivative_raw();

// Knot positions, values and derivatives after the constraint mapping.
struct SplineKnots {
  std::array<double, kSplineBins + 1> x{}, y{}, slope{};
};
SplineKnots constrain(const SplineParams& p);

struct SplineResult {
  double value;
  double log_det;
};

// Throws std::domain_error for non-finite parameters or inputs.
SplineResult spline_forward(double x, const SplineParams& p);
SplineResult spline_inverse(double y, const SplineParams& p);

struct SplineVars {
  ad::Var value;    // (N)
  ad::Var log_det;  // (N), log|dx/dy|
};

// Inverse spline on the tape. y: (N), raw: (N, kSplineParams).
SplineVars spline_inverse(ad::Var y, ad::Var raw, double bound = kSplineBound);

}  // namespace spacy::scm
