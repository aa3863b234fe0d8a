#pragma once

#include <vector>

#include "spacy/autodiff/ops.hpp"
#include "spacy/spatial/grid.hpp"

namespace spacy::spatial {

enum class KernelFamily { kRbf, kRbfAnisotropic, kMatern15, kMatern25 };

KernelFamily kernel_from_name(std::string_view name);
std::string_view kernel_name(KernelFamily k);

// Per-node kernel parameters. `center` is in the grid's coordinate domain
// (lat/lon radians on spherical grids). `aniso_a` is row-major 2x2.
struct NodeKernel {
  Point center{0.5, 0.5};
  double log_scale = 0.0;
  std::array<double, 4> aniso_a{0, 0, 0, 0};
  std::array<double, 2> aniso_b{0, 0};
};

struct KernelParams {
  KernelFamily family = KernelFamily::kRbf;
  std::vector<NodeKernel> nodes;
};

// Sigma = A A^T + diag(exp(B)), row-major 2x2.
std::array<double, 4> anisotropic_covariance(const std::array<double, 4>& a, const std::array<double, 2>& b);

// Kernel value as a function of the metric distance r for the radial families.
// Matern length scale is exp(log_scale / 2).
double radial_kernel(KernelFamily family, double r, double log_scale);

// F[l, d] = kernel_d(x_l). Returns an (L, D) tensor.
ad::Tensor evaluate_factor(const GridSpec& grid, const KernelParams& params);

// Maps unconstrained center parameters through a sigmoid into the grid's
// domain ([0,1]^2 for euclidean, lat/lon for spherical). raw: (D,2).
ad::Var squash_center(const GridSpec& grid, ad::Var raw);

struct FactorInputs {
  ad::Var center_raw;  // (D,2)
  ad::Var log_scale;   // (D)
  ad::Var aniso_a;     // (D,2,2), anisotropic family only
  ad::Var aniso_b;     // (D,2), anisotropic family only
};

// Factor matrix on the tape; equals evaluate_factor with centers replaced by
// squash_center(center_raw).
ad::Var differentiable_factor(const GridSpec& grid, KernelFamily family, const FactorInputs& in);

// Squared metric distance between every grid point and every center: (L, D).
ad::Var squared_distances(const GridSpec& grid, ad::Var centers);

}  // namespace spacy::spatial
