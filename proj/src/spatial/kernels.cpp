#include "spacy/spatial/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace spacy::spatial {
namespace {

using ad::Shape;
using ad::Tensor;
using ad::Var;

const double kSqrt3 = std::sqrt(3.0);
const double kSqrt5 = std::sqrt(5.0);

// Column j of a (D,K) variable as a (1,D) row.
Var column_row(Var x, std::size_t j) {
  const std::size_t d = x.shape()[0];
  return ad::reshape(ad::slice(x, 1, j, j + 1), {1, d});
}

Var grid_column(ad::Tape& tape, const GridSpec& grid, std::size_t j) {
  Tensor c({grid.size(), 1});
  for (std::size_t l = 0; l < grid.size(); ++l) c[l] = grid.coords[2 * l + j];
  return tape.constant(std::move(c));
}

// Value and d/d(d2), d/d(gamma) of a Matern kernel written in terms of the
// squared distance, which keeps the derivative finite at r = 0.
struct MaternEval {
  double value, d_d2, d_gamma;
};

MaternEval matern(KernelFamily family, double d2, double gamma) {
  const double s2 = std::exp(gamma);
  const double s = std::exp(gamma / 2);
  const double r = std::sqrt(std::max(d2, 0.0));
  if (family == KernelFamily::kMatern15) {
    const double u = kSqrt3 * r / s;
    const double e = std::exp(-u);
    return {(1 + u) * e, -1.5 * e / s2, 0.5 * u * u * e};
  }
  const double u = kSqrt5 * r / s;
  const double e = std::exp(-u);
  return {(1 + u + u * u / 3) * e, -5.0 * (1 + u) * e / (6 * s2), u * u * (1 + u) * e / 6};
}

// asin(sqrt(h)) / sqrt(h (1 - h)), with the small-h limit handled explicitly.
double haversine_slope(double h) {
  if (h < 1e-10) return (1 + h / 6) / std::sqrt(1 - h);
  return std::asin(std::sqrt(h)) / std::sqrt(h * (1 - h));
}

Var haversine_sq(const GridSpec& grid, Var centers) {
  ad::Tape& tape = *centers.tape();
  const std::size_t L = grid.size();
  const std::size_t D = centers.shape()[0];
  const double r = grid.metric.radius;
  Tensor out({L, D});
  const Tensor& c = centers.value();
  for (std::size_t d = 0; d < D; ++d)
    if (std::abs(c[2 * d]) > std::numbers::pi / 2) throw std::domain_error("center latitude outside [-pi/2, pi/2]");
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t d = 0; d < D; ++d) {
      const double dist = distance(grid.point(l), {c[2 * d], c[2 * d + 1]}, grid.metric);
      out[l * D + d] = dist * dist;
    }
  Tensor coords = grid.coords;
  return tape.record(std::move(out), {centers}, [coords = std::move(coords), L, D, r](const ad::BackwardArgs& args) {
    Tensor* g = args.in_grads[0];
    if (g == nullptr) return;
    const Tensor& c = *args.in_values[0];
    for (std::size_t d = 0; d < D; ++d) {
      const double p2 = c[2 * d], l2 = c[2 * d + 1];
      double gp = 0, gl = 0;
      for (std::size_t l = 0; l < L; ++l) {
        const double go = args.out_grad[l * D + d];
        if (go == 0) continue;
        const double p1 = coords[2 * l], l1 = coords[2 * l + 1];
        const double sdp = std::sin((p2 - p1) / 2), sdl = std::sin((l2 - l1) / 2);
        const double h = std::clamp(sdp * sdp + std::cos(p1) * std::cos(p2) * sdl * sdl, 0.0, 1.0 - 1e-15);
        const double dd2_dh = 4 * r * r * haversine_slope(h);
        const double dh_dp = 0.5 * std::sin(p2 - p1) - std::cos(p1) * std::sin(p2) * sdl * sdl;
        const double dh_dl = 0.5 * std::cos(p1) * std::cos(p2) * std::sin(l2 - l1);
        gp += go * dd2_dh * dh_dp;
        gl += go * dd2_dh * dh_dl;
      }
      (*g)[2 * d] += gp;
      (*g)[2 * d + 1] += gl;
    }
  });
}

// Matern kernel on the tape: d2 (L,D), gamma (D) -> (L,D).
Var matern_op(KernelFamily family, Var d2, Var gamma) {
  ad::Tape& tape = *d2.tape();
  const std::size_t L = d2.shape()[0], D = d2.shape()[1];
  Tensor out({L, D});
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t d = 0; d < D; ++d) out[l * D + d] = matern(family, d2.value()[l * D + d], gamma.value()[d]).value;
  return tape.record(std::move(out), {d2, gamma}, [family, L, D](const ad::BackwardArgs& args) {
    const Tensor& dv = *args.in_values[0];
    const Tensor& gv = *args.in_values[1];
    Tensor* gd = args.in_grads[0];
    Tensor* gg = args.in_grads[1];
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t d = 0; d < D; ++d) {
        const double go = args.out_grad[l * D + d];
        const MaternEval m = matern(family, dv[l * D + d], gv[d]);
        if (gd) (*gd)[l * D + d] += go * m.d_d2;
        if (gg) (*gg)[d] += go * m.d_gamma;
      }
  });
}

}  // namespace

KernelFamily kernel_from_name(std::string_view name) {
  if (name == "rbf") return KernelFamily::kRbf;
  if (name == "rbf-anisotropic") return KernelFamily::kRbfAnisotropic;
  if (name == "matern15") return KernelFamily::kMatern15;
  if (name == "matern25") return KernelFamily::kMatern25;
  throw std::invalid_argument("unknown kernel family '" + std::string(name) + "'");
}

std::string_view kernel_name(KernelFamily k) {
  switch (k) {
    case KernelFamily::kRbf: return "rbf";
    case KernelFamily::kRbfAnisotropic: return "rbf-anisotropic";
    case KernelFamily::kMatern15: return "matern15";
    case KernelFamily::kMatern25: return "matern25";
  }
  return "rbf";
}

std::array<double, 4> anisotropic_covariance(const std::array<double, 4>& a, const std::array<double, 2>& b) {
  return {a[0] * a[0] + a[1] * a[1] + std::exp(b[0]), a[0] * a[2] + a[1] * a[3],
          a[0] * a[2] + a[1] * a[3], a[2] * a[2] + a[3] * a[3] + std::exp(b[1])};
}

double radial_kernel(KernelFamily family, double r, double log_scale) {
  switch (family) {
    case KernelFamily::kRbf: return std::exp(-r * r / std::exp(log_scale));
    case KernelFamily::kMatern15:
    case KernelFamily::kMatern25: return matern(family, r * r, log_scale).value;
    case KernelFamily::kRbfAnisotropic: break;
  }
  throw std::invalid_argument("anisotropic kernel is not radial");
}

Tensor evaluate_factor(const GridSpec& grid, const KernelParams& params) {
  const std::size_t L = grid.size(), D = params.nodes.size();
  if (D == 0) throw std::invalid_argument("kernel params must contain at least one node");
  if (params.family == KernelFamily::kRbfAnisotropic && grid.metric.kind != MetricKind::kEuclidean)
    throw std::invalid_argument("anisotropic kernel requires a euclidean grid");
  Tensor f({L, D});
  for (std::size_t d = 0; d < D; ++d) {
    const NodeKernel& nk = params.nodes[d];
    if (params.family == KernelFamily::kRbfAnisotropic) {
      const auto s = anisotropic_covariance(nk.aniso_a, nk.aniso_b);
      const double det = s[0] * s[3] - s[1] * s[2];
      for (std::size_t l = 0; l < L; ++l) {
        const Point x = grid.point(l);
        const double dx = x[0] - nk.center[0], dy = x[1] - nk.center[1];
        const double q = (s[3] * dx * dx - 2 * s[1] * dx * dy + s[0] * dy * dy) / det;
        f[l * D + d] = std::exp(-0.5 * q);
      }
    } else {
      for (std::size_t l = 0; l < L; ++l)
        f[l * D + d] = radial_kernel(params.family, distance(grid.point(l), nk.center, grid.metric), nk.log_scale);
    }
  }
  return f;
}

Var squash_center(const GridSpec& grid, Var raw) {
  Var s = ad::sigmoid(raw);
  if (grid.metric.kind == MetricKind::kEuclidean) return s;
  Tensor span({1, 2});
  span[0] = std::numbers::pi;
  span[1] = 2 * std::numbers::pi;
  return ad::mul(ad::add_scalar(s, -0.5), raw.tape()->constant(std::move(span)));
}

Var squared_distances(const GridSpec& grid, Var centers) {
  if (grid.metric.kind == MetricKind::kHaversine) return haversine_sq(grid, centers);
  ad::Tape& tape = *centers.tape();
  Var dx = ad::sub(grid_column(tape, grid, 0), column_row(centers, 0));
  Var dy = ad::sub(grid_column(tape, grid, 1), column_row(centers, 1));
  return ad::add(ad::square(dx), ad::square(dy));
}

Var differentiable_factor(const GridSpec& grid, KernelFamily family, const FactorInputs& in) {
  if (!in.center_raw.valid() || !in.log_scale.valid()) throw std::invalid_argument("factor inputs are unbound");
  const std::size_t D = in.center_raw.shape()[0];
  if (in.center_raw.shape() != Shape{D, 2} || in.log_scale.size() != D)
    throw std::invalid_argument("factor inputs must be center (D,2) and log_scale (D)");
  Var centers = squash_center(grid, in.center_raw);
  switch (family) {
    case KernelFamily::kRbf: {
      Var d2 = squared_distances(grid, centers);
      Var inv = ad::reshape(ad::exp(ad::neg(in.log_scale)), {1, D});
      return ad::exp(ad::neg(ad::mul(d2, inv)));
    }
    case KernelFamily::kMatern15:
    case KernelFamily::kMatern25:
      return matern_op(family, squared_distances(grid, centers), ad::reshape(in.log_scale, {D}));
    case KernelFamily::kRbfAnisotropic: break;
  }
  if (grid.metric.kind != MetricKind::kEuclidean) throw std::invalid_argument("anisotropic kernel requires a euclidean grid");
  if (!in.aniso_a.valid() || !in.aniso_b.valid() || in.aniso_a.shape() != Shape{D, 2, 2} || in.aniso_b.shape() != Shape{D, 2})
    throw std::invalid_argument("anisotropic factor needs A (D,2,2) and B (D,2)");
  ad::Tape& tape = *centers.tape();
  Var a = ad::reshape(in.aniso_a, {D, 4});
  auto ac = [&](std::size_t j) { return column_row(a, j); };
  Var eb0 = ad::exp(column_row(in.aniso_b, 0));
  Var eb1 = ad::exp(column_row(in.aniso_b, 1));
  Var s11 = ad::square(ac(0)) + ad::square(ac(1)) + eb0;
  Var s12 = ac(0) * ac(2) + ac(1) * ac(3);
  Var s22 = ad::square(ac(2)) + ad::square(ac(3)) + eb1;
  Var det = s11 * s22 - ad::square(s12);
  Var dx = ad::sub(grid_column(tape, grid, 0), column_row(centers, 0));
  Var dy = ad::sub(grid_column(tape, grid, 1), column_row(centers, 1));
  Var q = (s22 * ad::square(dx) - 2.0 * (s12 * dx * dy) + s11 * ad::square(dy)) / det;
  return ad::exp(-0.5 * q);
}

}  // namespace spacy::spatial
