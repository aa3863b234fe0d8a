#include "spacy/scm/spline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spacy::scm {
namespace {

using ad::Tensor;
using ad::Var;
constexpr std::size_t K = kSplineBins;

double softplus(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }

void softmax_into(const double* raw, std::array<double, K>& out) {
  const double m = *std::max_element(raw, raw + K);
  double s = 0;
  for (std::size_t i = 0; i < K; ++i) s += (out[i] = std::exp(raw[i] - m));
  for (auto& v : out) v /= s;
}

std::size_t find_bin(const std::array<double, K + 1>& knots, double v) {
  const auto it = std::upper_bound(knots.begin() + 1, knots.end() - 1, v);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

// Rational-quadratic segment evaluated at relative position xi in [0, 1].
struct Segment {
  double xk, yk, w, h, dk, dk1;
  double s() const { return h / w; }
  double value(double xi) const {
    const double t = xi * (1 - xi);
    return yk + h * (s() * xi * xi + dk * t) / (s() + (dk1 + dk - 2 * s()) * t);
  }
  double log_slope(double xi) const {
    const double t = xi * (1 - xi);
    const double den = s() + (dk1 + dk - 2 * s()) * t;
    const double num = s() * s() * (dk1 * xi * xi + 2 * s() * t + dk * (1 - xi) * (1 - xi));
    return std::log(num) - 2 * std::log(den);
  }
  double inverse_xi(double y) const {
    const double dy = y - yk;
    const double c2 = dk1 + dk - 2 * s();
    const double a = h * (s() - dk) + dy * c2;
    const double b = h * dk - dy * c2;
    const double c = -s() * dy;
    const double disc = std::max(b * b - 4 * a * c, 0.0);
    return std::clamp(2 * c / (-b - std::sqrt(disc)), 0.0, 1.0);
  }
};

Segment segment(const SplineKnots& k, std::size_t bin) {
  return {k.x[bin], k.y[bin], k.x[bin + 1] - k.x[bin], k.y[bin + 1] - k.y[bin], k.slope[bin], k.slope[bin + 1]};
}

void check_finite(const SplineParams& p, double v) {
  if (!std::isfinite(v) || !std::isfinite(p.bound) || !(p.bound > 0)) throw std::domain_error("non-finite spline input");
  for (double r : p.raw)
    if (!std::isfinite(r)) throw std::domain_error("non-finite spline parameter");
}

// Normalized bin sizes scaled to the interval: (N,K) -> (N,K).
Var bin_sizes(Var raw, double bound) {
  return ad::scale(ad::add_scalar(ad::scale(ad::softmax(raw), 1 - kMinBinSize * K), kMinBinSize), 2 * bound);
}

}  // namespace

double identity_derivative_raw() { return std::log(std::expm1(1 - kMinDerivative)); }

SplineParams SplineParams::identity(double bound) {
  SplineParams p;
  p.bound = bound;
  std::fill(p.raw.begin() + 2 * K, p.raw.end(), identity_derivative_raw());
  return p;
}

SplineKnots constrain(const SplineParams& p) {
  std::array<double, K> w, h;
  softmax_into(p.raw.data(), w);
  softmax_into(p.raw.data() + K, h);
  SplineKnots k;
  k.x[0] = k.y[0] = -p.bound;
  for (std::size_t i = 0; i < K; ++i) {
    k.x[i + 1] = k.x[i] + 2 * p.bound * (kMinBinSize + (1 - kMinBinSize * K) * w[i]);
    k.y[i + 1] = k.y[i] + 2 * p.bound * (kMinBinSize + (1 - kMinBinSize * K) * h[i]);
  }
  k.x[K] = k.y[K] = p.bound;
  k.slope[0] = k.slope[K] = 1.0;
  for (std::size_t i = 1; i < K; ++i) k.slope[i] = kMinDerivative + softplus(p.raw[2 * K + i - 1]);
  return k;
}

SplineResult spline_forward(double x, const SplineParams& p) {
  check_finite(p, x);
  if (x <= -p.bound || x >= p.bound) return {x, 0.0};
  const SplineKnots k = constrain(p);
  const Segment seg = segment(k, find_bin(k.x, x));
  const double xi = (x - seg.xk) / seg.w;
  return {seg.value(xi), seg.log_slope(xi)};
}

SplineResult spline_inverse(double y, const SplineParams& p) {
  check_finite(p, y);
  if (y <= -p.bound || y >= p.bound) return {y, 0.0};
  const SplineKnots k = constrain(p);
  const Segment seg = segment(k, find_bin(k.y, y));
  const double xi = seg.inverse_xi(y);
  return {seg.xk + xi * seg.w, -seg.log_slope(xi)};
}

SplineVars spline_inverse(Var y, Var raw, double bound) {
  const std::size_t n = y.size();
  if (raw.shape() != ad::Shape{n, kSplineParams}) throw std::invalid_argument("spline params must have shape (N, 23)");
  ad::Tape& tape = *y.tape();
  const Tensor& yv = y.value();

  // Entries outside the interval pass through; the spline branch sees a safe
  // in-range stand-in for them so its gradients stay finite.
  Tensor inside({n}), safe_y({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(yv[i])) throw std::domain_error("non-finite spline input");
    inside[i] = (yv[i] > -bound && yv[i] < bound) ? 1.0 : 0.0;
  }
  Var y_in = ad::where(inside, y, tape.constant(safe_y));

  Var widths = bin_sizes(ad::slice(raw, 1, 0, K), bound);
  Var heights = bin_sizes(ad::slice(raw, 1, K, 2 * K), bound);
  Var cum_w = ad::add_scalar(ad::cumsum(widths), -bound);
  Var cum_h = ad::add_scalar(ad::cumsum(heights), -bound);
  Var ones = tape.constant(Tensor({n, 1}, 1.0));
  Var slopes = ad::concat({ones, ad::add_scalar(ad::softplus(ad::slice(raw, 1, 2 * K, kSplineParams)), kMinDerivative), ones}, 1);

  std::vector<std::size_t> bin(n), bin_next(n);
  const Tensor& ch = cum_h.value();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t b = 0;
    while (b + 1 < K && ch[i * K + b] <= y_in.value()[i]) ++b;
    bin[i] = b;
    bin_next[i] = b + 1;
  }
  auto pick = [&](Var t, const std::vector<std::size_t>& idx) { return ad::reshape(ad::gather_last(t, idx), {n}); };
  Var w = pick(widths, bin);
  Var h = pick(heights, bin);
  Var xk = pick(cum_w, bin) - w;
  Var yk = pick(cum_h, bin) - h;
  Var dk = pick(slopes, bin);
  Var dk1 = pick(slopes, bin_next);
  Var s = h / w;

  Var dy = y_in - yk;
  Var c2 = dk1 + dk - 2.0 * s;
  Var a = h * (s - dk) + dy * c2;
  Var b = h * dk - dy * c2;
  Var c = -(s * dy);
  Var disc = ad::square(b) - 4.0 * (a * c);
  Tensor disc_ok({n});
  for (std::size_t i = 0; i < n; ++i) disc_ok[i] = disc.value()[i] > 1e-300 ? 1.0 : 0.0;
  disc = ad::where(disc_ok, disc, tape.constant(Tensor({n}, 1e-300)));
  Var xi = (2.0 * c) / (-b - ad::sqrt(disc));

  Var t = xi * (1.0 - xi);
  Var den = s + c2 * t;
  Var num = ad::square(s) * (dk1 * ad::square(xi) + 2.0 * (s * t) + dk * ad::square(1.0 - xi));
  Var log_det = 2.0 * ad::log(den) - ad::log(num);
  Var x = xk + xi * w;

  return {ad::where(inside, x, y), ad::where(inside, log_det, tape.constant(Tensor({n}, 0.0)))};
}

}  // namespace spacy::scm
