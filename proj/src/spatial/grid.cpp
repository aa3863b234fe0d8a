#include "spacy/spatial/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace spacy::spatial {

Metric Metric::haversine(double radius) {
  if (!(radius > 0)) throw std::invalid_argument("haversine radius must be positive");
  return {MetricKind::kHaversine, radius};
}

GridSpec GridSpec::euclidean(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("grid extents must be positive");
  GridSpec g;
  g.rows = rows;
  g.cols = cols;
  g.coords = ad::Tensor({rows * cols, 2});
  auto axis = [](std::size_t i, std::size_t n) { return n == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(n - 1); };
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      g.coords[2 * (i * cols + j)] = axis(i, rows);
      g.coords[2 * (i * cols + j) + 1] = axis(j, cols);
    }
  return g;
}

GridSpec GridSpec::spherical(std::size_t rows, std::size_t cols, double radius) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("grid extents must be positive");
  using std::numbers::pi;
  GridSpec g;
  g.rows = rows;
  g.cols = cols;
  g.metric = Metric::haversine(radius);
  g.coords = ad::Tensor({rows * cols, 2});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      g.coords[2 * (i * cols + j)] = -pi / 2 + pi * (static_cast<double>(i) + 0.5) / static_cast<double>(rows);
      g.coords[2 * (i * cols + j) + 1] = -pi + 2 * pi * (static_cast<double>(j) + 0.5) / static_cast<double>(cols);
    }
  return g;
}

void GridSpec::validate() const {
  if (rows == 0 || cols == 0) throw std::invalid_argument("grid extents must be positive");
  if (coords.rank() != 2 || coords.dim(0) != rows * cols || coords.dim(1) != 2)
    throw std::invalid_argument("grid coords must have shape (L,2) with L = rows*cols");
  for (std::size_t l = 0; l < size(); ++l) {
    const Point p = point(l);
    if (metric.kind == MetricKind::kEuclidean) {
      if (p[0] < 0 || p[0] > 1 || p[1] < 0 || p[1] > 1)
        throw std::invalid_argument("euclidean grid coordinates must lie in [0,1]^2");
    } else if (std::abs(p[0]) > std::numbers::pi / 2) {
      throw std::invalid_argument("grid latitude outside [-pi/2, pi/2]");
    }
  }
}

double distance(const Point& a, const Point& b, const Metric& metric) {
  if (metric.kind == MetricKind::kEuclidean) return std::hypot(a[0] - b[0], a[1] - b[1]);
  constexpr double half_pi = std::numbers::pi / 2;
  if (std::abs(a[0]) > half_pi || std::abs(b[0]) > half_pi)
    throw std::domain_error("latitude outside [-pi/2, pi/2]");
  const double sdp = std::sin((b[0] - a[0]) / 2);
  const double sdl = std::sin((b[1] - a[1]) / 2);
  const double h = std::clamp(sdp * sdp + std::cos(a[0]) * std::cos(b[0]) * sdl * sdl, 0.0, 1.0);
  return 2 * metric.radius * std::asin(std::sqrt(h));
}

}  // namespace spacy::spatial
