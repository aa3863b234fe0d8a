#pragma once

#include <array>
#include <cstddef>

#include "spacy/autodiff/tensor.hpp"

namespace spacy::spatial {

enum class MetricKind { kEuclidean, kHaversine };

struct Metric {
  MetricKind kind = MetricKind::kEuclidean;
  double radius = 1.0;  // sphere radius, haversine only

  static Metric euclidean() { return {}; }
  static Metric haversine(double radius);
};

using Point = std::array<double, 2>;

// Regular L1 x L2 grid, row-major (index = i * L2 + j). Euclidean grids place
// points on [0,1]^2; spherical grids store (latitude, longitude) in radians at
// cell centers.
struct GridSpec {
  std::size_t rows = 1;
  std::size_t cols = 1;
  ad::Tensor coords{ad::Shape{1, 2}};
  Metric metric;

  static GridSpec euclidean(std::size_t rows, std::size_t cols);
  static GridSpec spherical(std::size_t rows, std::size_t cols, double radius);

  std::size_t size() const { return rows * cols; }
  Point point(std::size_t l) const { return {coords[2 * l], coords[2 * l + 1]}; }
  // Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
};

// Throws std::domain_error for latitudes outside [-pi/2, pi/2] (haversine).
double distance(const Point& a, const Point& b, const Metric& metric);

}  // namespace spacy::spatial
