#pragma once

#include <Eigen/Dense>

#include "milsense/kernels.hpp"

namespace milsense {

// Convex hull of the spatial grid, counterclockwise, without collinear
// vertices.
struct DomainHull {
  Points vertices;

  bool contains(const Eigen::Vector2d& p, double slack = 1e-9) const;
};

// Andrew's monotone chain. DegenerateGeometryError for fewer than three
// non-collinear points.
DomainHull convex_hull(const Points& points);

// Euclidean projection onto the hull (identity for interior points).
Eigen::Vector2d hull_project(const DomainHull& hull, const Eigen::Vector2d& p);

}  // namespace milsense
