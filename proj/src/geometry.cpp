#include "milsense/geometry.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include "milsense/errors.hpp"

namespace milsense {

namespace {

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

Eigen::Vector2d segment_projection(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

}  // namespace

DomainHull convex_hull(const Points& points) {
  if (points.cols() != 2) throw InputError("convex_hull: points must be 2-D");
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) pts.emplace_back(points(i, 0), points(i, 1));
  std::sort(pts.begin(), pts.end(),
            [](const auto& a, const auto& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) throw DegenerateGeometryError("convex_hull: need at least three distinct points");

  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) throw DegenerateGeometryError("convex_hull: points are collinear");

  DomainHull out;
  out.vertices.resize(static_cast<Eigen::Index>(hull.size()), 2);
  for (std::size_t i = 0; i < hull.size(); ++i) out.vertices.row(static_cast<Eigen::Index>(i)) = hull[i].transpose();
  return out;
}

bool DomainHull::contains(const Eigen::Vector2d& p, double slack) const {
  const auto n = vertices.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d a = vertices.row(i).transpose();
    const Eigen::Vector2d b = vertices.row((i + 1) % n).transpose();
    const double len = (b - a).norm();
    if (cross(a, b, p) < -slack * std::max(len, 1e-300)) return false;
  }
  return true;
}

Eigen::Vector2d hull_project(const DomainHull& hull, const Eigen::Vector2d& p) {
  if (hull.contains(p, 0.0)) return p;
  const auto n = hull.vertices.rows();
  Eigen::Vector2d best = p;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d a = hull.vertices.row(i).transpose();
    const Eigen::Vector2d b = hull.vertices.row((i + 1) % n).transpose();
    const Eigen::Vector2d q = segment_projection(a, b, p);
    const double dd = (q - p).squaredNorm();
    if (dd < best_d) {
      best_d = dd;
      best = q;
    }
  }
  return best;
}

}  // namespace milsense
