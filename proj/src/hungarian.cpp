#include <cmath>
#include <limits>

#include "milsense/errors.hpp"
#include "milsense/evalsuite.hpp"

namespace milsense {

// Shortest augmenting path formulation with row/column potentials, O(n³).
std::vector<int> hungarian(const MatrixXd& cost) {
  const auto n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw InputError("hungarian: cost matrix must be square");
  if (n == 0) return {};
  if (!cost.allFinite()) throw InputError("hungarian: costs must be finite");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

DesignMatch design_distance(const Points& a, const Points& b) {
  if (a.cols() != b.cols()) throw InputError("design_distance: designs have different dimensions");
  const auto na = a.rows(), nb = b.rows();
  if (std::abs(na - nb) > 1)
    throw InputError("design_distance: design sizes differ by more than one (" + std::to_string(na) + " vs " +
                     std::to_string(nb) + ")");
  const auto n = std::max(na, nb);
  // A zero-cost dummy absorbs the extra location of the larger design.
  MatrixXd cost = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < na; ++i)
    for (Eigen::Index j = 0; j < nb; ++j) cost(i, j) = (a.row(i) - b.row(j)).norm();
  const auto assign = hungarian(cost);

  DesignMatch m;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = assign[static_cast<std::size_t>(i)];
    if (i >= na) {
      m.unmatched = j;
      m.unmatched_in_first = false;
      continue;
    }
    if (j >= nb) {
      m.unmatched = static_cast<int>(i);
      m.unmatched_in_first = true;
      continue;
    }
    const double dist = cost(i, j);
    m.total_distance += dist;
    m.pairs.emplace_back(static_cast<int>(i), j);
    if (m.most_displaced < 0 || dist > m.most_displaced_distance) {
      m.most_displaced = static_cast<int>(m.pairs.size()) - 1;
      m.most_displaced_distance = dist;
    }
  }
  return m;
}

nlohmann::json DesignMatch::to_json() const {
  nlohmann::json p = nlohmann::json::array();
  for (const auto& [i, j] : pairs) p.push_back({i, j});
  nlohmann::json out = {{"total_distance", total_distance}, {"pairs", p}};
  if (unmatched >= 0)
    out["unmatched"] = {{"design", unmatched_in_first ? "first" : "second"}, {"index", unmatched}};
  if (most_displaced >= 0)
    out["most_displaced"] = {{"first", pairs[static_cast<std::size_t>(most_displaced)].first},
                             {"second", pairs[static_cast<std::size_t>(most_displaced)].second},
                             {"distance", most_displaced_distance}};
  return out;
}

}  // namespace milsense
