#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "milsense/design.hpp"
#include "milsense/errors.hpp"

namespace milsense {

namespace {

SensorDesign from_indices(const Points& grid, const std::vector<Eigen::Index>& idx, const char* strategy,
                          std::uint64_t seed) {
  SensorDesign d;
  d.locations = grid(idx, Eigen::all);
  d.fixed.assign(idx.size(), false);
  d.strategy = strategy;
  d.seed = seed;
  return d;
}

void check_count(const Points& grid, Eigen::Index n) {
  if (n < 1) throw InputError("number of sensors must be >= 1");
  if (n > grid.rows())
    throw InputError("requested " + std::to_string(n) + " sensors but the grid has only " +
                     std::to_string(grid.rows()) + " points");
}

// Continuous design search shared by MES and IMSE: `init` rows stay fixed, the
// n_add new rows start from a k-means design of the grid and move under
// projected ascent; the result is snapped to unused grid points.
SensorDesign augment_design(const DesignProblem& prob, const SensorDesign& init, Eigen::Index n_add,
                            const OptimizerConfig& cfg, const char* strategy,
                            const std::function<double(const Points&, VectorXd*, Eigen::Index)>& objective) {
  cfg.validate();
  if (n_add < 0) throw InputError("number of added sensors must be >= 0");
  init.validate();
  const auto init_idx = grid_indices(prob.data.locations, init.locations);
  const auto n0 = static_cast<Eigen::Index>(init_idx.size());
  if (n0 + n_add > prob.grid.rows()) throw InputError("more sensors than grid points");
  if (n0 + n_add < 1) throw InputError("a design needs at least one sensor");

  Points z(n0 + n_add, 2);
  if (n0 > 0) z.topRows(n0) = prob.grid(init_idx, Eigen::all);
  if (n_add > 0) {
    // Start from unused grid points nearest to k-means centres.
    const Points centres = kmeans(prob.grid, n_add, cfg.seed, cfg.kmeans_iters);
    z.bottomRows(n_add) = prob.grid(snap_to_grid(prob.grid, centres, init_idx), Eigen::all);

    auto f = [&](const VectorXd& x, VectorXd& grad) {
      Points zz = z;
      for (Eigen::Index j = 0; j < n_add; ++j) zz.row(n0 + j) = x.segment(2 * j, 2).transpose();
      VectorXd g;
      const double v = objective(zz, &g, n0);
      grad = g.tail(2 * n_add);
      return v;
    };
    auto project = [&](VectorXd& x) {
      for (Eigen::Index j = 0; j < n_add; ++j) {
        const Eigen::Vector2d q = hull_project(prob.hull, Eigen::Vector2d(x(2 * j), x(2 * j + 1)));
        x.segment(2 * j, 2) = q;
      }
    };
    VectorXd x0(2 * n_add);
    for (Eigen::Index j = 0; j < n_add; ++j) x0.segment(2 * j, 2) = z.row(n0 + j).transpose();
    const AscentResult res = adam_ascent(f, x0, cfg, project);
    for (Eigen::Index j = 0; j < n_add; ++j) z.row(n0 + j) = res.x.segment(2 * j, 2).transpose();
  }

  const auto added = snap_to_grid(prob.grid, z.bottomRows(n_add), init_idx);
  SensorDesign out;
  out.strategy = strategy;
  out.seed = cfg.seed;
  out.locations.resize(n0 + n_add, 2);
  out.fixed.assign(static_cast<std::size_t>(n0 + n_add), false);
  for (Eigen::Index r = 0; r < n0; ++r) {
    out.locations.row(r) = init.locations.row(r);
    out.fixed[static_cast<std::size_t>(r)] = init.fixed[static_cast<std::size_t>(r)];
  }
  for (Eigen::Index j = 0; j < n_add; ++j)
    out.locations.row(n0 + j) = prob.data.locations.row(added[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace

SensorDesign uniform_design(const Points& grid, Eigen::Index n, std::uint64_t seed) {
  check_count(grid, n);
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(grid.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  // Partial Fisher-Yates: the first n entries are a uniform draw without replacement.
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uniform_int_distribution<Eigen::Index> pick(i, grid.rows() - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(n));
  return from_indices(grid, idx, "uniform", seed);
}

Points lhs_points(const Points& grid, Eigen::Index n, std::uint64_t seed) {
  check_count(grid, n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::RowVectorXd lo = grid.colwise().minCoeff();
  const Eigen::RowVectorXd hi = grid.colwise().maxCoeff();
  Points p(n, grid.cols());
  for (Eigen::Index d = 0; d < grid.cols(); ++d) {
    std::vector<Eigen::Index> strata(static_cast<std::size_t>(n));
    std::iota(strata.begin(), strata.end(), Eigen::Index{0});
    std::shuffle(strata.begin(), strata.end(), rng);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = (static_cast<double>(strata[static_cast<std::size_t>(i)]) + unif(rng)) / static_cast<double>(n);
      p(i, d) = lo(d) + u * (hi(d) - lo(d));
    }
  }
  return p;
}

SensorDesign lhs_design(const Points& grid, Eigen::Index n, std::uint64_t seed) {
  return from_indices(grid, snap_to_grid(grid, lhs_points(grid, n, seed)), "lhs", seed);
}

SensorDesign mes_design(const GridDataset& data, const KernelSpec& kernel, Eigen::Index n_add,
                        const SensorDesign& init, const OptimizerConfig& cfg) {
  const DesignProblem prob(data);
  const KernelSpec& ks = kernel.kind == KernelKind::Separable ? kernel.spatial() : kernel;
  ks.validate();
  auto logdet = [&](const Points& z, VectorXd* grad, Eigen::Index) {
    const Factor f = robust_cholesky(kernel_gram(ks, z), JitterMode::Guarded, "design covariance");
    if (grad) {
      // ∂/∂x_j log det K = 2 Σ_i (K⁻¹)_{ij} ∂κ(x_j, x_i)/∂x_j.
      const MatrixXd kinv = f.inverse();
      grad->setZero(z.size());
      std::vector<double> buf(2);
      for (Eigen::Index j = 0; j < z.rows(); ++j)
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
          if (i == j) continue;
          kernel_grad_first(ks, row_span(z, j), row_span(z, i), buf);
          (*grad)(2 * j) += 2.0 * kinv(i, j) * buf[0];
          (*grad)(2 * j + 1) += 2.0 * kinv(i, j) * buf[1];
        }
    }
    return f.logdet();
  };
  return augment_design(prob, init, n_add, cfg, "mes", logdet);
}

double imse_objective(const KernelSpec& kernel, double sigma2, const Points& design_unit, const Points& prediction_grid,
                      Eigen::Index n_steps, double dt) {
  StGpModel m;
  m.kernel = kernel;
  m.inducing = InducingSet::all_free(design_unit);
  m.inducing.min_separation = 0.0;
  m.spatial_grid = design_unit;
  m.n_steps = static_cast<std::size_t>(n_steps);
  m.dt = dt;
  m.sigma2 = sigma2;
  const InducingChain c = build_inducing_chain(m);
  // Posterior covariances do not depend on the observed values.
  const Observations obs = Observations::fully_observed(MatrixXd::Zero(n_steps, design_unit.rows()));
  const SmootherResult s = rts_smoother(c.ssm, kalman_filter(c.ssm, obs));
  MatrixXd a_sum = MatrixXd::Zero(design_unit.rows(), design_unit.rows());
  for (const auto& cov : s.covs) a_sum += c.emission_to_u * cov * c.emission_to_u.transpose();

  const KernelSpec& ks = kernel.spatial();
  const MatrixXd kpz = kernel_matrix(ks, prediction_grid, design_unit);
  const MatrixXd bs = c.kzz_factor.solve(MatrixXd(kpz.transpose())).transpose();
  const double resid = (kernel_diag(ks, prediction_grid) - bs.cwiseProduct(kpz).rowwise().sum()).sum();
  return static_cast<double>(n_steps) * c.temporal_variance * resid + (bs * a_sum).cwiseProduct(bs).sum();
}

SensorDesign imse_design(const GridDataset& data, const KernelSpec& kernel, double sigma2, Eigen::Index n_add,
                         const SensorDesign& init, const OptimizerConfig& cfg, const Points* prediction_grid) {
  const DesignProblem prob(data);
  const Points& pred = prediction_grid ? *prediction_grid : prob.grid;
  const Eigen::Index T = data.n_times();
  const double dt = data.dt();
  // Central differences over the movable rows only.
  auto objective = [&](const Points& z, VectorXd* grad, Eigen::Index first_movable) {
    auto value = [&](const Points& zz) { return -imse_objective(kernel, sigma2, zz, pred, T, dt); };
    if (grad) {
      *grad = VectorXd::Zero(z.size());
      Points zf = z;
      for (Eigen::Index i = first_movable; i < z.rows(); ++i)
        for (Eigen::Index d = 0; d < 2; ++d) {
          zf(i, d) = z(i, d) + cfg.fd_step;
          const double fp = value(zf);
          zf(i, d) = z(i, d) - cfg.fd_step;
          const double fm = value(zf);
          zf(i, d) = z(i, d);
          (*grad)(2 * i + d) = (fp - fm) / (2.0 * cfg.fd_step);
        }
    }
    return value(z);
  };
  return augment_design(prob, init, n_add, cfg, "imse", objective);
}

RemovalResult sensor_removal(const GridDataset& data, const KernelSpec& kernel, double sigma2,
                             const SensorDesign& design, Eigen::Index r, std::size_t cap) {
  design.validate();
  const Eigen::Index n = design.size();
  if (r < 0 || r >= n) throw InputError("sensor_removal: need 0 <= r < number of sensors");
  // C(n, r) with an overflow-safe early exit.
  double combos = 1.0;
  for (Eigen::Index k = 1; k <= r; ++k) combos = combos * static_cast<double>(n - r + k) / static_cast<double>(k);
  if (combos > static_cast<double>(cap))
    throw InputError("sensor_removal: " + std::to_string(static_cast<long long>(std::llround(combos))) +
                     " subsets exceed the enumeration cap of " + std::to_string(cap) +
                     "; use a greedy removal strategy instead");

  const DesignProblem prob(data);
  (void)grid_indices(data.locations, design.locations);
  const Points z = prob.norm.to_unit(design.locations);
  const Observations obs = prob.observations();

  std::vector<std::vector<Eigen::Index>> subsets;
  std::vector<Eigen::Index> cur(static_cast<std::size_t>(r));
  std::iota(cur.begin(), cur.end(), Eigen::Index{0});
  while (true) {
    subsets.push_back(cur);
    Eigen::Index i = r - 1;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - r + i) --i;
    if (i < 0) break;
    ++cur[static_cast<std::size_t>(i)];
    for (Eigen::Index k = i + 1; k < r; ++k) cur[static_cast<std::size_t>(k)] = cur[static_cast<std::size_t>(k - 1)] + 1;
  }

  RemovalResult out;
  out.table.resize(subsets.size());
  const auto count = static_cast<std::ptrdiff_t>(subsets.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t s = 0; s < count; ++s) {
    const auto& removed = subsets[static_cast<std::size_t>(s)];
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::find(removed.begin(), removed.end(), i) == removed.end()) keep.push_back(i);
    double elbo = -std::numeric_limits<double>::infinity();
    try {
      elbo = st_elbo(prob.model(kernel, sigma2, z(keep, Eigen::all)), obs);
    } catch (const NumericalError&) {
    }
    out.table[static_cast<std::size_t>(s)] = {removed, elbo};
  }
  for (std::size_t s = 1; s < out.table.size(); ++s)
    if (out.table[s].elbo > out.table[out.best].elbo) out.best = s;
  if (!std::isfinite(out.table[out.best].elbo)) throw NumericalError("sensor_removal: every subset failed to evaluate");

  const auto& removed = out.table[out.best].removed;
  out.design.strategy = design.strategy;
  out.design.seed = design.seed;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::find(removed.begin(), removed.end(), i) == removed.end()) keep.push_back(i);
  out.design.locations = design.locations(keep, Eigen::all);
  for (auto i : keep) out.design.fixed.push_back(design.fixed[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace milsense
