#include "milsense/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "milsense/errors.hpp"

namespace milsense {

void SensorDesign::validate() const {
  if (locations.cols() != 2) throw InputError("sensor design locations must be 2-D");
  if (static_cast<Eigen::Index>(fixed.size()) != locations.rows())
    throw InputError("sensor design needs one fixed flag per location");
  if (!locations.allFinite()) throw InputError("sensor design locations must be finite");
}

nlohmann::json SensorDesign::to_json() const {
  nlohmann::json locs = nlohmann::json::array();
  for (Eigen::Index i = 0; i < locations.rows(); ++i) locs.push_back({locations(i, 0), locations(i, 1)});
  nlohmann::json flags = nlohmann::json::array();
  for (bool f : fixed) flags.push_back(f);
  return {{"strategy", strategy}, {"seed", seed}, {"locations", locs}, {"fixed", flags}};
}

SensorDesign SensorDesign::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("sensor design must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "strategy" && key != "seed" && key != "locations" && key != "fixed")
      throw ParseError("sensor design: unknown key '" + key + "'");
  SensorDesign d;
  try {
    d.strategy = j.value("strategy", std::string("given"));
    d.seed = j.value("seed", std::uint64_t{0});
    const auto& locs = j.at("locations");
    d.locations.resize(static_cast<Eigen::Index>(locs.size()), 2);
    for (std::size_t i = 0; i < locs.size(); ++i) {
      if (locs[i].size() != 2) throw ParseError("sensor design: location " + std::to_string(i) + " is not 2-D");
      d.locations(static_cast<Eigen::Index>(i), 0) = locs[i][0].get<double>();
      d.locations(static_cast<Eigen::Index>(i), 1) = locs[i][1].get<double>();
    }
    if (j.contains("fixed"))
      for (const auto& f : j.at("fixed")) d.fixed.push_back(f.get<bool>());
    else
      d.fixed.assign(locs.size(), false);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("sensor design: ") + e.what());
  }
  d.validate();
  return d;
}

nlohmann::json FitResult::to_json() const {
  return {{"kernel", kernel_to_json(kernel)},
          {"sigma2", sigma2},
          {"elbo_nats", elbo},
          {"elbo_continuous_nats", elbo_continuous},
          {"best_restart", best_restart},
          {"restart_elbos_nats", restart_elbos},
          {"iterations", iterations}};
}

DesignProblem::DesignProblem(GridDataset training) : DesignProblem(training, Normalizer::fit(training.locations)) {}

DesignProblem::DesignProblem(GridDataset training, const Normalizer& normalizer)
    : data(std::move(training)), norm(normalizer) {
  data.validate();
  grid = norm.to_unit(data.locations);
  hull = convex_hull(grid);
}

StGpModel DesignProblem::model(const KernelSpec& kernel, double sigma2, const Points& z_unit) const {
  StGpModel m;
  m.kernel = kernel;
  m.inducing = InducingSet::all_free(z_unit);
  m.inducing.min_separation = 0.0;
  m.spatial_grid = grid;
  m.n_steps = static_cast<std::size_t>(data.n_times());
  m.dt = data.dt();
  m.sigma2 = sigma2;
  return m;
}

Eigen::Index DesignProblem::nearest(const Eigen::RowVector2d& p) const {
  Eigen::Index best = 0;
  (grid.rowwise() - p).rowwise().squaredNorm().minCoeff(&best);
  return best;
}

Points kmeans(const Points& points, Eigen::Index k, std::uint64_t seed, int iters) {
  const auto n = points.rows();
  if (k < 1 || k > n) throw InputError("kmeans: need 1 <= k <= number of points");
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Points c(k, points.cols());
  for (Eigen::Index j = 0; j < k; ++j) c.row(j) = points.row(order[static_cast<std::size_t>(j)]);

  std::vector<Eigen::Index> label(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (c.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (label[static_cast<std::size_t>(i)] != best) {
        label[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed && it > 0) break;
    Points sum = Points::Zero(k, points.cols());
    VectorXd count = VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(label[static_cast<std::size_t>(i)]) += points.row(i);
      count(label[static_cast<std::size_t>(i)]) += 1.0;
    }
    for (Eigen::Index j = 0; j < k; ++j)
      if (count(j) > 0.0) c.row(j) = sum.row(j) / count(j);
  }
  return c;
}

std::vector<Eigen::Index> snap_to_grid(const Points& grid, const Points& pts, std::vector<Eigen::Index> taken) {
  if (pts.rows() + static_cast<Eigen::Index>(taken.size()) > grid.rows())
    throw InputError("more sensors than grid points");
  std::vector<bool> used(static_cast<std::size_t>(grid.rows()), false);
  for (auto t : taken) used[static_cast<std::size_t>(t)] = true;
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const VectorXd d2 = (grid.rowwise() - pts.row(i)).rowwise().squaredNorm();
    Eigen::Index best = -1;
    for (Eigen::Index g = 0; g < grid.rows(); ++g)
      if (!used[static_cast<std::size_t>(g)] && (best < 0 || d2(g) < d2(best))) best = g;
    used[static_cast<std::size_t>(best)] = true;
    out.push_back(best);
  }
  return out;
}

SensorDesign kmeans_design(const Points& grid, Eigen::Index n, std::uint64_t seed, int iters) {
  const Normalizer norm = Normalizer::fit(grid);
  const Points unit = norm.to_unit(grid);
  const auto idx = snap_to_grid(unit, kmeans(unit, n, seed, iters));
  SensorDesign d;
  d.locations = grid(idx, Eigen::all);
  d.fixed.assign(static_cast<std::size_t>(n), false);
  d.strategy = "kmeans";
  d.seed = seed;
  return d;
}

namespace {

// Maps between the optimizer's flat vector and (free locations, kernel,
// noise). Layout: [free Z rows (x, y)..., optimized kernel log params..., log σ²].
struct Packing {
  Points z;                            // all inducing locations (normalized)
  std::vector<Eigen::Index> free_rows;
  std::vector<std::size_t> kernel_idx; // optimized positions in log_params
  std::vector<double> theta;           // full kernel log params
  bool fit_noise = true;

  Eigen::Index size() const {
    return static_cast<Eigen::Index>(free_rows.size() * 2 + kernel_idx.size()) + (fit_noise ? 1 : 0);
  }

  VectorXd pack(double log_sigma2) const {
    VectorXd x(size());
    Eigen::Index p = 0;
    for (auto r : free_rows) {
      x(p++) = z(r, 0);
      x(p++) = z(r, 1);
    }
    for (auto k : kernel_idx) x(p++) = theta[k];
    if (fit_noise) x(p++) = log_sigma2;
    return x;
  }

  // Returns log σ² (or `fallback` if σ² is not optimized).
  double unpack(const VectorXd& x, Points& zout, std::vector<double>& th, double fallback) const {
    zout = z;
    th = theta;
    Eigen::Index p = 0;
    for (auto r : free_rows) {
      zout(r, 0) = x(p++);
      zout(r, 1) = x(p++);
    }
    for (auto k : kernel_idx) th[k] = x(p++);
    return fit_noise ? x(p) : fallback;
  }

  VectorXd pack_gradient(const StElboGradient& g, double sigma2_grad) const {
    VectorXd out(size());
    Eigen::Index p = 0;
    for (auto r : free_rows) {
      out(p++) = g.d_inducing(2 * r);
      out(p++) = g.d_inducing(2 * r + 1);
    }
    for (auto k : kernel_idx) out(p++) = g.d_kernel(static_cast<Eigen::Index>(k));
    if (fit_noise) out(p) = sigma2_grad;
    return out;
  }
};

Packing make_packing(const KernelSpec& kernel, const Points& z, std::vector<Eigen::Index> free_rows,
                     bool fit_hyper) {
  Packing pk;
  pk.z = z;
  pk.free_rows = std::move(free_rows);
  pk.theta = log_params(kernel);
  pk.fit_noise = fit_hyper;
  if (fit_hyper) {
    // A leaf spatial kernel's variance only rescales the temporal variance.
    const std::size_t skip = kernel.spatial().is_leaf() ? 1 : 0;
    for (std::size_t k = skip; k < pk.theta.size(); ++k) pk.kernel_idx.push_back(k);
  }
  return pk;
}

struct RunOutcome {
  bool ok = false;
  std::string error;
  AscentResult ascent;
  Points z;
  KernelSpec kernel;
  double sigma2 = 0.0;
};

RunOutcome optimize_run(const DesignProblem& prob, const KernelSpec& kernel, double sigma2, const Packing& pk,
                        const OptimizerConfig& cfg) {
  RunOutcome out;
  const Observations obs = prob.observations();
  const double log_s2 = std::log(sigma2);
  auto f = [&](const VectorXd& x, VectorXd& grad) {
    Points z;
    std::vector<double> th;
    const double ls2 = pk.unpack(x, z, th, log_s2);
    const StGpModel m = prob.model(with_log_params(kernel, th), std::exp(ls2), z);
    const StElboGradient g = st_elbo_gradient(m, obs);
    grad = pk.pack_gradient(g, g.d_log_sigma2);
    return g.elbo;
  };
  auto project = [&](VectorXd& x) {
    for (std::size_t i = 0; i < pk.free_rows.size(); ++i) {
      const Eigen::Index p = static_cast<Eigen::Index>(2 * i);
      const Eigen::Vector2d q = hull_project(prob.hull, Eigen::Vector2d(x(p), x(p + 1)));
      x(p) = q.x();
      x(p + 1) = q.y();
    }
    // Keep log-parameters in a numerically sane range.
    for (Eigen::Index p = static_cast<Eigen::Index>(2 * pk.free_rows.size()); p < x.size(); ++p)
      x(p) = std::clamp(x(p), -15.0, 15.0);
  };
  try {
    out.ascent = adam_ascent(f, pk.pack(log_s2), cfg, project);
    std::vector<double> th;
    out.sigma2 = std::exp(pk.unpack(out.ascent.x, out.z, th, log_s2));
    out.kernel = with_log_params(kernel, th);
    out.ok = std::isfinite(out.ascent.value);
    if (!out.ok) out.error = "non-finite bound";
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

double elbo_at(const DesignProblem& prob, const KernelSpec& kernel, double sigma2, const Points& z) {
  return st_elbo(prob.model(kernel, sigma2, z), prob.observations());
}

}  // namespace

MilResult mil_design(const GridDataset& data, const KernelSpec& kernel, double sigma2, Eigen::Index n_free,
                     const SensorDesign* fixed, const OptimizerConfig& cfg) {
  cfg.validate();
  if (n_free < 0) throw InputError("number of sensors must be >= 0");
  const DesignProblem prob(data);
  const StGpModel probe = prob.model(kernel, sigma2, prob.grid.topRows(1));
  probe.validate();

  std::vector<Eigen::Index> fixed_idx;
  if (fixed) {
    fixed->validate();
    fixed_idx = grid_indices(data.locations, fixed->locations);
  }
  const auto n_fixed = static_cast<Eigen::Index>(fixed_idx.size());
  if (n_free + n_fixed < 1) throw InputError("a design needs at least one sensor");
  if (n_free + n_fixed > prob.grid.rows())
    throw InputError("requested " + std::to_string(n_free + n_fixed) + " sensors but the grid has only " +
                     std::to_string(prob.grid.rows()) + " points");

  const auto M = n_fixed + n_free;
  std::vector<Eigen::Index> free_rows;
  for (Eigen::Index r = n_fixed; r < M; ++r) free_rows.push_back(r);

  const int restarts = n_free > 0 ? cfg.restarts : 1;
  std::vector<RunOutcome> runs(static_cast<std::size_t>(restarts));
#pragma omp parallel for schedule(dynamic, 1) if (restarts > 1)
  for (int r = 0; r < restarts; ++r) {
    Points z(M, 2);
    if (n_fixed > 0) z.topRows(n_fixed) = prob.grid(fixed_idx, Eigen::all);
    if (n_free > 0)
      z.bottomRows(n_free) = kmeans(prob.grid, n_free, derive_seed(cfg.seed, static_cast<std::uint64_t>(r)),
                                    cfg.kmeans_iters);
    const Packing pk = make_packing(kernel, z, free_rows, cfg.fit_hyperparameters);
    runs[static_cast<std::size_t>(r)] = optimize_run(prob, kernel, sigma2, pk, cfg);
  }

  int best = -1;
  std::ostringstream failures;
  FitResult fit;
  for (int r = 0; r < restarts; ++r) {
    const auto& run = runs[static_cast<std::size_t>(r)];
    fit.restart_elbos.push_back(run.ok ? run.ascent.value : std::numeric_limits<double>::quiet_NaN());
    if (!run.ok) {
      failures << " restart " << r << ": " << run.error << ';';
      continue;
    }
    if (best < 0 || run.ascent.value > runs[static_cast<std::size_t>(best)].ascent.value) best = r;
  }
  if (best < 0) throw OptimizationError("all " + std::to_string(restarts) + " restarts diverged:" + failures.str());
  const RunOutcome& win = runs[static_cast<std::size_t>(best)];
  fit.kernel = win.kernel;
  fit.sigma2 = win.sigma2;
  fit.elbo_continuous = win.ascent.value;
  fit.best_restart = best;
  fit.trace = win.ascent.trace;
  fit.iterations = win.ascent.iterations;

  // Snap free locations; on collisions the location whose removal costs the
  // bound most keeps the grid point and the others move to the nearest
  // unused one.
  const Points zfree = win.z.bottomRows(n_free);
  std::vector<Eigen::Index> nearest(static_cast<std::size_t>(n_free));
  for (Eigen::Index j = 0; j < n_free; ++j) nearest[static_cast<std::size_t>(j)] = prob.nearest(zfree.row(j));
  bool collision = false;
  for (Eigen::Index j = 0; j < n_free && !collision; ++j) {
    const auto g = nearest[static_cast<std::size_t>(j)];
    collision = std::count(nearest.begin(), nearest.end(), g) > 1 ||
                std::find(fixed_idx.begin(), fixed_idx.end(), g) != fixed_idx.end();
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_free));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  if (collision) {
    std::vector<double> contribution(static_cast<std::size_t>(n_free));
    for (Eigen::Index j = 0; j < n_free; ++j) {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index r = 0; r < M; ++r)
        if (r != n_fixed + j) keep.push_back(r);
      contribution[static_cast<std::size_t>(j)] =
          M > 1 ? win.ascent.value - elbo_at(prob, win.kernel, win.sigma2, win.z(keep, Eigen::all)) : 0.0;
    }
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return contribution[static_cast<std::size_t>(a)] > contribution[static_cast<std::size_t>(b)];
    });
  }
  const std::vector<Eigen::Index> snapped_ordered = snap_to_grid(prob.grid, zfree(order, Eigen::all), fixed_idx);
  std::vector<Eigen::Index> snapped(static_cast<std::size_t>(n_free));
  for (std::size_t k = 0; k < order.size(); ++k) snapped[static_cast<std::size_t>(order[k])] = snapped_ordered[k];

  MilResult out;
  out.design.strategy = "mil";
  out.design.seed = cfg.seed;
  out.design.locations.resize(M, 2);
  for (Eigen::Index r = 0; r < n_fixed; ++r) out.design.locations.row(r) = fixed->locations.row(r);
  for (Eigen::Index j = 0; j < n_free; ++j)
    out.design.locations.row(n_fixed + j) = data.locations.row(snapped[static_cast<std::size_t>(j)]);
  out.design.fixed.assign(static_cast<std::size_t>(M), false);
  for (Eigen::Index r = 0; r < n_fixed; ++r) out.design.fixed[static_cast<std::size_t>(r)] = true;

  if (cfg.refit_after_snap) {
    const FitResult refit = fit_hyperparameters(data, fit.kernel, fit.sigma2, out.design, cfg);
    fit.kernel = refit.kernel;
    fit.sigma2 = refit.sigma2;
  }
  fit.elbo = elbo_at(prob, fit.kernel, fit.sigma2, prob.norm.to_unit(out.design.locations));
  out.fit = std::move(fit);
  return out;
}

FitResult fit_hyperparameters(const GridDataset& data, const KernelSpec& kernel, double sigma2,
                              const SensorDesign& design, const OptimizerConfig& cfg, bool design_observations_only) {
  cfg.validate();
  design.validate();
  if (design.size() < 1) throw InputError("cannot fit hyperparameters to an empty design");
  const Normalizer norm = Normalizer::fit(data.locations);
  const auto idx = grid_indices(data.locations, design.locations);
  const DesignProblem prob(design_observations_only ? data.select_locations(idx) : data, norm);
  const Points z = norm.to_unit(design.locations);
  const Packing pk = make_packing(kernel, z, {}, true);
  const RunOutcome run = optimize_run(prob, kernel, sigma2, pk, cfg);
  if (!run.ok) throw OptimizationError("hyperparameter fit failed: " + run.error);
  FitResult fit;
  fit.kernel = run.kernel;
  fit.sigma2 = run.sigma2;
  fit.elbo = fit.elbo_continuous = run.ascent.value;
  fit.restart_elbos = {run.ascent.value};
  fit.trace = run.ascent.trace;
  fit.iterations = run.ascent.iterations;
  return fit;
}

}  // namespace milsense
