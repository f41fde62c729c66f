#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "milsense/datasets.hpp"
#include "milsense/geometry.hpp"
#include "milsense/kernels.hpp"
#include "milsense/optimizer.hpp"
#include "milsense/stsvgp.hpp"

namespace milsense {

struct SensorDesign {
  Points locations;  // raw units, one row per sensor
  std::vector<bool> fixed;
  std::string strategy;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return locations.rows(); }
  void validate() const;
  nlohmann::json to_json() const;
  static SensorDesign from_json(const nlohmann::json& j);
};

// Hyperparameters of a fitted spatiotemporal model. The kernel acts on
// normalized spatial coordinates (see Normalizer) and raw time units.
struct FitResult {
  KernelSpec kernel;
  double sigma2 = 0.0;
  // Bound at the reported (snapped) design.
  double elbo = 0.0;
  // Bound of the best restart before snapping.
  double elbo_continuous = 0.0;
  int best_restart = 0;
  std::vector<double> restart_elbos;
  // Accepted-step objective trace of the best restart.
  std::vector<double> trace;
  int iterations = 0;

  nlohmann::json to_json() const;
};

struct MilResult {
  SensorDesign design;
  FitResult fit;
};

// Everything the strategies need to know about the data in normalized form.
struct DesignProblem {
  GridDataset data;  // training range
  Normalizer norm;
  Points grid;       // normalized spatial grid
  DomainHull hull;   // hull of the normalized grid

  explicit DesignProblem(GridDataset training);
  // Uses `normalizer` instead of fitting one to the training locations.
  DesignProblem(GridDataset training, const Normalizer& normalizer);
  Observations observations() const { return data.observations(); }
  StGpModel model(const KernelSpec& kernel, double sigma2, const Points& z_unit) const;
  // Nearest grid index of a normalized point.
  Eigen::Index nearest(const Eigen::RowVector2d& p) const;
};

// Jointly maximizes the spatiotemporal bound over `n_free` new inducing
// locations and the log-hyperparameters (all except the spatial variance,
// which is redundant with the temporal variance). Locations in `fixed`
// (optional, raw units, on the grid) are kept verbatim. Returns the best of
// cfg.restarts k-means-initialized runs, snapped to the grid.
MilResult mil_design(const GridDataset& data, const KernelSpec& kernel, double sigma2, Eigen::Index n_free,
                     const SensorDesign* fixed, const OptimizerConfig& cfg);

// Hyperparameter-only fit with the inducing set frozen at `design`. With
// `design_observations_only`, only the columns at the design locations are
// used as observations (the normalization still comes from the full grid).
FitResult fit_hyperparameters(const GridDataset& data, const KernelSpec& kernel, double sigma2,
                              const SensorDesign& design, const OptimizerConfig& cfg,
                              bool design_observations_only = false);

// Lloyd's k-means over the rows of `points`, initialized at k distinct
// random rows.
Points kmeans(const Points& points, Eigen::Index k, std::uint64_t seed, int iters);

SensorDesign uniform_design(const Points& grid, Eigen::Index n, std::uint64_t seed);

// Standard Latin hypercube in the bounding box of `grid` (one sample per
// stratum along each axis), before snapping.
Points lhs_points(const Points& grid, Eigen::Index n, std::uint64_t seed);
SensorDesign lhs_design(const Points& grid, Eigen::Index n, std::uint64_t seed);

// Snaps each row to the nearest grid point not in `taken`; later rows that
// collide move to the nearest unused grid point. Returns grid indices.
std::vector<Eigen::Index> snap_to_grid(const Points& grid, const Points& pts, std::vector<Eigen::Index> taken = {});

// k-means design of n grid points (the space-filling initial design of the
// MES/IMSE protocol).
SensorDesign kmeans_design(const Points& grid, Eigen::Index n, std::uint64_t seed, int iters = 50);

// log det K_s(X_n) maximized over n_add new locations by projected gradient
// ascent on the hull; `init` stays fixed. Kernel = fitted spatial kernel.
SensorDesign mes_design(const GridDataset& data, const KernelSpec& kernel, Eigen::Index n_add,
                        const SensorDesign& init, const OptimizerConfig& cfg);

// Σ_t tr Cov(f_t(X_pred) | design) with Z = design, minimized over n_add new
// locations. `prediction_grid` (normalized) defaults to the full grid.
SensorDesign imse_design(const GridDataset& data, const KernelSpec& kernel, double sigma2, Eigen::Index n_add,
                         const SensorDesign& init, const OptimizerConfig& cfg, const Points* prediction_grid = nullptr);

// Value of the IMSE objective for normalized design locations.
double imse_objective(const KernelSpec& kernel, double sigma2, const Points& design_unit, const Points& prediction_grid,
                      Eigen::Index n_steps, double dt);

struct RemovalScore {
  std::vector<Eigen::Index> removed;
  double elbo = 0.0;
};

struct RemovalResult {
  SensorDesign design;
  std::vector<RemovalScore> table;  // lexicographic order of `removed`
  std::size_t best = 0;
};

// Bound of every design obtained by removing r sensors (hyperparameters
// fixed); returns the best. InputError if C(n, r) > cap.
RemovalResult sensor_removal(const GridDataset& data, const KernelSpec& kernel, double sigma2,
                             const SensorDesign& design, Eigen::Index r, std::size_t cap = 100000);

// ½ [log det K_prior − log det K_posterior].
double gaussian_eig(const MatrixXd& k_prior, const MatrixXd& k_posterior);

// log det(a ⊗ b) = n_b log det a + n_a log det b for SPD a, b.
double kron_logdet(const MatrixXd& a, const MatrixXd& b);

enum class UtilityKind { MES, D_OPT, IMSE };

struct UtilityContext {
  KernelSpec spatial;   // spatial kernel (normalized coordinates)
  double sigma2 = 0.0;  // observation noise variance
  Points test;          // X_test for D_OPT
  Points grid;          // X_grid for IMSE
};

// MES: log det K(X_n); D_OPT: log det K_post(X_test); IMSE: −tr K_post(X_grid),
// for the static spatial GP with noisy observations at the design.
double utility(UtilityKind kind, const UtilityContext& ctx, const Points& design_unit);

}  // namespace milsense
