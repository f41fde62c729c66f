#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

#include "milsense/datasets.hpp"
#include "milsense/design.hpp"
#include "milsense/evalsuite.hpp"
#include "milsense/stsvgp.hpp"

namespace milsense {

// Half-open range of time-step indices.
struct TimeRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  Eigen::Index size() const { return end - begin; }
};

enum class ReuseMode {
  Auto,      // per-step when train and test lengths match, averaged otherwise
  PerStep,
  Averaged,
};

ReuseMode reuse_mode_from_string(const std::string& s);
std::string to_string(ReuseMode mode);

struct EvalOptions {
  ReuseMode reuse = ReuseMode::Auto;
  int sweeps = 1;
  double extreme_threshold = 1.0;
};

struct EvalOutcome {
  EvalReport report;
  PredictiveField field;   // latent predictive over the test range, full grid
  MatrixXd truth;          // test-range values
  Mask mask;
  VectorXd rmse_per_location;
  CovarianceReuse reuse_used = CovarianceReuse::PerStep;
};

// Fit the inducing posterior (Z = design) on `train`, update its means from
// the test observations at the design locations, predict the full grid over
// the test range and score against `test`. Predictive densities include the
// observation noise σ². Both datasets share the spatial grid.
EvalOutcome evaluate_design(const GridDataset& train, const GridDataset& test, const SensorDesign& design,
                            const KernelSpec& kernel, double sigma2, const EvalOptions& opts = {});

// Same on one dataset split into a training and a test range.
EvalOutcome evaluate_design(const GridDataset& data, TimeRange train, TimeRange test, const SensorDesign& design,
                            const KernelSpec& kernel, double sigma2, const EvalOptions& opts = {});

struct AblationConfig {
  std::vector<double> ell_s{0.1, 1.0};
  std::vector<double> ell_t{1.0, 36.0};
  std::vector<double> vars{0.0, 0.5, 4.0};
  int replications = 10;
  Eigen::Index n_sensors = 9;
  // Used for the golden fit (locations + hyperparameters on clean data).
  OptimizerConfig golden;
  // Used for the per-replication designs (hyperparameters frozen).
  OptimizerConfig design;
  std::uint64_t seed = 0;
};

struct AblationRow {
  double ell_s = 0.0;
  double ell_t = 0.0;
  double var = 0.0;
  int replication = 0;
  double rmse = 0.0;
  double npll = 0.0;
};

struct AblationSummary {
  double ell_s = 0.0;
  double ell_t = 0.0;
  double var = 0.0;
  double mean_rmse = 0.0;
  double sd_rmse = 0.0;
  double mean_npll = 0.0;
  double sd_npll = 0.0;
};

struct AblationResult {
  FitResult golden;
  std::vector<AblationRow> rows;         // cell-major, then var, then replication
  std::vector<AblationSummary> summary;  // one per (ell_s, ell_t, var)
};

// Simulator-error study: golden hyperparameters are fitted on `clean`; each
// replication injects a separable Matérn error into the training data, places
// n_sensors with MIL (hyperparameters frozen) and evaluates on `clean` over
// the same range.
AblationResult ablate_noise(const GridDataset& clean, const KernelSpec& kernel, double sigma2,
                            const AblationConfig& cfg);

}  // namespace milsense
