#pragma once

#include <nlohmann/json.hpp>

#include <vector>

#include "milsense/kernels.hpp"
#include "milsense/markov_gp.hpp"

namespace milsense {

// All field arguments are N_t × N_s matrices; `mask` selects the entries that
// count (true = use). Overloads without a mask use every entry.

double rmse(const MatrixXd& pred_mean, const MatrixXd& truth, const Mask& mask);
double rmse(const MatrixXd& pred_mean, const MatrixXd& truth);

// Mean over entries of -log N(truth; mean, var), nats per observation.
double npll(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth, const Mask& mask);
double npll(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth);

struct CalibrationPoint {
  double nominal = 0.0;
  double empirical = 0.0;
};

struct Calibration {
  std::vector<CalibrationPoint> curve;
  // Trapezoidal area between the curve and the diagonal over the given levels.
  double miscalibration_area = 0.0;
};

// 0.05, 0.10, ..., 0.95.
std::vector<double> default_levels();

// Central Gaussian credible intervals at each nominal level.
Calibration calibration(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth, const Mask& mask,
                        const std::vector<double>& levels = default_levels());
Calibration calibration(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth,
                        const std::vector<double>& levels = default_levels());

// Per location: fraction of (observed) time steps with |error| > threshold.
// Locations without observed entries get NaN.
VectorXd extreme_error_rate(const MatrixXd& pred_mean, const MatrixXd& truth, const Mask& mask,
                            double threshold = 1.0);
VectorXd extreme_error_rate(const MatrixXd& pred_mean, const MatrixXd& truth, double threshold = 1.0);

// Per-location RMSE over observed time steps (NaN where nothing is observed).
VectorXd rmse_per_location(const MatrixXd& pred_mean, const MatrixXd& truth, const Mask& mask);

struct EvalReport {
  double rmse = 0.0;
  double npll = 0.0;
  double miscalibration_area = 0.0;
  VectorXd extreme_error_rate;
  std::vector<CalibrationPoint> calibration_curve;

  nlohmann::json to_json() const;
};

EvalReport evaluate_field(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth, const Mask& mask,
                          double extreme_threshold = 1.0);

// Square minimum-cost assignment: result[i] = column assigned to row i.
std::vector<int> hungarian(const MatrixXd& cost);

struct DesignMatch {
  double total_distance = 0.0;
  // pairs[k] = (index in first design, index in second design).
  std::vector<std::pair<int, int>> pairs;
  // When sizes differ by one: the leftover location of the larger design
  // (which design is given by `unmatched_in_first`), else -1.
  int unmatched = -1;
  bool unmatched_in_first = false;
  // Matched pair with the largest distance (-1 if nothing is matched).
  int most_displaced = -1;
  double most_displaced_distance = 0.0;

  nlohmann::json to_json() const;
};

// Minimum-cost Euclidean matching between two designs of sizes differing by
// at most one.
DesignMatch design_distance(const Points& a, const Points& b);

}  // namespace milsense
