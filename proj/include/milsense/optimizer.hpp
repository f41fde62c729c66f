#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "milsense/linalg.hpp"

namespace milsense {

struct OptimizerConfig {
  int max_iters = 500;
  // Cosine-decayed learning rate from lr_start to lr_end over max_iters.
  double lr_start = 0.05;
  double lr_end = 0.001;
  int restarts = 3;
  // Central finite-difference step (normalized coordinates / log parameters)
  // for gradient checks and derivative-free objectives.
  double fd_step = 1e-4;
  // Stop when the relative objective gain stays below this for `patience`
  // consecutive accepted steps.
  double tolerance = 1e-9;
  int patience = 20;
  std::uint64_t seed = 0;
  // Lloyd iterations of the k-means initializer.
  int kmeans_iters = 50;
  // Re-fit hyperparameters (locations frozen) after snapping to the grid.
  bool refit_after_snap = false;
  // Optimize kernel hyperparameters and noise jointly with the locations.
  bool fit_hyperparameters = true;

  void validate() const;
};

double cosine_learning_rate(const OptimizerConfig& cfg, int iter);

// Objective value with its gradient written into `grad`.
using ValueAndGradient = std::function<double(const VectorXd& x, VectorXd& grad)>;
// In-place projection onto the feasible set.
using Projection = std::function<void(VectorXd& x)>;

struct AscentResult {
  VectorXd x;
  double value = 0.0;
  // Objective after every accepted step (first entry = starting point).
  std::vector<double> trace;
  int iterations = 0;
  int rejected = 0;
};

// Maximizes f with Adam-style per-coordinate steps. A step is accepted only if
// it does not decrease f; otherwise the step length is halved and the moments
// are kept. Non-finite objective values count as rejections.
AscentResult adam_ascent(const ValueAndGradient& f, VectorXd x0, const OptimizerConfig& cfg,
                         const Projection& project = {});

// Central differences of a scalar function.
VectorXd finite_difference_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h);

}  // namespace milsense
