#pragma once

#include <vector>

#include "milsense/kernels.hpp"
#include "milsense/markov_gp.hpp"
#include "milsense/sparse_vgp.hpp"

namespace milsense {

// Spatiotemporal sparse variational GP with a separable kernel
// κ((x,t),(x',t')) = κ_s(x,x') κ_t(t-t'), inducing locations Z shared by all
// time steps, and Gaussian noise. Observations are N_t × N_s matrices aligned
// with `spatial_grid` (columns) and a uniform time grid (rows).
struct StGpModel {
  KernelSpec kernel;
  InducingSet inducing;
  double dt = 1.0;
  std::size_t n_steps = 0;
  double sigma2 = 0.1;
  Points spatial_grid;

  void validate() const;
  Eigen::Index temporal_state_dim() const;
};

// Everything derived from the model that the Kalman pass needs.
struct InducingChain {
  StateSpaceModel ssm;       // emission = B ⊗ H_t onto the spatial grid
  MatrixXd emission_to_u;    // I_M ⊗ H_t
  MatrixXd kzz;              // K_s(Z,Z) (+ jitter if it was needed)
  Factor kzz_factor;
  MatrixXd kxz;              // K_s(X,Z)
  MatrixXd B;                // K_s(X,Z) K_s(Z,Z)⁻¹
  DiscreteStateSpace temporal;
  double temporal_variance = 0.0;  // κ_t(0)
};

// Transition I_M ⊗ A_t, process noise K_ZZ ⊗ Q_t, initial covariance
// K_ZZ ⊗ Pinf. State ordering: spatial index major, temporal state minor.
InducingChain build_inducing_chain(const StGpModel& model);

struct StPosterior {
  std::vector<VectorXd> mu;  // E[u_t]
  std::vector<MatrixXd> A;   // Cov[u_t]
  double elbo = 0.0;
};

struct PredictiveField {
  MatrixXd mean;  // N_t × N*
  MatrixXd var;
};

// Kalman log marginal of the pseudo-model y_t = B u_t + ε_t minus the
// Nyström trace penalty over observed entries.
double st_elbo(const StGpModel& model, const Observations& obs);

StPosterior st_fit_posterior(const StGpModel& model, const Observations& obs);

PredictiveField st_predict(const StGpModel& model, const StPosterior& posterior, const Points& xstar);

enum class CovarianceReuse {
  PerStep,   // A_t of training step t reused at test step t
  Averaged,  // mean of the training A_t reused at every test step
};

struct TestTimeOptions {
  CovarianceReuse reuse = CovarianceReuse::PerStep;
  int sweeps = 1;
};

// Re-estimates μ_t from observations at the design locations only (columns of
// test_obs follow design_locations), keeping the trained covariances.
StPosterior test_time_update(const StGpModel& model, const StPosterior& trained, const Observations& test_obs,
                             const Points& design_locations, TestTimeOptions opts = {});

// Indices of `locations` in `grid` (exact match within 1e-12); InputError if
// any location is off-grid.
std::vector<Eigen::Index> grid_indices(const Points& grid, const Points& locations);

// Parameter vector layout for gradients: free inducing coordinates (row-major
// over free locations), kernel log parameters, log σ².
struct StElboGradient {
  double elbo = 0.0;
  VectorXd d_inducing;  // ∂/∂Z, all locations, row-major (M × dim); fixed rows included
  VectorXd d_kernel;    // ∂/∂ log θ
  double d_log_sigma2 = 0.0;
};

// Exact gradient of st_elbo via Fisher's identity on the smoothed pseudo-model.
StElboGradient st_elbo_gradient(const StGpModel& model, const Observations& obs);

}  // namespace milsense
