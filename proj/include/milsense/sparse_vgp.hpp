#pragma once

#include <vector>

#include "milsense/kernels.hpp"
#include "milsense/linalg.hpp"

namespace milsense {

struct InducingSet {
  Points Z;
  // true = location frozen during optimization.
  std::vector<bool> fixed;
  double min_separation = 1e-6;

  static InducingSet all_free(Points z);
  Eigen::Index size() const { return Z.rows(); }
  void validate() const;
};

struct VariationalMoments {
  VectorXd mu;
  MatrixXd A;
};

// K_NM K_MM⁻¹ K_MN via a jittered Cholesky of K_MM.
MatrixXd nystrom(const MatrixXd& kmm, const MatrixXd& knm);

struct ElboTerms {
  double elbo = 0.0;
  // log N(Y | 0, Q_NN + σ² I)
  double log_likelihood = 0.0;
  // tr(K_NN - Q_NN)
  double trace_residual = 0.0;
};

// Titsias collapsed bound log N(Y|0, Q_NN + σ²I) - tr(K_NN - Q_NN) / (2σ²),
// evaluated in O(N M²).
ElboTerms collapsed_elbo_terms(const KernelSpec& kernel, const Points& x, const VectorXd& y, const Points& z,
                               double sigma2);
double collapsed_elbo(const KernelSpec& kernel, const Points& x, const VectorXd& y, const InducingSet& z,
                      double sigma2);

struct OptimalQOptions {
  // Inflate σ² by tr(K_post)/N before forming the moments.
  bool trace_regularizer = true;
};

VariationalMoments optimal_q(const KernelSpec& kernel, const Points& x, const VectorXd& y, const InducingSet& z,
                             double sigma2, OptimalQOptions opts = {});

struct PointPredictive {
  VectorXd mean;
  VectorXd var;
  // Variances below zero are clamped; this records the most negative raw value.
  double worst_clamp = 0.0;
};

PointPredictive predict(const KernelSpec& kernel, const Points& z, const VariationalMoments& q, const Points& xstar);

struct ElboPerturbation {
  double delta = 0.0;      // L(Y) - L(Y + δ)
  double linear = 0.0;     // ∇D(Y)ᵀ δ
  double quadratic = 0.0;  // D(δ)
};

ElboPerturbation elbo_perturbation(const KernelSpec& kernel, const Points& x, const VectorXd& y,
                                   const VectorXd& delta_y, const Points& z, double sigma2);

}  // namespace milsense
