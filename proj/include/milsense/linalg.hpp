#pragma once

#include <Eigen/Dense>

#include <string>

namespace milsense {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Cholesky factor with the jitter that was needed to obtain it.
struct Factor {
  Eigen::LLT<MatrixXd> llt;
  double jitter = 0.0;

  MatrixXd solve(const MatrixXd& b) const { return llt.solve(b); }
  VectorXd solve(const VectorXd& b) const { return llt.solve(b); }
  double logdet() const;
  MatrixXd inverse() const;
};

enum class JitterMode {
  // Plain factorization first; jitter only if that fails.
  OnFailure,
  // Also rejects near-singular factors (smallest pivot² below 1e-12 times the
  // mean diagonal). Used for noise-free kernel matrices such as K_MM.
  Guarded,
};

// Jitter policy: 1e-10 * trace, escalated x10 up to 1e-6 * trace, then
// NumericalError naming `what`.
Factor robust_cholesky(const MatrixXd& a, JitterMode mode = JitterMode::OnFailure,
                       const std::string& what = "matrix");

constexpr double kBaseJitter = 1e-10;
constexpr double kMaxJitter = 1e-6;

inline MatrixXd symmetrize(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

// Row-major-block Kronecker product: (a ⊗ b)[i*rb + k, j*cb + l] = a(i,j) b(k,l).
MatrixXd kron(const MatrixXd& a, const MatrixXd& b);

// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const MatrixXd& a);

// Symmetric square-root-like factor S with a = S Sᵀ for PSD `a`, tolerant of
// singular matrices (negative pivots clamped to zero).
MatrixXd psd_factor(const MatrixXd& a);

// log N(y; 0, cov) by Cholesky.
double gaussian_logpdf(const VectorXd& y, const MatrixXd& cov);

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace milsense
