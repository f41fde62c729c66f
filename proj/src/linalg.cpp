#include "milsense/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "milsense/errors.hpp"

namespace milsense {

double Factor::logdet() const {
  const auto& l = llt.matrixLLT();
  double s = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

MatrixXd Factor::inverse() const {
  const auto n = llt.matrixLLT().rows();
  return symmetrize(llt.solve(MatrixXd::Identity(n, n)));
}

Factor robust_cholesky(const MatrixXd& a, JitterMode mode, const std::string& what) {
  if (a.rows() != a.cols()) throw InputError(what + ": not square");
  if (!a.allFinite()) throw NumericalError(what + ": non-finite entries");
  const auto n = a.rows();
  const double tr = std::max(a.trace(), 0.0);
  const double scale = tr > 0.0 ? tr : 1.0;

  Factor f;
  f.llt.compute(a);
  if (f.llt.info() == Eigen::Success) {
    if (mode == JitterMode::OnFailure || n == 0) return f;
    const double min_pivot = f.llt.matrixLLT().diagonal().minCoeff();
    if (min_pivot * min_pivot >= 1e-12 * scale / static_cast<double>(n)) return f;
  }
  for (double rel = kBaseJitter; rel <= kMaxJitter * 1.0000001; rel *= 10.0) {
    f.jitter = rel * scale;
    f.llt.compute(a + f.jitter * MatrixXd::Identity(n, n));
    if (f.llt.info() == Eigen::Success) return f;
  }
  throw NumericalError(what + ": Cholesky failed after jitter escalation to 1e-6*trace");
}

MatrixXd kron(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

double min_eigenvalue(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

MatrixXd psd_factor(const MatrixXd& a) {
  Eigen::LDLT<MatrixXd> ldlt(symmetrize(a));
  const auto n = a.rows();
  VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  MatrixXd l = ldlt.matrixL();
  MatrixXd s = l * d.asDiagonal();
  // Undo the pivoting: a = Pᵀ L D Lᵀ P.
  MatrixXd out = ldlt.transpositionsP().transpose() * s;
  (void)n;
  return out;
}

double gaussian_logpdf(const VectorXd& y, const MatrixXd& cov) {
  Factor f = robust_cholesky(cov, JitterMode::OnFailure, "gaussian covariance");
  const VectorXd alpha = f.solve(y);
  return -0.5 * (y.dot(alpha) + f.logdet() + static_cast<double>(y.size()) * kLog2Pi);
}

}  // namespace milsense
