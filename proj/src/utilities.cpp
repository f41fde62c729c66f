#include <cmath>

#include "milsense/design.hpp"
#include "milsense/errors.hpp"

namespace milsense {

namespace {

void check_psd(const MatrixXd& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) throw InputError(std::string(what) + " must be square and non-empty");
  if (!a.allFinite()) throw InputError(std::string(what) + " must be finite");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw InputError(std::string(what) + " must be symmetric");
  if (min_eigenvalue(a) < -1e-10 * scale) throw InputError(std::string(what) + " must be positive semidefinite");
}

double spd_logdet(const MatrixXd& a, const char* what) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw InputError(std::string(what) + " must be positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

double gaussian_eig(const MatrixXd& k_prior, const MatrixXd& k_posterior) {
  check_psd(k_prior, "prior covariance");
  check_psd(k_posterior, "posterior covariance");
  if (k_prior.rows() != k_posterior.rows()) throw InputError("prior and posterior covariances differ in size");
  const double scale = std::max(1.0, k_prior.cwiseAbs().maxCoeff());
  if (min_eigenvalue(symmetrize(k_prior - k_posterior)) < -1e-10 * scale)
    throw InputError("posterior covariance must not exceed the prior covariance");
  return 0.5 * (spd_logdet(k_prior, "prior covariance") - spd_logdet(k_posterior, "posterior covariance"));
}

double kron_logdet(const MatrixXd& a, const MatrixXd& b) {
  check_psd(a, "first Kronecker factor");
  check_psd(b, "second Kronecker factor");
  return static_cast<double>(b.rows()) * spd_logdet(a, "first Kronecker factor") +
         static_cast<double>(a.rows()) * spd_logdet(b, "second Kronecker factor");
}

double utility(UtilityKind kind, const UtilityContext& ctx, const Points& design_unit) {
  ctx.spatial.validate();
  if (design_unit.rows() < 1) throw InputError("utility: empty design");
  const KernelSpec& k = ctx.spatial;
  if (kind == UtilityKind::MES)
    return robust_cholesky(kernel_gram(k, design_unit), JitterMode::Guarded, "design covariance").logdet();

  if (!(ctx.sigma2 > 0.0)) throw InputError("utility: noise variance must be > 0");
  MatrixXd s = kernel_gram(k, design_unit);
  s.diagonal().array() += ctx.sigma2;
  const Factor f = robust_cholesky(s, JitterMode::OnFailure, "design observation covariance");
  const Points& target = kind == UtilityKind::D_OPT ? ctx.test : ctx.grid;
  if (target.rows() < 1) throw InputError("utility: empty target point set");
  const MatrixXd ktd = kernel_matrix(k, target, design_unit);
  const MatrixXd solved = f.solve(MatrixXd(ktd.transpose()));
  if (kind == UtilityKind::D_OPT) {
    const MatrixXd post = symmetrize(kernel_gram(k, target) - ktd * solved);
    return robust_cholesky(post, JitterMode::OnFailure, "posterior test covariance").logdet();
  }
  return -(kernel_diag(k, target).sum() - ktd.cwiseProduct(solved.transpose()).sum());
}

}  // namespace milsense
