#include "milsense/sparse_vgp.hpp"

#include <cmath>

#include "milsense/errors.hpp"

namespace milsense {

InducingSet InducingSet::all_free(Points z) {
  InducingSet s;
  s.fixed.assign(static_cast<std::size_t>(z.rows()), false);
  s.Z = std::move(z);
  return s;
}

void InducingSet::validate() const {
  if (Z.rows() < 1) throw InputError("inducing set must contain at least one location");
  if (!Z.allFinite()) throw InputError("inducing locations must be finite");
  if (fixed.size() != static_cast<std::size_t>(Z.rows())) throw InputError("inducing set: one fixed flag per location");
}

namespace {

// Shared O(N M²) structures: K_MM = L Lᵀ, U = K_NM L⁻ᵀ (so Q_NN = U Uᵀ).
struct LowRank {
  Factor kmm;
  MatrixXd U;
  VectorXd knn_diag;
};

LowRank low_rank(const KernelSpec& kernel, const Points& x, const Points& z) {
  LowRank lr;
  lr.kmm = robust_cholesky(kernel_gram(kernel, z), JitterMode::Guarded, "K_MM");
  const MatrixXd knm = kernel_matrix(kernel, x, z);
  lr.U = lr.kmm.llt.matrixL().solve(knm.transpose()).transpose();
  lr.knn_diag = kernel_diag(kernel, x);
  return lr;
}

// (U Uᵀ + σ² I)⁻¹ v and log det (U Uᵀ + σ² I) via Woodbury.
struct WoodburySolver {
  Factor inner;  // I + UᵀU/σ²
  const MatrixXd* U;
  double sigma2;
  double n;

  WoodburySolver(const MatrixXd& u, double s2) : U(&u), sigma2(s2), n(static_cast<double>(u.rows())) {
    MatrixXd b = u.transpose() * u / s2;
    b.diagonal().array() += 1.0;
    inner = robust_cholesky(b, JitterMode::OnFailure, "I + UᵀU/σ²");
  }
  VectorXd solve(const VectorXd& v) const {
    const VectorXd c = U->transpose() * v / sigma2;
    return v / sigma2 - (*U) * inner.solve(c) / sigma2;
  }
  double logdet() const { return n * std::log(sigma2) + inner.logdet(); }
};

void check_xy(const Points& x, const VectorXd& y, double sigma2) {
  if (x.rows() < 1) throw InputError("need at least one training input");
  if (x.rows() != y.size()) throw InputError("inputs and outputs differ in length");
  if (!(sigma2 > 0.0)) throw InputError("noise variance must be > 0");
}

}  // namespace

MatrixXd nystrom(const MatrixXd& kmm, const MatrixXd& knm) {
  if (kmm.rows() != kmm.cols() || knm.cols() != kmm.rows()) throw InputError("nystrom: dimension mismatch");
  const Factor f = robust_cholesky(kmm, JitterMode::Guarded, "K_MM");
  const MatrixXd u = f.llt.matrixL().solve(knm.transpose());
  return symmetrize(u.transpose() * u);
}

ElboTerms collapsed_elbo_terms(const KernelSpec& kernel, const Points& x, const VectorXd& y, const Points& z,
                               double sigma2) {
  check_xy(x, y, sigma2);
  const LowRank lr = low_rank(kernel, x, z);
  const WoodburySolver ws(lr.U, sigma2);
  ElboTerms t;
  t.log_likelihood = -0.5 * (y.dot(ws.solve(y)) + ws.logdet() + static_cast<double>(y.size()) * kLog2Pi);
  t.trace_residual = std::max(lr.knn_diag.sum() - lr.U.squaredNorm(), 0.0);
  t.elbo = t.log_likelihood - t.trace_residual / (2.0 * sigma2);
  return t;
}

double collapsed_elbo(const KernelSpec& kernel, const Points& x, const VectorXd& y, const InducingSet& z,
                      double sigma2) {
  z.validate();
  return collapsed_elbo_terms(kernel, x, y, z.Z, sigma2).elbo;
}

VariationalMoments optimal_q(const KernelSpec& kernel, const Points& x, const VectorXd& y, const InducingSet& z,
                             double sigma2, OptimalQOptions opts) {
  z.validate();
  check_xy(x, y, sigma2);
  const LowRank lr = low_rank(kernel, x, z.Z);
  double s2 = sigma2;
  if (opts.trace_regularizer)
    s2 += std::max(lr.knn_diag.sum() - lr.U.squaredNorm(), 0.0) / static_cast<double>(x.rows());

  // μ = σ⁻² L B⁻¹ Uᵀ y and A = L B⁻¹ Lᵀ with B = I + UᵀU/σ².
  MatrixXd b = lr.U.transpose() * lr.U / s2;
  b.diagonal().array() += 1.0;
  const Factor bf = robust_cholesky(b, JitterMode::OnFailure, "I + UᵀU/σ²");
  const MatrixXd L = lr.kmm.llt.matrixL();
  VariationalMoments q;
  q.mu = L * bf.solve(VectorXd(lr.U.transpose() * y)) / s2;
  q.A = symmetrize(L * bf.solve(MatrixXd(L.transpose())));
  return q;
}

PointPredictive predict(const KernelSpec& kernel, const Points& z, const VariationalMoments& q,
                        const Points& xstar) {
  if (q.mu.size() != z.rows() || q.A.rows() != z.rows()) throw InputError("predict: moments do not match Z");
  const Factor kmm = robust_cholesky(kernel_gram(kernel, z), JitterMode::Guarded, "K_MM");
  const MatrixXd ksm = kernel_matrix(kernel, xstar, z);
  const MatrixXd w = kmm.solve(MatrixXd(ksm.transpose())).transpose();  // K_*M K_MM⁻¹
  const MatrixXd u = kmm.llt.matrixL().solve(ksm.transpose());

  PointPredictive p;
  p.mean = w * q.mu;
  const VectorXd kss = kernel_diag(kernel, xstar);
  p.var = kss - u.colwise().squaredNorm().transpose() + (w * q.A).cwiseProduct(w).rowwise().sum();
  for (Eigen::Index i = 0; i < p.var.size(); ++i) {
    if (p.var(i) < 0.0) {
      p.worst_clamp = std::min(p.worst_clamp, p.var(i));
      p.var(i) = 0.0;
    }
  }
  return p;
}

ElboPerturbation elbo_perturbation(const KernelSpec& kernel, const Points& x, const VectorXd& y,
                                   const VectorXd& delta_y, const Points& z, double sigma2) {
  check_xy(x, y, sigma2);
  if (delta_y.size() != y.size()) throw InputError("perturbation length differs from data length");
  const LowRank lr = low_rank(kernel, x, z);
  const WoodburySolver ws(lr.U, sigma2);
  const VectorXd grad = ws.solve(y);
  ElboPerturbation p;
  p.linear = grad.dot(delta_y);
  p.quadratic = 0.5 * delta_y.dot(ws.solve(delta_y));
  p.delta = p.linear + p.quadratic;
  return p;
}

}  // namespace milsense
