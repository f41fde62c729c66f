// Gradient of the spatiotemporal collapsed bound.
//
// The bound is log p(Y) of a linear-Gaussian pseudo-model plus a closed-form
// trace penalty. For the first part Fisher's identity gives
//   ∇ log p(Y) = E_{p(x|Y)} [∇ log p(x, Y)],
// so one filter/smoother pass yields the expected complete-data sufficient
// statistics, and the gradient follows by differentiating the Gaussian
// complete-data log density with respect to A, Q, P0, the emission and σ²,
// then chaining through the Kronecker structure to K_s(Z,Z), K_s(X,Z) and the
// temporal state-space matrices.

#include <cmath>

#include "milsense/errors.hpp"
#include "milsense/stsvgp.hpp"

namespace milsense {

namespace {

struct BlockAdjoints {
  MatrixXd kzz;     // M × M
  MatrixXd inner;   // d × d
};

// For X = K ⊗ T with adjoint Xbar: K̄(m,n) = <Xbar_mn, T>, T̄ = Σ Xbar_mn K(m,n).
BlockAdjoints contract_kron(const MatrixXd& xbar, const MatrixXd& k, const MatrixXd& t) {
  const auto M = k.rows();
  const auto d = t.rows();
  BlockAdjoints out{MatrixXd::Zero(M, M), MatrixXd::Zero(d, d)};
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < M; ++n) {
      const auto blk = xbar.block(m * d, n * d, d, d);
      out.kzz(m, n) = blk.cwiseProduct(t).sum();
      out.inner += k(m, n) * blk;
    }
  return out;
}

}  // namespace

StElboGradient st_elbo_gradient(const StGpModel& model, const Observations& obs) {
  if (static_cast<std::size_t>(obs.steps()) != model.n_steps || obs.values.cols() != model.spatial_grid.rows())
    throw InputError("observation grid does not match the model grid");
  const InducingChain c = build_inducing_chain(model);
  const FilterResult filt = kalman_filter(c.ssm, obs);
  const SmootherResult sm = rts_smoother(c.ssm, filt);

  const KernelSpec& ks = model.kernel.spatial();
  const KernelSpec& kt = model.kernel.temporal();
  const Points& X = model.spatial_grid;
  const Points& Z = model.inducing.Z;
  const auto M = Z.rows();
  const auto ds = Z.cols();
  const auto d = c.temporal.sde.state_dim();
  const auto D = M * d;
  const auto Ns = X.rows();
  const auto T = static_cast<std::size_t>(obs.steps());
  const double s2 = model.sigma2;
  const MatrixXd Kinv = c.kzz_factor.inverse();
  const MatrixXd& C = c.ssm.H;
  const Eigen::RowVectorXd& ht = c.temporal.sde.H;

  // --- Observation term ------------------------------------------------------
  const bool full = obs.mask.all();
  VectorXd counts = VectorXd::Zero(Ns);
  VectorXd y2 = VectorXd::Zero(Ns);
  MatrixXd ym = MatrixXd::Zero(Ns, D);
  MatrixXd sxx_full = MatrixXd::Zero(D, D);
  std::vector<MatrixXd> sxx_loc(full ? 0 : static_cast<std::size_t>(Ns), MatrixXd::Zero(D, D));
  for (std::size_t k = 0; k < T; ++k) {
    const auto t = static_cast<Eigen::Index>(k);
    const MatrixXd ex = sm.covs[k] + sm.means[k] * sm.means[k].transpose();
    if (full) sxx_full += ex;
    for (Eigen::Index i = 0; i < Ns; ++i) {
      if (!obs.mask(t, i)) continue;
      const double y = obs.values(t, i);
      counts(i) += 1.0;
      y2(i) += y * y;
      ym.row(i) += y * sm.means[k].transpose();
      if (!full) sxx_loc[static_cast<std::size_t>(i)] += ex;
    }
  }

  MatrixXd gc(Ns, D);
  double d_sigma2 = 0.0;
  for (Eigen::Index i = 0; i < Ns; ++i) {
    const MatrixXd& sxx = full ? sxx_full : sxx_loc[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd cs = C.row(i) * sxx;
    gc.row(i) = (ym.row(i) - cs) / s2;
    const double e = y2(i) - 2.0 * C.row(i).dot(ym.row(i)) + cs.dot(C.row(i));
    d_sigma2 += -counts(i) / (2.0 * s2) + e / (2.0 * s2 * s2);
  }
  MatrixXd gb(Ns, M);
  for (Eigen::Index m = 0; m < M; ++m) gb.col(m) = gc.middleCols(m * d, d) * ht.transpose();

  // --- Transition term -------------------------------------------------------
  MatrixXd qbar = MatrixXd::Zero(D, D);
  MatrixXd abar = MatrixXd::Zero(D, D);
  if (T >= 2) {
    const MatrixXd& A = c.ssm.A[0];
    const Factor qt = robust_cholesky(c.temporal.Q, JitterMode::OnFailure, "temporal process noise");
    const MatrixXd qinv = kron(Kinv, qt.inverse());
    MatrixXd phi = MatrixXd::Zero(D, D);
    MatrixXd xi = MatrixXd::Zero(D, D);
    for (std::size_t k = 0; k + 1 < T; ++k) {
      const VectorXd delta = sm.means[k + 1] - A * sm.means[k];
      const MatrixXd ap = A * sm.covs[k];
      const MatrixXd acr = A * sm.cross[k].transpose();
      phi += delta * delta.transpose() + sm.covs[k + 1] - acr - acr.transpose() + ap * A.transpose();
      xi += delta * sm.means[k].transpose() + sm.cross[k] - ap;
    }
    qbar = -0.5 * static_cast<double>(T - 1) * qinv + 0.5 * qinv * phi * qinv;
    abar = qinv * xi;
  }

  // --- Initial state term ----------------------------------------------------
  const Factor pf = robust_cholesky(c.temporal.sde.Pinf, JitterMode::OnFailure, "stationary covariance");
  const MatrixXd p0inv = kron(Kinv, pf.inverse());
  const MatrixXd e0 = sm.covs[0] + sm.means[0] * sm.means[0].transpose();
  const MatrixXd p0bar = -0.5 * p0inv + 0.5 * p0inv * e0 * p0inv;

  const BlockAdjoints qa = contract_kron(qbar, c.kzz, c.temporal.Q);
  const BlockAdjoints pa = contract_kron(p0bar, c.kzz, c.temporal.sde.Pinf);
  MatrixXd at_bar = MatrixXd::Zero(d, d);
  for (Eigen::Index m = 0; m < M; ++m) at_bar += abar.block(m * d, m * d, d, d);

  MatrixXd kzz_bar = qa.kzz + pa.kzz;
  MatrixXd kxz_bar = gb * Kinv;
  kzz_bar -= c.B.transpose() * gb * Kinv;

  // --- Trace penalty ---------------------------------------------------------
  const double kt0 = c.temporal_variance;
  const double coef = -kt0 / (2.0 * s2);
  const VectorXd kdiag = kernel_diag(ks, X);
  const VectorXd q = c.B.cwiseProduct(c.kxz).rowwise().sum();
  const double penalty = coef * counts.dot(kdiag - q);
  const MatrixXd wb = counts.asDiagonal() * c.B;
  kxz_bar += -2.0 * coef * wb;
  kzz_bar += coef * c.B.transpose() * wb;
  d_sigma2 += -penalty / s2;
  const double d_kt0 = kt0 > 0.0 ? penalty / kt0 : 0.0;

  StElboGradient g;
  g.elbo = filt.log_marginal_likelihood + penalty;
  g.d_log_sigma2 = s2 * d_sigma2;

  // --- Inducing locations ----------------------------------------------------
  const MatrixXd kzz_sym = kzz_bar + kzz_bar.transpose();
  g.d_inducing = VectorXd::Zero(M * ds);
  std::vector<double> buf(static_cast<std::size_t>(ds));
#pragma omp parallel for schedule(static) firstprivate(buf) if (M * Ns > 2048)
  for (Eigen::Index m = 0; m < M; ++m) {
    auto out = g.d_inducing.segment(m * ds, ds);
    for (Eigen::Index i = 0; i < Ns; ++i) {
      kernel_grad_first(ks, row_span(Z, m), row_span(X, i), buf);
      for (Eigen::Index k = 0; k < ds; ++k) out(k) += kxz_bar(i, m) * buf[static_cast<std::size_t>(k)];
    }
    for (Eigen::Index n = 0; n < M; ++n) {
      if (n == m) continue;
      kernel_grad_first(ks, row_span(Z, m), row_span(Z, n), buf);
      for (Eigen::Index k = 0; k < ds; ++k) out(k) += kzz_sym(m, n) * buf[static_cast<std::size_t>(k)];
    }
  }

  // --- Spatial hyperparameters -----------------------------------------------
  const auto ps = num_params(ks);
  const auto pt = num_params(kt);
  g.d_kernel = VectorXd::Zero(static_cast<Eigen::Index>(ps + pt));
  std::vector<double> gp(ps);
  for (Eigen::Index i = 0; i < Ns; ++i) {
    for (Eigen::Index m = 0; m < M; ++m) {
      kernel_grad_params(ks, row_span(X, i), row_span(Z, m), gp);
      for (std::size_t p = 0; p < ps; ++p) g.d_kernel(static_cast<Eigen::Index>(p)) += kxz_bar(i, m) * gp[p];
    }
    kernel_grad_params(ks, row_span(X, i), row_span(X, i), gp);
    for (std::size_t p = 0; p < ps; ++p) g.d_kernel(static_cast<Eigen::Index>(p)) += coef * counts(i) * gp[p];
  }
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < M; ++n) {
      kernel_grad_params(ks, row_span(Z, m), row_span(Z, n), gp);
      for (std::size_t p = 0; p < ps; ++p) g.d_kernel(static_cast<Eigen::Index>(p)) += kzz_bar(m, n) * gp[p];
    }

  // --- Temporal hyperparameters ----------------------------------------------
  const auto derivs = state_space_derivatives(kt, model.dt);
  std::vector<double> gt(pt);
  const double zero = 0.0;
  kernel_grad_params(kt, std::span<const double>(&zero, 1), std::span<const double>(&zero, 1), gt);
  for (std::size_t p = 0; p < pt; ++p) {
    const auto& dv = derivs[p];
    g.d_kernel(static_cast<Eigen::Index>(ps + p)) = at_bar.cwiseProduct(dv.dA).sum() +
                                                     qa.inner.cwiseProduct(dv.dQ).sum() +
                                                     pa.inner.cwiseProduct(dv.dPinf).sum() + d_kt0 * gt[p];
  }
  return g;
}

}  // namespace milsense
