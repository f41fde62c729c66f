#include "milsense/markov_gp.hpp"

#include <cmath>
#include <random>
#include <string>

#include "milsense/errors.hpp"

namespace milsense {

void StateSpaceModel::validate() const {
  const auto d = state_dim();
  if (A.empty() || Q.empty()) throw InputError("state-space model: empty transition or process noise");
  for (const auto& a : A)
    if (a.rows() != d || a.cols() != d) throw InputError("state-space model: transition dimension mismatch");
  for (const auto& q : Q)
    if (q.rows() != d || q.cols() != d) throw InputError("state-space model: process noise dimension mismatch");
  if (H.cols() != d) throw InputError("state-space model: emission dimension mismatch");
  if (m0.size() != d) throw InputError("state-space model: initial mean dimension mismatch");
  if (obs_noise.size() != H.rows()) throw InputError("state-space model: one noise variance per observation");
  if ((obs_noise.array() <= 0.0).any()) throw InputError("state-space model: observation noise must be > 0");
}

Observations Observations::fully_observed(const MatrixXd& values) {
  return {values, Mask::Constant(values.rows(), values.cols(), true)};
}

Observations Observations::missing(Eigen::Index steps, Eigen::Index dim) {
  return {MatrixXd::Zero(steps, dim), Mask::Constant(steps, dim, false)};
}

namespace {

struct UpdateOut {
  VectorXd m;
  MatrixXd P;
  double loglik = 0.0;
};

// Measurement update on the observed subset `idx`, Joseph form.
UpdateOut update(const VectorXd& m, const MatrixXd& P, const MatrixXd& C, const VectorXd& R,
                 const VectorXd& y, std::size_t step) {
  const auto d = P.rows();
  const auto n = C.rows();
  const VectorXd v = y - C * m;
  MatrixXd K;
  double quad = 0.0, logdet = 0.0;

  if (n <= d) {
    MatrixXd S = symmetrize(C * P * C.transpose());
    S.diagonal() += R;
    Factor f = robust_cholesky(S, JitterMode::OnFailure, "innovation covariance at step " + std::to_string(step));
    K = f.solve(MatrixXd(C * P)).transpose();
    quad = v.dot(f.solve(v));
    logdet = f.logdet();
  } else {
    // Many observations, small state: factor in state space (Woodbury).
    const MatrixXd Lp = psd_factor(P);
    const VectorXd rs = R.cwiseSqrt().cwiseInverse();
    const MatrixXd W = rs.asDiagonal() * (C * Lp);
    MatrixXd M = W.transpose() * W;
    M.diagonal().array() += 1.0;
    Factor f = robust_cholesky(M, JitterMode::OnFailure, "state-space innovation at step " + std::to_string(step));
    const VectorXd vt = rs.cwiseProduct(v);
    const VectorXd q = W.transpose() * vt;
    quad = vt.squaredNorm() - q.dot(f.solve(q));
    logdet = R.array().log().sum() + f.logdet();
    K = Lp * f.solve(MatrixXd(W.transpose())) * rs.asDiagonal();
  }

  UpdateOut out;
  out.m = m + K * v;
  MatrixXd ikc = -K * C;
  ikc.diagonal().array() += 1.0;
  out.P = symmetrize(ikc * P * ikc.transpose() + K * R.asDiagonal() * K.transpose());
  const double tr = std::max(out.P.trace(), 1e-300);
  if (out.P.diagonal().minCoeff() < -kMaxJitter * tr)
    throw NumericalError("filtered covariance lost positive semidefiniteness at step " + std::to_string(step));
  out.loglik = -0.5 * (quad + logdet + static_cast<double>(n) * kLog2Pi);
  return out;
}

void run_filter(const StateSpaceModel& model, const Observations& obs, FilterResult& res) {
  const auto T = static_cast<std::size_t>(obs.steps());
  if (obs.values.cols() != model.obs_dim() || obs.mask.rows() != obs.values.rows() ||
      obs.mask.cols() != obs.values.cols())
    throw InputError("kalman_filter: observation dimension does not match the emission matrix");

  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(model.obs_dim()));
  for (std::size_t k = 0; k < T; ++k) {
    VectorXd m;
    MatrixXd P;
    const std::size_t global = res.means.size();
    if (global == 0) {
      m = model.m0;
      P = model.P0;
    } else {
      const MatrixXd& A = model.transition(global - 1);
      m = A * res.means.back();
      P = symmetrize(A * res.covs.back() * A.transpose() + model.process_noise(global - 1));
    }
    res.pred_means.push_back(m);
    res.pred_covs.push_back(P);

    idx.clear();
    for (Eigen::Index j = 0; j < obs.mask.cols(); ++j)
      if (obs.mask(static_cast<Eigen::Index>(k), j)) idx.push_back(j);

    double ll = 0.0;
    if (!idx.empty()) {
      const auto row = static_cast<Eigen::Index>(k);
      const bool all = static_cast<Eigen::Index>(idx.size()) == model.obs_dim();
      UpdateOut u = all ? update(m, P, model.H, model.obs_noise, obs.values.row(row).transpose(), global)
                        : update(m, P, model.H(idx, Eigen::all), model.obs_noise(idx),
                                 obs.values(row, idx).transpose(), global);
      m = std::move(u.m);
      P = std::move(u.P);
      ll = u.loglik;
    }
    res.means.push_back(std::move(m));
    res.covs.push_back(std::move(P));
    res.step_log_likelihood.push_back(ll);
    res.log_marginal_likelihood += ll;
  }
}

}  // namespace

FilterResult kalman_filter(const StateSpaceModel& model, const Observations& obs) {
  model.validate();
  FilterResult res;
  res.means.reserve(static_cast<std::size_t>(obs.steps()));
  res.covs.reserve(static_cast<std::size_t>(obs.steps()));
  run_filter(model, obs, res);
  return res;
}

FilterResult kalman_filter_continue(const StateSpaceModel& model, const Observations& obs,
                                    const FilterResult& previous) {
  model.validate();
  FilterResult res = previous;
  res.log_marginal_likelihood = 0.0;
  const std::size_t before = res.step_log_likelihood.size();
  run_filter(model, obs, res);
  res.log_marginal_likelihood = 0.0;
  for (std::size_t k = before; k < res.step_log_likelihood.size(); ++k)
    res.log_marginal_likelihood += res.step_log_likelihood[k];
  return res;
}

SmootherResult rts_smoother(const StateSpaceModel& model, const FilterResult& filt) {
  const std::size_t T = filt.means.size();
  SmootherResult s;
  if (T == 0) return s;
  s.means.resize(T);
  s.covs.resize(T);
  s.cross.resize(T - 1);
  s.means[T - 1] = filt.means[T - 1];
  s.covs[T - 1] = filt.covs[T - 1];
  for (std::size_t k = T - 1; k-- > 0;) {
    const MatrixXd& A = model.transition(k);
    const MatrixXd& Pp = filt.pred_covs[k + 1];
    Factor f;
    try {
      f = robust_cholesky(Pp, JitterMode::OnFailure, "predicted covariance");
    } catch (const NumericalError&) {
      throw NumericalError("rts_smoother: singular predicted covariance at step " + std::to_string(k + 1));
    }
    // G = P_f Aᵀ P_p⁻¹
    const MatrixXd G = f.solve(MatrixXd(A * filt.covs[k])).transpose();
    s.means[k] = filt.means[k] + G * (s.means[k + 1] - filt.pred_means[k + 1]);
    s.covs[k] = symmetrize(filt.covs[k] + G * (s.covs[k + 1] - Pp) * G.transpose());
    s.cross[k] = s.covs[k + 1] * G.transpose();
  }
  return s;
}

PriorSample sample_prior(const StateSpaceModel& model, std::size_t n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw InputError("sample_prior: n_steps must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = model.state_dim();
  auto draw = [&](const MatrixXd& factor) {
    VectorXd z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = normal(rng);
    return VectorXd(factor * z);
  };

  PriorSample out;
  out.states.reserve(n_steps);
  out.emitted.resize(static_cast<Eigen::Index>(n_steps), model.obs_dim());
  const MatrixXd l0 = psd_factor(model.P0);
  std::vector<MatrixXd> lq;
  for (const auto& q : model.Q) lq.push_back(psd_factor(q));

  VectorXd x = model.m0 + draw(l0);
  for (std::size_t k = 0; k < n_steps; ++k) {
    if (k > 0) x = model.transition(k - 1) * x + draw(lq.size() == 1 ? lq[0] : lq.at(k - 1));
    out.emitted.row(static_cast<Eigen::Index>(k)) = (model.H * x).transpose();
    out.states.push_back(x);
  }
  return out;
}

}  // namespace milsense
