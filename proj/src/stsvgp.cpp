#include "milsense/stsvgp.hpp"

#include <cmath>

#include "milsense/errors.hpp"

namespace milsense {

void StGpModel::validate() const {
  kernel.validate();
  if (kernel.kind != KernelKind::Separable) throw InputError("ST-SVGP needs a Separable kernel");
  (void)to_sde(kernel.temporal());
  inducing.validate();
  const int ds = kernel.spatial().dim();
  if (inducing.Z.cols() != ds) throw InputError("inducing locations do not match the spatial kernel dimension");
  if (spatial_grid.rows() < 1 || spatial_grid.cols() != ds)
    throw InputError("spatial grid does not match the spatial kernel dimension");
  if (n_steps < 1) throw InputError("time grid must have at least one step");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InputError("time step must be > 0");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw InputError("noise variance must be > 0");
}

Eigen::Index StGpModel::temporal_state_dim() const { return to_sde(kernel.temporal()).state_dim(); }

InducingChain build_inducing_chain(const StGpModel& model) {
  model.validate();
  const KernelSpec& ks = model.kernel.spatial();
  InducingChain c;
  c.kzz_factor = robust_cholesky(kernel_gram(ks, model.inducing.Z), JitterMode::Guarded, "K_ZZ");
  const auto M = model.inducing.Z.rows();
  c.kzz = kernel_gram(ks, model.inducing.Z);
  c.kzz.diagonal().array() += c.kzz_factor.jitter;
  c.kxz = kernel_matrix(ks, model.spatial_grid, model.inducing.Z);
  c.B = c.kzz_factor.solve(MatrixXd(c.kxz.transpose())).transpose();
  c.temporal = to_state_space(model.kernel.temporal(), model.dt);
  c.temporal_variance = c.temporal.sde.H * c.temporal.sde.Pinf * c.temporal.sde.H.transpose();

  const MatrixXd im = MatrixXd::Identity(M, M);
  const MatrixXd ht = c.temporal.sde.H;
  c.ssm.A = {kron(im, c.temporal.A)};
  c.ssm.Q = {symmetrize(kron(c.kzz, c.temporal.Q))};
  c.ssm.P0 = symmetrize(kron(c.kzz, c.temporal.sde.Pinf));
  c.ssm.m0 = VectorXd::Zero(c.ssm.P0.rows());
  c.ssm.H = kron(c.B, ht);
  c.ssm.obs_noise = VectorXd::Constant(model.spatial_grid.rows(), model.sigma2);
  c.emission_to_u = kron(im, ht);
  return c;
}

namespace {

void check_obs(const StGpModel& model, const Observations& obs) {
  if (static_cast<std::size_t>(obs.steps()) != model.n_steps || obs.values.cols() != model.spatial_grid.rows())
    throw InputError("observation grid (" + std::to_string(obs.steps()) + "x" + std::to_string(obs.values.cols()) +
                     ") does not match the model grid (" + std::to_string(model.n_steps) + "x" +
                     std::to_string(model.spatial_grid.rows()) + ")");
}

double trace_penalty(const StGpModel& model, const InducingChain& c, const Observations& obs) {
  const VectorXd kdiag = kernel_diag(model.kernel.spatial(), model.spatial_grid);
  const VectorXd q = c.B.cwiseProduct(c.kxz).rowwise().sum();
  const VectorXd counts = obs.mask.cast<double>().colwise().sum().transpose();
  const double resid = counts.dot(kdiag - q);
  return c.temporal_variance * resid / (2.0 * model.sigma2);
}

}  // namespace

double st_elbo(const StGpModel& model, const Observations& obs) {
  check_obs(model, obs);
  const InducingChain c = build_inducing_chain(model);
  const FilterResult f = kalman_filter(c.ssm, obs);
  return f.log_marginal_likelihood - trace_penalty(model, c, obs);
}

StPosterior st_fit_posterior(const StGpModel& model, const Observations& obs) {
  check_obs(model, obs);
  const InducingChain c = build_inducing_chain(model);
  const FilterResult f = kalman_filter(c.ssm, obs);
  const SmootherResult s = rts_smoother(c.ssm, f);
  StPosterior post;
  post.elbo = f.log_marginal_likelihood - trace_penalty(model, c, obs);
  for (std::size_t k = 0; k < s.means.size(); ++k) {
    post.mu.push_back(c.emission_to_u * s.means[k]);
    post.A.push_back(symmetrize(c.emission_to_u * s.covs[k] * c.emission_to_u.transpose()));
  }
  return post;
}

PredictiveField st_predict(const StGpModel& model, const StPosterior& posterior, const Points& xstar) {
  model.validate();
  const KernelSpec& ks = model.kernel.spatial();
  const auto M = model.inducing.Z.rows();
  for (std::size_t k = 0; k < posterior.mu.size(); ++k)
    if (posterior.mu[k].size() != M || posterior.A[k].rows() != M)
      throw InputError("st_predict: posterior does not match the inducing set");
  const Factor kzz = robust_cholesky(kernel_gram(ks, model.inducing.Z), JitterMode::Guarded, "K_ZZ");
  const MatrixXd ksz = kernel_matrix(ks, xstar, model.inducing.Z);
  const MatrixXd bs = kzz.solve(MatrixXd(ksz.transpose())).transpose();
  const double kt0 = kernel_variance(model.kernel.temporal());
  const VectorXd resid = (kernel_diag(ks, xstar) - bs.cwiseProduct(ksz).rowwise().sum()).cwiseMax(0.0);

  const auto T = static_cast<Eigen::Index>(posterior.mu.size());
  PredictiveField out;
  out.mean.resize(T, xstar.rows());
  out.var.resize(T, xstar.rows());
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto k = static_cast<std::size_t>(t);
    out.mean.row(t) = (bs * posterior.mu[k]).transpose();
    const VectorXd explained = (bs * posterior.A[k]).cwiseProduct(bs).rowwise().sum();
    out.var.row(t) = (kt0 * resid + explained).cwiseMax(0.0).transpose();
  }
  return out;
}

std::vector<Eigen::Index> grid_indices(const Points& grid, const Points& locations) {
  if (locations.cols() != grid.cols()) throw InputError("design dimension differs from the grid dimension");
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < locations.rows(); ++i) {
    Eigen::Index found = -1;
    for (Eigen::Index g = 0; g < grid.rows() && found < 0; ++g)
      if ((grid.row(g) - locations.row(i)).cwiseAbs().maxCoeff() <= 1e-12) found = g;
    if (found < 0) throw InputError("design location " + std::to_string(i) + " is not on the spatial grid");
    idx.push_back(found);
  }
  return idx;
}

StPosterior test_time_update(const StGpModel& model, const StPosterior& trained, const Observations& test_obs,
                             const Points& design_locations, TestTimeOptions opts) {
  const auto idx = grid_indices(model.spatial_grid, design_locations);
  if (test_obs.values.cols() != static_cast<Eigen::Index>(idx.size()))
    throw InputError("test observations need one column per design location");
  const auto T = static_cast<std::size_t>(test_obs.steps());
  if (opts.reuse == CovarianceReuse::PerStep && trained.A.size() != T)
    throw InputError("per-step covariance reuse needs a test range as long as the training range (" +
                     std::to_string(trained.A.size()) + " vs " + std::to_string(T) + "); use averaged reuse");
  if (trained.A.empty()) throw InputError("trained posterior is empty");

  StGpModel m = model;
  m.n_steps = T;
  InducingChain c = build_inducing_chain(m);
  c.ssm.H = MatrixXd(c.ssm.H(idx, Eigen::all));
  c.ssm.obs_noise = VectorXd::Constant(static_cast<Eigen::Index>(idx.size()), model.sigma2);

  StPosterior out;
  for (int sweep = 0; sweep < std::max(opts.sweeps, 1); ++sweep) {
    const FilterResult f = kalman_filter(c.ssm, test_obs);
    const SmootherResult s = rts_smoother(c.ssm, f);
    out.mu.clear();
    for (const auto& mean : s.means) out.mu.push_back(c.emission_to_u * mean);
    out.elbo = f.log_marginal_likelihood;
  }
  if (opts.reuse == CovarianceReuse::PerStep) {
    out.A = trained.A;
  } else {
    MatrixXd avg = MatrixXd::Zero(trained.A[0].rows(), trained.A[0].cols());
    for (const auto& a : trained.A) avg += a;
    avg /= static_cast<double>(trained.A.size());
    out.A.assign(T, avg);
  }
  return out;
}

}  // namespace milsense
