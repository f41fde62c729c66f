#include <gtest/gtest.h>

#include <random>

#include "milsense/errors.hpp"
#include "milsense/kernels.hpp"
#include "milsense/markov_gp.hpp"
#include "oracles.hpp"

using namespace milsense;

namespace {

StateSpaceModel temporal_model(const KernelSpec& k, double dt, double sigma2) {
  const DiscreteStateSpace ss = to_state_space(k, dt);
  StateSpaceModel m;
  m.A = {ss.A};
  m.Q = {ss.Q};
  m.H = ss.sde.H;
  m.P0 = ss.sde.Pinf;
  m.m0 = VectorXd::Zero(ss.A.rows());
  m.obs_noise = VectorXd::Constant(1, sigma2);
  return m;
}

MatrixXd temporal_gram(const KernelSpec& k, Eigen::Index n, double dt) {
  MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = eval_lag(k, (i - j) * dt);
  return g;
}

}  // namespace

TEST(MarkovGp, FilterMatchesDenseGp) {
  std::mt19937_64 rng(21);
  const auto T = 60;
  for (const auto& k : {KernelSpec::matern12(1.2, 2.0), KernelSpec::matern32(0.6, 4.0), KernelSpec::matern52(1.0, 3.0),
                        KernelSpec::quasi_periodic(1.0, 10.0, 6.0)}) {
    const MatrixXd y = oracle::random_normal(T, 1, rng);
    const auto m = temporal_model(k, 0.5, 0.2);
    const double kal = kalman_filter(m, Observations::fully_observed(y)).log_marginal_likelihood;
    const double dense = oracle::gp_log_marginal(temporal_gram(k, T, 0.5), y.col(0), 0.2);
    EXPECT_NEAR(kal, dense, 1e-8 * std::abs(dense)) << to_string(k.kind);
  }
}

TEST(MarkovGp, MissingObservationsAreSkipped) {
  std::mt19937_64 rng(22);
  const auto k = KernelSpec::matern32(1.0, 3.0);
  const auto T = 40;
  Observations obs = Observations::fully_observed(oracle::random_normal(T, 1, rng));
  std::vector<Eigen::Index> keep;
  for (Eigen::Index t = 0; t < T; ++t) {
    obs.mask(t, 0) = t % 3 != 1;
    if (obs.mask(t, 0)) keep.push_back(t);
    else obs.values(t, 0) = std::nan("");
  }
  const auto m = temporal_model(k, 1.0, 0.1);
  const MatrixXd g = temporal_gram(k, T, 1.0);
  const double dense = oracle::gp_log_marginal(g(keep, keep), obs.values(keep, 0), 0.1);
  EXPECT_NEAR(kalman_filter(m, obs).log_marginal_likelihood, dense, 1e-9 * std::abs(dense));
  EXPECT_EQ(kalman_filter(m, Observations::missing(T, 1)).log_marginal_likelihood, 0.0);
}

TEST(MarkovGp, SmootherMatchesDensePosterior) {
  std::mt19937_64 rng(23);
  const auto k = KernelSpec::matern52(1.4, 2.5);
  const auto T = 30;
  const double s2 = 0.3;
  const MatrixXd y = oracle::random_normal(T, 1, rng);
  const auto m = temporal_model(k, 0.8, s2);
  const auto s = rts_smoother(m, kalman_filter(m, Observations::fully_observed(y)));
  const MatrixXd g = temporal_gram(k, T, 0.8);
  MatrixXd c = g;
  c.diagonal().array() += s2;
  const VectorXd mean = g * c.ldlt().solve(y.col(0));
  const MatrixXd cov = g - g * c.ldlt().solve(g);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto kk = static_cast<std::size_t>(t);
    EXPECT_NEAR((m.H * s.means[kk])(0), mean(t), 1e-9);
    EXPECT_NEAR((m.H * s.covs[kk] * m.H.transpose())(0), cov(t, t), 1e-9);
    if (t + 1 < T) EXPECT_NEAR((m.H * s.cross[kk] * m.H.transpose())(0), cov(t + 1, t), 1e-9);
  }
}

TEST(MarkovGp, VectorEmissionUsesStateSpaceWoodbury) {
  // 7 observations per step from a 2-dimensional state: the many-observation path.
  std::mt19937_64 rng(24);
  const auto base = temporal_model(KernelSpec::matern32(1.0, 2.0), 1.0, 0.1);
  StateSpaceModel m = base;
  m.H = oracle::random_normal(7, 2, rng);
  m.obs_noise = (VectorXd::Random(7).array().abs() + 0.1).matrix();
  const MatrixXd y = oracle::random_normal(25, 7, rng);
  const double kal = kalman_filter(m, Observations::fully_observed(y)).log_marginal_likelihood;
  EXPECT_NEAR(kal, oracle::ssm_log_marginal_dense(m, y), 1e-8 * std::abs(kal));
}

TEST(MarkovGp, ContinueChainsBatches) {
  std::mt19937_64 rng(25);
  const auto m = temporal_model(KernelSpec::matern32(1.0, 2.0), 1.0, 0.1);
  const MatrixXd y = oracle::random_normal(50, 1, rng);
  const auto full = kalman_filter(m, Observations::fully_observed(y));
  const auto first = kalman_filter(m, Observations::fully_observed(y.topRows(20)));
  const auto second = kalman_filter_continue(m, Observations::fully_observed(y.bottomRows(30)), first);
  EXPECT_NEAR(first.log_marginal_likelihood + second.log_marginal_likelihood, full.log_marginal_likelihood, 1e-10);
  EXPECT_LT((second.means.back() - full.means.back()).norm(), 1e-12);
}

TEST(MarkovGp, PriorSampleHasKernelVariance) {
  const auto k = KernelSpec::matern32(2.0, 5.0);
  auto m = temporal_model(k, 1.0, 1.0);
  const auto s = sample_prior(m, 20000, 7);
  const VectorXd v = s.emitted.col(0);
  const double mean = v.mean();
  const double var = (v.array() - mean).square().mean();
  EXPECT_NEAR(var, 2.0, 0.2);
  const auto again = sample_prior(m, 20000, 7);
  EXPECT_EQ((again.emitted - s.emitted).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MarkovGp, RejectsMismatchedShapes) {
  const auto m = temporal_model(KernelSpec::matern32(1.0, 2.0), 1.0, 0.1);
  EXPECT_THROW(kalman_filter(m, Observations::fully_observed(MatrixXd::Zero(5, 2))), InputError);
  StateSpaceModel bad = m;
  bad.obs_noise(0) = 0.0;
  EXPECT_THROW(kalman_filter(bad, Observations::fully_observed(MatrixXd::Zero(5, 1))), InputError);
}
