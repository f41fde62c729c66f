#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "milsense/errors.hpp"
#include "milsense/kernels.hpp"
#include "oracles.hpp"

using namespace milsense;

namespace {

std::vector<KernelSpec> temporal_kernels() {
  return {KernelSpec::matern12(1.3, 0.7), KernelSpec::matern32(0.8, 1.9), KernelSpec::matern52(2.0, 1.1),
          KernelSpec::quasi_periodic(1.5, 3.0, 1.2),
          KernelSpec::sum({KernelSpec::matern32(0.5, 2.0), KernelSpec::quasi_periodic(0.7, 5.0, 0.9)})};
}

}  // namespace

TEST(Kernels, MaternClosedForms) {
  const double r = 0.37, l = 0.9, v = 1.7;
  const double a = 0.0, b = r;
  std::span<const double> sa(&a, 1), sb(&b, 1);
  EXPECT_NEAR(eval_kernel(KernelSpec::matern12(v, l), sa, sb), v * std::exp(-r / l), 1e-15);
  const double s3 = std::sqrt(3.0) * r / l;
  EXPECT_NEAR(eval_kernel(KernelSpec::matern32(v, l), sa, sb), v * (1 + s3) * std::exp(-s3), 1e-15);
  const double s5 = std::sqrt(5.0) * r / l;
  EXPECT_NEAR(eval_kernel(KernelSpec::matern52(v, l), sa, sb), v * (1 + s5 + s5 * s5 / 3) * std::exp(-s5), 1e-15);
  const double qp = eval_kernel(KernelSpec::quasi_periodic(v, l, 1.3), sa, sb);
  EXPECT_NEAR(qp, v * (1 + s3) * std::exp(-s3) * std::cos(2 * M_PI * r / 1.3), 1e-15);
}

TEST(Kernels, RejectsInvalidSpecs) {
  EXPECT_THROW(KernelSpec::matern32(-1.0, 1.0).validate(), InputError);
  EXPECT_THROW(KernelSpec::matern32(1.0, 0.0).validate(), InputError);
  const double a[2] = {0, 0}, b[1] = {0};
  EXPECT_THROW(eval_kernel(KernelSpec::matern32(1.0, 1.0, 2), a, b), InputError);
  EXPECT_THROW(to_sde(KernelSpec::matern32(1.0, 1.0, 2)), UnsupportedKernelError);
  EXPECT_THROW(to_sde(KernelSpec::product({KernelSpec::matern12(1, 1), KernelSpec::matern12(1, 1)})),
               UnsupportedKernelError);
}

TEST(Kernels, ParallelMatrixMatchesSerial) {
  std::mt19937_64 rng(11);
  const Points a = oracle::random_points(90, 2, rng), b = oracle::random_points(70, 2, rng);
  const auto k = KernelSpec::sum({KernelSpec::matern52(1.0, 0.3, 2), KernelSpec::matern12(0.4, 0.1, 2)});
  EXPECT_EQ((kernel_matrix(k, a, b) - kernel_matrix_serial(k, a, b)).cwiseAbs().maxCoeff(), 0.0);
  const MatrixXd g = kernel_gram(k, a);
  EXPECT_EQ((g - g.transpose()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Kernels, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const std::vector<KernelSpec> ks = {KernelSpec::matern32(1.2, 0.4, 2), KernelSpec::matern52(0.7, 0.9, 2),
                                      KernelSpec::matern12(1.0, 0.5, 2),
                                      KernelSpec::product({KernelSpec::matern32(1, 0.3, 2), KernelSpec::matern52(2, 1, 2)})};
  for (const auto& k : ks) {
    const Points p = oracle::random_points(2, 2, rng);
    std::vector<double> g(2);
    kernel_grad_first(k, row_span(p, 0), row_span(p, 1), g);
    for (int d = 0; d < 2; ++d) {
      Points pp = p, pm = p;
      pp(0, d) += 1e-6;
      pm(0, d) -= 1e-6;
      const double fd = (eval_kernel(k, row_span(pp, 0), row_span(pp, 1)) - eval_kernel(k, row_span(pm, 0), row_span(pm, 1))) / 2e-6;
      EXPECT_NEAR(g[static_cast<std::size_t>(d)], fd, 1e-7 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Kernels, ParameterGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto ard = KernelSpec::matern52(1.1, 0.5, 2);
  ard.hyper.lengthscales = {0.4, 0.8};
  const std::vector<KernelSpec> ks = {
      ard, KernelSpec::sum({KernelSpec::matern32(1, 0.3, 2), KernelSpec::matern12(0.3, 0.2, 2)}),
      KernelSpec::separable(KernelSpec::matern32(1.0, 0.3, 2), KernelSpec::quasi_periodic(0.9, 2.0, 1.5))};
  for (const auto& k : ks) {
    const Points p = oracle::random_points(2, k.dim(), rng);
    std::vector<double> g(num_params(k));
    kernel_grad_params(k, row_span(p, 0), row_span(p, 1), g);
    const auto theta = log_params(k);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      auto tp = theta, tm = theta;
      tp[j] += 1e-6;
      tm[j] -= 1e-6;
      const double fd = (eval_kernel(with_log_params(k, tp), row_span(p, 0), row_span(p, 1)) -
                         eval_kernel(with_log_params(k, tm), row_span(p, 0), row_span(p, 1))) / 2e-6;
      EXPECT_NEAR(g[j], fd, 1e-7 * std::max(1.0, std::abs(fd))) << param_names(k)[j];
    }
  }
}

TEST(Kernels, StationaryCovarianceSolvesLyapunov) {
  for (const auto& k : temporal_kernels()) {
    const LtiSde sde = to_sde(k);
    EXPECT_LT(sde.lyapunov_residual(), 1e-10) << to_string(k.kind);
    EXPECT_NEAR(sde.H * sde.Pinf * sde.H.transpose(), kernel_variance(k), 1e-10);
  }
}

TEST(Kernels, StateSpaceReconstructsCovariance) {
  const double dt = 0.3;
  for (const auto& k : temporal_kernels()) {
    const DiscreteStateSpace ss = to_state_space(k, dt);
    MatrixXd ak = MatrixXd::Identity(ss.A.rows(), ss.A.cols());
    for (int lag = 0; lag <= 20; ++lag) {
      const double v = ss.sde.H * ak * ss.sde.Pinf * ss.sde.H.transpose();
      EXPECT_NEAR(v, eval_lag(k, lag * dt), 1e-8) << to_string(k.kind) << " lag " << lag;
      ak = ss.A * ak;
    }
    // Q = Pinf - A Pinf Aᵀ is PSD.
    EXPECT_GT(min_eigenvalue(ss.Q), -1e-10);
  }
}

TEST(Kernels, ZeroStepIsIdentity) {
  const DiscreteStateSpace ss = to_state_space(KernelSpec::matern52(1.0, 1.0), 0.0);
  EXPECT_TRUE(ss.A.isIdentity(0.0));
  EXPECT_EQ(ss.Q.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Kernels, StateSpaceDerivativesMatchFiniteDifferences) {
  const double dt = 0.7, h = 1e-6;
  for (const auto& k : temporal_kernels()) {
    const auto d = state_space_derivatives(k, dt);
    const auto theta = log_params(k);
    ASSERT_EQ(d.size(), theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) {
      auto tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      const auto sp = to_state_space(with_log_params(k, tp), dt);
      const auto sm = to_state_space(with_log_params(k, tm), dt);
      EXPECT_LT((d[j].dA - (sp.A - sm.A) / (2 * h)).cwiseAbs().maxCoeff(), 1e-6) << to_string(k.kind) << j;
      EXPECT_LT((d[j].dQ - (sp.Q - sm.Q) / (2 * h)).cwiseAbs().maxCoeff(), 1e-6) << to_string(k.kind) << j;
      EXPECT_LT((d[j].dPinf - (sp.sde.Pinf - sm.sde.Pinf) / (2 * h)).cwiseAbs().maxCoeff(), 1e-6)
          << to_string(k.kind) << j;
    }
  }
}

TEST(Kernels, JsonRoundTrip) {
  const auto k = KernelSpec::separable(KernelSpec::sum({KernelSpec::matern32(1.5, 0.2, 2), KernelSpec::matern12(0.3, 0.05, 2)}),
                                       KernelSpec::quasi_periodic(0.9, 30.0, 24.0));
  const KernelSpec back = kernel_from_json(kernel_to_json(k));
  EXPECT_EQ(kernel_to_json(back), kernel_to_json(k));
  EXPECT_EQ(log_params(back), log_params(k));
  auto j = kernel_to_json(k);
  j["colour"] = "blue";
  try {
    kernel_from_json(j);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
}

TEST(Kernels, KroneckerLayout) {
  MatrixXd a(2, 2), b(2, 3);
  a << 1, 2, 3, 4;
  b << 1, 0, 2, 0, 1, 0;
  const MatrixXd k = kron(a, b);
  EXPECT_EQ(k.rows(), 4);
  EXPECT_EQ(k.cols(), 6);
  EXPECT_EQ(k(2, 5), a(1, 1) * b(0, 2));
  EXPECT_EQ(k(3, 1), a(1, 0) * b(1, 1));
}
