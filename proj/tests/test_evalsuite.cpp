#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "milsense/errors.hpp"
#include "milsense/evalsuite.hpp"
#include "oracles.hpp"

using namespace milsense;

TEST(Metrics, RmseAndNpllClosedForms) {
  MatrixXd mean(2, 2), truth(2, 2), var(2, 2);
  mean << 0, 1, 2, 3;
  truth << 1, 1, 2, 0;
  var.setConstant(0.5);
  EXPECT_DOUBLE_EQ(rmse(mean, truth), std::sqrt(10.0 / 4.0));
  Mask m = Mask::Constant(2, 2, true);
  m(1, 1) = false;
  EXPECT_DOUBLE_EQ(rmse(mean, truth, m), std::sqrt(1.0 / 3.0));
  const double expected = 0.5 * std::log(2 * M_PI * 0.5) + (1.0 + 9.0) / (2 * 0.5) / 4.0;
  EXPECT_NEAR(npll(mean, var, truth), expected, 1e-12);
  EXPECT_THROW(rmse(mean, truth, Mask::Constant(2, 2, false)), InputError);
  EXPECT_THROW(npll(mean, MatrixXd::Zero(2, 2), truth), InputError);
  EXPECT_THROW(rmse(mean, MatrixXd::Zero(3, 2)), InputError);
}

TEST(Metrics, WellSpecifiedPredictionsAreCalibrated) {
  std::mt19937_64 rng(1);
  const MatrixXd truth = oracle::random_normal(200, 100, rng);
  const MatrixXd mean = MatrixXd::Zero(200, 100), var = MatrixXd::Ones(200, 100);
  const auto c = calibration(mean, var, truth);
  EXPECT_EQ(c.curve.size(), 19u);
  EXPECT_LT(c.miscalibration_area, 0.01);
  for (const auto& p : c.curve) EXPECT_NEAR(p.empirical, p.nominal, 0.02);
  EXPECT_NEAR(npll(mean, var, truth), 0.5 * std::log(2 * M_PI) + 0.5, 0.02);
}

TEST(Metrics, OverconfidentPredictionsHaveMaximalArea) {
  // Variances so small that no truth falls inside any interval: the curve is
  // identically zero and the area is ∫_{0.05}^{0.95} p dp = 0.45.
  const MatrixXd truth = MatrixXd::Ones(10, 10), mean = MatrixXd::Zero(10, 10);
  const MatrixXd var = MatrixXd::Constant(10, 10, 1e-12);
  EXPECT_NEAR(calibration(mean, var, truth).miscalibration_area, 0.45, 1e-12);
  // Underconfident: every truth inside every interval.
  const MatrixXd wide = MatrixXd::Constant(10, 10, 1e12);
  EXPECT_NEAR(calibration(mean, wide, truth).miscalibration_area, 0.45, 1e-12);
}

TEST(Metrics, CalibrationRejectsBadLevels) {
  const MatrixXd z = MatrixXd::Zero(2, 2), one = MatrixXd::Ones(2, 2);
  EXPECT_THROW(calibration(z, one, z, std::vector<double>{0.5, 1.0}), InputError);
  EXPECT_THROW(calibration(z, one, z, std::vector<double>{0.6, 0.5}), InputError);
}

TEST(Metrics, ExtremeErrorRatePerLocation) {
  MatrixXd mean = MatrixXd::Zero(4, 3), truth(4, 3);
  truth << 2, 0, 0, 0, 0, 0, 2, 0, 0, -3, 0, 5;
  Mask m = Mask::Constant(4, 3, true);
  m.col(2).setConstant(false);
  const VectorXd r = extreme_error_rate(mean, truth, m, 1.0);
  EXPECT_DOUBLE_EQ(r(0), 0.75);
  EXPECT_DOUBLE_EQ(r(1), 0.0);
  EXPECT_TRUE(std::isnan(r(2)));
  const VectorXd per = rmse_per_location(mean, truth, m);
  EXPECT_DOUBLE_EQ(per(0), std::sqrt(17.0 / 4.0));
  EXPECT_TRUE(std::isnan(per(2)));
}

TEST(Metrics, ReportSerializes) {
  std::mt19937_64 rng(2);
  const MatrixXd truth = oracle::random_normal(5, 4, rng);
  const auto r = evaluate_field(MatrixXd::Zero(5, 4), MatrixXd::Ones(5, 4), truth, Mask::Constant(5, 4, true));
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j.at("rmse").get<double>(), r.rmse);
  EXPECT_EQ(j.at("calibration_curve").size(), 19u);
  EXPECT_EQ(j.at("extreme_error_rate").size(), 4u);
}

TEST(Matching, HungarianMatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int n = 1; n <= 7; ++n) {
    for (int rep = 0; rep < 5; ++rep) {
      const MatrixXd cost = oracle::random_normal(n, n, rng).cwiseAbs();
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      double best = INFINITY;
      do {
        double c = 0.0;
        for (int i = 0; i < n; ++i) c += cost(i, perm[static_cast<std::size_t>(i)]);
        best = std::min(best, c);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const auto a = hungarian(cost);
      double got = 0.0;
      for (int i = 0; i < n; ++i) got += cost(i, a[static_cast<std::size_t>(i)]);
      EXPECT_NEAR(got, best, 1e-12);
      std::vector<int> sorted = a;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < n; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
    }
  }
}

TEST(Matching, DesignDistanceForPermutationsAndOffByOne) {
  Points a(3, 2), b(3, 2);
  a << 0, 0, 1, 0, 0, 1;
  b << 0, 1.5, 0, 0, 1, 0;  // permuted, one point moved by 0.5
  const auto m = design_distance(a, b);
  EXPECT_NEAR(m.total_distance, 0.5, 1e-12);
  EXPECT_EQ(m.most_displaced, 2);
  EXPECT_NEAR(m.most_displaced_distance, 0.5, 1e-12);
  EXPECT_EQ(m.unmatched, -1);
  Points c(4, 2);
  c << a, Eigen::RowVector2d(5, 5);
  const auto off = design_distance(c, a);
  EXPECT_NEAR(off.total_distance, 0.0, 1e-12);
  EXPECT_EQ(off.unmatched, 3);
  EXPECT_TRUE(off.unmatched_in_first);
  const auto rev = design_distance(a, c);
  EXPECT_EQ(rev.unmatched, 3);
  EXPECT_FALSE(rev.unmatched_in_first);
  EXPECT_THROW(design_distance(a, Points::Zero(1, 2)), InputError);
  EXPECT_EQ(m.to_json().at("pairs").size(), 3u);
}
