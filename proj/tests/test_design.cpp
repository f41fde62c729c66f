#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "milsense/design.hpp"
#include "milsense/errors.hpp"
#include "oracles.hpp"

using namespace milsense;

namespace {

GridDataset small_field(std::uint64_t seed, int n = 5, Eigen::Index nt = 24) {
  SynthConfig cfg;
  cfg.grid.nx = n;
  cfg.grid.ny = n;
  cfg.grid.width = 4.0;
  cfg.grid.height = 4.0;
  cfg.grid.n_times = nt;
  cfg.kernel = KernelSpec::separable(KernelSpec::matern32(1.0, 0.4, 2), KernelSpec::matern32(1.0, 5.0));
  cfg.seed = seed;
  return synth_field(cfg);
}

OptimizerConfig quick_config() {
  OptimizerConfig cfg;
  cfg.max_iters = 40;
  cfg.restarts = 2;
  cfg.seed = 3;
  return cfg;
}

KernelSpec start_kernel() {
  return KernelSpec::separable(KernelSpec::matern32(1.0, 0.3, 2), KernelSpec::matern32(1.0, 4.0));
}

bool on_grid_and_distinct(const Points& grid, const Points& pts) {
  std::set<Eigen::Index> seen;
  for (auto i : grid_indices(grid, pts)) seen.insert(i);
  return static_cast<Eigen::Index>(seen.size()) == pts.rows();
}

}  // namespace

TEST(Optimizer, AscendsConcaveQuadraticMonotonically) {
  const VectorXd target = (VectorXd(3) << 0.5, -0.25, 0.1).finished();
  const ValueAndGradient f = [&](const VectorXd& x, VectorXd& g) {
    g = -2.0 * (x - target);
    return -(x - target).squaredNorm();
  };
  OptimizerConfig cfg;
  cfg.max_iters = 400;
  const auto r = adam_ascent(f, VectorXd::Zero(3), cfg);
  EXPECT_LT((r.x - target).norm(), 5e-2);
  EXPECT_GT(r.value, -2.5e-3);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_GE(r.trace[i], r.trace[i - 1]);
}

TEST(Optimizer, ProjectionKeepsIteratesFeasible) {
  const ValueAndGradient f = [](const VectorXd& x, VectorXd& g) {
    g = VectorXd::Ones(x.size());
    return x.sum();
  };
  const Projection box = [](VectorXd& x) { x = x.cwiseMin(1.0); };
  OptimizerConfig cfg;
  cfg.max_iters = 200;
  const auto r = adam_ascent(f, VectorXd::Zero(2), cfg, box);
  EXPECT_LE(r.x.maxCoeff(), 1.0);
  EXPECT_NEAR(r.value, 2.0, 1e-6);
}

TEST(Optimizer, RejectsNonFiniteSteps) {
  // The objective is -inf beyond x = 0.2, so every step past it is rejected.
  const ValueAndGradient f = [](const VectorXd& x, VectorXd& g) {
    g = VectorXd::Ones(1);
    return x(0) > 0.2 ? -INFINITY : x(0);
  };
  const auto r = adam_ascent(f, VectorXd::Zero(1), OptimizerConfig{});
  EXPECT_LE(r.x(0), 0.2);
  EXPECT_GT(r.rejected, 0);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Optimizer, FiniteDifferenceAndLearningRate) {
  const auto g = finite_difference_gradient([](const VectorXd& x) { return std::sin(x(0)) * x(1); },
                                            (VectorXd(2) << 0.3, 2.0).finished(), 1e-5);
  EXPECT_NEAR(g(0), std::cos(0.3) * 2.0, 1e-8);
  EXPECT_NEAR(g(1), std::sin(0.3), 1e-8);
  OptimizerConfig cfg;
  EXPECT_DOUBLE_EQ(cosine_learning_rate(cfg, 0), cfg.lr_start);
  EXPECT_NEAR(cosine_learning_rate(cfg, cfg.max_iters), cfg.lr_end, 1e-15);
  cfg.restarts = 0;
  EXPECT_THROW(cfg.validate(), InputError);
}

TEST(Baselines, UniformAndLhsDesigns) {
  GridConfig g;
  g.nx = 6;
  g.ny = 6;
  const Points grid = g.locations();
  const auto u = uniform_design(grid, 9, 4);
  EXPECT_EQ(u.size(), 9);
  EXPECT_TRUE(on_grid_and_distinct(grid, u.locations));
  EXPECT_EQ(uniform_design(grid, 9, 4).locations, u.locations);
  EXPECT_NE(uniform_design(grid, 9, 5).locations, u.locations);
  EXPECT_THROW(uniform_design(grid, 37, 1), InputError);

  const Points l = lhs_points(grid, 6, 7);
  for (int axis = 0; axis < 2; ++axis) {
    std::set<int> strata;
    for (Eigen::Index i = 0; i < 6; ++i) strata.insert(std::min(5, static_cast<int>(l(i, axis) * 6.0)));
    EXPECT_EQ(strata.size(), 6u) << "axis " << axis;
  }
  const auto ld = lhs_design(grid, 6, 7);
  EXPECT_TRUE(on_grid_and_distinct(grid, ld.locations));
  EXPECT_EQ(ld.strategy, "lhs");
}

TEST(Baselines, SnappingResolvesCollisions) {
  GridConfig g;
  g.nx = 3;
  g.ny = 1;
  g.ny = 2;
  const Points grid = g.locations();  // (0,0) (0.5,0) (1,0) (0,1) (0.5,1) (1,1)
  Points pts(3, 2);
  pts << 0.05, 0.0, 0.0, 0.05, 0.9, 0.0;
  const auto idx = snap_to_grid(grid, pts);
  EXPECT_EQ(idx[0], 0);
  EXPECT_NE(idx[1], 0);
  EXPECT_EQ(idx[2], 2);
  const auto taken = snap_to_grid(grid, pts.topRows(1), {0});
  EXPECT_NE(taken[0], 0);
}

TEST(Baselines, KmeansFindsSeparatedClusters) {
  Points pts(6, 2);
  pts << 0, 0, 0.1, 0, 0, 0.1, 5, 5, 5.1, 5, 5, 5.1;
  Points c = kmeans(pts, 2, 1, 20);
  if (c(0, 0) > c(1, 0)) c.row(0).swap(c.row(1));
  EXPECT_LT((c.row(0) - Eigen::RowVector2d(0.1 / 3, 0.1 / 3)).norm(), 1e-12);
  EXPECT_LT((c.row(1) - Eigen::RowVector2d(5 + 0.1 / 3, 5 + 0.1 / 3)).norm(), 1e-12);
}

TEST(DesignIo, JsonRoundTrip) {
  SensorDesign d;
  d.locations = Points(2, 2);
  d.locations << 0.25, 1.5, 3, 4;
  d.fixed = {true, false};
  d.strategy = "mil";
  d.seed = 12;
  const auto back = SensorDesign::from_json(d.to_json());
  EXPECT_EQ(back.locations, d.locations);
  EXPECT_EQ(back.fixed, d.fixed);
  EXPECT_EQ(back.strategy, "mil");
  EXPECT_EQ(back.seed, 12u);
  auto j = d.to_json();
  j["extra"] = 1;
  EXPECT_THROW(SensorDesign::from_json(j), ParseError);
}

TEST(Utilities, GaussianEigAndKronLogdet) {
  MatrixXd prior(1, 1), post(1, 1);
  prior << 2.0;
  post << 1.0;
  EXPECT_NEAR(gaussian_eig(prior, post), 0.5 * std::log(2.0), 1e-15);
  EXPECT_THROW(gaussian_eig(post, prior), InputError);
  std::mt19937_64 rng(4);
  const MatrixXd a = oracle::random_spd(4, rng), b = oracle::random_spd(3, rng);
  const double dense = std::log(kron(a, b).determinant());
  EXPECT_NEAR(kron_logdet(a, b), dense, 1e-9 * std::abs(dense));
}

TEST(Utilities, StaticGpUtilitiesMatchDenseFormulas) {
  std::mt19937_64 rng(5);
  UtilityContext ctx{KernelSpec::matern32(1.5, 0.3, 2), 0.1, oracle::random_points(4, 2, rng),
                     oracle::random_points(10, 2, rng)};
  const Points d = oracle::random_points(5, 2, rng);
  const MatrixXd kdd = kernel_matrix_serial(ctx.spatial, d, d);
  EXPECT_NEAR(utility(UtilityKind::MES, ctx, d), std::log(kdd.determinant()), 1e-9);
  const MatrixXd s = kdd + 0.1 * MatrixXd::Identity(5, 5);
  auto post = [&](const Points& x) {
    const MatrixXd kxd = kernel_matrix_serial(ctx.spatial, x, d);
    return MatrixXd(kernel_matrix_serial(ctx.spatial, x, x) - kxd * s.inverse() * kxd.transpose());
  };
  EXPECT_NEAR(utility(UtilityKind::D_OPT, ctx, d), std::log(post(ctx.test).determinant()), 1e-8);
  EXPECT_NEAR(utility(UtilityKind::IMSE, ctx, d), -post(ctx.grid).trace(), 1e-10);
  // More sensors never increase the posterior variance.
  Points more(6, 2);
  more << d, Eigen::RowVector2d(0.5, 0.5);
  EXPECT_GE(utility(UtilityKind::IMSE, ctx, more), utility(UtilityKind::IMSE, ctx, d));
}

TEST(Baselines, ImseObjectiveMatchesPosteriorVariances) {
  std::mt19937_64 rng(6);
  const KernelSpec k = start_kernel();
  const Points design = oracle::random_points(4, 2, rng), pred = oracle::random_points(7, 2, rng);
  const Eigen::Index nt = 6;
  StGpModel m;
  m.kernel = k;
  m.inducing = InducingSet::all_free(design);
  m.spatial_grid = design;
  m.n_steps = nt;
  m.dt = 1.0;
  m.sigma2 = 0.2;
  const auto post = st_fit_posterior(m, Observations::fully_observed(MatrixXd::Zero(nt, 4)));
  const double expected = st_predict(m, post, pred).var.sum();
  EXPECT_NEAR(imse_objective(k, 0.2, design, pred, nt, 1.0), expected, 1e-9 * expected);
}

TEST(Mil, DesignIsOnGridAndImprovesOverInitialization) {
  const GridDataset data = small_field(1);
  const OptimizerConfig cfg = quick_config();
  const auto r = mil_design(data, start_kernel(), 0.05, 4, nullptr, cfg);
  EXPECT_EQ(r.design.size(), 4);
  EXPECT_TRUE(on_grid_and_distinct(data.locations, r.design.locations));
  EXPECT_EQ(r.design.strategy, "mil");
  EXPECT_EQ(r.fit.restart_elbos.size(), 2u);
  for (std::size_t i = 1; i < r.fit.trace.size(); ++i) EXPECT_GE(r.fit.trace[i], r.fit.trace[i - 1]);
  // Reported bound is the bound at the snapped design with the fitted parameters.
  const DesignProblem prob(data);
  const double direct = st_elbo(prob.model(r.fit.kernel, r.fit.sigma2, prob.norm.to_unit(r.design.locations)),
                                data.observations());
  EXPECT_NEAR(r.fit.elbo, direct, 1e-8 * std::abs(direct));
  // Deterministic under the same seed.
  EXPECT_EQ(mil_design(data, start_kernel(), 0.05, 4, nullptr, cfg).design.locations, r.design.locations);
}

TEST(Mil, FixedSensorsAreKeptVerbatim) {
  const GridDataset data = small_field(2);
  SensorDesign fixed;
  fixed.locations = data.locations.row(12);
  fixed.fixed = {true};
  const auto r = mil_design(data, start_kernel(), 0.05, 3, &fixed, quick_config());
  ASSERT_EQ(r.design.size(), 4);
  EXPECT_EQ(r.design.locations.row(0), data.locations.row(12));
  EXPECT_TRUE(r.design.fixed[0]);
  EXPECT_FALSE(r.design.fixed[1]);
  EXPECT_TRUE(on_grid_and_distinct(data.locations, r.design.locations));
  SensorDesign off = fixed;
  off.locations(0, 0) += 0.1;
  EXPECT_THROW(mil_design(data, start_kernel(), 0.05, 3, &off, quick_config()), InputError);
}

TEST(Mil, FrozenHyperparametersStayFixed) {
  const GridDataset data = small_field(3);
  OptimizerConfig cfg = quick_config();
  cfg.fit_hyperparameters = false;
  const auto r = mil_design(data, start_kernel(), 0.05, 3, nullptr, cfg);
  EXPECT_EQ(log_params(r.fit.kernel), log_params(start_kernel()));
  EXPECT_DOUBLE_EQ(r.fit.sigma2, 0.05);
}

TEST(Mil, HyperparameterFitImprovesBound) {
  const GridDataset data = small_field(4);
  const auto design = uniform_design(data.locations, 5, 1);
  const DesignProblem prob(data);
  const double before = st_elbo(prob.model(start_kernel(), 0.5, prob.norm.to_unit(design.locations)),
                                data.observations());
  const auto fit = fit_hyperparameters(data, start_kernel(), 0.5, design, quick_config());
  EXPECT_GT(fit.elbo, before);
}

TEST(Removal, EnumeratesAllSubsetsAndPicksBest) {
  const GridDataset data = small_field(5, 4, 12);
  const auto design = uniform_design(data.locations, 5, 2);
  const auto r = sensor_removal(data, start_kernel(), 0.05, design, 2);
  ASSERT_EQ(r.table.size(), 10u);
  EXPECT_EQ(r.table[0].removed, (std::vector<Eigen::Index>{0, 1}));
  EXPECT_EQ(r.table[9].removed, (std::vector<Eigen::Index>{3, 4}));
  double best = -INFINITY;
  for (const auto& s : r.table) best = std::max(best, s.elbo);
  EXPECT_EQ(r.table[r.best].elbo, best);
  EXPECT_EQ(r.design.size(), 3);
  // Each table entry is the bound of the reduced design.
  const DesignProblem prob(data);
  const auto& s = r.table[4];
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < 5; ++i)
    if (std::find(s.removed.begin(), s.removed.end(), i) == s.removed.end()) keep.push_back(i);
  const Points kept = design.locations(keep, Eigen::all);
  EXPECT_NEAR(s.elbo, st_elbo(prob.model(start_kernel(), 0.05, prob.norm.to_unit(kept)), data.observations()),
              1e-9 * std::abs(s.elbo));
  EXPECT_THROW(sensor_removal(data, start_kernel(), 0.05, design, 5), InputError);
  EXPECT_THROW(sensor_removal(data, start_kernel(), 0.05, design, 2, 5), InputError);
}

TEST(Baselines, MesAndImseAugmentTheInitialDesign) {
  const GridDataset data = small_field(6, 5, 10);
  const auto init = kmeans_design(DesignProblem(data).grid, 3, 1);
  SensorDesign init_raw = init;
  init_raw.locations = DesignProblem(data).norm.to_raw(init.locations);
  OptimizerConfig cfg = quick_config();
  cfg.max_iters = 20;
  const auto mes = mes_design(data, start_kernel(), 2, init_raw, cfg);
  ASSERT_EQ(mes.size(), 5);
  EXPECT_EQ(mes.locations.topRows(3), init_raw.locations);
  EXPECT_TRUE(on_grid_and_distinct(data.locations, mes.locations));
  const auto imse = imse_design(data, start_kernel(), 0.05, 2, init_raw, cfg);
  ASSERT_EQ(imse.size(), 5);
  EXPECT_EQ(imse.locations.topRows(3), init_raw.locations);
  EXPECT_TRUE(on_grid_and_distinct(data.locations, imse.locations));
}
