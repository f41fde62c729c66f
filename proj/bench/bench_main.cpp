// Serial vs OpenMP kernel matrices, and the spatiotemporal bound with its
// gradient at the sizes used by the design benchmark.

#include <benchmark/benchmark.h>

#include <random>

#include "milsense/kernels.hpp"
#include "milsense/stsvgp.hpp"

namespace {

using milsense::KernelSpec;
using milsense::Points;

Points random_points(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Points p(n, 2);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

void BM_KernelMatrixSerial(benchmark::State& state) {
  const auto a = random_points(state.range(0), 1), b = random_points(state.range(0), 2);
  const auto k = KernelSpec::matern52(1.0, 0.2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(milsense::kernel_matrix_serial(k, a, b));
}

void BM_KernelMatrixParallel(benchmark::State& state) {
  const auto a = random_points(state.range(0), 1), b = random_points(state.range(0), 2);
  const auto k = KernelSpec::matern52(1.0, 0.2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(milsense::kernel_matrix(k, a, b));
}

milsense::StGpModel bench_model(Eigen::Index n_steps) {
  milsense::StGpModel m;
  m.kernel = KernelSpec::separable(KernelSpec::matern32(1.0, 0.3, 2), KernelSpec::matern32(1.0, 24.0));
  m.spatial_grid = random_points(100, 3);
  m.inducing = milsense::InducingSet::all_free(random_points(9, 4));
  m.n_steps = static_cast<std::size_t>(n_steps);
  m.sigma2 = 0.01;
  return m;
}

void BM_StElbo(benchmark::State& state) {
  const auto m = bench_model(state.range(0));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd y(state.range(0), 100);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = n(rng);
  const auto obs = milsense::Observations::fully_observed(y);
  for (auto _ : state) benchmark::DoNotOptimize(milsense::st_elbo(m, obs));
}

void BM_StElboGradient(benchmark::State& state) {
  const auto m = bench_model(state.range(0));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd y(state.range(0), 100);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = n(rng);
  const auto obs = milsense::Observations::fully_observed(y);
  for (auto _ : state) benchmark::DoNotOptimize(milsense::st_elbo_gradient(m, obs));
}

}  // namespace

BENCHMARK(BM_KernelMatrixSerial)->Arg(100)->Arg(400)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_KernelMatrixParallel)->Arg(100)->Arg(400)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_StElbo)->Arg(168)->Arg(336)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StElboGradient)->Arg(168)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
