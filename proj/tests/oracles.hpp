#pragma once

// Dense O(N³) reference computations used to check the fast code paths.

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "milsense/kernels.hpp"
#include "milsense/linalg.hpp"
#include "milsense/markov_gp.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using milsense::KernelSpec;
using milsense::Points;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// log N(y; 0, K + σ² I) via a plain LDLT.
inline double gp_log_marginal(const MatrixXd& k, const VectorXd& y, double sigma2) {
  MatrixXd c = k;
  c.diagonal().array() += sigma2;
  Eigen::LDLT<MatrixXd> ldlt(c);
  const double logdet = ldlt.vectorD().array().log().sum();
  return -0.5 * (y.dot(ldlt.solve(y)) + logdet + static_cast<double>(y.size()) * kLog2Pi);
}

// Collapsed bound from explicit matrices: log N(y|0, Q + σ²I) - tr(K - Q)/(2σ²).
inline double collapsed_elbo(const MatrixXd& knn, const MatrixXd& knm, const MatrixXd& kmm, const VectorXd& y,
                             double sigma2) {
  const MatrixXd q = knm * kmm.ldlt().solve(knm.transpose());
  return gp_log_marginal(q, y, sigma2) - (knn - q).trace() / (2.0 * sigma2);
}

// Separable kernel on the time-major flattening (row t * N_s + i) of a
// N_t × N_s grid.
inline MatrixXd st_dense_kernel(const KernelSpec& sep, const Points& xa, const VectorXd& ta, const Points& xb,
                                const VectorXd& tb) {
  const MatrixXd ks = milsense::kernel_matrix_serial(sep.spatial(), xa, xb);
  MatrixXd kt(ta.size(), tb.size());
  for (Eigen::Index i = 0; i < ta.size(); ++i)
    for (Eigen::Index j = 0; j < tb.size(); ++j) kt(i, j) = milsense::eval_lag(sep.temporal(), ta(i) - tb(j));
  return milsense::kron(kt, ks);
}

// Time-major flattening of an N_t × N_s matrix.
inline VectorXd flatten(const MatrixXd& y) {
  VectorXd v(y.size());
  for (Eigen::Index t = 0; t < y.rows(); ++t) v.segment(t * y.cols(), y.cols()) = y.row(t).transpose();
  return v;
}

// Dense Kalman-equivalent: log marginal of y_k = H x_k + e over the stacked
// Gaussian of all states. Builds the joint covariance of the emitted values.
inline double ssm_log_marginal_dense(const milsense::StateSpaceModel& m, const MatrixXd& y) {
  const auto T = y.rows();
  const auto d = m.state_dim();
  std::vector<MatrixXd> phi(static_cast<std::size_t>(T));  // Cov(x_t, x_s) built recursively
  MatrixXd joint = MatrixXd::Zero(T * d, T * d);
  std::vector<MatrixXd> p(static_cast<std::size_t>(T));
  p[0] = m.P0;
  for (Eigen::Index t = 1; t < T; ++t) {
    const MatrixXd& a = m.transition(static_cast<std::size_t>(t - 1));
    p[static_cast<std::size_t>(t)] = a * p[static_cast<std::size_t>(t - 1)] * a.transpose() +
                                     m.process_noise(static_cast<std::size_t>(t - 1));
  }
  for (Eigen::Index s = 0; s < T; ++s) {
    MatrixXd c = p[static_cast<std::size_t>(s)];  // Cov(x_t, x_s) for t >= s
    for (Eigen::Index t = s; t < T; ++t) {
      if (t > s) c = m.transition(static_cast<std::size_t>(t - 1)) * c;
      joint.block(t * d, s * d, d, d) = c;
      joint.block(s * d, t * d, d, d) = c.transpose();
    }
  }
  const MatrixXd h = milsense::kron(MatrixXd::Identity(T, T), m.H);
  MatrixXd cov = h * joint * h.transpose();
  const VectorXd noise = m.obs_noise.replicate(T, 1);
  cov.diagonal() += noise;
  const VectorXd v = flatten(y);
  Eigen::LDLT<MatrixXd> ldlt(cov);
  return -0.5 * (v.dot(ldlt.solve(v)) + ldlt.vectorD().array().log().sum() + static_cast<double>(v.size()) * kLog2Pi);
}

inline Points random_points(Eigen::Index n, Eigen::Index dim, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Points p(n, dim);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

inline MatrixXd random_normal(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline MatrixXd random_spd(Eigen::Index n, std::mt19937_64& rng) {
  const MatrixXd a = random_normal(n, n, rng);
  return a * a.transpose() + 0.5 * MatrixXd::Identity(n, n);
}

}  // namespace oracle
