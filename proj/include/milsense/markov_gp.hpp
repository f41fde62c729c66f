#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "milsense/linalg.hpp"

namespace milsense {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Discrete-time linear-Gaussian system
//   x_0 ~ N(m0, P0),  x_{k+1} = A_k x_k + q_k,  q_k ~ N(0, Q_k),
//   y_k = H x_k + e_k,  e_k ~ N(0, diag(obs_noise)).
// A and Q hold either one shared matrix or one matrix per transition.
struct StateSpaceModel {
  std::vector<MatrixXd> A;
  std::vector<MatrixXd> Q;
  MatrixXd H;
  MatrixXd P0;
  VectorXd m0;
  VectorXd obs_noise;

  Eigen::Index state_dim() const { return P0.rows(); }
  Eigen::Index obs_dim() const { return H.rows(); }
  const MatrixXd& transition(std::size_t k) const { return A.size() == 1 ? A[0] : A.at(k); }
  const MatrixXd& process_noise(std::size_t k) const { return Q.size() == 1 ? Q[0] : Q.at(k); }
  void validate() const;
};

// Per-step observations (rows = steps, columns = observed quantities) with a
// per-entry mask; masked-out entries are ignored whatever their value.
struct Observations {
  MatrixXd values;
  Mask mask;

  static Observations fully_observed(const MatrixXd& values);
  static Observations missing(Eigen::Index steps, Eigen::Index dim);
  Eigen::Index steps() const { return values.rows(); }
};

struct FilterResult {
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covs;
  std::vector<VectorXd> pred_means;
  std::vector<MatrixXd> pred_covs;
  std::vector<double> step_log_likelihood;
  double log_marginal_likelihood = 0.0;
};

struct SmootherResult {
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covs;
  // cross[k] = Cov(x_{k+1}, x_k | all data), k = 0..T-2.
  std::vector<MatrixXd> cross;
};

FilterResult kalman_filter(const StateSpaceModel& model, const Observations& obs);

// Continues a filter from the last state of `previous` (chaining batches).
FilterResult kalman_filter_continue(const StateSpaceModel& model, const Observations& obs,
                                    const FilterResult& previous);

SmootherResult rts_smoother(const StateSpaceModel& model, const FilterResult& filt);

struct PriorSample {
  std::vector<VectorXd> states;
  MatrixXd emitted;  // steps × obs_dim, noiseless H x_k
};

PriorSample sample_prior(const StateSpaceModel& model, std::size_t n_steps, std::uint64_t seed);

}  // namespace milsense
