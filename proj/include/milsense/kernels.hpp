#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <vector>

#include "milsense/linalg.hpp"

namespace milsense {

// One point per row, so each point is a contiguous span.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> row_span(const Points& p, Eigen::Index i) {
  return {p.data() + i * p.cols(), static_cast<std::size_t>(p.cols())};
}

enum class KernelKind {
  Matern12,
  Matern32,
  Matern52,
  QuasiPeriodicMatern32,
  Sum,
  Product,
  Separable,
};

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& s);

struct HyperParams {
  double variance = 1.0;
  // One entry (isotropic) or one per input dimension (ARD).
  std::vector<double> lengthscales{1.0};
  // QuasiPeriodicMatern32 only.
  double period = 1.0;
};

// Kernel expression tree. Leaves carry hyperparameters; Sum/Product/Separable
// carry children. Separable is top-level only: children = {spatial, temporal},
// and its inputs are (spatial coordinates..., time).
struct KernelSpec {
  KernelKind kind = KernelKind::Matern32;
  HyperParams hyper;
  int input_dim = 1;
  std::vector<KernelSpec> children;

  static KernelSpec matern12(double variance, double lengthscale, int dim = 1);
  static KernelSpec matern32(double variance, double lengthscale, int dim = 1);
  static KernelSpec matern52(double variance, double lengthscale, int dim = 1);
  static KernelSpec quasi_periodic(double variance, double lengthscale, double period);
  static KernelSpec sum(std::vector<KernelSpec> parts);
  static KernelSpec product(std::vector<KernelSpec> parts);
  static KernelSpec separable(KernelSpec spatial, KernelSpec temporal);

  bool is_leaf() const;
  int dim() const;
  const KernelSpec& spatial() const;
  const KernelSpec& temporal() const;
  KernelSpec& spatial();
  KernelSpec& temporal();

  // Throws InputError when the tree violates the structural invariants.
  void validate() const;
};

// κ(a, b).
double eval_kernel(const KernelSpec& spec, std::span<const double> a, std::span<const double> b);

// κ(0) for stationary kernels: the marginal variance.
double kernel_variance(const KernelSpec& spec);

// Temporal kernel at lag tau (1-D input).
double eval_lag(const KernelSpec& spec, double tau);

// ∂κ(a,b)/∂a, written into `out` (size dim).
void kernel_grad_first(const KernelSpec& spec, std::span<const double> a,
                       std::span<const double> b, std::span<double> out);

// ∂κ(a,b)/∂(log hyperparameters), in the order of `log_params`.
void kernel_grad_params(const KernelSpec& spec, std::span<const double> a,
                        std::span<const double> b, std::span<double> out);

// Log-scale hyperparameter vector, depth-first over leaves:
// [log variance, log lengthscales..., (log period)].
std::vector<double> log_params(const KernelSpec& spec);
KernelSpec with_log_params(const KernelSpec& spec, std::span<const double> theta);
std::size_t num_params(const KernelSpec& spec);
std::vector<std::string> param_names(const KernelSpec& spec);

// Entry (i,j) = κ(A_i, B_j). OpenMP-parallel over rows.
MatrixXd kernel_matrix(const KernelSpec& spec, const Points& a, const Points& b);
// Single-threaded reference of kernel_matrix.
MatrixXd kernel_matrix_serial(const KernelSpec& spec, const Points& a, const Points& b);
// Gram matrix of a point list, exactly symmetric.
MatrixXd kernel_gram(const KernelSpec& spec, const Points& a);
VectorXd kernel_diag(const KernelSpec& spec, const Points& a);

// Linear time-invariant SDE  df = F f dt + L dβ,  y = H f,  with stationary
// covariance Pinf (F Pinf + Pinf Fᵀ + L Qc Lᵀ = 0).
struct LtiSde {
  MatrixXd F;
  MatrixXd L;
  MatrixXd Qc;
  Eigen::RowVectorXd H;
  MatrixXd Pinf;

  Eigen::Index state_dim() const { return F.rows(); }
  double lyapunov_residual() const;
};

struct DiscreteStateSpace {
  LtiSde sde;
  MatrixXd A;  // expm(F dt)
  MatrixXd Q;  // Pinf - A Pinf Aᵀ
};

LtiSde to_sde(const KernelSpec& temporal);
DiscreteStateSpace to_state_space(const KernelSpec& temporal, double dt);

// Derivatives of the discretised model with respect to the temporal kernel's
// log hyperparameters.
struct StateSpaceDerivative {
  MatrixXd dA;
  MatrixXd dQ;
  MatrixXd dPinf;
};
std::vector<StateSpaceDerivative> state_space_derivatives(const KernelSpec& temporal, double dt);

// Solves F X + X Fᵀ = -C for X.
MatrixXd solve_lyapunov(const MatrixXd& F, const MatrixXd& C);
MatrixXd expm(const MatrixXd& m);

nlohmann::json kernel_to_json(const KernelSpec& spec);
KernelSpec kernel_from_json(const nlohmann::json& j);

}  // namespace milsense
