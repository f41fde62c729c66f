#include "milsense/kernels.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <numbers>

#include "milsense/errors.hpp"

namespace milsense {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kSqrt5 = 2.2360679774997897;

// Matérn correlation g(r) for unit lengthscale, and h(r) = g'(r) / r.
double matern_g(KernelKind k, double r) {
  switch (k) {
    case KernelKind::Matern12:
      return std::exp(-r);
    case KernelKind::Matern32:
      return (1.0 + kSqrt3 * r) * std::exp(-kSqrt3 * r);
    case KernelKind::Matern52:
      return (1.0 + kSqrt5 * r + 5.0 * r * r / 3.0) * std::exp(-kSqrt5 * r);
    default:
      throw UnsupportedKernelError("matern_g: not a Matérn kernel");
  }
}

double matern_h(KernelKind k, double r) {
  switch (k) {
    case KernelKind::Matern12:
      // Not differentiable at the origin; the symmetric subgradient is zero.
      return r > 0.0 ? -std::exp(-r) / r : 0.0;
    case KernelKind::Matern32:
      return -3.0 * std::exp(-kSqrt3 * r);
    case KernelKind::Matern52:
      return -(5.0 / 3.0) * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
    default:
      throw UnsupportedKernelError("matern_h: not a Matérn kernel");
  }
}

double lengthscale(const HyperParams& h, std::size_t k) {
  return h.lengthscales.size() == 1 ? h.lengthscales[0] : h.lengthscales[k];
}

double scaled_distance(const KernelSpec& s, std::span<const double> a, std::span<const double> b) {
  double r2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = (a[k] - b[k]) / lengthscale(s.hyper, k);
    r2 += d * d;
  }
  return std::sqrt(r2);
}

void check_dims(const KernelSpec& spec, std::span<const double> a, std::span<const double> b) {
  const auto d = static_cast<std::size_t>(spec.dim());
  if (a.size() != d || b.size() != d)
    throw InputError("kernel input dimension mismatch: expected " + std::to_string(d) + ", got " +
                     std::to_string(a.size()) + " and " + std::to_string(b.size()));
}

double eval_impl(const KernelSpec& s, std::span<const double> a, std::span<const double> b) {
  switch (s.kind) {
    case KernelKind::Matern12:
    case KernelKind::Matern32:
    case KernelKind::Matern52:
      return s.hyper.variance * matern_g(s.kind, scaled_distance(s, a, b));
    case KernelKind::QuasiPeriodicMatern32: {
      const double tau = a[0] - b[0];
      const double w = 2.0 * std::numbers::pi / s.hyper.period;
      return s.hyper.variance * std::cos(w * tau) *
             matern_g(KernelKind::Matern32, std::abs(tau) / s.hyper.lengthscales[0]);
    }
    case KernelKind::Sum: {
      double v = 0.0;
      for (const auto& c : s.children) v += eval_impl(c, a, b);
      return v;
    }
    case KernelKind::Product: {
      double v = 1.0;
      for (const auto& c : s.children) v *= eval_impl(c, a, b);
      return v;
    }
    case KernelKind::Separable: {
      const auto ds = static_cast<std::size_t>(s.children[0].dim());
      return eval_impl(s.children[0], a.first(ds), b.first(ds)) *
             eval_impl(s.children[1], a.subspan(ds), b.subspan(ds));
    }
  }
  return 0.0;
}

void grad_first_impl(const KernelSpec& s, std::span<const double> a, std::span<const double> b,
                     std::span<double> out) {
  switch (s.kind) {
    case KernelKind::Matern12:
    case KernelKind::Matern32:
    case KernelKind::Matern52: {
      const double h = matern_h(s.kind, scaled_distance(s, a, b));
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double l = lengthscale(s.hyper, k);
        out[k] = s.hyper.variance * h * (a[k] - b[k]) / (l * l);
      }
      return;
    }
    case KernelKind::QuasiPeriodicMatern32: {
      const double tau = a[0] - b[0];
      const double l = s.hyper.lengthscales[0];
      const double w = 2.0 * std::numbers::pi / s.hyper.period;
      const double r = std::abs(tau) / l;
      out[0] = s.hyper.variance * (-w * std::sin(w * tau) * matern_g(KernelKind::Matern32, r) +
                                   std::cos(w * tau) * matern_h(KernelKind::Matern32, r) * tau / (l * l));
      return;
    }
    case KernelKind::Sum: {
      std::vector<double> tmp(out.size());
      std::fill(out.begin(), out.end(), 0.0);
      for (const auto& c : s.children) {
        grad_first_impl(c, a, b, tmp);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += tmp[k];
      }
      return;
    }
    case KernelKind::Product: {
      std::vector<double> vals;
      for (const auto& c : s.children) vals.push_back(eval_impl(c, a, b));
      std::vector<double> tmp(out.size());
      std::fill(out.begin(), out.end(), 0.0);
      for (std::size_t i = 0; i < s.children.size(); ++i) {
        double others = 1.0;
        for (std::size_t j = 0; j < vals.size(); ++j)
          if (j != i) others *= vals[j];
        grad_first_impl(s.children[i], a, b, tmp);
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += others * tmp[k];
      }
      return;
    }
    case KernelKind::Separable: {
      const auto ds = static_cast<std::size_t>(s.children[0].dim());
      const double ks = eval_impl(s.children[0], a.first(ds), b.first(ds));
      const double kt = eval_impl(s.children[1], a.subspan(ds), b.subspan(ds));
      grad_first_impl(s.children[0], a.first(ds), b.first(ds), out.first(ds));
      grad_first_impl(s.children[1], a.subspan(ds), b.subspan(ds), out.subspan(ds));
      for (std::size_t k = 0; k < ds; ++k) out[k] *= kt;
      for (std::size_t k = ds; k < out.size(); ++k) out[k] *= ks;
      return;
    }
  }
}

std::size_t leaf_params(const KernelSpec& s) {
  return 1 + s.hyper.lengthscales.size() + (s.kind == KernelKind::QuasiPeriodicMatern32 ? 1 : 0);
}

void grad_params_impl(const KernelSpec& s, std::span<const double> a, std::span<const double> b,
                      std::span<double> out) {
  switch (s.kind) {
    case KernelKind::Matern12:
    case KernelKind::Matern32:
    case KernelKind::Matern52: {
      const double r = scaled_distance(s, a, b);
      const double k = s.hyper.variance * matern_g(s.kind, r);
      const double h = matern_h(s.kind, r);
      out[0] = k;
      if (s.hyper.lengthscales.size() == 1) {
        out[1] = -s.hyper.variance * h * r * r;
      } else {
        for (std::size_t j = 0; j < a.size(); ++j) {
          const double d = (a[j] - b[j]) / s.hyper.lengthscales[j];
          out[1 + j] = -s.hyper.variance * h * d * d;
        }
      }
      return;
    }
    case KernelKind::QuasiPeriodicMatern32: {
      const double tau = a[0] - b[0];
      const double l = s.hyper.lengthscales[0];
      const double w = 2.0 * std::numbers::pi / s.hyper.period;
      const double r = std::abs(tau) / l;
      const double g = matern_g(KernelKind::Matern32, r);
      const double c = std::cos(w * tau);
      out[0] = s.hyper.variance * c * g;
      out[1] = -s.hyper.variance * c * matern_h(KernelKind::Matern32, r) * r * r;
      out[2] = s.hyper.variance * g * std::sin(w * tau) * w * tau;
      return;
    }
    case KernelKind::Sum: {
      std::size_t off = 0;
      for (const auto& c : s.children) {
        const auto n = num_params(c);
        grad_params_impl(c, a, b, out.subspan(off, n));
        off += n;
      }
      return;
    }
    case KernelKind::Product: {
      std::vector<double> vals;
      for (const auto& c : s.children) vals.push_back(eval_impl(c, a, b));
      std::size_t off = 0;
      for (std::size_t i = 0; i < s.children.size(); ++i) {
        double others = 1.0;
        for (std::size_t j = 0; j < vals.size(); ++j)
          if (j != i) others *= vals[j];
        const auto n = num_params(s.children[i]);
        auto sub = out.subspan(off, n);
        grad_params_impl(s.children[i], a, b, sub);
        for (auto& v : sub) v *= others;
        off += n;
      }
      return;
    }
    case KernelKind::Separable: {
      const auto ds = static_cast<std::size_t>(s.children[0].dim());
      const double ks = eval_impl(s.children[0], a.first(ds), b.first(ds));
      const double kt = eval_impl(s.children[1], a.subspan(ds), b.subspan(ds));
      const auto ns = num_params(s.children[0]);
      const auto nt = num_params(s.children[1]);
      grad_params_impl(s.children[0], a.first(ds), b.first(ds), out.first(ns));
      grad_params_impl(s.children[1], a.subspan(ds), b.subspan(ds), out.subspan(ns, nt));
      for (std::size_t k = 0; k < ns; ++k) out[k] *= kt;
      for (std::size_t k = ns; k < ns + nt; ++k) out[k] *= ks;
      return;
    }
  }
}

void collect_params(const KernelSpec& s, std::vector<double>& out) {
  if (s.is_leaf()) {
    out.push_back(std::log(s.hyper.variance));
    for (double l : s.hyper.lengthscales) out.push_back(std::log(l));
    if (s.kind == KernelKind::QuasiPeriodicMatern32) out.push_back(std::log(s.hyper.period));
    return;
  }
  for (const auto& c : s.children) collect_params(c, out);
}

void assign_params(KernelSpec& s, std::span<const double> theta, std::size_t& pos) {
  if (s.is_leaf()) {
    s.hyper.variance = std::exp(theta[pos++]);
    for (double& l : s.hyper.lengthscales) l = std::exp(theta[pos++]);
    if (s.kind == KernelKind::QuasiPeriodicMatern32) s.hyper.period = std::exp(theta[pos++]);
    return;
  }
  for (auto& c : s.children) assign_params(c, theta, pos);
}

void collect_names(const KernelSpec& s, const std::string& prefix, std::vector<std::string>& out) {
  if (s.is_leaf()) {
    const std::string base = prefix + to_string(s.kind);
    out.push_back(base + ".log_variance");
    for (std::size_t k = 0; k < s.hyper.lengthscales.size(); ++k)
      out.push_back(base + ".log_lengthscale" + (s.hyper.lengthscales.size() > 1 ? std::to_string(k) : ""));
    if (s.kind == KernelKind::QuasiPeriodicMatern32) out.push_back(base + ".log_period");
    return;
  }
  for (std::size_t i = 0; i < s.children.size(); ++i) {
    std::string p = prefix;
    if (s.kind == KernelKind::Separable)
      p += i == 0 ? "spatial." : "temporal.";
    else
      p += to_string(s.kind) + "[" + std::to_string(i) + "].";
    collect_names(s.children[i], p, out);
  }
}

}  // namespace

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::Matern12: return "Matern12";
    case KernelKind::Matern32: return "Matern32";
    case KernelKind::Matern52: return "Matern52";
    case KernelKind::QuasiPeriodicMatern32: return "QuasiPeriodicMatern32";
    case KernelKind::Sum: return "Sum";
    case KernelKind::Product: return "Product";
    case KernelKind::Separable: return "Separable";
  }
  return "?";
}

KernelKind kernel_kind_from_string(const std::string& s) {
  for (auto k : {KernelKind::Matern12, KernelKind::Matern32, KernelKind::Matern52,
                 KernelKind::QuasiPeriodicMatern32, KernelKind::Sum, KernelKind::Product,
                 KernelKind::Separable})
    if (to_string(k) == s) return k;
  throw ParseError("unknown kernel variant '" + s + "'");
}

KernelSpec KernelSpec::matern12(double variance, double ls, int dim) {
  return KernelSpec{KernelKind::Matern12, {variance, {ls}, 1.0}, dim, {}};
}
KernelSpec KernelSpec::matern32(double variance, double ls, int dim) {
  return KernelSpec{KernelKind::Matern32, {variance, {ls}, 1.0}, dim, {}};
}
KernelSpec KernelSpec::matern52(double variance, double ls, int dim) {
  return KernelSpec{KernelKind::Matern52, {variance, {ls}, 1.0}, dim, {}};
}
KernelSpec KernelSpec::quasi_periodic(double variance, double ls, double period) {
  return KernelSpec{KernelKind::QuasiPeriodicMatern32, {variance, {ls}, period}, 1, {}};
}
KernelSpec KernelSpec::sum(std::vector<KernelSpec> parts) {
  KernelSpec s{KernelKind::Sum, {}, parts.empty() ? 1 : parts[0].dim(), std::move(parts)};
  return s;
}
KernelSpec KernelSpec::product(std::vector<KernelSpec> parts) {
  KernelSpec s{KernelKind::Product, {}, parts.empty() ? 1 : parts[0].dim(), std::move(parts)};
  return s;
}
KernelSpec KernelSpec::separable(KernelSpec spatial, KernelSpec temporal) {
  const int d = spatial.dim() + temporal.dim();
  KernelSpec s{KernelKind::Separable, {}, d, {std::move(spatial), std::move(temporal)}};
  return s;
}

bool KernelSpec::is_leaf() const {
  return kind != KernelKind::Sum && kind != KernelKind::Product && kind != KernelKind::Separable;
}

int KernelSpec::dim() const {
  if (kind == KernelKind::Separable) return children[0].dim() + children[1].dim();
  if (!is_leaf()) return children.empty() ? input_dim : children[0].dim();
  return input_dim;
}

const KernelSpec& KernelSpec::spatial() const {
  if (kind != KernelKind::Separable) throw InputError("kernel is not Separable");
  return children[0];
}
const KernelSpec& KernelSpec::temporal() const {
  if (kind != KernelKind::Separable) throw InputError("kernel is not Separable");
  return children[1];
}
KernelSpec& KernelSpec::spatial() {
  if (kind != KernelKind::Separable) throw InputError("kernel is not Separable");
  return children[0];
}
KernelSpec& KernelSpec::temporal() {
  if (kind != KernelKind::Separable) throw InputError("kernel is not Separable");
  return children[1];
}

namespace {
void validate_impl(const KernelSpec& s, bool top) {
  if (s.is_leaf()) {
    const auto& h = s.hyper;
    if (!(std::isfinite(h.variance) && h.variance > 0.0))
      throw InputError(to_string(s.kind) + ": variance must be finite and > 0");
    if (h.lengthscales.empty() ||
        (h.lengthscales.size() != 1 && h.lengthscales.size() != static_cast<std::size_t>(s.input_dim)))
      throw InputError(to_string(s.kind) + ": lengthscale count must be 1 or the input dimension");
    for (double l : h.lengthscales)
      if (!(std::isfinite(l) && l > 0.0)) throw InputError(to_string(s.kind) + ": lengthscales must be > 0");
    if (s.input_dim < 1) throw InputError(to_string(s.kind) + ": input dimension must be >= 1");
    if (s.kind == KernelKind::QuasiPeriodicMatern32) {
      if (s.input_dim != 1) throw InputError("QuasiPeriodicMatern32 takes scalar inputs");
      if (!(std::isfinite(h.period) && h.period > 0.0)) throw InputError("period must be > 0");
    }
    return;
  }
  if (s.kind == KernelKind::Separable) {
    if (!top) throw InputError("Separable may only appear at the top level");
    if (s.children.size() != 2) throw InputError("Separable needs exactly {spatial, temporal}");
    if (s.children[1].dim() != 1) throw InputError("Separable temporal child must take scalar time");
    for (const auto& c : s.children) validate_impl(c, false);
    return;
  }
  if (s.children.empty()) throw InputError(to_string(s.kind) + " needs at least one child");
  for (const auto& c : s.children) {
    validate_impl(c, false);
    if (c.dim() != s.children[0].dim()) throw InputError(to_string(s.kind) + ": children disagree on input dimension");
  }
}
}  // namespace

void KernelSpec::validate() const { validate_impl(*this, true); }

double eval_kernel(const KernelSpec& spec, std::span<const double> a, std::span<const double> b) {
  check_dims(spec, a, b);
  return eval_impl(spec, a, b);
}

double kernel_variance(const KernelSpec& spec) {
  std::vector<double> zero(static_cast<std::size_t>(spec.dim()), 0.0);
  return eval_impl(spec, zero, zero);
}

double eval_lag(const KernelSpec& spec, double tau) {
  const double a = tau, b = 0.0;
  return eval_kernel(spec, std::span<const double>(&a, 1), std::span<const double>(&b, 1));
}

void kernel_grad_first(const KernelSpec& spec, std::span<const double> a, std::span<const double> b,
                       std::span<double> out) {
  check_dims(spec, a, b);
  grad_first_impl(spec, a, b, out);
}

void kernel_grad_params(const KernelSpec& spec, std::span<const double> a, std::span<const double> b,
                        std::span<double> out) {
  check_dims(spec, a, b);
  grad_params_impl(spec, a, b, out);
}

std::size_t num_params(const KernelSpec& spec) {
  if (spec.is_leaf()) return leaf_params(spec);
  std::size_t n = 0;
  for (const auto& c : spec.children) n += num_params(c);
  return n;
}

std::vector<double> log_params(const KernelSpec& spec) {
  std::vector<double> out;
  collect_params(spec, out);
  return out;
}

KernelSpec with_log_params(const KernelSpec& spec, std::span<const double> theta) {
  if (theta.size() != num_params(spec)) throw InputError("with_log_params: wrong parameter count");
  KernelSpec out = spec;
  std::size_t pos = 0;
  assign_params(out, theta, pos);
  return out;
}

std::vector<std::string> param_names(const KernelSpec& spec) {
  std::vector<std::string> out;
  collect_names(spec, "", out);
  return out;
}

MatrixXd kernel_matrix(const KernelSpec& spec, const Points& a, const Points& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InputError("kernel_matrix: empty point list");
  if (a.cols() != spec.dim() || b.cols() != spec.dim()) throw InputError("kernel_matrix: dimension mismatch");
  MatrixXd k(a.rows(), b.rows());
  const Eigen::Index n = a.rows();
#pragma omp parallel for schedule(static) if (n * b.rows() > 4096)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = eval_impl(spec, row_span(a, i), row_span(b, j));
  return k;
}

MatrixXd kernel_matrix_serial(const KernelSpec& spec, const Points& a, const Points& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InputError("kernel_matrix: empty point list");
  if (a.cols() != spec.dim() || b.cols() != spec.dim()) throw InputError("kernel_matrix: dimension mismatch");
  MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = eval_impl(spec, row_span(a, i), row_span(b, j));
  return k;
}

MatrixXd kernel_gram(const KernelSpec& spec, const Points& a) {
  return symmetrize(kernel_matrix(spec, a, a));
}

VectorXd kernel_diag(const KernelSpec& spec, const Points& a) {
  VectorXd d(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) d(i) = eval_kernel(spec, row_span(a, i), row_span(a, i));
  return d;
}

// ---------------------------------------------------------------------------
// State-space conversion

double LtiSde::lyapunov_residual() const {
  return (F * Pinf + Pinf * F.transpose() + L * Qc * L.transpose()).cwiseAbs().maxCoeff();
}

namespace {

LtiSde matern_sde(KernelKind kind, double var, double ell) {
  LtiSde s;
  switch (kind) {
    case KernelKind::Matern12: {
      const double lam = 1.0 / ell;
      s.F = MatrixXd::Constant(1, 1, -lam);
      s.L = MatrixXd::Ones(1, 1);
      s.Qc = MatrixXd::Constant(1, 1, 2.0 * var * lam);
      s.H = Eigen::RowVectorXd::Ones(1);
      s.Pinf = MatrixXd::Constant(1, 1, var);
      break;
    }
    case KernelKind::Matern32: {
      const double lam = kSqrt3 / ell;
      s.F.resize(2, 2);
      s.F << 0.0, 1.0, -lam * lam, -2.0 * lam;
      s.L = MatrixXd::Zero(2, 1);
      s.L(1, 0) = 1.0;
      s.Qc = MatrixXd::Constant(1, 1, 4.0 * var * lam * lam * lam);
      s.H = Eigen::RowVectorXd::Zero(2);
      s.H(0) = 1.0;
      s.Pinf = MatrixXd::Zero(2, 2);
      s.Pinf(0, 0) = var;
      s.Pinf(1, 1) = var * lam * lam;
      break;
    }
    case KernelKind::Matern52: {
      const double lam = kSqrt5 / ell;
      const double l2 = lam * lam;
      s.F.resize(3, 3);
      s.F << 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -l2 * lam, -3.0 * l2, -3.0 * lam;
      s.L = MatrixXd::Zero(3, 1);
      s.L(2, 0) = 1.0;
      s.Qc = MatrixXd::Constant(1, 1, 16.0 / 3.0 * var * std::pow(lam, 5));
      s.H = Eigen::RowVectorXd::Zero(3);
      s.H(0) = 1.0;
      s.Pinf.resize(3, 3);
      s.Pinf << var, 0.0, -var * l2 / 3.0, 0.0, var * l2 / 3.0, 0.0, -var * l2 / 3.0, 0.0, var * l2 * l2;
      break;
    }
    default:
      throw UnsupportedKernelError("matern_sde: not a Matérn kernel");
  }
  return s;
}

// Cosine-modulated Matérn-3/2: Matérn block ⊗ 2-D rotation (state order:
// Matérn index major, rotation index minor).
LtiSde quasi_periodic_sde(double var, double ell, double period) {
  const LtiSde m = matern_sde(KernelKind::Matern32, var, ell);
  const double w = 2.0 * std::numbers::pi / period;
  MatrixXd rot(2, 2);
  rot << 0.0, -w, w, 0.0;
  const MatrixXd i2 = MatrixXd::Identity(2, 2);
  LtiSde s;
  s.F = kron(m.F, i2) + kron(MatrixXd::Identity(2, 2), rot);
  s.L = kron(m.L, i2);
  s.Qc = m.Qc(0, 0) * i2;
  s.H = Eigen::RowVectorXd::Zero(4);
  s.H(0) = 1.0;
  s.Pinf = kron(m.Pinf, i2);
  return s;
}

LtiSde block_diag(const std::vector<LtiSde>& parts) {
  Eigen::Index d = 0, q = 0;
  for (const auto& p : parts) {
    d += p.state_dim();
    q += p.L.cols();
  }
  LtiSde s;
  s.F = MatrixXd::Zero(d, d);
  s.L = MatrixXd::Zero(d, q);
  s.Qc = MatrixXd::Zero(q, q);
  s.H = Eigen::RowVectorXd::Zero(d);
  s.Pinf = MatrixXd::Zero(d, d);
  Eigen::Index o = 0, oq = 0;
  for (const auto& p : parts) {
    const auto n = p.state_dim();
    const auto nq = p.L.cols();
    s.F.block(o, o, n, n) = p.F;
    s.L.block(o, oq, n, nq) = p.L;
    s.Qc.block(oq, oq, nq, nq) = p.Qc;
    s.H.segment(o, n) = p.H;
    s.Pinf.block(o, o, n, n) = p.Pinf;
    o += n;
    oq += nq;
  }
  return s;
}

void require_temporal(const KernelSpec& s) {
  if (s.dim() != 1) throw UnsupportedKernelError("state-space conversion needs a scalar-input kernel");
}

// Per-parameter derivatives of (F, L Qc Lᵀ) for a leaf; Pinf derivative is
// obtained from the Lyapunov equation by the caller.
struct SdeDerivative {
  MatrixXd dF;
  MatrixXd dLQL;
};

std::vector<SdeDerivative> leaf_sde_derivatives(const KernelSpec& s) {
  std::vector<SdeDerivative> out;
  const LtiSde sde = to_sde(s);
  const auto d = sde.state_dim();
  const MatrixXd lql = sde.L * sde.Qc * sde.L.transpose();
  // log variance
  out.push_back({MatrixXd::Zero(d, d), lql});
  // log lengthscale: λ ∝ 1/ℓ so dλ/dlogℓ = -λ
  const double ell = s.hyper.lengthscales[0];
  MatrixXd dF = MatrixXd::Zero(d, d);
  double qc_power = 0.0;
  switch (s.kind) {
    case KernelKind::Matern12: {
      const double lam = 1.0 / ell;
      dF(0, 0) = lam;  // F = -λ, dF/dlogℓ = λ
      qc_power = 1.0;
      break;
    }
    case KernelKind::Matern32:
    case KernelKind::QuasiPeriodicMatern32: {
      const double lam = kSqrt3 / ell;
      MatrixXd dm = MatrixXd::Zero(2, 2);
      dm(1, 0) = 2.0 * lam * lam;  // -λ² → +2λ²
      dm(1, 1) = 2.0 * lam;        // -2λ → +2λ
      dF = s.kind == KernelKind::Matern32 ? dm : kron(dm, MatrixXd::Identity(2, 2));
      qc_power = 3.0;
      break;
    }
    case KernelKind::Matern52: {
      const double lam = kSqrt5 / ell;
      dF(2, 0) = 3.0 * lam * lam * lam;
      dF(2, 1) = 6.0 * lam * lam;
      dF(2, 2) = 3.0 * lam;
      qc_power = 5.0;
      break;
    }
    default:
      throw UnsupportedKernelError("leaf_sde_derivatives: unsupported leaf");
  }
  out.push_back({dF, -qc_power * lql});
  if (s.kind == KernelKind::QuasiPeriodicMatern32) {
    // ω = 2π/p, dω/dlog p = -ω: derivative of the rotation part is -rotation.
    const double w = 2.0 * std::numbers::pi / s.hyper.period;
    MatrixXd rot(2, 2);
    rot << 0.0, -w, w, 0.0;
    out.push_back({-kron(MatrixXd::Identity(2, 2), rot), MatrixXd::Zero(d, d)});
  }
  return out;
}

void collect_sde_derivatives(const KernelSpec& s, std::vector<SdeDerivative>& out, Eigen::Index offset,
                             Eigen::Index total) {
  if (s.kind == KernelKind::Sum) {
    for (const auto& c : s.children) {
      collect_sde_derivatives(c, out, offset, total);
      offset += to_sde(c).state_dim();
    }
    return;
  }
  for (const auto& d : leaf_sde_derivatives(s)) {
    const auto n = d.dF.rows();
    SdeDerivative full{MatrixXd::Zero(total, total), MatrixXd::Zero(total, total)};
    full.dF.block(offset, offset, n, n) = d.dF;
    full.dLQL.block(offset, offset, n, n) = d.dLQL;
    out.push_back(std::move(full));
  }
}

}  // namespace

LtiSde to_sde(const KernelSpec& s) {
  require_temporal(s);
  switch (s.kind) {
    case KernelKind::Matern12:
    case KernelKind::Matern32:
    case KernelKind::Matern52:
      return matern_sde(s.kind, s.hyper.variance, s.hyper.lengthscales[0]);
    case KernelKind::QuasiPeriodicMatern32:
      return quasi_periodic_sde(s.hyper.variance, s.hyper.lengthscales[0], s.hyper.period);
    case KernelKind::Sum: {
      std::vector<LtiSde> parts;
      for (const auto& c : s.children) parts.push_back(to_sde(c));
      return block_diag(parts);
    }
    default:
      throw UnsupportedKernelError("no closed state-space form for " + to_string(s.kind) + " temporal kernel");
  }
}

MatrixXd expm(const MatrixXd& m) { return m.exp(); }

DiscreteStateSpace to_state_space(const KernelSpec& temporal, double dt) {
  if (!(dt >= 0.0) || !std::isfinite(dt)) throw InputError("to_state_space: dt must be >= 0");
  DiscreteStateSpace out;
  out.sde = to_sde(temporal);
  const auto d = out.sde.state_dim();
  out.A = dt == 0.0 ? MatrixXd::Identity(d, d) : expm(out.sde.F * dt);
  out.Q = symmetrize(out.sde.Pinf - out.A * out.sde.Pinf * out.A.transpose());
  if (dt == 0.0) out.Q.setZero();
  return out;
}

MatrixXd solve_lyapunov(const MatrixXd& F, const MatrixXd& C) {
  const auto d = F.rows();
  const MatrixXd I = MatrixXd::Identity(d, d);
  // Column-major vec: vec(F X) = (I ⊗ F) vec X, vec(X Fᵀ) = (F ⊗ I) vec X.
  const MatrixXd op = kron(I, F) + kron(F, I);
  const MatrixXd negc = -C;
  const VectorXd rhs = Eigen::Map<const VectorXd>(negc.data(), d * d);
  const VectorXd x = op.partialPivLu().solve(rhs);
  return symmetrize(Eigen::Map<const MatrixXd>(x.data(), d, d));
}

std::vector<StateSpaceDerivative> state_space_derivatives(const KernelSpec& temporal, double dt) {
  const DiscreteStateSpace ss = to_state_space(temporal, dt);
  const auto d = ss.sde.state_dim();
  std::vector<SdeDerivative> raw;
  collect_sde_derivatives(temporal, raw, 0, d);
  std::vector<StateSpaceDerivative> out;
  out.reserve(raw.size());
  const MatrixXd& P = ss.sde.Pinf;
  const MatrixXd& A = ss.A;
  for (const auto& r : raw) {
    StateSpaceDerivative sd;
    sd.dPinf = solve_lyapunov(ss.sde.F, r.dF * P + P * r.dF.transpose() + r.dLQL);
    // Fréchet derivative of expm(F dt) in direction dF dt.
    MatrixXd big = MatrixXd::Zero(2 * d, 2 * d);
    big.topLeftCorner(d, d) = ss.sde.F * dt;
    big.bottomRightCorner(d, d) = ss.sde.F * dt;
    big.topRightCorner(d, d) = r.dF * dt;
    sd.dA = dt == 0.0 ? MatrixXd::Zero(d, d) : MatrixXd(expm(big).topRightCorner(d, d));
    sd.dQ = symmetrize(sd.dPinf - sd.dA * P * A.transpose() - A * sd.dPinf * A.transpose() -
                       A * P * sd.dA.transpose());
    if (dt == 0.0) sd.dQ.setZero();
    out.push_back(std::move(sd));
  }
  return out;
}

}  // namespace milsense
