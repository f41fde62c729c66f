#include "milsense/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "milsense/errors.hpp"

namespace milsense {

void OptimizerConfig::validate() const {
  if (max_iters < 0) throw InputError("optimizer: max_iters must be >= 0");
  if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw InputError("optimizer: learning rates must be > 0");
  if (restarts < 1) throw InputError("optimizer: restarts must be >= 1");
  if (!(fd_step > 0.0)) throw InputError("optimizer: fd_step must be > 0");
  if (!(tolerance >= 0.0)) throw InputError("optimizer: tolerance must be >= 0");
  if (patience < 1) throw InputError("optimizer: patience must be >= 1");
  if (kmeans_iters < 1) throw InputError("optimizer: kmeans_iters must be >= 1");
}

double cosine_learning_rate(const OptimizerConfig& cfg, int iter) {
  if (cfg.max_iters <= 1) return cfg.lr_start;
  const double frac = std::clamp(static_cast<double>(iter) / (cfg.max_iters - 1), 0.0, 1.0);
  return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * frac));
}

AscentResult adam_ascent(const ValueAndGradient& f, VectorXd x0, const OptimizerConfig& cfg, const Projection& project) {
  cfg.validate();
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  AscentResult r;
  if (project) project(x0);
  r.x = std::move(x0);
  VectorXd g(r.x.size());
  r.value = f(r.x, g);
  if (!std::isfinite(r.value) || !g.allFinite())
    throw OptimizationError("objective is not finite at the starting point");
  r.trace.push_back(r.value);

  VectorXd m = VectorXd::Zero(r.x.size()), v = VectorXd::Zero(r.x.size());
  VectorXd g_new(r.x.size());
  double shrink = 1.0;
  int t = 0, flat = 0;
  for (int iter = 0; iter < cfg.max_iters && r.x.size() > 0; ++iter) {
    r.iterations = iter + 1;
    // Moments of the gradient at the current (accepted) point.
    if (shrink == 1.0 || t == 0) {
      ++t;
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
    }
    const VectorXd mhat = m / (1.0 - std::pow(beta1, t));
    const VectorXd vhat = v / (1.0 - std::pow(beta2, t));
    const double lr = cosine_learning_rate(cfg, iter) * shrink;
    VectorXd x_new = r.x + lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    if (project) project(x_new);

    double value = -std::numeric_limits<double>::infinity();
    try {
      value = f(x_new, g_new);
    } catch (const NumericalError&) {
      value = -std::numeric_limits<double>::infinity();
    }
    if (std::isfinite(value) && g_new.allFinite() && value >= r.value) {
      const double gain = value - r.value;
      flat = gain <= cfg.tolerance * std::max(1.0, std::abs(r.value)) ? flat + 1 : 0;
      r.x = std::move(x_new);
      r.value = value;
      g = g_new;
      r.trace.push_back(value);
      shrink = 1.0;
      if (flat >= cfg.patience) break;
    } else {
      ++r.rejected;
      shrink *= 0.5;
      if (shrink < 1e-10) break;
    }
  }
  return r;
}

VectorXd finite_difference_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace milsense
