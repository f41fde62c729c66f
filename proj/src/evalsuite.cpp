#include "milsense/evalsuite.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>

#include "milsense/errors.hpp"

namespace milsense {

namespace {

void check_shapes(const MatrixXd& a, const MatrixXd& b, const Mask& mask, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || mask.rows() != a.rows() || mask.cols() != a.cols())
    throw InputError(std::string(what) + ": field shapes differ");
}

Mask all_of(const MatrixXd& m) { return Mask::Constant(m.rows(), m.cols(), true); }

Eigen::Index count_or_throw(const Mask& mask, const char* what) {
  const Eigen::Index n = mask.count();
  if (n == 0) throw InputError(std::string(what) + ": no overlapping observed entries");
  return n;
}

void check_variance(const MatrixXd& var, const Mask& mask, const char* what) {
  for (Eigen::Index t = 0; t < var.rows(); ++t)
    for (Eigen::Index i = 0; i < var.cols(); ++i)
      if (mask(t, i) && !(var(t, i) > 0.0))
        throw InputError(std::string(what) + ": predictive variance must be > 0 (entry " + std::to_string(t) + "," +
                         std::to_string(i) + ")");
}

}  // namespace

double rmse(const MatrixXd& pred_mean, const MatrixXd& truth, const Mask& mask) {
  check_shapes(pred_mean, truth, mask, "rmse");
  const auto n = count_or_throw(mask, "rmse");
  const double sse = mask.select((pred_mean - truth).array().square(), 0.0).sum();
  return std::sqrt(sse / static_cast<double>(n));
}

double rmse(const MatrixXd& pred_mean, const MatrixXd& truth) { return rmse(pred_mean, truth, all_of(truth)); }

double npll(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth, const Mask& mask) {
  check_shapes(pred_mean, truth, mask, "npll");
  check_shapes(pred_var, truth, mask, "npll");
  const auto n = count_or_throw(mask, "npll");
  check_variance(pred_var, mask, "npll");
  double total = 0.0;
  for (Eigen::Index t = 0; t < truth.rows(); ++t)
    for (Eigen::Index i = 0; i < truth.cols(); ++i) {
      if (!mask(t, i)) continue;
      const double e = truth(t, i) - pred_mean(t, i);
      total += 0.5 * (kLog2Pi + std::log(pred_var(t, i)) + e * e / pred_var(t, i));
    }
  return total / static_cast<double>(n);
}

double npll(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth) {
  return npll(pred_mean, pred_var, truth, all_of(truth));
}

std::vector<double> default_levels() {
  std::vector<double> out;
  for (int k = 1; k <= 19; ++k) out.push_back(0.05 * k);
  return out;
}

Calibration calibration(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth, const Mask& mask,
                        const std::vector<double>& levels) {
  check_shapes(pred_mean, truth, mask, "calibration");
  check_shapes(pred_var, truth, mask, "calibration");
  const auto n = count_or_throw(mask, "calibration");
  check_variance(pred_var, mask, "calibration");
  if (levels.empty()) throw InputError("calibration: no levels");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (!(levels[k] > 0.0 && levels[k] < 1.0)) throw InputError("calibration: levels must lie in (0, 1)");
    if (k > 0 && !(levels[k] > levels[k - 1])) throw InputError("calibration: levels must be strictly increasing");
  }

  // |z| for every observed entry, sorted, so each level is a binary search.
  std::vector<double> z;
  z.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < truth.rows(); ++t)
    for (Eigen::Index i = 0; i < truth.cols(); ++i)
      if (mask(t, i)) z.push_back(std::abs(truth(t, i) - pred_mean(t, i)) / std::sqrt(pred_var(t, i)));
  std::sort(z.begin(), z.end());

  const boost::math::normal_distribution<double> standard;
  Calibration out;
  for (double p : levels) {
    const double half_width = boost::math::quantile(standard, 0.5 + 0.5 * p);
    const auto inside = std::upper_bound(z.begin(), z.end(), half_width) - z.begin();
    out.curve.push_back({p, static_cast<double>(inside) / static_cast<double>(n)});
  }
  for (std::size_t k = 1; k < out.curve.size(); ++k) {
    const auto& a = out.curve[k - 1];
    const auto& b = out.curve[k];
    out.miscalibration_area +=
        0.5 * (b.nominal - a.nominal) * (std::abs(a.empirical - a.nominal) + std::abs(b.empirical - b.nominal));
  }
  return out;
}

Calibration calibration(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth,
                        const std::vector<double>& levels) {
  return calibration(pred_mean, pred_var, truth, all_of(truth), levels);
}

VectorXd extreme_error_rate(const MatrixXd& pred_mean, const MatrixXd& truth, const Mask& mask, double threshold) {
  check_shapes(pred_mean, truth, mask, "extreme_error_rate");
  count_or_throw(mask, "extreme_error_rate");
  if (!(threshold > 0.0)) throw InputError("extreme_error_rate: threshold must be > 0");
  VectorXd out(truth.cols());
  for (Eigen::Index i = 0; i < truth.cols(); ++i) {
    double hits = 0.0, total = 0.0;
    for (Eigen::Index t = 0; t < truth.rows(); ++t) {
      if (!mask(t, i)) continue;
      total += 1.0;
      if (std::abs(pred_mean(t, i) - truth(t, i)) > threshold) hits += 1.0;
    }
    out(i) = total > 0.0 ? hits / total : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

VectorXd extreme_error_rate(const MatrixXd& pred_mean, const MatrixXd& truth, double threshold) {
  return extreme_error_rate(pred_mean, truth, all_of(truth), threshold);
}

VectorXd rmse_per_location(const MatrixXd& pred_mean, const MatrixXd& truth, const Mask& mask) {
  check_shapes(pred_mean, truth, mask, "rmse_per_location");
  VectorXd out(truth.cols());
  for (Eigen::Index i = 0; i < truth.cols(); ++i) {
    double sse = 0.0, total = 0.0;
    for (Eigen::Index t = 0; t < truth.rows(); ++t) {
      if (!mask(t, i)) continue;
      const double e = pred_mean(t, i) - truth(t, i);
      sse += e * e;
      total += 1.0;
    }
    out(i) = total > 0.0 ? std::sqrt(sse / total) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

EvalReport evaluate_field(const MatrixXd& pred_mean, const MatrixXd& pred_var, const MatrixXd& truth, const Mask& mask,
                          double extreme_threshold) {
  EvalReport r;
  r.rmse = rmse(pred_mean, truth, mask);
  r.npll = npll(pred_mean, pred_var, truth, mask);
  const Calibration c = calibration(pred_mean, pred_var, truth, mask);
  r.miscalibration_area = c.miscalibration_area;
  r.calibration_curve = c.curve;
  r.extreme_error_rate = extreme_error_rate(pred_mean, truth, mask, extreme_threshold);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : calibration_curve) curve.push_back({{"nominal", p.nominal}, {"empirical", p.empirical}});
  nlohmann::json rates = nlohmann::json::array();
  for (Eigen::Index i = 0; i < extreme_error_rate.size(); ++i) {
    if (std::isfinite(extreme_error_rate(i)))
      rates.push_back(extreme_error_rate(i));
    else
      rates.push_back(nullptr);
  }
  return {{"rmse", rmse},
          {"npll_nats", npll},
          {"miscalibration_area", miscalibration_area},
          {"calibration_curve", curve},
          {"extreme_error_rate", rates}};
}

}  // namespace milsense
