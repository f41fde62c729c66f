#include "milsense/pipeline.hpp"

#include <cmath>

#include "milsense/errors.hpp"

namespace milsense {

ReuseMode reuse_mode_from_string(const std::string& s) {
  if (s == "auto") return ReuseMode::Auto;
  if (s == "per-step") return ReuseMode::PerStep;
  if (s == "averaged") return ReuseMode::Averaged;
  throw InputError("unknown covariance reuse mode '" + s + "' (expected auto, per-step or averaged)");
}

std::string to_string(ReuseMode mode) {
  switch (mode) {
    case ReuseMode::Auto:
      return "auto";
    case ReuseMode::PerStep:
      return "per-step";
    case ReuseMode::Averaged:
      return "averaged";
  }
  return "auto";
}

EvalOutcome evaluate_design(const GridDataset& train, const GridDataset& test, const SensorDesign& design,
                            const KernelSpec& kernel, double sigma2, const EvalOptions& opts) {
  train.validate();
  test.validate();
  design.validate();
  if (test.n_times() < 1) throw InputError("empty test range");
  if (train.locations != test.locations) throw InputError("training and test data use different spatial grids");
  const auto idx = grid_indices(train.locations, design.locations);

  const DesignProblem prob(train);
  const StGpModel model = prob.model(kernel, sigma2, prob.norm.to_unit(design.locations));
  const StPosterior trained = st_fit_posterior(model, train.observations());

  EvalOutcome out;
  TestTimeOptions tt;
  tt.sweeps = opts.sweeps;
  switch (opts.reuse) {
    case ReuseMode::Auto:
      tt.reuse = train.n_times() == test.n_times() ? CovarianceReuse::PerStep : CovarianceReuse::Averaged;
      break;
    case ReuseMode::PerStep:
      tt.reuse = CovarianceReuse::PerStep;
      break;
    case ReuseMode::Averaged:
      tt.reuse = CovarianceReuse::Averaged;
      break;
  }
  out.reuse_used = tt.reuse;
  StGpModel test_model = model;
  test_model.n_steps = static_cast<std::size_t>(test.n_times());
  const GridDataset at_design = test.select_locations(idx);
  const StPosterior updated =
      test_time_update(test_model, trained, at_design.observations(), model.inducing.Z, tt);
  out.field = st_predict(test_model, updated, prob.grid);
  out.truth = test.values;
  out.mask = test.mask;
  const MatrixXd pred_var = (out.field.var.array() + sigma2).matrix();
  out.report = evaluate_field(out.field.mean, pred_var, out.truth, out.mask, opts.extreme_threshold);
  out.rmse_per_location = rmse_per_location(out.field.mean, out.truth, out.mask);
  return out;
}

EvalOutcome evaluate_design(const GridDataset& data, TimeRange train, TimeRange test, const SensorDesign& design,
                            const KernelSpec& kernel, double sigma2, const EvalOptions& opts) {
  if (test.size() < 1) throw InputError("empty test range");
  if (train.size() < 1) throw InputError("empty training range");
  return evaluate_design(data.slice_time(train.begin, train.end), data.slice_time(test.begin, test.end), design,
                         kernel, sigma2, opts);
}

namespace {

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace

AblationResult ablate_noise(const GridDataset& clean, const KernelSpec& kernel, double sigma2,
                            const AblationConfig& cfg) {
  if (cfg.replications < 1) throw InputError("ablation needs at least one replication");
  if (cfg.ell_s.empty() || cfg.ell_t.empty() || cfg.vars.empty()) throw InputError("ablation grid is empty");
  for (double v : cfg.vars)
    if (!(v >= 0.0)) throw InputError("ablation variances must be >= 0");

  AblationResult res;
  OptimizerConfig golden_cfg = cfg.golden;
  golden_cfg.seed = cfg.seed;
  golden_cfg.fit_hyperparameters = true;
  res.golden = mil_design(clean, kernel, sigma2, cfg.n_sensors, nullptr, golden_cfg).fit;

  struct Task {
    std::size_t cell;  // index into ell_s × ell_t
    double ell_s, ell_t, var;
    int rep;
  };
  std::vector<Task> tasks;
  for (std::size_t a = 0; a < cfg.ell_s.size(); ++a)
    for (std::size_t b = 0; b < cfg.ell_t.size(); ++b)
      for (double v : cfg.vars)
        for (int r = 0; r < cfg.replications; ++r)
          tasks.push_back({a * cfg.ell_t.size() + b, cfg.ell_s[a], cfg.ell_t[b], v, r});

  res.rows.resize(tasks.size());
  std::vector<std::string> errors(tasks.size());
  const auto n_tasks = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n_tasks; ++i) {
    const Task& t = tasks[static_cast<std::size_t>(i)];
    const auto rep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t.rep) + 1);
    try {
      const GridDataset noisy = inject_sim_error(clean, t.ell_s, t.ell_t, t.var, derive_seed(rep_seed, t.cell));
      OptimizerConfig dcfg = cfg.design;
      dcfg.seed = rep_seed;
      dcfg.fit_hyperparameters = false;
      const MilResult mil = mil_design(noisy, res.golden.kernel, res.golden.sigma2, cfg.n_sensors, nullptr, dcfg);
      const EvalOutcome ev = evaluate_design(noisy, clean, mil.design, res.golden.kernel, res.golden.sigma2);
      res.rows[static_cast<std::size_t>(i)] = {t.ell_s, t.ell_t, t.var, t.rep, ev.report.rmse, ev.report.npll};
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw OptimizationError("ablation replication " + std::to_string(tasks[i].rep) + " (ell_s=" +
                              std::to_string(tasks[i].ell_s) + ", ell_t=" + std::to_string(tasks[i].ell_t) +
                              ", var=" + std::to_string(tasks[i].var) + ") failed: " + errors[i]);

  for (std::size_t start = 0; start < res.rows.size(); start += static_cast<std::size_t>(cfg.replications)) {
    std::vector<double> r, n;
    for (int k = 0; k < cfg.replications; ++k) {
      r.push_back(res.rows[start + static_cast<std::size_t>(k)].rmse);
      n.push_back(res.rows[start + static_cast<std::size_t>(k)].npll);
    }
    AblationSummary s;
    s.ell_s = res.rows[start].ell_s;
    s.ell_t = res.rows[start].ell_t;
    s.var = res.rows[start].var;
    mean_sd(r, s.mean_rmse, s.sd_rmse);
    mean_sd(n, s.mean_npll, s.sd_npll);
    res.summary.push_back(s);
  }
  return res;
}

}  // namespace milsense
