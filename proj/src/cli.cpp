#include "milsense/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "milsense/datasets.hpp"
#include "milsense/design.hpp"
#include "milsense/errors.hpp"
#include "milsense/evalsuite.hpp"
#include "milsense/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace milsense {

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hex16(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw InputError("cannot read " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

// Writes `content` unless an identical file exists; a differing file is an
// error (run directories are never silently overwritten).
void write_checked(const fs::path& p, const std::string& content) {
  if (fs::exists(p)) {
    if (read_file(p) == content) return;
    throw InputError("refusing to overwrite " + p.string() + " with different content");
  }
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  f << content;
  if (!f) throw InputError("cannot write " + p.string());
}

void append_timing(const fs::path& dir, const std::string& line) {
  fs::create_directories(dir);
  std::ofstream f(dir / "timing.log", std::ios::app);
  f << line << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Hash of a dataset's files, so a run directory identifies its inputs.
std::string dataset_digest(const fs::path& path) {
  const fs::path manifest = fs::is_directory(path) ? path / "manifest.json" : path;
  const json m = read_json(manifest);
  std::uint64_t h = fnv1a(read_file(manifest));
  h = fnv1a(read_file(manifest.parent_path() / m.value("data", std::string("data.csv"))), h);
  return hex16(h);
}

fs::path run_directory(const std::string& out_root, const std::string& command, const json& config) {
  return fs::path(out_root) / (command + "-" + hex16(fnv1a(config.dump())));
}

TimeRange parse_range(const std::string& s, Eigen::Index n_times, const char* what) {
  if (s.empty()) return {0, n_times};
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw InputError(std::string(what) + " must look like begin:end");
  TimeRange r;
  try {
    r.begin = colon == 0 ? 0 : std::stol(s.substr(0, colon));
    r.end = colon + 1 == s.size() ? n_times : std::stol(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw InputError(std::string(what) + " '" + s + "' is not a valid range");
  }
  if (r.begin < 0 || r.end > n_times || r.begin >= r.end)
    throw InputError(std::string(what) + " '" + s + "' is empty or outside [0, " + std::to_string(n_times) + ")");
  return r;
}

KernelSpec default_kernel(double variance, double ell_s, double ell_t) {
  return KernelSpec::separable(KernelSpec::matern32(1.0, ell_s, 2), KernelSpec::matern32(variance, ell_t));
}

KernelSpec load_kernel(const std::string& path, const KernelSpec& fallback) {
  if (path.empty()) return fallback;
  KernelSpec k = kernel_from_json(read_json(path));
  return k;
}

std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : "nan"; }

struct OptimizerFlags {
  int iters = 500;
  int restarts = 3;
  double lr_start = 0.05;
  double lr_end = 0.001;
  bool refit_after_snap = false;

  void add(CLI::App* app) {
    app->add_option("--iters", iters, "optimizer iterations per restart")->check(CLI::NonNegativeNumber);
    app->add_option("--restarts", restarts, "optimizer restarts")->check(CLI::PositiveNumber);
    app->add_option("--lr-start", lr_start, "initial learning rate")->check(CLI::PositiveNumber);
    app->add_option("--lr-end", lr_end, "final learning rate")->check(CLI::PositiveNumber);
    app->add_flag("--refit-after-snap", refit_after_snap, "re-fit hyperparameters after grid snapping");
  }
  OptimizerConfig config(std::uint64_t seed) const {
    OptimizerConfig c;
    c.max_iters = iters;
    c.restarts = restarts;
    c.lr_start = lr_start;
    c.lr_end = lr_end;
    c.refit_after_snap = refit_after_snap;
    c.seed = seed;
    return c;
  }
  json to_json() const {
    return {{"iters", iters}, {"restarts", restarts}, {"lr_start", lr_start}, {"lr_end", lr_end},
            {"refit_after_snap", refit_after_snap}};
  }
};

// ---------------------------------------------------------------- gen-data --
struct GenDataArgs {
  std::string kind = "two_regime";
  std::string input;
  std::string out;
  std::string kernel;
  int nx = 0, ny = 0, ns = 100;
  Eigen::Index nt = 168;
  double dt = 1.0, width = 1.0, height = 1.0;
  double variance = 1.0, ell_s = 0.3, ell_t = 24.0;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
  double noise_var = -1.0, noise_ell_s = 0.1, noise_ell_t = 1.0;
  std::uint64_t noise_seed = 0;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  GridDataset ds;
  if (!a.input.empty()) {
    ds = load_grid(a.input);
  } else {
    SynthConfig cfg;
    cfg.kind = field_kind_from_string(a.kind);
    int nx = a.nx, ny = a.ny;
    if (nx == 0 && ny == 0) {
      nx = ny = static_cast<int>(std::lround(std::sqrt(static_cast<double>(a.ns))));
      if (nx * ny != a.ns) throw InputError("--ns must be a perfect square (or give --nx and --ny)");
    }
    cfg.grid.nx = nx;
    cfg.grid.ny = ny;
    cfg.grid.n_times = a.nt;
    cfg.grid.dt = a.dt;
    cfg.grid.width = a.width;
    cfg.grid.height = a.height;
    cfg.kernel = load_kernel(a.kernel, default_kernel(a.variance, a.ell_s, a.ell_t));
    cfg.noise_sd = a.noise_sd;
    cfg.seed = a.seed;
    ds = synth_field(cfg);
  }
  if (a.noise_var >= 0.0) ds = inject_sim_error(ds, a.noise_ell_s, a.noise_ell_t, a.noise_var, a.noise_seed);
  else if (a.input.empty() == false && a.noise_var < 0.0)
    throw InputError("--input without --noise-var has nothing to do");

  // Refuse to replace a different dataset; identical content is a no-op.
  const fs::path dir(a.out);
  const fs::path tmp = dir.parent_path() / (dir.filename().string() + ".tmp-write");
  fs::remove_all(tmp);
  save_grid(ds, tmp);
  for (const char* name : {"manifest.json", "data.csv"}) write_checked(dir / name, read_file(tmp / name));
  fs::remove_all(tmp);

  const double lo = ds.values.minCoeff(), hi = ds.values.maxCoeff();
  out << "dataset " << dir.string() << ": N_s=" << ds.n_locations() << " N_t=" << ds.n_times() << " range=["
      << lo << ", " << hi << "]\n";
  return kExitOk;
}

// ------------------------------------------------------------------ design --
struct DesignArgs {
  std::string data, out, kernel, fixed, train_range;
  std::string strategy = "mil";
  Eigen::Index n = 9;
  Eigen::Index n_init = 5;
  std::vector<std::uint64_t> seeds{0};
  double sigma2 = 0.1;
  OptimizerFlags opt;
};

struct DesignOutput {
  SensorDesign design;
  FitResult fit;
  double seconds = 0.0;
};

DesignOutput run_strategy(const DesignArgs& a, const GridDataset& train, const KernelSpec& kernel,
                          const SensorDesign* fixed, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const OptimizerConfig cfg = a.opt.config(seed);
  DesignOutput o;
  if (a.strategy == "mil") {
    MilResult r = mil_design(train, kernel, a.sigma2, a.n, fixed, cfg);
    o.design = std::move(r.design);
    o.fit = std::move(r.fit);
  } else {
    if (fixed) throw InputError("--fixed is only supported by the mil strategy");
    if (a.strategy == "uniform") {
      o.design = uniform_design(train.locations, a.n, seed);
    } else if (a.strategy == "lhs") {
      o.design = lhs_design(train.locations, a.n, seed);
    } else if (a.strategy == "mes" || a.strategy == "imse") {
      const Eigen::Index n_init = std::min(a.n_init, a.n);
      const SensorDesign init = kmeans_design(train.locations, n_init, seed, cfg.kmeans_iters);
      const FitResult init_fit = fit_hyperparameters(train, kernel, a.sigma2, init, cfg, true);
      o.design = a.strategy == "mes" ? mes_design(train, init_fit.kernel, a.n - n_init, init, cfg)
                                     : imse_design(train, init_fit.kernel, init_fit.sigma2, a.n - n_init, init, cfg);
    } else {
      throw InputError("unknown strategy '" + a.strategy + "' (expected mil, uniform, lhs, mes or imse)");
    }
    o.design.strategy = a.strategy;
    o.design.seed = seed;
    // Hyperparameters for evaluation: fitted with the inducing set at the design.
    OptimizerConfig fit_cfg = cfg;
    fit_cfg.restarts = 1;
    o.fit = fit_hyperparameters(train, kernel, a.sigma2, o.design, fit_cfg);
  }
  o.seconds = seconds_since(t0);
  return o;
}

int cmd_design(const DesignArgs& a, std::ostream& out) {
  const GridDataset data = load_grid(a.data);
  const TimeRange range = parse_range(a.train_range, data.n_times(), "--train-range");
  const GridDataset train = data.slice_time(range.begin, range.end);
  const KernelSpec kernel = load_kernel(a.kernel, default_kernel(1.0, 0.3, 24.0));
  std::optional<SensorDesign> fixed;
  if (!a.fixed.empty()) fixed = SensorDesign::from_json(read_json(a.fixed));
  if (a.seeds.empty()) throw InputError("no seeds given");

  const json config = {{"command", "design"},
                       {"data", dataset_digest(a.data)},
                       {"train_range", {range.begin, range.end}},
                       {"strategy", a.strategy},
                       {"n", a.n},
                       {"n_init", a.n_init},
                       {"seeds", a.seeds},
                       {"sigma2", a.sigma2},
                       {"kernel", kernel_to_json(kernel)},
                       {"fixed", fixed ? fixed->to_json() : json(nullptr)},
                       {"optimizer", a.opt.to_json()}};
  const fs::path dir = run_directory(a.out, "design", config);

  std::vector<DesignOutput> results(a.seeds.size());
  std::vector<std::string> errors(a.seeds.size());
  std::vector<int> codes(a.seeds.size(), kExitOk);
  const auto n_seeds = static_cast<std::ptrdiff_t>(a.seeds.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n_seeds; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      results[k] = run_strategy(a, train, kernel, fixed ? &*fixed : nullptr, a.seeds[k]);
    } catch (const InputError& e) {
      errors[k] = e.what();
      codes[k] = kExitValidation;
    } catch (const std::exception& e) {
      errors[k] = e.what();
      codes[k] = kExitNumerical;
    }
  }
  for (std::size_t k = 0; k < errors.size(); ++k)
    if (!errors[k].empty()) {
      if (codes[k] == kExitValidation) throw InputError("seed " + std::to_string(a.seeds[k]) + ": " + errors[k]);
      throw NumericalError("seed " + std::to_string(a.seeds[k]) + ": " + errors[k]);
    }

  write_checked(dir / "config.json", config.dump(2) + "\n");
  std::string summary = "seed,strategy,n_sensors,elbo_nats\n";
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto seed = std::to_string(a.seeds[k]);
    write_checked(dir / ("design_seed" + seed + ".json"), results[k].design.to_json().dump(2) + "\n");
    write_checked(dir / ("fit_seed" + seed + ".json"), results[k].fit.to_json().dump(2) + "\n");
    summary += seed + "," + a.strategy + "," + std::to_string(results[k].design.size()) + "," +
               csv_number(results[k].fit.elbo) + "\n";
    append_timing(dir, "design seed=" + seed + " wall_seconds=" + std::to_string(results[k].seconds));
    out << "seed " << seed << ": " << results[k].design.size() << " sensors, ELBO " << results[k].fit.elbo
        << " nats\n";
  }
  write_checked(dir / "summary.csv", summary);
  out << "outputs in " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate --
struct EvaluateArgs {
  std::string data, design, fit, kernel, out, compare;
  std::string train_range, test_range;
  std::string reuse = "auto";
  double sigma2 = -1.0;
  int sweeps = 1;
  double threshold = 1.0;
  std::vector<Eigen::Index> locations;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const GridDataset data = load_grid(a.data);
  const SensorDesign design = SensorDesign::from_json(read_json(a.design));
  KernelSpec kernel = load_kernel(a.kernel, default_kernel(1.0, 0.3, 24.0));
  double sigma2 = 0.1;
  if (!a.fit.empty()) {
    const json f = read_json(a.fit);
    kernel = kernel_from_json(f.at("kernel"));
    sigma2 = f.at("sigma2").get<double>();
  }
  if (a.sigma2 > 0.0) sigma2 = a.sigma2;
  const TimeRange train = parse_range(a.train_range, data.n_times(), "--train-range");
  const TimeRange test = parse_range(a.test_range, data.n_times(), "--test-range");
  EvalOptions opts;
  opts.reuse = reuse_mode_from_string(a.reuse);
  opts.sweeps = a.sweeps;
  opts.extreme_threshold = a.threshold;

  const json config = {{"command", "evaluate"},
                       {"data", dataset_digest(a.data)},
                       {"design", design.to_json()},
                       {"kernel", kernel_to_json(kernel)},
                       {"sigma2", sigma2},
                       {"train_range", {train.begin, train.end}},
                       {"test_range", {test.begin, test.end}},
                       {"reuse", a.reuse},
                       {"sweeps", a.sweeps},
                       {"threshold", a.threshold},
                       {"locations", a.locations},
                       {"compare", a.compare.empty() ? json(nullptr) : read_json(a.compare)}};
  const fs::path dir = run_directory(a.out, "evaluate", config);

  const EvalOutcome ev = evaluate_design(data, train, test, design, kernel, sigma2, opts);
  json report = ev.report.to_json();
  report["covariance_reuse"] = ev.reuse_used == CovarianceReuse::PerStep ? "per-step" : "averaged";
  report["n_sensors"] = design.size();
  write_checked(dir / "config.json", config.dump(2) + "\n");
  write_checked(dir / "report.json", report.dump(2) + "\n");

  std::string cal = "nominal_coverage,empirical_coverage\n";
  for (const auto& p : ev.report.calibration_curve) cal += csv_number(p.nominal) + "," + csv_number(p.empirical) + "\n";
  write_checked(dir / "calibration.csv", cal);

  std::string per_loc = "x1,x2,rmse_process_units,extreme_error_rate\n";
  for (Eigen::Index i = 0; i < data.n_locations(); ++i)
    per_loc += csv_number(data.locations(i, 0)) + "," + csv_number(data.locations(i, 1)) + "," +
               csv_number(ev.rmse_per_location(i)) + "," + csv_number(ev.report.extreme_error_rate(i)) + "\n";
  write_checked(dir / "per_location.csv", per_loc);

  std::vector<Eigen::Index> named = a.locations;
  if (named.empty()) named = grid_indices(data.locations, design.locations.topRows(1));
  std::string series = "location,t,predicted_mean,predicted_sd,truth,error_process_units\n";
  for (auto i : named) {
    if (i < 0 || i >= data.n_locations()) throw InputError("--locations index " + std::to_string(i) + " is off-grid");
    for (Eigen::Index t = 0; t < ev.truth.rows(); ++t) {
      const double m = ev.field.mean(t, i);
      series += std::to_string(i) + "," + csv_number(data.times(test.begin + t)) + "," + csv_number(m) + "," +
                csv_number(std::sqrt(ev.field.var(t, i) + sigma2)) + "," + csv_number(ev.truth(t, i)) + "," +
                csv_number(ev.mask(t, i) ? m - ev.truth(t, i) : std::nan("")) + "\n";
    }
  }
  write_checked(dir / "error_series.csv", series);

  if (!a.compare.empty()) {
    const SensorDesign other = SensorDesign::from_json(read_json(a.compare));
    write_checked(dir / "design_distance.json", design_distance(design.locations, other.locations).to_json().dump(2) + "\n");
  }
  append_timing(dir, "evaluate wall_seconds=" + std::to_string(seconds_since(t0)));
  out << "RMSE " << ev.report.rmse << ", NPLL " << ev.report.npll << " nats, miscalibration area "
      << ev.report.miscalibration_area << "\noutputs in " << dir.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ ablate-noise --
struct AblateArgs {
  std::string data, out, kernel, range;
  std::vector<double> ell_s{0.1, 1.0}, ell_t{1.0, 36.0}, vars{0.0, 0.5, 4.0};
  int reps = 10;
  Eigen::Index n = 9;
  double sigma2 = 0.1;
  std::uint64_t seed = 0;
  OptimizerFlags opt;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const GridDataset data = load_grid(a.data);
  const TimeRange range = parse_range(a.range, data.n_times(), "--range");
  const GridDataset clean = data.slice_time(range.begin, range.end);
  const KernelSpec kernel = load_kernel(a.kernel, default_kernel(1.0, 0.3, 24.0));
  AblationConfig cfg;
  cfg.ell_s = a.ell_s;
  cfg.ell_t = a.ell_t;
  cfg.vars = a.vars;
  cfg.replications = a.reps;
  cfg.n_sensors = a.n;
  cfg.golden = a.opt.config(a.seed);
  cfg.design = a.opt.config(a.seed);
  cfg.seed = a.seed;

  const json config = {{"command", "ablate-noise"}, {"data", dataset_digest(a.data)}, {"range", {range.begin, range.end}},
                       {"ell_s", a.ell_s},          {"ell_t", a.ell_t},               {"vars", a.vars},
                       {"reps", a.reps},            {"n", a.n},                       {"sigma2", a.sigma2},
                       {"seed", a.seed},            {"kernel", kernel_to_json(kernel)}, {"optimizer", a.opt.to_json()}};
  const fs::path dir = run_directory(a.out, "ablate-noise", config);
  const AblationResult res = ablate_noise(clean, kernel, a.sigma2, cfg);

  std::string rows = "ell_s,ell_t,var,seed,rmse_process_units,npll_nats\n";
  for (const auto& r : res.rows)
    rows += csv_number(r.ell_s) + "," + csv_number(r.ell_t) + "," + csv_number(r.var) + "," +
            std::to_string(r.replication) + "," + csv_number(r.rmse) + "," + csv_number(r.npll) + "\n";
  std::string summary =
      "ell_s,ell_t,var,mean_rmse_process_units,sd_rmse_process_units,mean_npll_nats,sd_npll_nats\n";
  for (const auto& s : res.summary)
    summary += csv_number(s.ell_s) + "," + csv_number(s.ell_t) + "," + csv_number(s.var) + "," +
               csv_number(s.mean_rmse) + "," + csv_number(s.sd_rmse) + "," + csv_number(s.mean_npll) + "," +
               csv_number(s.sd_npll) + "\n";
  write_checked(dir / "config.json", config.dump(2) + "\n");
  write_checked(dir / "golden_fit.json", res.golden.to_json().dump(2) + "\n");
  write_checked(dir / "results.csv", rows);
  write_checked(dir / "summary.csv", summary);
  append_timing(dir, "ablate-noise wall_seconds=" + std::to_string(seconds_since(t0)));
  out << res.rows.size() << " runs; outputs in " << dir.string() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- compare --
int cmd_compare(const std::string& first, const std::string& second, const std::string& out_root, std::ostream& out) {
  const SensorDesign a = SensorDesign::from_json(read_json(first));
  const SensorDesign b = SensorDesign::from_json(read_json(second));
  const DesignMatch m = design_distance(a.locations, b.locations);
  const json config = {{"command", "compare"}, {"first", a.to_json()}, {"second", b.to_json()}};
  const std::string report = m.to_json().dump(2) + "\n";
  if (!out_root.empty()) {
    const fs::path dir = run_directory(out_root, "compare", config);
    write_checked(dir / "config.json", config.dump(2) + "\n");
    write_checked(dir / "design_distance.json", report);
    out << "outputs in " << dir.string() << "\n";
  }
  out << report;
  return kExitOk;
}

// Expands `--config file.json` into flags placed before the command-line
// arguments, so explicit flags win.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::vector<std::string> from_config;
  // Flags given explicitly; the config must not add to (list) or shadow them.
  std::set<std::string> explicit_flags;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      ++i;
    } else if (args[i].rfind("--", 0) == 0) {
      explicit_flags.insert(args[i].substr(0, args[i].find('=')));
    }
  }
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] != "--config") {
      out.push_back(args[i]);
      continue;
    }
    if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file");
    const json cfg = read_json(args[++i]);
    if (!cfg.is_object()) throw ParseError("config file must hold a JSON object");
    for (const auto& [key, value] : cfg.items()) {
      const std::string flag = "--" + key;
      if (explicit_flags.count(flag)) continue;
      if (value.is_boolean()) {
        if (value.get<bool>()) from_config.push_back(flag);
      } else if (value.is_array()) {
        from_config.push_back(flag);
        for (const auto& v : value) from_config.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      } else {
        from_config.push_back(flag);
        from_config.push_back(value.is_string() ? value.get<std::string>() : value.dump());
      }
    }
  }
  if (from_config.empty()) return out;
  // Insert right after the subcommand name.
  if (out.empty()) return out;
  std::vector<std::string> merged{out[0]};
  merged.insert(merged.end(), from_config.begin(), from_config.end());
  merged.insert(merged.end(), out.begin() + 1, out.end());
  return merged;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  if (const char* env = std::getenv("MILSENSE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) omp_set_num_threads(n);
  }

  CLI::App app{"Sensor-network design by minimum information loss"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "synthesize a dataset or inject simulator error into one");
  g->add_option("--kind", gen.kind, "separable_gp or two_regime");
  g->add_option("--input", gen.input, "existing dataset to inject error into");
  g->add_option("--out", gen.out, "output dataset directory")->required();
  g->add_option("--kernel", gen.kernel, "kernel JSON file (separable; normalized space, raw time)");
  g->add_option("--ns", gen.ns, "number of locations (square grid)");
  g->add_option("--nx", gen.nx, "grid points along x");
  g->add_option("--ny", gen.ny, "grid points along y");
  g->add_option("--nt", gen.nt, "number of time steps");
  g->add_option("--dt", gen.dt, "time step (time units)");
  g->add_option("--width", gen.width, "domain width (length units)");
  g->add_option("--height", gen.height, "domain height (length units)");
  g->add_option("--variance", gen.variance, "field variance (process units squared)");
  g->add_option("--ell-s", gen.ell_s, "spatial lengthscale (normalized units)");
  g->add_option("--ell-t", gen.ell_t, "temporal lengthscale (time units)");
  g->add_option("--noise-sd", gen.noise_sd, "observation noise standard deviation (process units)");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--noise-var", gen.noise_var, "inject simulator error with this variance");
  g->add_option("--noise-ell-s", gen.noise_ell_s, "simulator-error spatial lengthscale (normalized units)");
  g->add_option("--noise-ell-t", gen.noise_ell_t, "simulator-error temporal lengthscale (time units)");
  g->add_option("--noise-seed", gen.noise_seed, "simulator-error seed");

  DesignArgs des;
  auto* d = app.add_subcommand("design", "place sensors with one strategy over a list of seeds");
  d->add_option("--data", des.data, "dataset directory")->required();
  d->add_option("--out", des.out, "output root")->required();
  d->add_option("--strategy", des.strategy, "mil, uniform, lhs, mes or imse");
  d->add_option("--n", des.n, "number of sensors (mil: free sensors in addition to --fixed)");
  d->add_option("--n-init", des.n_init, "initial k-means design size for mes/imse");
  d->add_option("--seeds,--seed", des.seeds, "seeds")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  d->add_option("--kernel", des.kernel, "initial kernel JSON file");
  d->add_option("--sigma2", des.sigma2, "initial noise variance");
  d->add_option("--fixed", des.fixed, "design JSON whose locations stay fixed");
  d->add_option("--train-range", des.train_range, "training steps begin:end");
  des.opt.add(d);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "fit, update at the design, predict and score");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--design", ev.design, "design JSON")->required();
  e->add_option("--out", ev.out, "output root")->required();
  e->add_option("--fit", ev.fit, "fit JSON (kernel and sigma2) from the design command");
  e->add_option("--kernel", ev.kernel, "kernel JSON file (when no --fit)");
  e->add_option("--sigma2", ev.sigma2, "noise variance override");
  e->add_option("--train-range", ev.train_range, "training steps begin:end");
  e->add_option("--test-range", ev.test_range, "test steps begin:end");
  e->add_option("--reuse", ev.reuse, "covariance reuse: auto, per-step or averaged");
  e->add_option("--sweeps", ev.sweeps, "test-time update sweeps");
  e->add_option("--threshold", ev.threshold, "extreme-error threshold (process units)");
  e->add_option("--locations", ev.locations, "grid indices for per-time error series")
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  e->add_option("--compare", ev.compare, "second design JSON for a design-distance report");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate-noise", "simulator-error ablation over lengthscales and variances");
  a->add_option("--data", ab.data, "clean dataset directory")->required();
  a->add_option("--out", ab.out, "output root")->required();
  a->add_option("--kernel", ab.kernel, "initial kernel JSON file");
  a->add_option("--range", ab.range, "time steps begin:end used for training and evaluation");
  a->add_option("--ell-s", ab.ell_s, "spatial lengthscales")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  a->add_option("--ell-t", ab.ell_t, "temporal lengthscales")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  a->add_option("--vars", ab.vars, "injected variances")->delimiter(',')->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  a->add_option("--reps", ab.reps, "replications per cell");
  a->add_option("--n", ab.n, "sensors per design");
  a->add_option("--sigma2", ab.sigma2, "initial noise variance");
  a->add_option("--seed", ab.seed, "base seed");
  ab.opt.add(a);

  std::string cmp_a, cmp_b, cmp_out;
  auto* c = app.add_subcommand("compare", "minimum-cost matching distance between two designs");
  c->add_option("first", cmp_a, "first design JSON")->required();
  c->add_option("second", cmp_b, "second design JSON")->required();
  c->add_option("--out", cmp_out, "output root");

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& h) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& h) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "usage error: " << pe.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  } catch (const InputError& ie) {
    err << "error: " << ie.what() << "\n";
    return kExitValidation;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, out);
    if (d->parsed()) return cmd_design(des, out);
    if (e->parsed()) return cmd_evaluate(ev, out);
    if (a->parsed()) return cmd_ablate(ab, out);
    if (c->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out, out);
  } catch (const InputError& ie) {
    err << "error: " << ie.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& ne) {
    err << "numerical error: " << ne.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& fe) {
    err << "error: " << fe.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& je) {
    err << "error: " << je.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}

}  // namespace milsense
