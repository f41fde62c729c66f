#include "milsense/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "milsense/errors.hpp"
#include "milsense/stsvgp.hpp"

namespace milsense {

double GridDataset::dt() const { return times.size() >= 2 ? times(1) - times(0) : 1.0; }

void GridDataset::validate() const {
  if (locations.cols() != 2) throw InputError("dataset locations must be 2-D");
  if (locations.rows() < 1) throw InputError("dataset has no locations");
  if (times.size() < 1) throw InputError("dataset has no time steps");
  if (values.rows() != times.size() || values.cols() != locations.rows())
    throw InputError("dataset values must be n_times x n_locations");
  if (mask.rows() != values.rows() || mask.cols() != values.cols())
    throw InputError("dataset mask must match the values shape");
  if (!locations.allFinite() || !times.allFinite()) throw InputError("dataset coordinates must be finite");
  if (times.size() >= 2) {
    const double step = dt();
    if (!(step > 0.0)) throw InputError("dataset times must be strictly increasing");
    for (Eigen::Index k = 1; k < times.size(); ++k) {
      const double expected = times(0) + static_cast<double>(k) * step;
      if (std::abs(times(k) - expected) > 1e-9 * std::max(std::abs(expected), std::abs(step)))
        throw InputError("dataset times are not uniformly spaced at step " + std::to_string(k));
    }
  }
  for (Eigen::Index t = 0; t < values.rows(); ++t)
    for (Eigen::Index i = 0; i < values.cols(); ++i)
      if (mask(t, i) && !std::isfinite(values(t, i)))
        throw InputError("observed value at step " + std::to_string(t) + ", location " + std::to_string(i) +
                         " is not finite");
}

GridDataset GridDataset::slice_time(Eigen::Index begin, Eigen::Index end) const {
  if (begin < 0 || end > n_times() || begin >= end)
    throw InputError("time range [" + std::to_string(begin) + ", " + std::to_string(end) + ") is empty or outside [0, " +
                     std::to_string(n_times()) + ")");
  GridDataset out;
  out.locations = locations;
  out.times = times.segment(begin, end - begin);
  out.values = values.middleRows(begin, end - begin);
  out.mask = mask.middleRows(begin, end - begin);
  out.metadata = metadata;
  return out;
}

GridDataset GridDataset::select_locations(const std::vector<Eigen::Index>& idx) const {
  for (auto i : idx)
    if (i < 0 || i >= n_locations())
      throw InputError("location index " + std::to_string(i) + " outside [0, " + std::to_string(n_locations()) + ")");
  GridDataset out;
  out.locations = locations(idx, Eigen::all);
  out.times = times;
  out.values = values(Eigen::all, idx);
  out.mask = mask(Eigen::all, idx);
  out.metadata = metadata;
  return out;
}

Normalizer Normalizer::fit(const Points& locations) {
  if (locations.rows() < 1 || locations.cols() != 2) throw InputError("normalizer needs 2-D locations");
  Normalizer n;
  n.origin = locations.colwise().minCoeff();
  const double extent = (locations.colwise().maxCoeff() - n.origin).maxCoeff();
  n.scale = extent > 0.0 ? extent : 1.0;
  return n;
}

Points Normalizer::to_unit(const Points& raw) const {
  Points out = (raw.rowwise() - origin) / scale;
  return out;
}

Points Normalizer::to_raw(const Points& unit) const {
  Points out = (unit * scale).rowwise() + origin;
  return out;
}

void GridConfig::validate() const {
  if (nx < 1 || ny < 1) throw InputError("grid needs nx, ny >= 1");
  if (!(width > 0.0) || !(height > 0.0)) throw InputError("grid extent must be > 0");
  if (n_times < 1) throw InputError("grid needs at least one time step");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InputError("grid time step must be > 0");
}

Points GridConfig::locations() const {
  Points p(static_cast<Eigen::Index>(nx) * ny, 2);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const auto r = static_cast<Eigen::Index>(j) * nx + i;
      p(r, 0) = nx > 1 ? width * i / (nx - 1) : 0.5 * width;
      p(r, 1) = ny > 1 ? height * j / (ny - 1) : 0.5 * height;
    }
  return p;
}

std::string to_string(FieldKind kind) { return kind == FieldKind::SeparableGp ? "separable_gp" : "two_regime"; }

FieldKind field_kind_from_string(const std::string& s) {
  if (s == "separable_gp") return FieldKind::SeparableGp;
  if (s == "two_regime") return FieldKind::TwoRegime;
  throw InputError("unknown field kind '" + s + "' (expected separable_gp or two_regime)");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"nx", grid.nx},
          {"ny", grid.ny},
          {"width", grid.width},
          {"height", grid.height},
          {"n_times", grid.n_times},
          {"dt", grid.dt},
          {"kernel", kernel_to_json(kernel)},
          {"noise_sd", noise_sd},
          {"lengthscale_ratio", lengthscale_ratio},
          {"band", band},
          {"seed", seed}};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

MatrixXd sample_separable_field(const KernelSpec& kernel, const Points& locations, Eigen::Index n_steps, double dt,
                                std::uint64_t seed) {
  StGpModel model;
  model.kernel = kernel;
  model.inducing = InducingSet::all_free(locations);
  model.inducing.min_separation = 0.0;
  model.spatial_grid = locations;
  model.n_steps = static_cast<std::size_t>(n_steps);
  model.dt = dt;
  model.sigma2 = 1.0;
  InducingChain chain = build_inducing_chain(model);
  // Z = grid: the inducing values are the field itself.
  chain.ssm.H = chain.emission_to_u;
  chain.ssm.obs_noise = VectorXd::Ones(chain.ssm.H.rows());
  return sample_prior(chain.ssm, static_cast<std::size_t>(n_steps), seed).emitted;
}

namespace {

KernelSpec scale_lengthscales(KernelSpec spec, double factor) {
  for (auto& l : spec.hyper.lengthscales) l *= factor;
  for (auto& c : spec.children) c = scale_lengthscales(c, factor);
  return spec;
}

bool has_zero_variance(const KernelSpec& spec) {
  if (spec.is_leaf()) return spec.hyper.variance == 0.0;
  if (spec.kind == KernelKind::Sum)
    return std::all_of(spec.children.begin(), spec.children.end(), has_zero_variance);
  return std::any_of(spec.children.begin(), spec.children.end(), has_zero_variance);
}

}  // namespace

GridDataset synth_field(const SynthConfig& cfg) {
  cfg.grid.validate();
  if (cfg.kernel.kind != KernelKind::Separable)
    throw UnsupportedKernelError("synth_field needs a Separable kernel, got " + to_string(cfg.kernel.kind));
  if (!(cfg.noise_sd >= 0.0)) throw InputError("noise_sd must be >= 0");
  const bool zero_field = has_zero_variance(cfg.kernel);
  if (!zero_field) {
    cfg.kernel.validate();
    (void)to_sde(cfg.kernel.temporal());
  }

  GridDataset ds;
  ds.locations = cfg.grid.locations();
  const Eigen::Index T = cfg.grid.n_times;
  ds.times.resize(T);
  for (Eigen::Index k = 0; k < T; ++k) ds.times(k) = cfg.grid.dt * static_cast<double>(k);
  ds.mask = Mask::Constant(T, ds.locations.rows(), true);

  const Normalizer norm = Normalizer::fit(ds.locations);
  const Points unit = norm.to_unit(ds.locations);
  MatrixXd field = MatrixXd::Zero(T, ds.locations.rows());
  if (!zero_field) {
    if (cfg.kind == FieldKind::SeparableGp) {
      field = sample_separable_field(cfg.kernel, unit, T, cfg.grid.dt, derive_seed(cfg.seed, 0));
    } else {
      if (!(cfg.lengthscale_ratio > 0.0) || !(cfg.band > 0.0))
        throw InputError("two_regime needs lengthscale_ratio > 0 and band > 0");
      KernelSpec rough = cfg.kernel;
      rough.spatial() = scale_lengthscales(cfg.kernel.spatial(), 1.0 / cfg.lengthscale_ratio);
      const MatrixXd smooth_f = sample_separable_field(cfg.kernel, unit, T, cfg.grid.dt, derive_seed(cfg.seed, 0));
      const MatrixXd rough_f = sample_separable_field(rough, unit, T, cfg.grid.dt, derive_seed(cfg.seed, 1));
      const double xmin = unit.col(0).minCoeff();
      const double xext = std::max(unit.col(0).maxCoeff() - xmin, 1e-300);
      for (Eigen::Index i = 0; i < unit.rows(); ++i) {
        const double xn = (unit(i, 0) - xmin) / xext;
        const double w = std::clamp((xn - 0.5) / cfg.band + 0.5, 0.0, 1.0);
        // Square-root weights keep the marginal variance constant across the band.
        field.col(i) = std::sqrt(1.0 - w) * smooth_f.col(i) + std::sqrt(w) * rough_f.col(i);
      }
    }
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, 2));
  std::normal_distribution<double> normal(0.0, 1.0);
  ds.values = field;
  if (cfg.noise_sd > 0.0)
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index i = 0; i < ds.values.cols(); ++i) ds.values(t, i) += cfg.noise_sd * normal(rng);

  ds.metadata = {{"name", to_string(cfg.kind)}, {"units", "process units"}, {"seed", cfg.seed},
                 {"generator", cfg.to_json()}};
  return ds;
}

GridDataset inject_sim_error(const GridDataset& ds, double ell_s, double ell_t, double var, std::uint64_t seed) {
  if (!(var >= 0.0) || !std::isfinite(var)) throw InputError("injected variance must be >= 0");
  if (var == 0.0) return ds;
  if (!(ell_s > 0.0) || !(ell_t > 0.0)) throw InputError("injected lengthscales must be > 0");
  ds.validate();
  const KernelSpec kernel = KernelSpec::separable(KernelSpec::matern32(var, ell_s, 2), KernelSpec::matern32(1.0, ell_t));
  const Points unit = Normalizer::fit(ds.locations).to_unit(ds.locations);
  const MatrixXd err = sample_separable_field(kernel, unit, ds.n_times(), ds.dt(), seed);
  GridDataset out = ds;
  for (Eigen::Index t = 0; t < out.values.rows(); ++t)
    for (Eigen::Index i = 0; i < out.values.cols(); ++i)
      if (out.mask(t, i)) out.values(t, i) += err(t, i);
  out.metadata["injected_error"] = {{"ell_s", ell_s}, {"ell_t", ell_t}, {"var", var}, {"seed", seed}};
  return out;
}

}  // namespace milsense
