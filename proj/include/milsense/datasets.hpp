#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

#include "milsense/kernels.hpp"
#include "milsense/markov_gp.hpp"

namespace milsense {

// Spatiotemporal field on a fixed set of 2-D locations and a uniform time grid.
struct GridDataset {
  Points locations;  // N_s × 2, raw units
  VectorXd times;    // N_t, uniformly spaced
  MatrixXd values;   // N_t × N_s
  Mask mask;         // N_t × N_s, true = observed
  // name, units, seed, generator (free-form JSON object).
  nlohmann::json metadata = nlohmann::json::object();

  Eigen::Index n_times() const { return values.rows(); }
  Eigen::Index n_locations() const { return values.cols(); }
  double dt() const;
  // Throws InputError if the invariants are violated.
  void validate() const;

  Observations observations() const { return {values, mask}; }
  // Rows [begin, end).
  GridDataset slice_time(Eigen::Index begin, Eigen::Index end) const;
  // Columns `idx`, in that order.
  GridDataset select_locations(const std::vector<Eigen::Index>& idx) const;
};

// Affine map from raw coordinates to the unit square using one scale for both
// axes (so distances stay isotropic): u = (x - origin) / scale.
struct Normalizer {
  Eigen::RowVector2d origin = Eigen::RowVector2d::Zero();
  double scale = 1.0;

  static Normalizer fit(const Points& locations);
  Points to_unit(const Points& raw) const;
  Points to_raw(const Points& unit) const;
};

// Directory layout: manifest.json + data.csv (header t,x1,x2,y,mask, rows in
// time-major order). `path` may name the directory or the manifest itself.
GridDataset load_grid(const std::filesystem::path& path);
void save_grid(const GridDataset& ds, const std::filesystem::path& dir);

// Shortest round-trip decimal representation.
std::string format_double(double v);

struct GridConfig {
  int nx = 10;
  int ny = 10;
  double width = 1.0;
  double height = 1.0;
  Eigen::Index n_times = 100;
  double dt = 1.0;

  void validate() const;
  Points locations() const;  // x fastest
};

enum class FieldKind { SeparableGp, TwoRegime };

std::string to_string(FieldKind kind);
FieldKind field_kind_from_string(const std::string& s);

struct SynthConfig {
  FieldKind kind = FieldKind::SeparableGp;
  GridConfig grid;
  // Separable kernel over normalized coordinates and time.
  KernelSpec kernel = KernelSpec::separable(KernelSpec::matern32(1.0, 0.2, 2), KernelSpec::matern32(1.0, 10.0));
  double noise_sd = 0.1;
  // two_regime: the right half uses spatial lengthscales divided by this.
  double lengthscale_ratio = 5.0;
  // two_regime: width of the blending band around x = 0.5 (normalized).
  double band = 0.1;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

GridDataset synth_field(const SynthConfig& cfg);

// Adds one draw of a zero-mean Matérn-3/2 × Matérn-3/2 field with variance
// `var`, spatial lengthscale `ell_s` (normalized units) and temporal lengthscale
// `ell_t` (time units) to the observed entries. var = 0 returns `ds` unchanged.
GridDataset inject_sim_error(const GridDataset& ds, double ell_s, double ell_t, double var, std::uint64_t seed);

// Noise-free draw of a separable GP on (locations × n_steps) via the
// state-space chain with the full grid as inducing set.
MatrixXd sample_separable_field(const KernelSpec& kernel, const Points& locations, Eigen::Index n_steps, double dt,
                                std::uint64_t seed);

// Deterministic child seed (splitmix64 of seed and stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace milsense
