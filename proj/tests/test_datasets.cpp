#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "milsense/datasets.hpp"
#include "milsense/errors.hpp"
#include "milsense/geometry.hpp"
#include "oracles.hpp"

using namespace milsense;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("milsense_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

const char* kManifest = R"({"format": "milsense-grid-v1", "data": "data.csv", "name": "fixture", "units": "K"})";

// 2 locations × 2 times, one missing entry.
const char* kFixture =
    "t,x1,x2,y,mask\n"
    "0,0,0,1.5,1\n"
    "0,1,0,-2,1\n"
    "0.5,0,0,0,0\n"
    "0.5,1,0,3.25,1\n";

// Expects a ParseError whose message names `needle` and whose line is `line`.
void expect_parse_error(const std::string& csv, const std::string& needle, long line,
                        const std::string& manifest = kManifest) {
  const fs::path dir = scratch_dir("parse");
  write_text(dir / "manifest.json", manifest);
  write_text(dir / "data.csv", csv);
  try {
    load_grid(dir);
    FAIL() << "expected a parse error mentioning " << needle;
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    EXPECT_EQ(e.line(), line) << e.what();
  }
}

}  // namespace

TEST(GridIo, LoadsHandWrittenFixture) {
  const fs::path dir = scratch_dir("fixture");
  write_text(dir / "manifest.json", kManifest);
  write_text(dir / "data.csv", kFixture);
  const GridDataset ds = load_grid(dir / "manifest.json");
  ASSERT_EQ(ds.n_times(), 2);
  ASSERT_EQ(ds.n_locations(), 2);
  EXPECT_DOUBLE_EQ(ds.dt(), 0.5);
  EXPECT_EQ(ds.locations(1, 0), 1.0);
  EXPECT_EQ(ds.values(0, 0), 1.5);
  EXPECT_EQ(ds.values(0, 1), -2.0);
  EXPECT_EQ(ds.values(1, 1), 3.25);
  EXPECT_FALSE(ds.mask(1, 0));
  EXPECT_TRUE(ds.mask(1, 1));
  EXPECT_EQ(ds.metadata.at("name"), "fixture");
}

TEST(GridIo, RoundTripIsBitExact) {
  SynthConfig cfg;
  cfg.grid.nx = 4;
  cfg.grid.ny = 3;
  cfg.grid.width = 2.5;
  cfg.grid.n_times = 7;
  cfg.grid.dt = 0.3;
  cfg.seed = 11;
  GridDataset ds = synth_field(cfg);
  ds.mask(2, 5) = false;
  ds.values(2, 5) = 0.0;
  const fs::path a = scratch_dir("rt_a"), b = scratch_dir("rt_b");
  save_grid(ds, a);
  const GridDataset back = load_grid(a);
  EXPECT_EQ(back.values, ds.values);
  EXPECT_EQ(back.locations, ds.locations);
  EXPECT_EQ(back.times, ds.times);
  EXPECT_TRUE((back.mask == ds.mask).all());
  EXPECT_EQ(back.metadata, ds.metadata);
  save_grid(back, b);
  EXPECT_EQ(read_text(a / "data.csv"), read_text(b / "data.csv"));
  EXPECT_EQ(read_text(a / "manifest.json"), read_text(b / "manifest.json"));
}

TEST(GridIo, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = n(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(GridIo, ReportsMalformedInputWithLineNumbers) {
  expect_parse_error("t,x1,x2,y,flag\n0,0,0,1,1\n", "flag", 1);
  expect_parse_error("t,x1,x2,y,mask\n0,0,0,1,1\n0,1,0,2\n", "ragged", 3);
  expect_parse_error("t,x1,x2,y,mask\n0,0,0,abc,1\n", "abc", 2);
  expect_parse_error("t,x1,x2,y,mask\n0,0,0,1,2\n", "mask", 2);
  expect_parse_error("t,x1,x2,y,mask\n0,0,0,1,1\n1,0,0,1,1\n3,0,0,1,1\n", "non-uniform", 4);
  expect_parse_error("t,x1,x2,y,mask\n0,0,0,1,1\n0,1,0,1,1\n1,1,0,1,1\n1,0,0,1,1\n", "location order", 4);
  expect_parse_error(kFixture, "unknown key 'colour'", -1,
                     R"({"format": "milsense-grid-v1", "data": "data.csv", "colour": "red"})");
  expect_parse_error(kFixture, "n_times", -1, R"({"format": "milsense-grid-v1", "data": "data.csv", "n_times": 3})");
}

TEST(GridIo, MissingFilesAreInputErrors) {
  EXPECT_THROW(load_grid(fs::temp_directory_path() / "milsense_test_does_not_exist"), InputError);
}

TEST(Normalizer, UsesCommonScale) {
  Points raw(3, 2);
  raw << 10, 20, 14, 20, 10, 22;
  const Normalizer n = Normalizer::fit(raw);
  const Points u = n.to_unit(raw);
  EXPECT_DOUBLE_EQ(n.scale, 4.0);
  EXPECT_DOUBLE_EQ(u(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(u(2, 1), 0.5);
  EXPECT_LT((n.to_raw(u) - raw).norm(), 1e-12);
}

TEST(Synth, GridOrderingAndMetadata) {
  SynthConfig cfg;
  cfg.grid.nx = 3;
  cfg.grid.ny = 2;
  cfg.grid.width = 2.0;
  cfg.grid.n_times = 4;
  cfg.seed = 3;
  const GridDataset ds = synth_field(cfg);
  EXPECT_NO_THROW(ds.validate());
  EXPECT_EQ(ds.locations(1, 0), 1.0);  // x fastest
  EXPECT_EQ(ds.locations(3, 1), 1.0);
  EXPECT_EQ(ds.metadata.at("seed"), 3);
  EXPECT_EQ(ds.metadata.at("generator").at("kind"), "separable_gp");
  EXPECT_EQ(synth_field(cfg).values, ds.values);
  cfg.seed = 4;
  EXPECT_NE(synth_field(cfg).values, ds.values);
}

TEST(Synth, SeparableFieldHasPriorVariance) {
  SynthConfig cfg;
  cfg.grid.nx = 5;
  cfg.grid.ny = 5;
  cfg.grid.n_times = 400;
  cfg.noise_sd = 0.0;
  cfg.kernel = KernelSpec::separable(KernelSpec::matern32(1.0, 0.3, 2), KernelSpec::matern32(2.0, 3.0));
  double sum = 0.0, count = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const GridDataset ds = synth_field(cfg);
    sum += ds.values.squaredNorm();
    count += static_cast<double>(ds.values.size());
  }
  EXPECT_NEAR(sum / count, 2.0, 0.35);
}

TEST(Synth, TwoRegimeRightHalfIsRougher) {
  SynthConfig cfg;
  cfg.kind = FieldKind::TwoRegime;
  cfg.grid.nx = 20;
  cfg.grid.ny = 20;
  cfg.grid.n_times = 20;
  cfg.noise_sd = 0.0;
  cfg.seed = 9;
  const GridDataset ds = synth_field(cfg);
  // Mean squared difference between horizontal neighbours, per half.
  double left = 0.0, right = 0.0;
  for (int j = 0; j < 20; ++j)
    for (int i = 0; i + 1 < 20; ++i) {
      const double d = (ds.values.col(j * 20 + i + 1) - ds.values.col(j * 20 + i)).squaredNorm();
      (i < 8 ? left : right) += i < 8 ? d : (i >= 11 ? d : 0.0);
    }
  EXPECT_GT(right, 2.0 * left);
  EXPECT_EQ(ds.metadata.at("generator").at("kind"), "two_regime");
  EXPECT_EQ(field_kind_from_string("two_regime"), FieldKind::TwoRegime);
  EXPECT_THROW(field_kind_from_string("three_regime"), InputError);
}

TEST(Synth, InjectedErrorRespectsMaskAndZeroVariance) {
  SynthConfig cfg;
  cfg.grid.nx = 4;
  cfg.grid.ny = 4;
  cfg.grid.n_times = 30;
  GridDataset ds = synth_field(cfg);
  ds.mask(3, 2) = false;
  const GridDataset same = inject_sim_error(ds, 0.1, 1.0, 0.0, 1);
  EXPECT_EQ(same.values, ds.values);
  const GridDataset noisy = inject_sim_error(ds, 0.5, 5.0, 4.0, 1);
  EXPECT_EQ(noisy.values(3, 2), ds.values(3, 2));
  EXPECT_GT((noisy.values - ds.values).squaredNorm() / static_cast<double>(ds.values.size()), 0.5);
  EXPECT_EQ(inject_sim_error(ds, 0.5, 5.0, 4.0, 1).values, noisy.values);
  EXPECT_TRUE(noisy.metadata.contains("injected_error"));
}

TEST(Synth, DeriveSeedIsDeterministicAndSpreads) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}

TEST(Dataset, SlicingAndSelection) {
  SynthConfig cfg;
  cfg.grid.nx = 3;
  cfg.grid.ny = 3;
  cfg.grid.n_times = 10;
  const GridDataset ds = synth_field(cfg);
  const GridDataset s = ds.slice_time(2, 6);
  EXPECT_EQ(s.n_times(), 4);
  EXPECT_EQ(s.values, ds.values.middleRows(2, 4));
  EXPECT_EQ(s.times(0), ds.times(2));
  const GridDataset c = ds.select_locations({4, 0});
  EXPECT_EQ(c.values.col(0), ds.values.col(4));
  EXPECT_EQ(c.locations.row(1), ds.locations.row(0));
  EXPECT_THROW(ds.slice_time(5, 5), InputError);
  EXPECT_THROW(ds.select_locations({9}), InputError);
}

TEST(Geometry, HullOfGridAndProjection) {
  GridConfig g;
  g.nx = 5;
  g.ny = 4;
  g.width = 2.0;
  g.height = 1.0;
  const DomainHull hull = convex_hull(g.locations());
  EXPECT_EQ(hull.vertices.rows(), 4);
  EXPECT_TRUE(hull.contains({1.0, 0.5}));
  EXPECT_FALSE(hull.contains({2.5, 0.5}));
  const Eigen::Vector2d inside(0.3, 0.7);
  EXPECT_EQ(hull_project(hull, inside), inside);
  EXPECT_LT((hull_project(hull, {3.0, 0.5}) - Eigen::Vector2d(2.0, 0.5)).norm(), 1e-12);
  EXPECT_LT((hull_project(hull, {-1.0, -1.0}) - Eigen::Vector2d(0.0, 0.0)).norm(), 1e-12);
  Points line(3, 2);
  line << 0, 0, 1, 1, 2, 2;
  EXPECT_THROW(convex_hull(line), DegenerateGeometryError);
}

TEST(Geometry, ProjectionIsNearestHullPoint) {
  std::mt19937_64 rng(8);
  const Points pts = oracle::random_points(30, 2, rng);
  const DomainHull hull = convex_hull(pts);
  const Points probes = oracle::random_points(50, 2, rng, -1.0, 2.0);
  for (Eigen::Index i = 0; i < probes.rows(); ++i) {
    const Eigen::Vector2d p = probes.row(i).transpose();
    const Eigen::Vector2d q = hull_project(hull, p);
    EXPECT_TRUE(hull.contains(q, 1e-9));
    // No point in the data (all inside the hull) is closer to p than q.
    for (Eigen::Index j = 0; j < pts.rows(); ++j)
      EXPECT_LE((q - p).norm(), (pts.row(j).transpose() - p).norm() + 1e-12);
  }
}
