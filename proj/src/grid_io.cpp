#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>
#include <vector>

#include "milsense/datasets.hpp"
#include "milsense/errors.hpp"

namespace milsense {

namespace {

constexpr const char* kFormat = "milsense-grid-v1";
constexpr const char* kHeader = "t,x1,x2,y,mask";
const std::set<std::string> kMetadataKeys = {"name", "units", "space_units", "time_units", "seed", "generator",
                                             "injected_error"};
const std::set<std::string> kStructuralKeys = {"format", "data", "n_times", "n_locations"};

double parse_double(std::string_view field, long line, const char* column) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError("column '" + std::string(column) + "': cannot parse '" + std::string(field) + "' as a number",
                     line);
  return v;
}

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void check_header(std::string_view header) {
  static const std::vector<std::string_view> expected = {"t", "x1", "x2", "y", "mask"};
  const auto cols = split(header);
  for (const auto& c : cols)
    if (std::find(expected.begin(), expected.end(), c) == expected.end())
      throw ParseError("unknown column '" + std::string(c) + "' in header (expected " + kHeader + ")", 1);
  if (cols != expected) throw ParseError(std::string("malformed header, expected ") + kHeader, 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InputError("cannot format number");
  return {buf, ptr};
}

void save_grid(const GridDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  for (const auto& [key, _] : ds.metadata.items())
    if (!kMetadataKeys.count(key)) throw InputError("dataset metadata has unsupported key '" + key + "'");
  std::filesystem::create_directories(dir);

  nlohmann::json manifest = ds.metadata;
  manifest["format"] = kFormat;
  manifest["data"] = "data.csv";
  manifest["n_times"] = ds.n_times();
  manifest["n_locations"] = ds.n_locations();
  {
    std::ofstream m(dir / "manifest.json");
    if (!m) throw InputError("cannot write " + (dir / "manifest.json").string());
    m << manifest.dump(2) << '\n';
  }

  std::ofstream f(dir / "data.csv");
  if (!f) throw InputError("cannot write " + (dir / "data.csv").string());
  f << kHeader << '\n';
  std::string line;
  for (Eigen::Index t = 0; t < ds.n_times(); ++t)
    for (Eigen::Index i = 0; i < ds.n_locations(); ++i) {
      line.clear();
      line += format_double(ds.times(t));
      line += ',';
      line += format_double(ds.locations(i, 0));
      line += ',';
      line += format_double(ds.locations(i, 1));
      line += ',';
      line += format_double(ds.values(t, i));
      line += ds.mask(t, i) ? ",1\n" : ",0\n";
      f << line;
    }
  if (!f) throw InputError("failed writing " + (dir / "data.csv").string());
}

GridDataset load_grid(const std::filesystem::path& path) {
  const std::filesystem::path manifest_path = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream mf(manifest_path);
  if (!mf) throw InputError("cannot open dataset manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object()) throw ParseError("manifest must be a JSON object");
  GridDataset ds;
  for (const auto& [key, value] : manifest.items()) {
    if (kMetadataKeys.count(key))
      ds.metadata[key] = value;
    else if (!kStructuralKeys.count(key))
      throw ParseError("manifest: unknown key '" + key + "'");
  }
  if (manifest.value("format", std::string()) != kFormat)
    throw ParseError(std::string("manifest: format must be '") + kFormat + "'");
  const std::string data_name = manifest.value("data", std::string("data.csv"));
  const std::filesystem::path csv_path = manifest_path.parent_path() / data_name;

  std::ifstream f(csv_path);
  if (!f) throw InputError("cannot open dataset values " + csv_path.string());
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty data file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  check_header(line);

  struct Row {
    double t, x1, x2, y;
    bool mask;
    long line;
  };
  std::vector<Row> rows;
  long lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != 5)
      throw ParseError("ragged row: expected 5 fields, found " + std::to_string(fields.size()), lineno);
    Row r{parse_double(fields[0], lineno, "t"), parse_double(fields[1], lineno, "x1"),
          parse_double(fields[2], lineno, "x2"), parse_double(fields[3], lineno, "y"), false, lineno};
    if (fields[4] == "1")
      r.mask = true;
    else if (fields[4] != "0")
      throw ParseError("column 'mask' must be 0 or 1", lineno);
    if (r.mask && !std::isfinite(r.y)) throw ParseError("observed value is not finite", lineno);
    rows.push_back(r);
  }
  if (rows.empty()) throw ParseError("data file has no rows", lineno);

  std::size_t ns = 0;
  while (ns < rows.size() && rows[ns].t == rows[0].t) ++ns;
  if (rows.size() % ns != 0)
    throw ParseError("rows do not form a complete time x location grid", rows.back().line);
  const std::size_t nt = rows.size() / ns;
  if (manifest.contains("n_times") && manifest["n_times"].get<std::size_t>() != nt)
    throw ParseError("manifest n_times does not match the data (" + std::to_string(nt) + " steps)");
  if (manifest.contains("n_locations") && manifest["n_locations"].get<std::size_t>() != ns)
    throw ParseError("manifest n_locations does not match the data (" + std::to_string(ns) + " locations)");

  ds.locations.resize(static_cast<Eigen::Index>(ns), 2);
  ds.times.resize(static_cast<Eigen::Index>(nt));
  ds.values.resize(static_cast<Eigen::Index>(nt), static_cast<Eigen::Index>(ns));
  ds.mask.resize(static_cast<Eigen::Index>(nt), static_cast<Eigen::Index>(ns));
  for (std::size_t i = 0; i < ns; ++i) {
    ds.locations(static_cast<Eigen::Index>(i), 0) = rows[i].x1;
    ds.locations(static_cast<Eigen::Index>(i), 1) = rows[i].x2;
  }
  const double step = nt >= 2 ? rows[ns].t - rows[0].t : 1.0;
  if (nt >= 2 && !(step > 0.0)) throw ParseError("times must be strictly increasing", rows[ns].line);
  for (std::size_t k = 0; k < nt; ++k) {
    const Row& first = rows[k * ns];
    const double expected = rows[0].t + static_cast<double>(k) * step;
    if (std::abs(first.t - expected) > 1e-9 * std::max(std::abs(expected), std::abs(step)))
      throw ParseError("non-uniform time spacing", first.line);
    ds.times(static_cast<Eigen::Index>(k)) = first.t;
    for (std::size_t i = 0; i < ns; ++i) {
      const Row& r = rows[k * ns + i];
      if (r.t != first.t) throw ParseError("time changes within a block of " + std::to_string(ns) + " rows", r.line);
      if (r.x1 != rows[i].x1 || r.x2 != rows[i].x2)
        throw ParseError("location order differs from the first time step", r.line);
      ds.values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = r.y;
      ds.mask(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = r.mask;
    }
  }
  ds.validate();
  return ds;
}

}  // namespace milsense
