#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rdpi/data.hpp"
#include "rdpi/error.hpp"

namespace rdpi {
namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table t;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw DataError(path.string() + ": empty file");
  if (t.header.size() < 2) throw DataError(path.string() + ": need a key column and at least one node");
  return t;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty() || s == "nan" || s == "NaN" || s == "NA") return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || p != e) return false;
  return true;
}

double require_double(const std::string& s, const fs::path& path, std::size_t row) {
  double v = 0.0;
  if (!parse_double(s, v) || !std::isfinite(v))
    throw DataError(path.string() + ": row " + std::to_string(row + 1) + ": bad number '" + s + "'");
  return v;
}

Mask read_flags(const fs::path& path, const Table& values) {
  Table t = read_table(path);
  if (t.header != values.header) throw DimensionError(path.string() + ": header differs from the values file");
  if (t.rows.size() != values.rows.size()) throw DimensionError(path.string() + ": row count differs from the values file");
  const auto L = static_cast<Eigen::Index>(t.rows.size());
  const auto N = static_cast<Eigen::Index>(t.header.size() - 1);
  Mask m(L, N);
  for (Eigen::Index i = 0; i < L; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    if (row[0] != values.rows[static_cast<std::size_t>(i)][0])
      throw DataError(path.string() + ": timestamp mismatch at row " + std::to_string(i + 1));
    for (Eigen::Index j = 0; j < N; ++j) {
      const auto& c = row[static_cast<std::size_t>(j + 1)];
      if (c == "1") m(i, j) = true;
      else if (c == "0") m(i, j) = false;
      else throw DataError(path.string() + ": mask cells must be 0 or 1, got '" + c + "'");
    }
  }
  return m;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  return out;
}

void write_header(std::ofstream& out, const char* key, const std::vector<std::string>& node_ids) {
  out << key;
  for (const auto& id : node_ids) out << ',' << id;
  out << '\n';
}

}  // namespace

MaskedGrid load_grid_csv(const fs::path& values, const std::optional<fs::path>& mask,
                         const std::optional<fs::path>& eval_mask, const CsvOptions& options) {
  Table t = read_table(values);
  if (t.rows.empty()) throw DataError(values.string() + ": no data rows");
  const auto L = static_cast<Eigen::Index>(t.rows.size());
  const auto N = static_cast<Eigen::Index>(t.header.size() - 1);
  MaskedGrid g;
  g.node_ids.assign(t.header.begin() + 1, t.header.end());
  g.values = Grid::Zero(L, N);
  g.observed = Mask::Constant(L, N, false);
  for (Eigen::Index i = 0; i < L; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    g.timestamps.push_back(row[0]);
    for (Eigen::Index j = 0; j < N; ++j) {
      double v = 0.0;
      const auto& cell = row[static_cast<std::size_t>(j + 1)];
      if (parse_double(cell, v)) {
        if (!std::isfinite(v)) throw DataError(values.string() + ": non-finite value at row " + std::to_string(i + 1));
        g.values(i, j) = v;
        g.observed(i, j) = true;
      } else if (!cell.empty() && cell != "nan" && cell != "NaN" && cell != "NA") {
        throw DataError(values.string() + ": bad number '" + cell + "' at row " + std::to_string(i + 1));
      }
    }
  }
  if (mask) {
    Mask m = read_flags(*mask, t);
    if ((m && !g.observed).any()) throw DataError(mask->string() + ": cell flagged observed but has no value");
    g.observed = m;
    g.values = g.observed.select(g.values, 0.0);
  }
  g.eval = Mask::Constant(L, N, false);
  if (eval_mask) g.eval = read_flags(*eval_mask, t);
  assign_window_index(g, options.window_period);
  g.validate();
  return g;
}

Graph load_adjacency_csv(const fs::path& path, const std::vector<std::string>& node_ids) {
  Table t = read_table(path);
  const std::vector<std::string> ids(t.header.begin() + 1, t.header.end());
  if (ids != node_ids) throw DimensionError(path.string() + ": node ids differ from the values file");
  const auto N = static_cast<Eigen::Index>(ids.size());
  if (static_cast<Eigen::Index>(t.rows.size()) != N) throw DimensionError(path.string() + ": adjacency must be square");
  Graph g{Eigen::MatrixXd::Zero(N, N)};
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    if (row[0] != ids[static_cast<std::size_t>(i)]) throw DataError(path.string() + ": row order differs from the header");
    for (Eigen::Index j = 0; j < N; ++j)
      g.adjacency(i, j) = require_double(row[static_cast<std::size_t>(j + 1)], path, static_cast<std::size_t>(i));
  }
  g.validate();
  return g;
}

std::pair<MaskedGrid, Graph> load_csv(const CsvPaths& paths, const CsvOptions& options) {
  MaskedGrid grid = load_grid_csv(paths.values, paths.mask, paths.eval_mask, options);
  Graph graph = load_adjacency_csv(paths.adjacency, grid.node_ids);
  return {std::move(grid), std::move(graph)};
}

void save_values_csv(const fs::path& path, const Grid& values, const std::vector<std::string>& timestamps,
                     const std::vector<std::string>& node_ids) {
  if (static_cast<Eigen::Index>(timestamps.size()) != values.rows() ||
      static_cast<Eigen::Index>(node_ids.size()) != values.cols())
    throw DimensionError("save_values_csv: labels do not match the grid");
  auto out = open_out(path);
  write_header(out, "timestamp", node_ids);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    out << timestamps[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      out << ',';
      if (std::isfinite(values(i, j))) out << values(i, j);
    }
    out << '\n';
  }
}

void save_values_csv(const fs::path& path, const MaskedGrid& grid) {
  Grid v = grid.observed.select(grid.values, std::numeric_limits<double>::quiet_NaN());
  save_values_csv(path, v, grid.timestamps, grid.node_ids);
}

void save_mask_csv(const fs::path& path, const Mask& mask, const std::vector<std::string>& timestamps,
                   const std::vector<std::string>& node_ids) {
  auto out = open_out(path);
  write_header(out, "timestamp", node_ids);
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    out << timestamps[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < mask.cols(); ++j) out << ',' << (mask(i, j) ? '1' : '0');
    out << '\n';
  }
}

void save_adjacency_csv(const fs::path& path, const Graph& graph, const std::vector<std::string>& node_ids) {
  auto out = open_out(path);
  write_header(out, "node", node_ids);
  for (Eigen::Index i = 0; i < graph.adjacency.rows(); ++i) {
    out << node_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < graph.adjacency.cols(); ++j) out << ',' << graph.adjacency(i, j);
    out << '\n';
  }
}

void save_dataset(const fs::path& dir, const MaskedGrid& grid, const Graph& graph) {
  fs::create_directories(dir);
  save_values_csv(dir / "values.csv", grid);
  save_mask_csv(dir / "mask.csv", grid.observed, grid.timestamps, grid.node_ids);
  save_mask_csv(dir / "eval_mask.csv", grid.eval, grid.timestamps, grid.node_ids);
  save_adjacency_csv(dir / "adjacency.csv", graph, grid.node_ids);
}

std::pair<MaskedGrid, Graph> load_dataset(const fs::path& dir, const CsvOptions& options) {
  CsvPaths p;
  p.values = dir / "values.csv";
  if (fs::exists(dir / "mask.csv")) p.mask = dir / "mask.csv";
  if (fs::exists(dir / "eval_mask.csv")) p.eval_mask = dir / "eval_mask.csv";
  p.adjacency = dir / "adjacency.csv";
  return load_csv(p, options);
}

}  // namespace rdpi
