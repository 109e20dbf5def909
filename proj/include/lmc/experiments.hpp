#pragma once

// Batch experiments: INI configuration, orchestration of the solver,
// singular-family, Jacobi and transform modules, and CSV tables.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "lmc/errors.hpp"
#include "lmc/graph_geometry.hpp"
#include "lmc/grid.hpp"
#include "lmc/phase_models.hpp"
#include "lmc/singular.hpp"
#include "lmc/solver.hpp"
#include "lmc/spectral.hpp"
#include "lmc/transforms.hpp"

namespace lmc {

enum class ExperimentKind {
  solve,
  flow,
  hessian_scaling,
  gradient_scaling,
  jacobi_report,
  counterexample_gallery,
  concavity_sweep,
  rotation_check
};

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::solve: return "solve";
    case ExperimentKind::flow: return "flow";
    case ExperimentKind::hessian_scaling: return "hessian-scaling";
    case ExperimentKind::gradient_scaling: return "gradient-scaling";
    case ExperimentKind::jacobi_report: return "jacobi-report";
    case ExperimentKind::counterexample_gallery: return "counterexample-gallery";
    case ExperimentKind::concavity_sweep: return "concavity-sweep";
    case ExperimentKind::rotation_check: return "rotation-check";
  }
  return "?";
}

inline std::optional<ExperimentKind> parse_kind(const std::string& s) {
  for (ExperimentKind k : {ExperimentKind::solve, ExperimentKind::flow, ExperimentKind::hessian_scaling,
                           ExperimentKind::gradient_scaling, ExperimentKind::jacobi_report,
                           ExperimentKind::counterexample_gallery, ExperimentKind::concavity_sweep,
                           ExperimentKind::rotation_check})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

inline const char* to_string(JacobiNode s) {
  switch (s) {
    case JacobiNode::used: return "used";
    case JacobiNode::skipped_multiplicity: return "skipped-multiplicity";
    case JacobiNode::not_applicable: return "not-applicable";
    case JacobiNode::outside: return "outside";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parameter blocks

struct GridParams {
  std::size_t n = 2;
  double radius = 1.0;
  std::size_t nodes = 17;
  Grid grid() const { return Grid::box(n, radius, nodes); }
};

/// a|x|^2/2 + b|x|^4, optionally with a linear tilt along x_1.
struct PotentialParams {
  double a = 1.0;
  double b = 0.05;
  Coupling coupling = Coupling::pure_x;
};

struct SolveParams {
  GridParams grid;
  PotentialParams potential;
  /// Empty: manufactured problem from the potential. Otherwise the potential
  /// only supplies boundary data.
  std::optional<PhaseModel> phase;
  SolverConfig solver;
  bool write_field = false;
};

struct FlowParams {
  GridParams grid;
  double a = 1.0;
  double b = 0.0;
  std::optional<double> dt;  // default: dt_fraction * h^2/(2n)
  double dt_fraction = 0.9;
  int steps = 100;
  int record_every = 10;
  bool exact_boundary = true;  // drive the boundary with the quadratic drift
  double tolerance_factor = 10.0;
};

struct HessianScalingParams {
  GridParams grid;  // radius unused; see radii
  Vec radii{1.0};
  Vec scales{0.25, 0.5, 1.0, 1.5, 2.0};
  PotentialParams potential;
  std::optional<double> proxy_c;  // default: 1 / max shape over the sweep
  SolverConfig solver;
};

struct GradientScalingParams {
  GridParams grid;
  Vec tilts{0.0, 0.25, 0.5, 1.0, 1.5, 2.0};
  double a = 1.0;
  double b = 0.05;
  SolverConfig solver;
};

struct JacobiParams {
  GridParams grid;
  PotentialParams potential;
  bool solve = true;  // false: sample the closed form directly
  SolverConfig solver;
};

struct GalleryParams {
  std::vector<SingularFamily> families{OddPower{4, 0}, OddPower{4, 1}, XPower{5, 0}, LogType{}};
  std::size_t points = 1000;
  double lo = 1e-6;
  double hi = 0.9;
  double tolerance = 1e-10;
  bool touch = true;
};

struct ConcavitySweepParams {
  std::size_t n = 3;
  double K = 1.0;
  Vec A{1.0, 2.0, 4.0, 8.0};
  std::size_t samples = 10000;
};

struct RotationCheckParams {
  GridParams grid{2, 1.0, 65};
  double a = 1.0;
  double b = 0.05;
  double gamma = kPi / 8.0;
  bool round_trip = true;
  double residual_factor = 5.0;
  double spread_factor = 10.0;
};

using ExperimentParams = std::variant<SolveParams, FlowParams, HessianScalingParams, GradientScalingParams,
                                      JacobiParams, GalleryParams, ConcavitySweepParams, RotationCheckParams>;

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::solve;
  ExperimentParams params;
  std::string out = "results";
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// INI reading

namespace detail {

inline std::string trim(std::string s) {
  auto sp = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), sp));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), sp).base(), s.end());
  return s;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

/// Typed access to a property tree. Every key read is remembered so that
/// leftovers can be rejected as unknown.
class IniReader {
 public:
  explicit IniReader(boost::property_tree::ptree t) : tree_(std::move(t)) {}

  bool has(const std::string& path) const { return tree_.get_optional<std::string>(path).has_value(); }

  std::optional<std::string> raw(const std::string& path) {
    used_.insert(path);
    auto v = tree_.get_optional<std::string>(path);
    if (!v) return std::nullopt;
    return trim(*v);
  }

  std::string text(const std::string& path, std::optional<std::string> def = std::nullopt) {
    if (auto v = raw(path)) return *v;
    if (def) return *def;
    throw ConfigError(path, "missing required key");
  }

  double real(const std::string& path, std::optional<double> def = std::nullopt) {
    auto v = raw(path);
    if (!v) {
      if (def) return *def;
      throw ConfigError(path, "missing required key");
    }
    return parse_real(path, *v);
  }

  std::optional<double> maybe_real(const std::string& path) {
    auto v = raw(path);
    if (!v) return std::nullopt;
    return parse_real(path, *v);
  }

  long long integer(const std::string& path, std::optional<long long> def, long long min_value) {
    auto v = raw(path);
    long long out = 0;
    if (!v) {
      if (!def) throw ConfigError(path, "missing required key");
      out = *def;
    } else {
      const char* b = v->data();
      const char* e = b + v->size();
      auto [p, ec] = std::from_chars(b, e, out);
      if (ec != std::errc() || p != e) throw ConfigError(path, "expected an integer, got '" + *v + "'");
    }
    if (out < min_value) throw ConfigError(path, "must be >= " + std::to_string(min_value));
    return out;
  }

  bool flag(const std::string& path, bool def) {
    auto v = raw(path);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(path, "expected true or false, got '" + *v + "'");
  }

  Vec reals(const std::string& path, std::optional<Vec> def = std::nullopt) {
    auto v = raw(path);
    if (!v) {
      if (def) return *def;
      throw ConfigError(path, "missing required key");
    }
    Vec out;
    for (const std::string& item : split(*v, ',')) out.push_back(parse_real(path, item));
    if (out.empty()) throw ConfigError(path, "empty list");
    return out;
  }

  /// Throws on any key present in the file but never read.
  void reject_unused() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) {
        if (!used_.count(section)) throw ConfigError(section, "unknown key outside any section");
        continue;
      }
      for (const auto& kv : body) {
        const std::string path = section + "." + kv.first;
        if (!used_.count(path)) throw ConfigError(path, "unknown key");
      }
    }
  }

 private:
  static double parse_real(const std::string& path, const std::string& s) {
    const std::string t = trim(s);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size()) throw ConfigError(path, "expected a number, got '" + t + "'");
    if (!std::isfinite(v)) throw ConfigError(path, "value must be finite");
    return v;
  }

  boost::property_tree::ptree tree_;
  std::set<std::string> used_;
};

inline GridParams read_grid(IniReader& r, GridParams def, bool with_radius = true) {
  GridParams g;
  g.n = static_cast<std::size_t>(r.integer("grid.n", static_cast<long long>(def.n), 1));
  if (g.n > 4) throw ConfigError("grid.n", "dimensions above 4 are not supported");
  g.nodes = static_cast<std::size_t>(r.integer("grid.nodes", static_cast<long long>(def.nodes), 5));
  if (g.nodes % 2 == 0) throw ConfigError("grid.nodes", "must be odd so that the origin is a node");
  if (with_radius) {
    g.radius = r.real("grid.radius", def.radius);
    if (!(g.radius > 0.0)) throw ConfigError("grid.radius", "must be positive");
  }
  return g;
}

inline Coupling read_coupling(IniReader& r, const std::string& path, Coupling def) {
  const std::string s = r.text(path, to_string(def));
  for (Coupling c : {Coupling::pure_x, Coupling::z_coupled, Coupling::p_coupled, Coupling::full})
    if (s == to_string(c)) return c;
  throw ConfigError(path, "unknown coupling '" + s + "' (pure-x, z-coupled, p-coupled, full)");
}

inline PotentialParams read_potential(IniReader& r, PotentialParams def, bool with_coupling = true) {
  PotentialParams p;
  p.a = r.real("potential.a", def.a);
  p.b = r.real("potential.b", def.b);
  if (with_coupling) p.coupling = read_coupling(r, "potential.coupling", def.coupling);
  return p;
}

inline SolverConfig read_solver(IniReader& r) {
  SolverConfig c;
  c.tolerance = r.real("solver.tolerance", c.tolerance);
  c.max_iterations = static_cast<int>(r.integer("solver.max_iterations", c.max_iterations, 1));
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError("solver", e.what());
  }
  return c;
}

inline PhaseModel read_phase(IniReader& r, std::size_t n) {
  const std::string type = r.text("phase.type");
  if (type == "constant") {
    const double c = r.real("phase.value");
    if (std::abs(c) >= static_cast<double>(n) * kPi / 2.0)
      throw ConfigError("phase.value", "must lie in (-n pi/2, n pi/2)");
    return PhaseModel::constant(n, c);
  }
  if (type == "shrinker" || type == "expander") {
    const double s1 = r.real("phase.s1", 0.0), s2 = r.real("phase.s2");
    if ((type == "shrinker") != (s2 >= 0.0)) throw ConfigError("phase.s2", "sign does not match phase.type");
    return PhaseModel::shrinker_expander(n, s1, s2);
  }
  if (type == "translator") {
    const double g1 = r.real("phase.g1", 0.0);
    Vec g2 = r.reals("phase.g2", Vec(n, 0.0)), g3 = r.reals("phase.g3", Vec(n, 0.0));
    if (g2.size() != n) throw ConfigError("phase.g2", "needs grid.n entries");
    if (g3.size() != n) throw ConfigError("phase.g3", "needs grid.n entries");
    return PhaseModel::translator(g1, std::move(g2), std::move(g3));
  }
  if (type == "rotator") return PhaseModel::rotator(n, r.real("phase.r1", 0.0), r.real("phase.r2"));
  throw ConfigError("phase.type", "unknown phase '" + type + "' (constant, shrinker, expander, translator, rotator)");
}

/// odd_power:q:m, x_power:q:m, log_type
inline SingularFamily parse_family(const std::string& path, const std::string& s) {
  const std::vector<std::string> parts = split(s, ':');
  auto num = [&](std::size_t i, int def) {
    if (parts.size() <= i) return def;
    int v = 0;
    const std::string& t = parts[i];
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) throw ConfigError(path, "bad family parameter '" + t + "'");
    return v;
  };
  if (parts.empty()) throw ConfigError(path, "empty family");
  SingularFamily f;
  if (parts[0] == "odd_power" && parts.size() <= 3) f = OddPower{num(1, 4), num(2, 0)};
  else if (parts[0] == "x_power" && parts.size() <= 3) f = XPower{num(1, 5), num(2, 0)};
  else if (parts[0] == "log_type" && parts.size() == 1) f = LogType{};
  else throw ConfigError(path, "unknown family '" + s + "' (odd_power:q:m, x_power:q:m, log_type)");
  try {
    (void)build(f);
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  return f;
}

inline ExperimentParams read_params(IniReader& r, ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::solve: {
      SolveParams p;
      p.grid = read_grid(r, p.grid);
      const std::string source = r.text("problem.source", std::string("manufactured"));
      if (source == "manufactured") {
        p.potential = read_potential(r, p.potential);
      } else if (source == "phase") {
        p.potential = read_potential(r, p.potential, false);
        p.phase = read_phase(r, p.grid.n);
      } else {
        throw ConfigError("problem.source", "expected manufactured or phase");
      }
      p.solver = read_solver(r);
      p.write_field = r.flag("output.field", false);
      return p;
    }
    case ExperimentKind::flow: {
      FlowParams p;
      p.grid = read_grid(r, p.grid);
      p.a = r.real("flow.a", p.a);
      p.b = r.real("flow.b", p.b);
      p.dt = r.maybe_real("flow.dt");
      if (p.dt && !(*p.dt > 0.0)) throw ConfigError("flow.dt", "must be positive");
      p.dt_fraction = r.real("flow.dt_fraction", p.dt_fraction);
      if (!(p.dt_fraction > 0.0 && p.dt_fraction <= 1.0)) throw ConfigError("flow.dt_fraction", "must lie in (0,1]");
      p.steps = static_cast<int>(r.integer("flow.steps", p.steps, 1));
      p.record_every = static_cast<int>(r.integer("flow.record_every", p.record_every, 1));
      const std::string bnd = r.text("flow.boundary", std::string("exact"));
      if (bnd != "exact" && bnd != "frozen") throw ConfigError("flow.boundary", "expected exact or frozen");
      p.exact_boundary = bnd == "exact";
      if (p.exact_boundary && p.b != 0.0)
        throw ConfigError("flow.boundary", "exact drift is only known for quadratic data (flow.b = 0)");
      p.tolerance_factor = r.real("flow.tolerance_factor", p.tolerance_factor);
      return p;
    }
    case ExperimentKind::hessian_scaling: {
      HessianScalingParams p;
      p.grid = read_grid(r, p.grid, false);
      p.radii = r.reals("sweep.radii", p.radii);
      for (double R : p.radii)
        if (!(R > 0.0)) throw ConfigError("sweep.radii", "radii must be positive");
      p.scales = r.reals("sweep.scales", p.scales);
      for (double s : p.scales)
        if (!(s > 0.0)) throw ConfigError("sweep.scales", "scales must be positive");
      p.potential = read_potential(r, p.potential);
      p.proxy_c = r.maybe_real("sweep.proxy_c");
      if (p.proxy_c && !(*p.proxy_c > 0.0)) throw ConfigError("sweep.proxy_c", "must be positive");
      p.solver = read_solver(r);
      return p;
    }
    case ExperimentKind::gradient_scaling: {
      GradientScalingParams p;
      p.grid = read_grid(r, p.grid);
      p.tilts = r.reals("sweep.tilts", p.tilts);
      p.a = r.real("potential.a", p.a);
      p.b = r.real("potential.b", p.b);
      p.solver = read_solver(r);
      return p;
    }
    case ExperimentKind::jacobi_report: {
      JacobiParams p;
      p.grid = read_grid(r, p.grid);
      p.potential = read_potential(r, p.potential);
      const std::string src = r.text("jacobi.source", std::string("solve"));
      if (src != "solve" && src != "exact") throw ConfigError("jacobi.source", "expected solve or exact");
      p.solve = src == "solve";
      p.solver = read_solver(r);
      return p;
    }
    case ExperimentKind::counterexample_gallery: {
      GalleryParams p;
      if (auto fams = r.raw("gallery.families")) {
        p.families.clear();
        for (const std::string& f : split(*fams, ',')) p.families.push_back(parse_family("gallery.families", f));
        if (p.families.empty()) throw ConfigError("gallery.families", "empty list");
      }
      p.points = static_cast<std::size_t>(r.integer("gallery.points", static_cast<long long>(p.points), 2));
      p.lo = r.real("gallery.lo", p.lo);
      p.hi = r.real("gallery.hi", p.hi);
      if (!(p.lo > 0.0 && p.lo < p.hi)) throw ConfigError("gallery.lo", "need 0 < lo < hi");
      p.tolerance = r.real("gallery.tolerance", p.tolerance);
      p.touch = r.flag("gallery.touch", p.touch);
      return p;
    }
    case ExperimentKind::concavity_sweep: {
      ConcavitySweepParams p;
      p.n = static_cast<std::size_t>(r.integer("concavity.n", static_cast<long long>(p.n), 3));
      p.K = r.real("concavity.K", p.K);
      if (!(p.K > 0.0)) throw ConfigError("concavity.K", "must be positive");
      p.A = r.reals("concavity.A", p.A);
      p.samples = static_cast<std::size_t>(r.integer("concavity.samples", static_cast<long long>(p.samples), 1));
      return p;
    }
    case ExperimentKind::rotation_check: {
      RotationCheckParams p;
      p.grid = read_grid(r, p.grid);
      p.a = r.real("potential.a", p.a);
      p.b = r.real("potential.b", p.b);
      p.gamma = r.real("rotation.gamma", p.gamma);
      p.round_trip = r.flag("rotation.round_trip", p.round_trip);
      p.residual_factor = r.real("rotation.residual_factor", p.residual_factor);
      p.spread_factor = r.real("rotation.spread_factor", p.spread_factor);
      return p;
    }
  }
  throw ConfigError("experiment.kind", "unhandled kind");
}

}  // namespace detail

/// Parses INI text. `origin` names the source in error messages.
inline ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>") {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()), e.message());
  }
  detail::IniReader r(tree);
  ExperimentConfig c;
  const std::string kind = r.text("experiment.kind");
  const auto k = parse_kind(kind);
  if (!k) throw ConfigError("experiment.kind", "unknown experiment kind '" + kind + "'");
  c.kind = *k;
  c.seed = static_cast<std::uint64_t>(r.integer("experiment.seed", 1, 0));
  c.out = r.text("experiment.out", c.out);
  c.params = detail::read_params(r, c.kind);
  r.reject_unused();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Tables and reports

/// CSV table whose first column is always `status`; "ok" marks a good row.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  Table(std::string table_name, std::vector<std::string> value_columns) : name(std::move(table_name)) {
    columns.push_back("status");
    for (auto& c : value_columns) columns.push_back(std::move(c));
  }

  void add(std::string status, std::vector<std::string> cells) {
    if (cells.size() + 1 != columns.size())
      throw InvalidInput("table " + name + ": row has " + std::to_string(cells.size() + 1) + " cells, expected " +
                         std::to_string(columns.size()));
    for (char& ch : status)
      if (ch == '\n' || ch == '\r') ch = ' ';
    cells.insert(cells.begin(), std::move(status));
    rows.push_back(std::move(cells));
  }

  std::size_t failed() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.front() != "ok"; }));
  }

  /// Index of a column by name; throws if absent.
  std::size_t column(const std::string& c) const {
    auto it = std::find(columns.begin(), columns.end(), c);
    if (it == columns.end()) throw InvalidInput("table " + name + ": no column " + c);
    return static_cast<std::size_t>(it - columns.begin());
  }
};

/// Cell helpers. Non-finite numbers become empty cells.
inline std::string num(double v) { return std::isfinite(v) ? format_number(v) : std::string(); }
inline std::string num(std::optional<double> v) { return v ? num(*v) : std::string(); }
inline std::string count(std::size_t v) { return std::to_string(v); }
inline std::string flag(bool v) { return v ? "1" : "0"; }
inline std::vector<std::string> blanks(std::size_t k) { return std::vector<std::string>(k); }

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::solve;
  std::vector<Table> tables;
  std::vector<std::string> summary;
  std::vector<std::pair<std::string, ScalarField>> fields;

  std::size_t failed_rows() const {
    std::size_t f = 0;
    for (const Table& t : tables) f += t.failed();
    return f;
  }
  bool all_ok() const { return failed_rows() == 0; }

  const Table& table(const std::string& name) const {
    for (const Table& t : tables)
      if (t.name == name) return t;
    throw InvalidInput("report has no table " + name);
  }
};

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string table_to_csv(const Table& t) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_escape(cells[i]);
    os << '\n';
  };
  line(t.columns);
  for (const auto& r : t.rows) line(r);
  return os.str();
}

/// Writes <dir>/<table>.csv for every table, <dir>/<field>.csv for every
/// field and <dir>/summary.txt.
inline void emit_csv(const ExperimentReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create output directory: " + ec.message());
  auto write = [](const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(p.string(), "cannot open for writing");
    out << body;
    if (!out) throw IoError(p.string(), "write failed");
  };
  for (const Table& t : report.tables) write(fs::path(dir) / (t.name + ".csv"), table_to_csv(t));
  for (const auto& [name, f] : report.fields) write(fs::path(dir) / (name + ".csv"), field_to_csv(f));
  std::string s;
  for (const std::string& l : report.summary) s += l + '\n';
  write(fs::path(dir) / "summary.txt", s);
}

// ---------------------------------------------------------------------------
// Runners

namespace detail {

inline std::string error_status(const std::exception& e) { return std::string("error: ") + e.what(); }

inline ClosedFormPotential potential_of(std::size_t n, double a, double b, double scale = 1.0) {
  return ClosedFormPotential::quartic(n, scale * a, scale * b);
}

/// base + t x_1
inline ClosedFormPotential tilted(ClosedFormPotential base, double t) {
  ClosedFormPotential p = base;
  p.name = base.name + "-tilted";
  p.value = [v = base.value, t](std::span<const double> x) { return v(x) + t * x[0]; };
  p.gradient = [g = base.gradient, t](std::span<const double> x) {
    Vec d = g(x);
    d[0] += t;
    return d;
  };
  return p;
}

inline std::string solve_status(const SolveReport& r) { return r.converged ? "ok" : "not-converged: " + r.message; }

inline ExperimentReport run_solve(const SolveParams& p) {
  ExperimentReport rep;
  Table t("solve", {"n", "nodes", "h", "phase", "iterations", "residual", "error_vs_exact", "gradient_sup",
                    "oscillation", "hessian_origin", "gradient_origin", "min_margin", "max_margin",
                    "subcritical_nodes"});
  Table hist("history", {"iteration", "residual"});
  const Grid g = p.grid.grid();
  const ClosedFormPotential us = potential_of(p.grid.n, p.potential.a, p.potential.b);
  std::string phase_name = p.phase ? p.phase->name() : std::string("manufactured-") + to_string(p.potential.coupling);
  std::vector<std::string> head{count(p.grid.n), count(p.grid.nodes), num(g.spacing()), phase_name};
  try {
    DirichletProblem prob;
    if (p.phase) {
      prob.grid = g;
      prob.phase = *p.phase;
      prob.boundary = ScalarField::sample(g, [&](const Vec& x) { return us.value(x); });
    } else {
      prob = manufactured_problem(us, p.potential.coupling, g);
    }
    const SolveResult res = newton_solve(prob, p.solver);
    const SolveReport& r = res.report;
    std::vector<std::string> row = head;
    for (const std::string& c :
         {count(static_cast<std::size_t>(r.iterations)), num(r.residual), num(r.error_vs_exact), num(r.gradient_sup),
          num(r.oscillation), num(r.hessian_at_origin), num(r.gradient_at_origin), num(r.min_margin),
          num(r.max_margin), count(r.subcritical_nodes)})
      row.push_back(c);
    t.add(solve_status(r), row);
    for (std::size_t k = 0; k < r.history.size(); ++k) hist.add("ok", {count(k), num(r.history[k])});
    if (p.write_field) rep.fields.emplace_back("solution", res.u);
    rep.summary.push_back("converged=" + flag(r.converged) + " iterations=" + std::to_string(r.iterations) +
                          " residual=" + num(r.residual) + " error_vs_exact=" + num(r.error_vs_exact));
  } catch (const std::exception& e) {
    std::vector<std::string> row = head;
    for (const std::string& c : blanks(10)) row.push_back(c);
    t.add(error_status(e), row);
    rep.summary.push_back(std::string("converged=0 error=") + e.what());
  }
  rep.tables.push_back(std::move(t));
  rep.tables.push_back(std::move(hist));
  return rep;
}

inline ExperimentReport run_flow(const FlowParams& p) {
  ExperimentReport rep;
  Table t("flow", {"t", "u_origin", "exact_origin", "sup_error", "bound", "oscillation"});
  const Grid g = p.grid.grid();
  const std::size_t n = p.grid.n;
  const ClosedFormPotential u0 = potential_of(n, p.a, p.b);
  const double speed = static_cast<double>(n) * std::atan(p.a);
  auto exact = [&](std::span<const double> x, double time) { return u0.value(x) + speed * time; };
  try {
    const double dt = p.dt.value_or(p.dt_fraction * flow_stability_bound(g));
    FlowOptions opt{dt, p.steps, p.record_every};
    const ScalarField init = ScalarField::sample(g, [&](const Vec& x) { return u0.value(x); });
    BoundaryCallback bc;
    if (p.exact_boundary) bc = exact;
    else bc = [&](std::span<const double> x, double) { return u0.value(x); };
    const FlowTrajectory tr = flow_evolve(init, opt, bc);
    const std::size_t origin = g.nearest(Vec(n, 0.0));
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      const double time = tr.times[k];
      const ScalarField& u = tr.states[k];
      std::optional<double> err, ex, bound;
      if (p.exact_boundary) {
        double e = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) e = std::max(e, std::abs(u.values[i] - exact(g.point(i), time)));
        err = e;
        ex = exact(g.point(origin), time);
        bound = p.tolerance_factor * dt * time;
        worst = std::max(worst, time > 0.0 ? e / time : 0.0);
      }
      const bool ok = !err || *err <= *bound + 1e-12;
      t.add(ok ? "ok" : "drift-error-above-bound",
            {num(time), num(u.values[origin]), num(ex), num(err), num(bound), num(u.oscillation())});
    }
    rep.summary.push_back("dt=" + num(dt) + " steps=" + std::to_string(p.steps) +
                          (p.exact_boundary ? " error_per_unit_time=" + num(worst) : std::string()));
  } catch (const std::exception& e) {
    t.add(error_status(e), blanks(6));
    rep.summary.push_back(std::string("error=") + e.what());
  }
  rep.tables.push_back(std::move(t));
  return rep;
}

/// Least-squares line y = alpha + beta s.
inline std::pair<double, double> affine_fit(const Vec& s, const Vec& y) {
  const double m = static_cast<double>(s.size());
  const double ms = std::accumulate(s.begin(), s.end(), 0.0) / m;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sxx += (s[i] - ms) * (s[i] - ms);
    sxy += (s[i] - ms) * (y[i] - my);
  }
  const double beta = sxx > 0.0 ? sxy / sxx : 0.0;
  return {my - beta * ms, beta};
}

inline ExperimentReport run_hessian_scaling(const HessianScalingParams& p) {
  ExperimentReport rep;
  const std::size_t n = p.grid.n;
  const double power = 2.0 * static_cast<double>(n) + 3.0;
  Table t("hessian_scaling", {"R", "scale", "gradient_sup", "oscillation", "hessian_origin", "log_hessian_origin",
                              "shape", "proxy", "iterations", "error_vs_exact"});
  struct Raw {
    double R, scale;
    std::optional<SolveReport> rep;
    std::string error;
  };
  std::vector<Raw> raw;
  for (double R : p.radii)
    for (double s : p.scales) {
      Raw r{R, s, std::nullopt, {}};
      try {
        const Grid g = Grid::box(n, R, p.grid.nodes);
        r.rep = newton_solve(manufactured_problem(potential_of(n, p.potential.a, p.potential.b, s),
                                                  p.potential.coupling, g),
                             p.solver)
                    .report;
      } catch (const std::exception& e) {
        r.error = error_status(e);
      }
      raw.push_back(std::move(r));
    }

  Vec shapes, logs;
  for (const Raw& r : raw)
    if (r.rep && r.rep->converged && r.rep->hessian_at_origin > 0.0) {
      shapes.push_back(std::pow(r.rep->gradient_sup / r.R, power));
      logs.push_back(std::log(r.rep->hessian_at_origin));
    }
  const double max_shape = shapes.empty() ? 0.0 : *std::max_element(shapes.begin(), shapes.end());
  const double c = p.proxy_c.value_or(max_shape > 0.0 ? 1.0 / max_shape : 1.0);

  for (const Raw& r : raw) {
    if (!r.rep) {
      std::vector<std::string> row{num(r.R), num(r.scale)};
      for (const std::string& b : blanks(8)) row.push_back(b);
      t.add(r.error, row);
      continue;
    }
    const SolveReport& s = *r.rep;
    const double shape = std::pow(s.gradient_sup / r.R, power);
    const double proxy = std::exp(c * shape);
    std::string status = solve_status(s);
    if (status == "ok" && !(s.hessian_at_origin > 0.0)) status = "degenerate-hessian";
    if (status == "ok" && !std::isfinite(proxy)) status = "proxy-overflow";
    t.add(status, {num(r.R), num(r.scale), num(s.gradient_sup), num(s.oscillation), num(s.hessian_at_origin),
                   num(s.hessian_at_origin > 0.0 ? std::log(s.hessian_at_origin) : NAN), num(shape), num(proxy),
                   count(static_cast<std::size_t>(s.iterations)), num(s.error_vs_exact)});
  }

  // Affine upper envelope log|D^2u(0)| <= alpha + beta s with beta >= 0: the
  // least-squares slope (clamped at 0), intercept lifted over every point.
  Table fit("hessian_fit", {"rows", "slope", "intercept", "lifted_intercept", "proxy_c", "consistent"});
  if (shapes.size() >= 2) {
    auto [alpha, beta] = affine_fit(shapes, logs);
    const double b = std::max(beta, 0.0);
    double lift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < shapes.size(); ++i) lift = std::max(lift, logs[i] - b * shapes[i]);
    const bool consistent = t.failed() == 0 && beta >= 0.0 && std::isfinite(lift) && std::isfinite(beta);
    fit.add(consistent ? "ok" : "inconsistent",
            {count(shapes.size()), num(beta), num(alpha), num(lift), num(c), flag(consistent)});
    rep.summary.push_back("rows=" + count(raw.size()) + " slope=" + num(beta) + " consistent=" + flag(consistent));
  } else {
    fit.add("too-few-rows", {count(shapes.size()), "", "", "", num(c), flag(false)});
    rep.summary.push_back("rows=" + count(raw.size()) + " consistent=0");
  }
  rep.tables.push_back(std::move(t));
  rep.tables.push_back(std::move(fit));
  return rep;
}

inline ExperimentReport run_gradient_scaling(const GradientScalingParams& p) {
  ExperimentReport rep;
  const std::size_t n = p.grid.n;
  const Grid g = p.grid.grid();
  Table t("gradient_scaling", {"tilt", "oscillation", "gradient_origin", "weight", "ratio", "fitted_C"});
  struct Row {
    double tilt;
    std::optional<SolveReport> rep;
    std::string error;
  };
  std::vector<Row> rows;
  for (double tilt : p.tilts) {
    Row r{tilt, std::nullopt, {}};
    try {
      r.rep = newton_solve(manufactured_problem(tilted(potential_of(n, p.a, p.b), tilt), Coupling::z_coupled, g),
                           p.solver)
                  .report;
    } catch (const std::exception& e) {
      r.error = error_status(e);
    }
    rows.push_back(std::move(r));
  }
  // |Du(0)| ~ C w with w = 1 + osc^2: least squares through the origin.
  double sgw = 0.0, sww = 0.0, sup_c = 0.0;
  for (const Row& r : rows)
    if (r.rep && r.rep->converged) {
      const double w = 1.0 + r.rep->oscillation * r.rep->oscillation;
      sgw += r.rep->gradient_at_origin * w;
      sww += w * w;
      sup_c = std::max(sup_c, r.rep->gradient_at_origin / w);
    }
  const double fitted = sww > 0.0 ? sgw / sww : NAN;
  for (const Row& r : rows) {
    if (!r.rep) {
      std::vector<std::string> row{num(r.tilt)};
      for (const std::string& b : blanks(5)) row.push_back(b);
      t.add(r.error, row);
      continue;
    }
    const double w = 1.0 + r.rep->oscillation * r.rep->oscillation;
    t.add(solve_status(*r.rep), {num(r.tilt), num(r.rep->oscillation), num(r.rep->gradient_at_origin), num(w),
                                 num(r.rep->gradient_at_origin / w), num(fitted)});
  }
  Table fit("gradient_fit", {"rows", "fitted_C", "sup_C", "positive_finite"});
  const bool good = std::isfinite(fitted) && fitted > 0.0 && std::isfinite(sup_c);
  fit.add(good && t.failed() == 0 ? "ok" : "fit-failed",
          {count(rows.size()), num(fitted), num(sup_c), flag(good)});
  rep.summary.push_back("rows=" + count(rows.size()) + " fitted_C=" + num(fitted) + " sup_C=" + num(sup_c));
  rep.tables.push_back(std::move(t));
  rep.tables.push_back(std::move(fit));
  return rep;
}

inline ExperimentReport run_jacobi(const JacobiParams& p) {
  ExperimentReport rep;
  const std::size_t n = p.grid.n;
  std::vector<std::string> node_cols{"node"};
  for (std::size_t a = 0; a < n; ++a) node_cols.push_back("x" + std::to_string(a + 1));
  for (const char* c : {"laplace_b", "grad_b_norm2", "weight"}) node_cols.push_back(c);
  Table nodes("jacobi_nodes", node_cols);
  Table sum("jacobi", {"used", "skipped", "not_applicable", "C_emp", "c_emp"});
  try {
    const Grid g = p.grid.grid();
    const ClosedFormPotential us = potential_of(n, p.potential.a, p.potential.b);
    const DirichletProblem prob = manufactured_problem(us, p.potential.coupling, g);
    ScalarField u = prob.boundary;
    std::string status = "ok";
    if (p.solve) {
      const SolveResult res = newton_solve(prob, p.solver);
      u = res.u;
      status = solve_status(res.report);
    }
    const JacobiReport jr = jacobi_diagnostic(u, prob.phase);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (jr.status[i] == JacobiNode::outside) continue;
      std::vector<std::string> row{to_string(jr.status[i])};
      const Vec x = g.point(i);
      for (double xi : x) row.push_back(num(xi));
      const bool used = jr.status[i] == JacobiNode::used;
      row.push_back(used ? num(jr.laplace_b.values[i]) : "");
      row.push_back(used ? num(jr.grad_b_norm2.values[i]) : "");
      row.push_back(used ? num(jr.weight.values[i]) : "");
      nodes.add("ok", row);
    }
    sum.add(status, {count(jr.used), count(jr.skipped), count(jr.not_applicable), num(jr.C_emp), num(jr.c_emp)});
    rep.summary.push_back("used=" + count(jr.used) + " C_emp=" + num(jr.C_emp) + " c_emp=" + num(jr.c_emp));
  } catch (const std::exception& e) {
    sum.add(error_status(e), blanks(5));
    rep.summary.push_back(std::string("error=") + e.what());
  }
  rep.tables.push_back(std::move(nodes));
  rep.tables.push_back(std::move(sum));
  return rep;
}

inline ExperimentReport run_gallery(const GalleryParams& p) {
  ExperimentReport rep;
  Table t("gallery", {"family", "x", "u", "du", "ddu", "residual"});
  Table touch("touch", {"family", "x0", "touches_above", "touches_below", "tested", "violations", "admissible"});
  for (const SingularFamily& f : p.families) {
    const std::string name = family_name(f);
    std::size_t bad = 0;
    double worst = 0.0;
    try {
      const ClosedFormSolution s = build(f);
      const double lo = std::max(p.lo, s.domain_min), hi = std::min(p.hi, s.domain_max);
      for (double side : {-1.0, 1.0})
        for (double r : log_spaced(lo, hi, p.points)) {
          const double x = side * r;
          double res = NAN;
          std::string status = "ok";
          try {
            res = s.base_residual(x);
            worst = std::max(worst, std::abs(res));
            if (!(std::abs(res) <= p.tolerance)) status = "residual-above-tolerance";
          } catch (const std::exception& e) {
            status = error_status(e);
          }
          if (status != "ok") ++bad;
          if (status.rfind("error", 0) == 0)
            t.add(status, {name, num(x), "", "", "", ""});
          else
            t.add(status, {name, num(x), num(s.u(x)), num(s.du(x)), num(s.ddu(x)), num(res)});
        }
      if (p.touch) {
        const TouchReport tr = viscosity_touch_test(s, 0.0);
        touch.add(tr.admissible_touch() ? "admissible-touch-found" : "ok",
                  {name, num(0.0), flag(tr.touches_above), flag(tr.touches_below), count(tr.tested),
                   count(tr.violations), flag(tr.admissible_touch())});
      }
    } catch (const std::exception& e) {
      t.add(error_status(e), {name, "", "", "", "", ""});
      ++bad;
    }
    rep.summary.push_back(name + " points=" + count(2 * p.points) + " failed=" + count(bad) +
                          " max_residual=" + num(worst));
  }
  rep.tables.push_back(std::move(t));
  rep.tables.push_back(std::move(touch));
  return rep;
}

inline ExperimentReport run_concavity(const ConcavitySweepParams& p, std::uint64_t seed) {
  ExperimentReport rep;
  Table t("concavity", {"n", "K", "A", "min_det", "pd_fraction", "above_threshold"});
  Table th("concavity_threshold", {"n", "K", "C", "raw_threshold", "printed_threshold", "A"});
  try {
    const ConcavifyParams cp = concavify_constant(p.n, p.K);
    th.add("ok", {count(p.n), num(p.K), num(cp.C), num(cp.raw_threshold), num(cp.printed_threshold), num(cp.A)});
    for (const ConcavitySweepRow& r : concavity_sweep(p.n, p.K, p.A, p.samples, seed))
      t.add("ok", {count(p.n), num(p.K), num(r.A), num(r.min_det), num(r.pd_fraction), flag(r.A >= cp.A)});
    rep.summary.push_back("n=" + count(p.n) + " K=" + num(p.K) + " A_threshold=" + num(cp.A));
  } catch (const std::exception& e) {
    th.add(error_status(e), {count(p.n), num(p.K), "", "", "", ""});
    rep.summary.push_back(std::string("error=") + e.what());
  }
  rep.tables.push_back(std::move(t));
  rep.tables.push_back(std::move(th));
  return rep;
}

/// Spread (max - min) of f - exact over finite nodes: error modulo a constant.
inline double spread_against(const ScalarField& f, const std::function<double(const Vec&)>& exact,
                             std::size_t* used = nullptr) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t k = 0;
  for (std::size_t i = 0; i < f.grid.size(); ++i) {
    if (!std::isfinite(f.values[i])) continue;
    const double d = f.values[i] - exact(f.grid.point(i));
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    ++k;
  }
  if (used) *used = k;
  return k ? hi - lo : NAN;
}

inline ExperimentReport run_rotation(const RotationCheckParams& p, std::uint64_t seed) {
  ExperimentReport rep;
  Table t("rotation", {"n", "nodes", "gamma", "h", "target_spacing", "checked_nodes", "max_residual",
                       "mean_residual", "residual_over_h", "roundtrip_nodes", "roundtrip_spread",
                       "spread_over_h", "min_lipschitz_ratio"});
  try {
    const Grid g = p.grid.grid();
    const double h = g.spacing();
    const ClosedFormPotential us = potential_of(p.grid.n, p.a, p.b);
    const ScalarField u = ScalarField::sample(g, [&](const Vec& x) { return us.value(x); });
    const PhaseShiftReport ps = rotation_phase_shift_check(u, p.gamma);
    const RotationResult up = rotate_potential(u, p.gamma, seed);
    std::optional<double> spread;
    std::size_t rt_nodes = 0;
    if (p.round_trip) {
      const RotationResult down = rotate_potential(up.ubar, -p.gamma, seed);
      spread = spread_against(down.ubar, [&](const Vec& x) { return us.value(x); }, &rt_nodes);
    }
    const bool ok_res = ps.max_residual <= p.residual_factor * h;
    const bool ok_rt = !spread || *spread <= p.spread_factor * h;
    std::string status = "ok";
    if (!ok_res) status = "phase-residual-above-bound";
    else if (!ok_rt) status = "roundtrip-spread-above-bound";
    t.add(status, {count(p.grid.n), count(p.grid.nodes), num(p.gamma), num(h), num(ps.target_spacing),
                   count(ps.nodes), num(ps.max_residual), num(ps.mean_residual), num(ps.max_residual / h),
                   count(rt_nodes), num(spread), num(spread ? *spread / h : NAN), num(up.min_ratio)});
    rep.summary.push_back("gamma=" + num(p.gamma) + " max_residual=" + num(ps.max_residual) +
                          " roundtrip_spread=" + num(spread));
  } catch (const std::exception& e) {
    std::vector<std::string> row{count(p.grid.n), count(p.grid.nodes), num(p.gamma)};
    for (const std::string& b : blanks(10)) row.push_back(b);
    t.add(error_status(e), row);
    rep.summary.push_back(std::string("error=") + e.what());
  }
  rep.tables.push_back(std::move(t));
  return rep;
}

}  // namespace detail

/// Runs one experiment. Downstream failures become failed rows; only
/// programming errors escape.
inline ExperimentReport run(const ExperimentConfig& config) {
  ExperimentReport rep = std::visit(
      [&](const auto& p) -> ExperimentReport {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, SolveParams>) return detail::run_solve(p);
        else if constexpr (std::is_same_v<T, FlowParams>) return detail::run_flow(p);
        else if constexpr (std::is_same_v<T, HessianScalingParams>) return detail::run_hessian_scaling(p);
        else if constexpr (std::is_same_v<T, GradientScalingParams>) return detail::run_gradient_scaling(p);
        else if constexpr (std::is_same_v<T, JacobiParams>) return detail::run_jacobi(p);
        else if constexpr (std::is_same_v<T, GalleryParams>) return detail::run_gallery(p);
        else if constexpr (std::is_same_v<T, ConcavitySweepParams>) return detail::run_concavity(p, config.seed);
        else return detail::run_rotation(p, config.seed);
      },
      config.params);
  rep.kind = config.kind;
  const std::size_t rows = std::accumulate(rep.tables.begin(), rep.tables.end(), std::size_t{0},
                                           [](std::size_t a, const Table& t) { return a + t.rows.size(); });
  rep.summary.insert(rep.summary.begin(), std::string("kind=") + to_string(config.kind) + " seed=" +
                                              std::to_string(config.seed) + " rows=" + count(rows) +
                                              " failed=" + count(rep.failed_rows()));
  return rep;
}

}  // namespace lmc
