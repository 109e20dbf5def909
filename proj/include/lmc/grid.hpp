#pragma once

// Uniform box grids, node-valued fields and their text/binary dumps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lmc/errors.hpp"
#include "lmc/linalg.hpp"

namespace lmc {

/// Uniform grid on the box prod_a [lo_a, lo_a + (count_a - 1) h]. Nodes are
/// indexed row-major (last axis fastest). A node's depth is its index
/// distance to the nearest face; depth 0 is the boundary.
class Grid {
 public:
  Grid() = default;
  Grid(Vec lo, std::vector<std::size_t> counts, double h)
      : lo_(std::move(lo)), counts_(std::move(counts)), h_(h) {
    if (lo_.empty() || lo_.size() != counts_.size())
      throw InvalidInput("Grid: lower corner and axis counts must have the same nonzero length");
    if (!(h_ > 0.0) || !std::isfinite(h_)) throw InvalidInput("Grid: spacing must be positive");
    for (std::size_t c : counts_)
      if (c < 1) throw InvalidInput("Grid: every axis needs at least one node");
    strides_.assign(dim(), 1);
    for (std::size_t a = dim() - 1; a-- > 0;) strides_[a] = strides_[a + 1] * counts_[a + 1];
    size_ = strides_[0] * counts_[0];
  }

  /// [-radius, radius]^n with `nodes` points per axis.
  static Grid box(std::size_t n, double radius, std::size_t nodes) {
    if (nodes < 2) throw InvalidInput("Grid::box: need at least two nodes per axis");
    return Grid(Vec(n, -radius), std::vector<std::size_t>(n, nodes),
                2.0 * radius / static_cast<double>(nodes - 1));
  }

  std::size_t dim() const noexcept { return lo_.size(); }
  std::size_t size() const noexcept { return size_; }
  double spacing() const noexcept { return h_; }
  const Vec& lower() const noexcept { return lo_; }
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }
  std::size_t stride(std::size_t axis) const { return strides_[axis]; }

  std::vector<std::size_t> multi_index(std::size_t idx) const {
    std::vector<std::size_t> m(dim());
    for (std::size_t a = 0; a < dim(); ++a) {
      m[a] = idx / strides_[a];
      idx %= strides_[a];
    }
    return m;
  }
  std::size_t index(std::span<const std::size_t> m) const {
    std::size_t idx = 0;
    for (std::size_t a = 0; a < dim(); ++a) idx += m[a] * strides_[a];
    return idx;
  }
  std::size_t axis_index(std::size_t idx, std::size_t axis) const {
    return (idx / strides_[axis]) % counts_[axis];
  }

  Vec point(std::size_t idx) const {
    Vec x(dim());
    for (std::size_t a = 0; a < dim(); ++a)
      x[a] = lo_[a] + h_ * static_cast<double>(axis_index(idx, a));
    return x;
  }

  std::size_t depth(std::size_t idx) const {
    std::size_t d = std::numeric_limits<std::size_t>::max();
    for (std::size_t a = 0; a < dim(); ++a) {
      const std::size_t i = axis_index(idx, a);
      d = std::min({d, i, counts_[a] - 1 - i});
    }
    return d;
  }
  bool is_boundary(std::size_t idx) const { return depth(idx) == 0; }

  /// Node closest to x (clamped to the box).
  std::size_t nearest(std::span<const double> x) const {
    std::size_t idx = 0;
    for (std::size_t a = 0; a < dim(); ++a) {
      const double t = std::round((x[a] - lo_[a]) / h_);
      const auto i = static_cast<std::size_t>(
          std::clamp(t, 0.0, static_cast<double>(counts_[a] - 1)));
      idx += i * strides_[a];
    }
    return idx;
  }

  /// Same axes, spacing halved (node count 2N - 1).
  Grid refined() const {
    std::vector<std::size_t> c(counts_);
    for (auto& v : c) v = 2 * v - 1;
    return Grid(lo_, c, h_ / 2.0);
  }

  bool same_as(const Grid& o) const {
    return lo_ == o.lo_ && counts_ == o.counts_ && h_ == o.h_;
  }

 private:
  Vec lo_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
  double h_ = 1.0;
};

/// One value per grid node. `depth` is the shallowest node depth at which the
/// values are meaningful; shallower nodes hold NaN.
struct ScalarField {
  Grid grid;
  std::vector<double> values;
  std::size_t depth = 0;

  ScalarField() = default;
  explicit ScalarField(Grid g, double fill = 0.0, std::size_t valid_depth = 0)
      : grid(std::move(g)), values(grid.size(), fill), depth(valid_depth) {}

  template <class F>
  static ScalarField sample(const Grid& g, F&& f) {
    ScalarField out(g);
    for (std::size_t i = 0; i < g.size(); ++i) out.values[i] = f(g.point(i));
    return out;
  }

  bool valid(std::size_t idx) const { return grid.depth(idx) >= depth; }
  double operator[](std::size_t idx) const { return values[idx]; }
  double& operator[](std::size_t idx) { return values[idx]; }

  double max_abs() const {
    double m = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (valid(i)) m = std::max(m, std::abs(values[i]));
    return m;
  }
  double oscillation() const {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (valid(i)) {
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
      }
    return hi - lo;
  }
};

/// Shortest decimal rendering that round-trips: 17 significant digits.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header `index,x1,...,xn,value`, row-major node order, valid nodes only.
inline std::string field_to_csv(const ScalarField& f) {
  std::ostringstream os;
  os << "index";
  for (std::size_t a = 0; a < f.grid.dim(); ++a) os << ",x" << (a + 1);
  os << ",value\n";
  for (std::size_t i = 0; i < f.grid.size(); ++i) {
    if (!f.valid(i)) continue;
    os << i;
    for (double x : f.grid.point(i)) os << ',' << format_number(x);
    os << ',' << format_number(f.values[i]) << '\n';
  }
  return os.str();
}

inline void write_field_csv(const ScalarField& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << field_to_csv(f);
  if (!out) throw IoError(path, "write failed");
}

/// Binary dump: 16-byte header (uint32 dimension, uint32 reserved, uint64
/// total node count), then uint64 axis counts, float64 lower corner, float64
/// spacing, float64 values. Little-endian host order.
inline void write_field_binary(const ScalarField& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  const std::uint32_t dim = static_cast<std::uint32_t>(f.grid.dim());
  const std::uint32_t reserved = 0;
  const std::uint64_t total = f.grid.size();
  out.write(reinterpret_cast<const char*>(&dim), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  out.write(reinterpret_cast<const char*>(&total), 8);
  for (std::size_t c : f.grid.counts()) {
    const std::uint64_t c64 = c;
    out.write(reinterpret_cast<const char*>(&c64), 8);
  }
  out.write(reinterpret_cast<const char*>(f.grid.lower().data()),
            static_cast<std::streamsize>(8 * f.grid.dim()));
  const double h = f.grid.spacing();
  out.write(reinterpret_cast<const char*>(&h), 8);
  out.write(reinterpret_cast<const char*>(f.values.data()),
            static_cast<std::streamsize>(8 * f.values.size()));
  if (!out) throw IoError(path, "write failed");
}

inline ScalarField read_field_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::uint32_t dim = 0, reserved = 0;
  std::uint64_t total = 0;
  in.read(reinterpret_cast<char*>(&dim), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  in.read(reinterpret_cast<char*>(&total), 8);
  if (!in || dim == 0 || dim > 16) throw IoError(path, "bad header");
  std::vector<std::size_t> counts(dim);
  for (auto& c : counts) {
    std::uint64_t c64 = 0;
    in.read(reinterpret_cast<char*>(&c64), 8);
    c = static_cast<std::size_t>(c64);
  }
  Vec lo(dim);
  in.read(reinterpret_cast<char*>(lo.data()), static_cast<std::streamsize>(8 * dim));
  double h = 0.0;
  in.read(reinterpret_cast<char*>(&h), 8);
  ScalarField f(Grid(lo, counts, h));
  if (f.grid.size() != total) throw IoError(path, "node count does not match axis counts");
  in.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(8 * total));
  if (!in) throw IoError(path, "truncated file");
  return f;
}

}  // namespace lmc
