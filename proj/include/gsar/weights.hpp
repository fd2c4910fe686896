#pragma once

// Spatial weight matrices: construction, row-standardization and file I/O.
//
// Files use 1-based unit ids; everything in memory is 0-based. Weights are
// held in a row-major sparse matrix (ordered by row, then column) that is
// shared immutably between copies.

#include <gsar/error.hpp>

#include <Eigen/Sparse>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gsar {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class WeightsFormat { EdgeList, Gal };

inline WeightsFormat parse_weights_format(std::string_view name) {
  if (name == "edge-list" || name == "edgelist") return WeightsFormat::EdgeList;
  if (name == "gal") return WeightsFormat::Gal;
  throw ValidationError("unknown weights format '" + std::string(name) + "'");
}

class SpatialWeights;
struct StandardizeResult;
inline StandardizeResult row_standardize_report(const SpatialWeights& w);

class SpatialWeights {
 public:
  struct Entry {
    Eigen::Index row;
    Eigen::Index col;
    double weight;
  };

  /// Validates and assembles the entries. Throws on diagonal, negative,
  /// nonfinite, duplicate or out-of-range entries.
  static SpatialWeights from_entries(Eigen::Index n, const std::vector<Entry>& entries) {
    if (n < 2) throw ValidationError("spatial weights need n >= 2, got " + std::to_string(n));
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(entries.size());
    std::map<std::pair<Eigen::Index, Eigen::Index>, bool> seen;
    for (const auto& e : entries) {
      if (e.row < 0 || e.row >= n || e.col < 0 || e.col >= n)
        throw BoundsError("weight entry (" + std::to_string(e.row + 1) + ", " +
                          std::to_string(e.col + 1) + ") outside [1, " + std::to_string(n) + "]");
      if (e.row == e.col)
        throw ValidationError("diagonal weight at unit " + std::to_string(e.row + 1));
      if (!std::isfinite(e.weight) || e.weight < 0.0)
        throw ValidationError("negative or nonfinite weight at (" + std::to_string(e.row + 1) +
                              ", " + std::to_string(e.col + 1) + ")");
      if (!seen.emplace(std::make_pair(e.row, e.col), true).second)
        throw ValidationError("duplicate weight entry (" + std::to_string(e.row + 1) + ", " +
                              std::to_string(e.col + 1) + ")");
      triplets.emplace_back(e.row, e.col, e.weight);
    }
    auto m = std::make_shared<SparseRowMatrix>(n, n);
    m->setFromTriplets(triplets.begin(), triplets.end());
    m->makeCompressed();
    return SpatialWeights(std::move(m), false);
  }

  Eigen::Index n() const noexcept { return matrix_->rows(); }
  bool row_standardized() const noexcept { return row_standardized_; }
  const SparseRowMatrix& matrix() const noexcept { return *matrix_; }
  Eigen::Index nonzeros() const noexcept { return matrix_->nonZeros(); }

  double operator()(Eigen::Index i, Eigen::Index j) const { return matrix_->coeff(i, j); }

  std::vector<Entry> entries() const {
    std::vector<Entry> out;
    out.reserve(static_cast<std::size_t>(matrix_->nonZeros()));
    for (Eigen::Index i = 0; i < matrix_->outerSize(); ++i)
      for (SparseRowMatrix::InnerIterator it(*matrix_, i); it; ++it)
        out.push_back({it.row(), it.col(), it.value()});
    return out;
  }

  Eigen::VectorXd row_sums() const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n());
    for (Eigen::Index i = 0; i < matrix_->outerSize(); ++i)
      for (SparseRowMatrix::InnerIterator it(*matrix_, i); it; ++it) s[i] += it.value();
    return s;
  }

  /// Number of units with no (positively weighted) neighbor.
  Eigen::Index empty_rows() const {
    const Eigen::VectorXd s = row_sums();
    return static_cast<Eigen::Index>((s.array() <= 0.0).count());
  }

  /// Dense copy; intended for small oracles and tests.
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(*matrix_); }

  bool operator==(const SpatialWeights& other) const {
    if (n() != other.n() || row_standardized_ != other.row_standardized_) return false;
    const auto a = entries();
    const auto b = other.entries();
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k].row != b[k].row || a[k].col != b[k].col || a[k].weight != b[k].weight) return false;
    return true;
  }

 private:
  SpatialWeights(std::shared_ptr<const SparseRowMatrix> m, bool standardized)
      : matrix_(std::move(m)), row_standardized_(standardized) {}

  std::shared_ptr<const SparseRowMatrix> matrix_;
  bool row_standardized_ = false;

  friend StandardizeResult row_standardize_report(const SpatialWeights& w);
};

struct StandardizeResult {
  SpatialWeights weights;
  Eigen::Index empty_rows = 0;
};

/// Divides each nonempty row by its sum. Empty rows are left at zero and
/// counted in `empty_rows`.
inline StandardizeResult row_standardize_report(const SpatialWeights& w) {
  const Eigen::VectorXd sums = w.row_sums();
  auto m = std::make_shared<SparseRowMatrix>(w.matrix());
  Eigen::Index empty = 0;
  for (Eigen::Index i = 0; i < m->outerSize(); ++i) {
    if (sums[i] <= 0.0) {
      ++empty;
      continue;
    }
    for (SparseRowMatrix::InnerIterator it(*m, i); it; ++it) it.valueRef() /= sums[i];
  }
  return {SpatialWeights(std::move(m), true), empty};
}

inline SpatialWeights row_standardize(const SpatialWeights& w) {
  return row_standardize_report(w).weights;
}

/// Binary rook adjacency on a rows x cols lattice, unit (r, c) -> r*cols + c.
inline SpatialWeights rook_adjacency(Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1 || rows * cols < 2)
    throw ValidationError("rook grid needs rows*cols >= 2");
  std::vector<SpatialWeights::Entry> entries;
  entries.reserve(static_cast<std::size_t>(4 * rows * cols));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index i = r * cols + c;
      if (r > 0) entries.push_back({i, i - cols, 1.0});
      if (c > 0) entries.push_back({i, i - 1, 1.0});
      if (c + 1 < cols) entries.push_back({i, i + 1, 1.0});
      if (r + 1 < rows) entries.push_back({i, i + cols, 1.0});
    }
  }
  return SpatialWeights::from_entries(rows * cols, entries);
}

/// Row-standardized rook contiguity on a regular grid.
inline SpatialWeights build_rook_grid(Eigen::Index rows, Eigen::Index cols) {
  return row_standardize(rook_adjacency(rows, cols));
}

namespace detail {

inline std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  std::string s = hash == std::string::npos ? line : line.substr(0, hash);
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline long long parse_index(const std::string& token, std::size_t line) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(token, &used);
  } catch (const std::exception&) {
    throw ParseError("expected an integer, got '" + token + "'", line);
  }
  if (used != token.size()) throw ParseError("expected an integer, got '" + token + "'", line);
  return v;
}

inline double parse_real(const std::string& token, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(token, &used);
  } catch (const std::exception&) {
    throw ParseError("expected a number, got '" + token + "'", line);
  }
  if (used != token.size()) throw ParseError("expected a number, got '" + token + "'", line);
  return v;
}

inline std::vector<std::string> tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(std::move(t));
  return out;
}

inline Eigen::Index checked_unit(long long id, Eigen::Index n, std::size_t line) {
  if (id < 1 || id > n)
    throw BoundsError("line " + std::to_string(line) + ": unit id " + std::to_string(id) +
                      " outside [1, " + std::to_string(n) + "]");
  return static_cast<Eigen::Index>(id - 1);
}

inline SpatialWeights read_edge_list(std::istream& in) {
  std::string raw;
  std::size_t line = 0;
  Eigen::Index n = -1;
  std::vector<SpatialWeights::Entry> entries;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = strip_comment(raw);
    if (s.empty()) continue;
    if (n < 0) {
      if (s.rfind("n=", 0) != 0 && s.rfind("n =", 0) != 0)
        throw ParseError("expected header 'n=<int>'", line);
      const auto eq = s.find('=');
      std::string rest = strip_comment(s.substr(eq + 1));
      const long long v = parse_index(rest, line);
      if (v < 2) throw ValidationError("line " + std::to_string(line) + ": n must be >= 2");
      n = static_cast<Eigen::Index>(v);
      continue;
    }
    const auto t = tokens(s);
    if (t.size() != 3) throw ParseError("expected '<i> <j> <w>'", line);
    const Eigen::Index i = checked_unit(parse_index(t[0], line), n, line);
    const Eigen::Index j = checked_unit(parse_index(t[1], line), n, line);
    const double w = parse_real(t[2], line);
    if (i == j)
      throw ValidationError("line " + std::to_string(line) + ": diagonal weight not allowed");
    if (!std::isfinite(w) || w < 0.0)
      throw ValidationError("line " + std::to_string(line) + ": negative weight");
    entries.push_back({i, j, w});
  }
  if (n < 0) throw ParseError("missing header 'n=<int>'", line + 1);
  return SpatialWeights::from_entries(n, entries);
}

inline SpatialWeights read_gal(std::istream& in) {
  std::string raw;
  std::size_t line = 0;
  auto next_line = [&](std::string& out) {
    while (std::getline(in, raw)) {
      ++line;
      out = strip_comment(raw);
      if (!out.empty()) return true;
    }
    return false;
  };
  std::string s;
  if (!next_line(s)) throw ParseError("empty GAL file", line + 1);
  auto header = tokens(s);
  // Plain "<n>" or the GeoDa form "0 <n> <layer> <key>".
  long long n_raw = 0;
  if (header.size() == 1) {
    n_raw = parse_index(header[0], line);
  } else if (header.size() >= 2 && header[0] == "0") {
    n_raw = parse_index(header[1], line);
  } else {
    throw ParseError("expected GAL header '<n>'", line);
  }
  if (n_raw < 2) throw ValidationError("line " + std::to_string(line) + ": n must be >= 2");
  const auto n = static_cast<Eigen::Index>(n_raw);
  std::vector<SpatialWeights::Entry> entries;
  while (next_line(s)) {
    const auto head = tokens(s);
    if (head.size() != 2) throw ParseError("expected '<id> <k>'", line);
    const std::size_t head_line = line;
    const Eigen::Index id = checked_unit(parse_index(head[0], line), n, line);
    const long long k = parse_index(head[1], line);
    if (k < 0) throw ParseError("negative neighbor count", line);
    std::vector<std::string> nb;
    if (k > 0) {
      if (!next_line(s)) throw ParseError("missing neighbor list", line + 1);
      nb = tokens(s);
      if (static_cast<long long>(nb.size()) != k)
        throw ParseError("expected " + std::to_string(k) + " neighbor ids", line);
    }
    for (const auto& t : nb) {
      const Eigen::Index j = checked_unit(parse_index(t, line), n, line);
      if (j == id)
        throw ValidationError("line " + std::to_string(head_line) + ": unit lists itself");
      entries.push_back({id, j, 1.0});
    }
  }
  return SpatialWeights::from_entries(n, entries);
}

}  // namespace detail

inline SpatialWeights read_weights(std::istream& in, WeightsFormat format) {
  return format == WeightsFormat::Gal ? detail::read_gal(in) : detail::read_edge_list(in);
}

/// Loads weights as listed; row-standardization is left to the caller.
inline SpatialWeights load_weights(const std::string& path, WeightsFormat format) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open weights file '" + path + "'");
  return read_weights(in, format);
}

/// Edge-list weights are written with 17 significant digits. GAL is binary:
/// every stored entry becomes a neighbor link.
inline void write_weights(std::ostream& out, const SpatialWeights& w, WeightsFormat format) {
  const auto entries = w.entries();
  if (format == WeightsFormat::EdgeList) {
    out << "n=" << w.n() << '\n';
    char buf[64];
    for (const auto& e : entries) {
      std::snprintf(buf, sizeof buf, "%.17g", e.weight);
      out << e.row + 1 << ' ' << e.col + 1 << ' ' << buf << '\n';
    }
    return;
  }
  std::vector<std::vector<Eigen::Index>> nbrs(static_cast<std::size_t>(w.n()));
  for (const auto& e : entries) nbrs[static_cast<std::size_t>(e.row)].push_back(e.col);
  out << w.n() << '\n';
  for (Eigen::Index i = 0; i < w.n(); ++i) {
    const auto& list = nbrs[static_cast<std::size_t>(i)];
    out << i + 1 << ' ' << list.size() << '\n';
    if (list.empty()) continue;
    for (std::size_t k = 0; k < list.size(); ++k) out << (k ? " " : "") << list[k] + 1;
    out << '\n';
  }
}

inline void save_weights(const std::string& path, const SpatialWeights& w, WeightsFormat format) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write weights file '" + path + "'");
  write_weights(out, w, format);
}

}  // namespace gsar
