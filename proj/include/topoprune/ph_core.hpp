#pragma once

// Exact persistent homology over Z/2 for small filtered complexes.
//
// Filtration values follow the radius convention: a Vietoris-Rips simplex
// enters at half its diameter. Pairs are computed by the standard
// left-to-right column reduction of the full boundary matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iterator>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "topoprune/distance_matrix.hpp"
#include "topoprune/error.hpp"

namespace topoprune {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

class Simplex {
 public:
  Simplex() = default;
  explicit Simplex(std::vector<std::uint32_t> vertices)
      : vertices_(std::move(vertices)) {
    require(!vertices_.empty(), "simplex: empty vertex list");
    for (std::size_t i = 1; i < vertices_.size(); ++i) {
      require(vertices_[i - 1] < vertices_[i],
              "simplex: vertices must be strictly ascending");
    }
  }
  Simplex(std::initializer_list<std::uint32_t> vertices)
      : Simplex(std::vector<std::uint32_t>(vertices)) {}

  int dimension() const noexcept { return static_cast<int>(vertices_.size()) - 1; }
  const std::vector<std::uint32_t>& vertices() const noexcept { return vertices_; }

  // Codimension-one faces, each obtained by dropping one vertex.
  std::vector<Simplex> faces() const {
    std::vector<Simplex> out;
    if (vertices_.size() < 2) return out;
    out.reserve(vertices_.size());
    for (std::size_t skip = 0; skip < vertices_.size(); ++skip) {
      Simplex face;
      face.vertices_.reserve(vertices_.size() - 1);
      for (std::size_t i = 0; i < vertices_.size(); ++i) {
        if (i != skip) face.vertices_.push_back(vertices_[i]);
      }
      out.push_back(std::move(face));
    }
    return out;
  }

  friend auto operator<=>(const Simplex&, const Simplex&) = default;

 private:
  std::vector<std::uint32_t> vertices_;
};

struct FiltrationEntry {
  Simplex simplex;
  double value = 0.0;
};

// Ordered simplices with non-decreasing values, closed under faces.
class Filtration {
 public:
  Filtration() = default;
  explicit Filtration(std::vector<FiltrationEntry> entries)
      : entries_(std::move(entries)) {
    validate();
  }

  const std::vector<FiltrationEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  int max_dimension() const noexcept {
    int d = -1;
    for (const auto& e : entries_) d = std::max(d, e.simplex.dimension());
    return d;
  }

  // Position of each simplex in filtration order.
  std::map<Simplex, std::size_t> index() const {
    std::map<Simplex, std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) out.emplace(entries_[i].simplex, i);
    return out;
  }

 private:
  void validate() const {
    std::map<Simplex, std::size_t> seen;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      require(std::isfinite(e.value) && e.value >= 0.0,
              "filtration: value must be finite and >= 0");
      if (i > 0) {
        require(entries_[i - 1].value <= e.value,
                "filtration: values must be non-decreasing");
      }
      for (const auto& face : e.simplex.faces()) {
        require(seen.count(face) != 0,
                "filtration: a face appears after its coface");
      }
      require(seen.emplace(e.simplex, i).second, "filtration: duplicate simplex");
    }
  }

  std::vector<FiltrationEntry> entries_;
};

// Vietoris-Rips filtration: every vertex subset of diameter at most 2r
// enters at r. Sorted by (value, dimension, lexicographic vertices).
inline Filtration build_vr_filtration(const DistanceMatrix& distances,
                                      int max_dim,
                                      double max_radius = kInfinity) {
  const std::size_t n = distances.size();
  require(max_dim >= 0, "build_vr_filtration: max_dim must be >= 0");
  require(n == 0 || static_cast<std::size_t>(max_dim) <= n - 1,
          "build_vr_filtration: max_dim exceeds N-1");
  require(!(max_radius < 0.0), "build_vr_filtration: max_radius must be >= 0");

  std::vector<FiltrationEntry> entries;
  std::vector<std::uint32_t> current;

  // Depth-first over ascending vertex lists; diameter only grows, so a
  // rejected simplex prunes all of its extensions.
  auto extend = [&](auto&& self, double diameter) -> void {
    if (static_cast<int>(current.size()) - 1 == max_dim) return;
    for (std::uint32_t v = current.back() + 1; v < n; ++v) {
      double d = diameter;
      for (const auto u : current) d = std::max(d, distances(u, v));
      if (d / 2.0 > max_radius) continue;
      current.push_back(v);
      entries.push_back({Simplex(current), d / 2.0});
      self(self, d);
      current.pop_back();
    }
  };

  for (std::uint32_t v = 0; v < n; ++v) {
    current = {v};
    entries.push_back({Simplex(current), 0.0});
    extend(extend, 0.0);
  }

  std::sort(entries.begin(), entries.end(),
            [](const FiltrationEntry& a, const FiltrationEntry& b) {
              return std::forward_as_tuple(a.value, a.simplex.dimension(), a.simplex) <
                     std::forward_as_tuple(b.value, b.simplex.dimension(), b.simplex);
            });
  return Filtration(std::move(entries));
}

// Z/2 boundary matrix of one dimension. Rows are the (p-1)-simplices and
// columns the p-simplices, both in filtration order; each column holds the
// ascending row indices of its non-zero entries.
struct BoundaryMatrix {
  std::vector<Simplex> rows;
  std::vector<Simplex> columns;
  std::vector<std::vector<std::size_t>> entries;
};

inline BoundaryMatrix boundary_matrix(const Filtration& f, int p) {
  require(p >= 1 && p <= f.max_dimension(),
          "boundary_matrix: dimension " + std::to_string(p) + " out of range");
  BoundaryMatrix m;
  std::map<Simplex, std::size_t> row_index;
  for (const auto& e : f.entries()) {
    if (e.simplex.dimension() == p - 1) {
      row_index.emplace(e.simplex, m.rows.size());
      m.rows.push_back(e.simplex);
    } else if (e.simplex.dimension() == p) {
      m.columns.push_back(e.simplex);
    }
  }
  m.entries.reserve(m.columns.size());
  for (const auto& s : m.columns) {
    std::vector<std::size_t> column;
    for (const auto& face : s.faces()) column.push_back(row_index.at(face));
    std::sort(column.begin(), column.end());
    m.entries.push_back(std::move(column));
  }
  return m;
}

struct PersistencePair {
  int dimension = 0;
  double birth = 0.0;
  double death = kInfinity;
  int multiplicity = 1;

  bool is_infinite() const noexcept { return std::isinf(death); }
  bool zero_persistence() const noexcept { return death == birth; }

  friend bool operator==(const PersistencePair&, const PersistencePair&) = default;
};

struct PersistenceDiagram {
  // Sorted by (dimension, birth, death); coincident pairs merged.
  std::vector<PersistencePair> pairs;
  int max_dimension = 0;

  // Pairs shown in exports: zero-persistence pairs hidden.
  std::vector<PersistencePair> visible() const {
    std::vector<PersistencePair> out;
    for (const auto& p : pairs) {
      if (!p.zero_persistence()) out.push_back(p);
    }
    return out;
  }

  // Finite deaths of dimension p, expanded by multiplicity, ascending.
  std::vector<double> finite_deaths(int p) const {
    std::vector<double> out;
    for (const auto& pair : pairs) {
      if (pair.dimension != p || pair.is_infinite()) continue;
      out.insert(out.end(), static_cast<std::size_t>(pair.multiplicity), pair.death);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  int count(int p, bool infinite_only = false) const {
    int total = 0;
    for (const auto& pair : pairs) {
      if (pair.dimension == p && (!infinite_only || pair.is_infinite())) {
        total += pair.multiplicity;
      }
    }
    return total;
  }
};

namespace detail {

inline std::vector<PersistencePair> merge_pairs(std::vector<PersistencePair> raw) {
  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) {
    return std::tie(a.dimension, a.birth, a.death) < std::tie(b.dimension, b.birth, b.death);
  });
  std::vector<PersistencePair> merged;
  for (const auto& p : raw) {
    if (!merged.empty() && merged.back().dimension == p.dimension &&
        merged.back().birth == p.birth && merged.back().death == p.death) {
      merged.back().multiplicity += p.multiplicity;
    } else {
      merged.push_back(p);
    }
  }
  return merged;
}

}  // namespace detail

inline PersistenceDiagram compute_persistence(const Filtration& f) {
  const auto& entries = f.entries();
  const std::size_t n = entries.size();
  const auto index = f.index();

  std::vector<std::vector<std::size_t>> columns(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (const auto& face : entries[j].simplex.faces()) columns[j].push_back(index.at(face));
    std::sort(columns[j].begin(), columns[j].end());
  }

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> column_with_low(n, kNone);
  std::vector<bool> paired(n, false);
  std::vector<PersistencePair> raw;
  std::vector<std::size_t> scratch;

  for (std::size_t j = 0; j < n; ++j) {
    auto& col = columns[j];
    while (!col.empty() && column_with_low[col.back()] != kNone) {
      const auto& other = columns[column_with_low[col.back()]];
      scratch.clear();
      std::set_symmetric_difference(col.begin(), col.end(), other.begin(), other.end(),
                                    std::back_inserter(scratch));
      col.swap(scratch);
    }
    if (col.empty()) continue;
    const std::size_t low = col.back();
    column_with_low[low] = j;
    paired[low] = paired[j] = true;
    raw.push_back({entries[low].simplex.dimension(), entries[low].value, entries[j].value, 1});
  }

  // Unpaired simplices with zero columns create classes that never die.
  for (std::size_t j = 0; j < n; ++j) {
    if (!paired[j] && columns[j].empty()) {
      raw.push_back({entries[j].simplex.dimension(), entries[j].value, kInfinity, 1});
    }
  }

  PersistenceDiagram diagram;
  diagram.max_dimension = std::max(0, f.max_dimension());
  diagram.pairs = detail::merge_pairs(std::move(raw));
  return diagram;
}

// beta_p at a threshold: classes born at or before it and still alive after.
inline std::vector<int> betti_numbers(const PersistenceDiagram& diagram, double at_value) {
  require(at_value >= 0.0, "betti_numbers: threshold must be >= 0");
  std::vector<int> betti(static_cast<std::size_t>(diagram.max_dimension) + 1, 0);
  for (const auto& p : diagram.pairs) {
    if (p.birth <= at_value && p.death > at_value) {
      betti[static_cast<std::size_t>(p.dimension)] += p.multiplicity;
    }
  }
  return betti;
}

inline std::vector<int> betti_numbers(const Filtration& f, double at_value) {
  return betti_numbers(compute_persistence(f), at_value);
}

// Rank of H_p(K_a) -> H_p(K_b) for thresholds a <= b.
inline int persistent_betti(const PersistenceDiagram& diagram, int p, double a, double b) {
  int total = 0;
  for (const auto& pair : diagram.pairs) {
    if (pair.dimension == p && pair.birth <= a && pair.death > b) total += pair.multiplicity;
  }
  return total;
}

// Number of p-classes born exactly at `birth` and dying exactly at `death`.
inline int multiplicity(const PersistenceDiagram& diagram, int p, double birth, double death) {
  for (const auto& pair : diagram.pairs) {
    if (pair.dimension == p && pair.birth == birth && pair.death == death) {
      return pair.multiplicity;
    }
  }
  return 0;
}

inline std::string format_value(double v) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// CSV export. `scale` = 2 reports distances instead of radii.
inline void write_diagram_csv(std::ostream& out, const PersistenceDiagram& diagram,
                              double scale = 1.0, bool include_zero_persistence = false) {
  out << "dimension,birth,death,multiplicity\n";
  for (const auto& p : diagram.pairs) {
    if (p.zero_persistence() && !include_zero_persistence) continue;
    out << p.dimension << ',' << format_value(p.birth * scale) << ','
        << format_value(p.death * scale) << ',' << p.multiplicity << '\n';
  }
}

}  // namespace topoprune
