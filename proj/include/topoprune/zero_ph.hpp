#pragma once

// Zero-dimensional persistence of Euclidean point clouds. Every point is
// born at 0; each merge of two components kills one at half the length of
// the edge that joins them, so the finite deaths are the halved edge
// weights of a Euclidean minimum spanning tree.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "topoprune/distance_matrix.hpp"
#include "topoprune/error.hpp"
#include "topoprune/ph_core.hpp"
#include "topoprune/union_find.hpp"

namespace topoprune {

// N points in R^d, row-major.
class PointCloud {
 public:
  PointCloud(std::size_t n, std::size_t d, std::vector<double> coords)
      : n_(n), d_(d), coords_(std::move(coords)) {
    require(n_ >= 1, "point cloud: needs at least one point");
    require(d_ >= 1, "point cloud: dimension must be >= 1");
    require(coords_.size() == n_ * d_, "point cloud: coordinate count mismatch");
    for (const double c : coords_) {
      require(std::isfinite(c), "point cloud: non-finite coordinate");
    }
  }

  // One-dimensional cloud from scalars.
  static PointCloud from_values(std::span<const double> values) {
    return PointCloud(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t dimension() const noexcept { return d_; }
  std::span<const double> point(std::size_t i) const noexcept {
    return {coords_.data() + i * d_, d_};
  }
  const std::vector<double>& coords() const noexcept { return coords_; }

  double distance(std::size_t i, std::size_t j) const noexcept {
    double sum = 0.0;
    for (std::size_t k = 0; k < d_; ++k) {
      const double diff = coords_[i * d_ + k] - coords_[j * d_ + k];
      sum += diff * diff;
    }
    return std::sqrt(sum);
  }

  DistanceMatrix distances() const {
    std::vector<double> values(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i + 1; j < n_; ++j) {
        values[i * n_ + j] = values[j * n_ + i] = distance(i, j);
      }
    }
    return DistanceMatrix(n_, std::move(values));
  }

 private:
  std::size_t n_;
  std::size_t d_;
  std::vector<double> coords_;
};

struct ZeroDimResult {
  std::vector<double> deaths;  // ascending, N-1 entries
  double r_f = 0.0;            // radius at which everything is one component
};

namespace detail {

struct Edge {
  double length;
  std::size_t a;
  std::size_t b;
};

inline ZeroDimResult kruskal(std::size_t n, std::vector<Edge> edges) {
  std::sort(edges.begin(), edges.end(),
            [](const Edge& x, const Edge& y) { return x.length < y.length; });
  ZeroDimResult result;
  result.deaths.reserve(n - 1);
  UnionFind components(n);
  for (const auto& e : edges) {
    if (components.unite(e.a, e.b)) {
      result.deaths.push_back(e.length / 2.0);
      if (result.deaths.size() == n - 1) break;
    }
  }
  result.r_f = result.deaths.empty() ? 0.0 : result.deaths.back();
  return result;
}

}  // namespace detail

// Scalar specialisation: the MST of points on a line links sorted neighbours.
inline ZeroDimResult zero_persistence_1d(std::vector<double> values) {
  require(!values.empty(), "zero_persistence: empty point cloud");
  for (const double v : values) require(std::isfinite(v), "zero_persistence: non-finite value");
  std::sort(values.begin(), values.end());
  ZeroDimResult result;
  result.deaths.reserve(values.size() - 1);
  for (std::size_t i = 1; i < values.size(); ++i) {
    result.deaths.push_back((values[i] - values[i - 1]) / 2.0);
  }
  std::sort(result.deaths.begin(), result.deaths.end());
  result.r_f = result.deaths.empty() ? 0.0 : result.deaths.back();
  return result;
}

inline ZeroDimResult zero_persistence(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  if (cloud.dimension() == 1) return zero_persistence_1d(cloud.coords());
  std::vector<detail::Edge> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({cloud.distance(i, j), i, j});
  }
  return detail::kruskal(n, std::move(edges));
}

inline ZeroDimResult zero_persistence_from_distances(const DistanceMatrix& distances) {
  const std::size_t n = distances.size();
  require(n >= 1, "zero_persistence: empty distance matrix");
  std::vector<detail::Edge> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({distances(i, j), i, j});
  }
  return detail::kruskal(n, std::move(edges));
}

// Birth-death pairs of the result: (0, death) per merge plus (0, inf).
inline std::vector<std::pair<double, double>> birth_death_points(const ZeroDimResult& result) {
  std::vector<std::pair<double, double>> out;
  out.reserve(result.deaths.size() + 1);
  for (const double d : result.deaths) out.emplace_back(0.0, d);
  out.emplace_back(0.0, kInfinity);
  return out;
}

// Same pairs as a dimension-0 persistence diagram, coincident deaths merged.
inline PersistenceDiagram to_diagram(const ZeroDimResult& result) {
  std::vector<PersistencePair> raw;
  for (const auto& [birth, death] : birth_death_points(result)) raw.push_back({0, birth, death, 1});
  PersistenceDiagram diagram;
  diagram.pairs = detail::merge_pairs(std::move(raw));
  return diagram;
}

}  // namespace topoprune
