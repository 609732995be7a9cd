#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "topoprune/ph_core.hpp"

namespace {

using topoprune::betti_numbers;
using topoprune::boundary_matrix;
using topoprune::build_vr_filtration;
using topoprune::compute_persistence;
using topoprune::DistanceMatrix;
using topoprune::Error;
using topoprune::Filtration;
using topoprune::FiltrationEntry;
using topoprune::kInfinity;
using topoprune::Simplex;

DistanceMatrix from_rows(const oracle::Matrix& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return DistanceMatrix(rows.size(), flat);
}

DistanceMatrix random_cloud_distances(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> pts(n, std::vector<double>(d));
  for (auto& p : pts) {
    for (auto& x : p) x = u(rng);
  }
  return from_rows(oracle::euclidean_distances(pts));
}

const double kHalfSqrt2 = std::sqrt(2.0) / 2.0;

DistanceMatrix unit_square() {
  const double s = std::sqrt(2.0);
  // 0-1-2-3 around the square; 0-2 and 1-3 are diagonals.
  return from_rows({{0, 1, s, 1}, {1, 0, 1, s}, {s, 1, 0, 1}, {1, s, 1, 0}});
}

Filtration hollow_triangle() {
  return Filtration({{{0}, 0}, {{1}, 0}, {{2}, 0}, {{0, 1}, 0.5}, {{0, 2}, 0.5}, {{1, 2}, 0.5}});
}

Filtration tetrahedron_boundary() {
  std::vector<FiltrationEntry> e;
  for (std::uint32_t v = 0; v < 4; ++v) e.push_back({Simplex{v}, 0.0});
  for (std::uint32_t a = 0; a < 4; ++a) {
    for (std::uint32_t b = a + 1; b < 4; ++b) e.push_back({Simplex{a, b}, 1.0});
  }
  for (std::uint32_t a = 0; a < 4; ++a) {
    for (std::uint32_t b = a + 1; b < 4; ++b) {
      for (std::uint32_t c = b + 1; c < 4; ++c) e.push_back({Simplex{a, b, c}, 2.0});
    }
  }
  return Filtration(e);
}

std::map<std::vector<std::uint32_t>, double> as_map(const Filtration& f) {
  std::map<std::vector<std::uint32_t>, double> out;
  for (const auto& e : f.entries()) out[e.simplex.vertices()] = e.value;
  return out;
}

TEST(VietorisRips, TwoPointsEdgeAtHalfDistance) {
  const auto f = build_vr_filtration(from_rows({{0, 2}, {2, 0}}), 1);
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f.entries()[0].value, 0.0);
  EXPECT_EQ(f.entries()[1].value, 0.0);
  EXPECT_EQ(f.entries()[2].simplex, (Simplex{0, 1}));
  EXPECT_DOUBLE_EQ(f.entries()[2].value, 1.0);
}

TEST(VietorisRips, SinglePoint) {
  const auto f = build_vr_filtration(from_rows({{0}}), 0);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f.entries()[0].simplex, (Simplex{0}));
  EXPECT_EQ(f.entries()[0].value, 0.0);
}

TEST(VietorisRips, UnitSquareMatchesSubsetEnumeration) {
  const auto dm = unit_square();
  const auto f = build_vr_filtration(dm, 2);

  // Oracle: every vertex subset of size <= 3, value = diameter / 2.
  std::map<std::vector<std::uint32_t>, double> expected;
  for (unsigned mask = 1; mask < 16; ++mask) {
    std::vector<std::uint32_t> verts;
    for (std::uint32_t v = 0; v < 4; ++v) {
      if (mask & (1u << v)) verts.push_back(v);
    }
    if (verts.size() > 3) continue;
    double diam = 0.0;
    for (auto a : verts) {
      for (auto b : verts) diam = std::max(diam, dm(a, b));
    }
    expected[verts] = diam / 2.0;
  }
  EXPECT_EQ(as_map(f), expected);

  int edges_half = 0, edges_diag = 0, triangles = 0;
  for (const auto& e : f.entries()) {
    if (e.simplex.dimension() == 1 && e.value == 0.5) ++edges_half;
    if (e.simplex.dimension() == 1 && std::abs(e.value - kHalfSqrt2) < 1e-15) ++edges_diag;
    if (e.simplex.dimension() == 2) {
      ++triangles;
      EXPECT_NEAR(e.value, kHalfSqrt2, 1e-15);
    }
  }
  EXPECT_EQ(edges_half, 4);
  EXPECT_EQ(edges_diag, 2);
  EXPECT_EQ(triangles, 4);
}

TEST(VietorisRips, OrderIsValueThenDimensionThenVertices) {
  std::mt19937_64 rng(7);
  const auto f = build_vr_filtration(random_cloud_distances(rng, 7, 2), 3);
  for (std::size_t i = 1; i < f.size(); ++i) {
    const auto& a = f.entries()[i - 1];
    const auto& b = f.entries()[i];
    const auto ka = std::make_tuple(a.value, a.simplex.dimension(), a.simplex.vertices());
    const auto kb = std::make_tuple(b.value, b.simplex.dimension(), b.simplex.vertices());
    EXPECT_LT(ka, kb);
  }
}

TEST(VietorisRips, MaxRadiusCutsOffLargeSimplices) {
  const auto f = build_vr_filtration(unit_square(), 2, 0.6);
  for (const auto& e : f.entries()) EXPECT_LE(e.value, 0.6);
  EXPECT_EQ(f.size(), 8u);  // 4 vertices + 4 sides
}

TEST(VietorisRips, RejectsInvalidMatrices) {
  EXPECT_THROW(from_rows({{0, 1}, {2, 0}}), Error);
  EXPECT_THROW(from_rows({{0, -1}, {-1, 0}}), Error);
  EXPECT_THROW(from_rows({{1, 1}, {1, 0}}), Error);
  EXPECT_THROW(build_vr_filtration(from_rows({{0, 1}, {1, 0}}), 2), Error);
}

TEST(FiltrationValidation, RejectsBadOrders) {
  EXPECT_THROW(Filtration({{{0, 1}, 0.0}, {{0}, 0.0}, {{1}, 0.0}}), Error);
  EXPECT_THROW(Filtration({{{0}, 1.0}, {{1}, 0.5}}), Error);
  EXPECT_THROW(Filtration({{{0}, 0.0}, {{0}, 0.0}}), Error);
  EXPECT_THROW(Simplex({2, 1}), Error);
  EXPECT_THROW(Simplex(std::vector<std::uint32_t>{}), Error);
}

TEST(Boundary, SingleEdge) {
  const Filtration f({{{0}, 0}, {{1}, 0}, {{0, 1}, 1}});
  const auto m = boundary_matrix(f, 1);
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.entries[0], (std::vector<std::size_t>{0, 1}));
}

TEST(Boundary, TriangleHasThreeEdgeFaces) {
  const auto f = build_vr_filtration(from_rows({{0, 1, 1}, {1, 0, 1}, {1, 1, 0}}), 2);
  const auto m = boundary_matrix(f, 2);
  ASSERT_EQ(m.entries.size(), 1u);
  EXPECT_EQ(m.entries[0].size(), 3u);
  for (const auto r : m.entries[0]) EXPECT_EQ(m.rows[r].dimension(), 1);
}

TEST(Boundary, DimensionOutOfRange) {
  EXPECT_THROW(boundary_matrix(hollow_triangle(), 0), Error);
  EXPECT_THROW(boundary_matrix(hollow_triangle(), 2), Error);
}

// Property: the composite of consecutive boundary maps vanishes mod 2.
TEST(Boundary, BoundaryOfBoundaryIsZeroOnRandomComplexes) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng() % 6;  // N <= 8
    const auto f = build_vr_filtration(random_cloud_distances(rng, n, 1 + rng() % 3),
                                       static_cast<int>(std::min<std::size_t>(3, n - 1)));
    for (int p = 2; p <= f.max_dimension(); ++p) {
      const auto outer = boundary_matrix(f, p);
      const auto inner = boundary_matrix(f, p - 1);
      for (const auto& col : outer.entries) {
        std::map<std::size_t, int> count;
        for (const auto face : col) {
          for (const auto r : inner.entries[face]) ++count[r];
        }
        for (const auto& [row, c] : count) EXPECT_EQ(c % 2, 0) << "trial " << trial << " p " << p;
      }
    }
  }
}

TEST(Persistence, TwoPoints) {
  const auto d = compute_persistence(build_vr_filtration(from_rows({{0, 2}, {2, 0}}), 1));
  ASSERT_EQ(d.pairs.size(), 2u);
  EXPECT_EQ(d.pairs[0], (topoprune::PersistencePair{0, 0.0, 1.0, 1}));
  EXPECT_EQ(d.pairs[1], (topoprune::PersistencePair{0, 0.0, kInfinity, 1}));
}

TEST(Persistence, HollowTriangle) {
  const auto d = compute_persistence(hollow_triangle());
  // Hand reduction: two edges kill two vertices, the third edge closes a cycle.
  ASSERT_EQ(d.pairs.size(), 3u);
  EXPECT_EQ(d.pairs[0], (topoprune::PersistencePair{0, 0.0, 0.5, 2}));
  EXPECT_EQ(d.pairs[1], (topoprune::PersistencePair{0, 0.0, kInfinity, 1}));
  EXPECT_EQ(d.pairs[2], (topoprune::PersistencePair{1, 0.5, kInfinity, 1}));
}

TEST(Persistence, TetrahedronBoundaryIsASphere) {
  const auto betti = betti_numbers(tetrahedron_boundary(), 2.0);
  EXPECT_EQ(betti, (std::vector<int>{1, 0, 1}));
}

TEST(Persistence, ZeroPersistencePairsAreKeptButHidden) {
  // Three mutually equidistant points with the filled triangle: the last edge
  // and the triangle enter together.
  const auto f = build_vr_filtration(from_rows({{0, 1, 1}, {1, 0, 1}, {1, 1, 0}}), 2);
  const auto d = compute_persistence(f);
  bool has_zero = false;
  for (const auto& p : d.pairs) has_zero |= p.zero_persistence();
  EXPECT_TRUE(has_zero);
  for (const auto& p : d.visible()) EXPECT_FALSE(p.zero_persistence());

  std::ostringstream hidden, shown;
  topoprune::write_diagram_csv(hidden, d);
  topoprune::write_diagram_csv(shown, d, 1.0, true);
  EXPECT_EQ(hidden.str(), "dimension,birth,death,multiplicity\n0,0,0.5,2\n0,0,inf,1\n");
  EXPECT_EQ(shown.str(), "dimension,birth,death,multiplicity\n0,0,0.5,2\n0,0,inf,1\n1,0.5,0.5,1\n");
}

TEST(Persistence, CsvDistanceScaleAndPrecision) {
  const auto d = compute_persistence(build_vr_filtration(unit_square(), 3));
  std::ostringstream out;
  topoprune::write_diagram_csv(out, d, 2.0);
  EXPECT_EQ(out.str(), "dimension,birth,death,multiplicity\n0,0,1,3\n0,0,inf,1\n1,1,1.41421356,1\n");
}

TEST(Betti, TrianglesHollowAndFilled) {
  EXPECT_EQ(betti_numbers(hollow_triangle(), 1.0), (std::vector<int>{1, 1}));
  const Filtration filled({{{0}, 0}, {{1}, 0}, {{2}, 0}, {{0, 1}, 0.5}, {{0, 2}, 0.5}, {{1, 2}, 0.5},
                           {{0, 1, 2}, 0.5}});
  EXPECT_EQ(betti_numbers(filled, 1.0), (std::vector<int>{1, 0, 0}));
}

TEST(Betti, UnitSquareCycleOpenUntilDiagonals) {
  const auto f = build_vr_filtration(unit_square(), 3);
  EXPECT_EQ(betti_numbers(f, 0.6), (std::vector<int>{1, 1, 0, 0}));
  EXPECT_EQ(betti_numbers(f, 0.8), (std::vector<int>{1, 0, 0, 0}));
  EXPECT_EQ(betti_numbers(f, 0.0), (std::vector<int>{4, 0, 0, 0}));
  // Stopping at triangles leaves the hollow tetrahedron: a void.
  EXPECT_EQ(betti_numbers(build_vr_filtration(unit_square(), 2), 0.8), (std::vector<int>{1, 0, 1}));
  EXPECT_THROW(betti_numbers(f, -1.0), Error);
}

// Property: alternating Betti sum equals the simplex-count Euler
// characteristic of every sublevel complex.
TEST(Properties, EulerCharacteristic) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng() % 7;
    const auto f = build_vr_filtration(random_cloud_distances(rng, n, 2),
                                       static_cast<int>(std::min<std::size_t>(3, n - 1)));
    const auto diagram = compute_persistence(f);
    std::set<double> values;
    for (const auto& e : f.entries()) values.insert(e.value);
    for (const double t : values) {
      int chi = 0;
      for (const auto& e : f.entries()) {
        if (e.value <= t) chi += e.simplex.dimension() % 2 == 0 ? 1 : -1;
      }
      const auto betti = betti_numbers(diagram, t);
      int alt = 0;
      for (std::size_t p = 0; p < betti.size(); ++p) alt += (p % 2 == 0 ? 1 : -1) * betti[p];
      EXPECT_EQ(alt, chi) << "trial " << trial << " t " << t;
    }
  }
}

TEST(Properties, EveryVertexBornOnce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng() % 9;
    const auto d = compute_persistence(build_vr_filtration(random_cloud_distances(rng, n, 3), n > 1 ? 1 : 0));
    EXPECT_EQ(d.count(0), static_cast<int>(n));
    EXPECT_EQ(d.count(0, /*infinite_only=*/true), 1);
  }
}

// Property: shuffling simplices that share a value, while keeping faces
// first, does not change the diagram.
TEST(Properties, InvariantUnderAdmissibleReordering) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + rng() % 5;
    // Integer distances produce many ties.
    oracle::Matrix m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) m[i][j] = m[j][i] = static_cast<double>(1 + rng() % 3);
    }
    const auto f = build_vr_filtration(from_rows(m), static_cast<int>(std::min<std::size_t>(2, n - 1)));
    auto entries = f.entries();
    std::vector<std::uint64_t> key(entries.size());
    for (auto& k : key) k = rng();
    std::vector<std::size_t> order(entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::make_tuple(entries[a].value, entries[a].simplex.dimension(), key[a]) <
             std::make_tuple(entries[b].value, entries[b].simplex.dimension(), key[b]);
    });
    std::vector<FiltrationEntry> shuffled;
    for (const auto i : order) shuffled.push_back(entries[i]);
    EXPECT_EQ(compute_persistence(Filtration(shuffled)).pairs, compute_persistence(f).pairs);
  }
}

// Persistent Betti numbers from ranks over Z/2, independent of the column
// reduction: beta^{a,b}_p = dim Z_p(K_a) - dim(Z_p(K_a) ∩ B_p(K_b)).
int rank_persistent_betti(const Filtration& f, int p, double a, double b) {
  std::vector<const FiltrationEntry*> p_simplices;
  std::map<Simplex, std::size_t> p_index;
  for (const auto& e : f.entries()) {
    if (e.simplex.dimension() == p && e.value <= b) {
      p_index[e.simplex] = p_simplices.size();
      p_simplices.push_back(&e);
    }
  }
  const std::size_t np = p_simplices.size();
  if (np == 0) return 0;

  // Z_p(K_a): kernel of the boundary restricted to p-simplices in K_a.
  std::vector<std::size_t> in_a;
  for (std::size_t i = 0; i < np; ++i) {
    if (p_simplices[i]->value <= a) in_a.push_back(i);
  }
  std::vector<oracle::BitVector> cycles;
  if (p == 0) {
    for (const auto i : in_a) {
      oracle::BitVector v(np, 0);
      v[i] = 1;
      cycles.push_back(v);
    }
  } else {
    std::map<Simplex, std::size_t> face_index;
    for (const auto& e : f.entries()) {
      if (e.simplex.dimension() == p - 1) face_index.emplace(e.simplex, face_index.size());
    }
    std::vector<oracle::BitVector> cols;
    for (const auto i : in_a) {
      oracle::BitVector c(face_index.size(), 0);
      for (const auto& face : p_simplices[i]->simplex.faces()) c[face_index.at(face)] ^= 1;
      cols.push_back(c);
    }
    for (const auto& x : oracle::null_space_gf2(cols, face_index.size())) {
      oracle::BitVector v(np, 0);
      for (std::size_t k = 0; k < in_a.size(); ++k) v[in_a[k]] = x[k];
      cycles.push_back(v);
    }
  }
  // B_p(K_b): boundaries of (p+1)-simplices in K_b.
  std::vector<oracle::BitVector> boundaries;
  for (const auto& e : f.entries()) {
    if (e.simplex.dimension() == p + 1 && e.value <= b) {
      oracle::BitVector v(np, 0);
      for (const auto& face : e.simplex.faces()) v[p_index.at(face)] ^= 1;
      boundaries.push_back(v);
    }
  }
  const int dim_z = oracle::rank_gf2(cycles);
  const int dim_b = oracle::rank_gf2(boundaries);
  std::vector<oracle::BitVector> sum = cycles;
  sum.insert(sum.end(), boundaries.begin(), boundaries.end());
  const int dim_sum = oracle::rank_gf2(sum);
  const int dim_intersection = dim_z + dim_b - dim_sum;
  return dim_z - dim_intersection;
}

// Property: multiplicities read off the diagram satisfy the inclusion-
// exclusion identity over independently computed persistent Betti numbers.
TEST(Properties, MultiplicityInclusionExclusion) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 4 + rng() % 3;
    const auto f = build_vr_filtration(random_cloud_distances(rng, n, 2), 2);
    const auto diagram = compute_persistence(f);
    std::vector<double> values;
    for (const auto& e : f.entries()) values.push_back(e.value);
    values.erase(std::unique(values.begin(), values.end()), values.end());

    for (int p = 0; p <= 1; ++p) {
      auto beta = [&](int i, int j) {
        if (i < 0) return 0;
        return rank_persistent_betti(f, p, values[static_cast<std::size_t>(i)],
                                     values[static_cast<std::size_t>(j)]);
      };
      for (int i = 0; i < static_cast<int>(values.size()); ++i) {
        // beta^{i,i} read off the diagram equals the rank computation.
        EXPECT_EQ(betti_numbers(diagram, values[static_cast<std::size_t>(i)])[static_cast<std::size_t>(p)],
                  beta(i, i));
        for (int j = i + 1; j < static_cast<int>(values.size()); ++j) {
          const int mu = (beta(i, j - 1) - beta(i, j)) - (beta(i - 1, j - 1) - beta(i - 1, j));
          EXPECT_EQ(topoprune::multiplicity(diagram, p, values[static_cast<std::size_t>(i)],
                                            values[static_cast<std::size_t>(j)]),
                    mu)
              << "trial " << trial << " p " << p << " i " << i << " j " << j;
          EXPECT_EQ(topoprune::persistent_betti(diagram, p, values[static_cast<std::size_t>(i)],
                                                values[static_cast<std::size_t>(j)]),
                    beta(i, j));
        }
      }
    }
  }
}

}  // namespace
