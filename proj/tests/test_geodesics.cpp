#include <doctest.h>

#include <cmath>
#include <numbers>

#include "geodistill/geodesics.hpp"
#include "geodistill/mesh.hpp"
#include "geodistill/synth.hpp"
#include "support.hpp"

using namespace geodistill;

namespace {

AdjacencyIndex path_graph(int n) {
  AdjacencyIndex a;
  a.neighbors.resize(n);
  for (int i = 0; i + 1 < n; ++i) {
    a.edges.push_back({i, i + 1, 1.0});
    a.neighbors[i].push_back(i + 1);
    a.neighbors[i + 1].push_back(i);
  }
  return a;
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd dx = x.array() - x.mean();
  const Eigen::VectorXd dy = y.array() - y.mean();
  return dx.dot(dy) / (dx.norm() * dy.norm());
}

int antipode(const Mesh& m, int v) {
  int best = 0;
  double best_d = -1.0;
  for (int i = 0; i < m.vertex_count(); ++i) {
    const double d = (m.vertices[i] - m.vertices[v]).norm();
    if (d > best_d) best_d = d, best = i;
  }
  return best;
}

}  // namespace

TEST_CASE("dijkstra examples") {
  const std::vector<int> a0{0};
  const GeodesicField f = dijkstra_geodesic(path_graph(5), a0);
  CHECK(f.distances(3, 0) == 3.0);
  CHECK(f.distances(0, 0) == 0.0);

  Mesh tri;
  tri.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  tri.faces = {{0, 1, 2}};
  const std::vector<int> a1{1};
  const GeodesicField t = dijkstra_geodesic(build_adjacency(tri), a1);
  CHECK(t.distances(2, 0) <= std::min(std::sqrt(2.0), 2.0) + 1e-15);

  AdjacencyIndex split = path_graph(4);
  split.neighbors.push_back({});
  CHECK(testing::error_kind([&] { dijkstra_geodesic(split, a0); }) == ErrorKind::Topology);
}

TEST_CASE("dijkstra matches floyd-warshall") {
  const Mesh m = synth::make_icosphere(1, 1.0);
  const AdjacencyIndex adj = build_adjacency(m);
  const int n = m.vertex_count();
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) d(i, i) = 0.0;
  for (const Edge& e : adj.edges) d(e.a, e.b) = d(e.b, e.a) = e.length;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d(i, j) = std::min(d(i, j), d(i, k) + d(k, j));
  const std::vector<int> anchors{0, 7, 41};
  const GeodesicField f = dijkstra_geodesic(adj, anchors);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i) CHECK(f.distances(i, c) == doctest::Approx(d(i, anchors[c])).epsilon(1e-12));
}

TEST_CASE("rescale examples") {
  GeodesicField f;
  f.anchors = {0};
  f.distances.resize(2, 1);
  f.distances << 2.0, 4.0;
  const GeodesicField r = rescale_distances(f);
  CHECK(r.distances(0, 0) == 0.5);
  CHECK(r.distances(1, 0) == 1.0);
  CHECK(r.rescaled);
  CHECK(r.scale == 4.0);

  f.distances.setZero();
  CHECK(testing::error_kind([&] { rescale_distances(f); }) == ErrorKind::Domain);
  f.distances << 1.0, -1.0;
  CHECK(testing::error_kind([&] { rescale_distances(f); }) == ErrorKind::Domain);
}

TEST_CASE("heat method on the unit icosphere") {
  const Mesh m = synth::make_icosphere(3, 1.0);
  REQUIRE(m.vertex_count() == 642);
  const HeatGeodesicSolver solver(m);
  const std::vector<int> anchors{0, 100, 321, 500, 641};
  const GeodesicField heat = solver.solve(anchors);
  const GeodesicField exact = dijkstra_geodesic(build_adjacency(m), anchors);
  const double extent = max_extent(m);

  for (int c = 0; c < 5; ++c) {
    CHECK(heat.distances(anchors[c], c) <= 1e-6 * extent);
    CHECK(heat.distances.col(c).minCoeff() >= 0.0);
    const double far = heat.distances(antipode(m, anchors[c]), c);
    CHECK(std::abs(far - std::numbers::pi) / std::numbers::pi <= 0.05);

    double dev = 0.0;
    int count = 0;
    for (int i = 0; i < m.vertex_count(); ++i) {
      if (i == anchors[c]) continue;
      dev += std::abs(heat.distances(i, c) - exact.distances(i, c)) / exact.distances(i, c);
      ++count;
    }
    CHECK(dev / count <= 0.10);
    CHECK(pearson(heat.distances.col(c), exact.distances.col(c)) >= 0.99);

    // Great-circle distance is the analytic truth on the sphere.
    double worst = 0.0;
    for (int i = 0; i < m.vertex_count(); ++i) {
      const double dot = std::clamp(m.vertices[i].dot(m.vertices[anchors[c]]), -1.0, 1.0);
      worst = std::max(worst, std::abs(heat.distances(i, c) - std::acos(dot)));
    }
    CHECK(worst <= 0.1);
  }
}

TEST_CASE("heat distances are nearly symmetric") {
  const Mesh m = synth::make_icosphere(3, 1.0);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pick(0, m.vertex_count() - 1);
  std::vector<int> anchors;
  for (int k = 0; k < 12; ++k) anchors.push_back(pick(rng));
  const GeodesicField f = heat_geodesic(m, anchors);
  const double max = f.distances.maxCoeff();
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      CHECK(std::abs(f.distances(anchors[j], i) - f.distances(anchors[i], j)) / max <= 0.02);
}

TEST_CASE("rescaled heat field is scale invariant") {
  const Mesh m = synth::make_icosphere(3, 1.0);
  Mesh big = m;
  for (auto& v : big.vertices) v *= 7.0;
  const std::vector<int> anchors{3, 200, 600};
  const GeodesicField a = rescale_distances(heat_geodesic(m, anchors));
  const GeodesicField b = rescale_distances(heat_geodesic(big, anchors));
  CHECK((a.distances - b.distances).cwiseAbs().maxCoeff() <= 1e-5);
  CHECK(a.distances.maxCoeff() == 1.0);
  CHECK(a.distances.minCoeff() >= 0.0);
}

TEST_CASE("heat solver errors") {
  Mesh two = testing::unit_square();
  const int base = two.vertex_count();
  for (int i = 0; i < 3; ++i) two.vertices.push_back(two.vertices[i] + Vec3(5, 0, 0));
  two.faces.push_back({base, base + 1, base + 2});
  CHECK(testing::error_kind([&] { HeatGeodesicSolver s(two); }) == ErrorKind::Topology);

  const Mesh m = synth::make_icosphere(1, 1.0);
  CHECK(testing::error_kind([&] { HeatGeodesicSolver s(m, 0.0); }) == ErrorKind::Domain);
  const HeatGeodesicSolver s(m);
  const std::vector<int> none;
  const std::vector<int> bad{m.vertex_count()};
  CHECK(testing::error_kind([&] { s.solve(none); }) == ErrorKind::Domain);
  CHECK(testing::error_kind([&] { s.solve(bad); }) == ErrorKind::Index);
}

TEST_CASE("field dump matches distances") {
  const Mesh m = synth::make_icosphere(1, 2.0);
  const std::vector<int> anchors{0, 5};
  const GeodesicField f = heat_geodesic(m, anchors);
  const FeatureMatrix dump = field_to_matrix(f);
  REQUIRE(dump.rows() == m.vertex_count());
  REQUIRE(dump.cols() == 2);
  for (int i = 0; i < m.vertex_count(); ++i)
    CHECK(dump(i, 1) == static_cast<float>(f.distances(i, 1)));
}
