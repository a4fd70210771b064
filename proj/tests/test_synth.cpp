#include <doctest.h>

#include <cmath>

#include "geodistill/geodesics.hpp"
#include "geodistill/matching.hpp"
#include "geodistill/synth.hpp"
#include "support.hpp"

using namespace geodistill;
using synth::Side;

namespace {

double cosine(const FeatureMatrix& f, int a, int b) {
  return f.row(a).cast<double>().dot(f.row(b).cast<double>()) /
         (f.row(a).cast<double>().norm() * f.row(b).cast<double>().norm());
}

}  // namespace

TEST_CASE("icosphere") {
  const Mesh k0 = synth::make_icosphere(0);
  CHECK(k0.vertex_count() == 12);
  CHECK(k0.faces.size() == 20);
  for (int k = 1; k <= 3; ++k) {
    const Mesh m = synth::make_icosphere(k, 2.5);
    CHECK(m.vertex_count() == 10 * (1 << (2 * k)) + 2);
    CHECK(m.faces.size() == 20u * (1u << (2 * k)));
    for (const Vec3& v : m.vertices) CHECK(std::abs(v.norm() - 2.5) <= 1e-7);
    const AdjacencyIndex adj = build_adjacency(m);
    CHECK(connected_components(adj) == 1);
    // Closed genus-0 surface: V - E + F = 2.
    CHECK(m.vertex_count() - static_cast<int>(adj.edges.size()) + static_cast<int>(m.faces.size()) == 2);
  }
  CHECK(testing::error_kind([] { synth::make_icosphere(-1); }) == ErrorKind::Domain);
  CHECK(testing::error_kind([] { synth::make_icosphere(1, 0.0); }) == ErrorKind::Domain);
}

TEST_CASE("quadruped symmetry") {
  for (std::uint64_t seed : {0u, 3u, 106u}) {
    const auto q = synth::make_quadruped(synth::random_quadruped_spec(seed));
    const int n = q.mesh.vertex_count();
    REQUIRE(static_cast<int>(q.mirror.mirror.size()) == n);
    int left = 0, right = 0;
    for (int i = 0; i < n; ++i) {
      const int j = q.mirror.mirror[i];
      CHECK(q.mirror.mirror[j] == i);
      const Vec3& a = q.mesh.vertices[i];
      const Vec3& b = q.mesh.vertices[j];
      CHECK(std::abs(a.x() - b.x()) <= 1e-12);
      CHECK(std::abs(a.y() - b.y()) <= 1e-12);
      CHECK(std::abs(a.z() + b.z()) <= 1e-12);
      const Side s = q.mirror.side[i];
      if (s == Side::Center) {
        CHECK(j == i);
      } else {
        CHECK(j != i);
        CHECK(static_cast<int>(q.mirror.side[j]) == -static_cast<int>(s));
      }
      left += s == Side::Left;
      right += s == Side::Right;
    }
    CHECK(left == right);
    CHECK(left > 0);

    const AdjacencyIndex adj = build_adjacency(q.mesh);
    CHECK(connected_components(adj) == 1);
    // Every edge is shared by exactly two faces.
    CHECK(2 * adj.edges.size() == 3 * q.mesh.faces.size());
    CHECK_NOTHROW(validate_skeleton(q.skeleton, n));
    CHECK(q.skeleton.bone_count() == 6);
    CHECK(q.canonical.rows() == n);
  }
}

TEST_CASE("quadruped is accepted by the geodesic solver") {
  const auto q = synth::make_quadruped({});
  const std::vector<int> anchors{0, q.mesh.vertex_count() / 2};
  const GeodesicField f = heat_geodesic(q.mesh, anchors);
  CHECK(f.distances.allFinite());
  CHECK(f.distances.minCoeff() >= 0.0);
}

TEST_CASE("quadruped shapes share connectivity") {
  const auto a = synth::make_quadruped(synth::random_quadruped_spec(1));
  const auto b = synth::make_quadruped(synth::random_quadruped_spec(2));
  CHECK(a.mesh.faces == b.mesh.faces);
  CHECK(a.mirror.mirror == b.mirror.mirror);
  CHECK(a.part == b.part);
  CHECK(a.skeleton.weights == b.skeleton.weights);
  CHECK(a.mesh.vertices != b.mesh.vertices);
  const auto again = synth::make_quadruped(synth::random_quadruped_spec(1));
  CHECK(again.mesh.vertices == a.mesh.vertices);

  synth::QuadrupedSpec bad;
  bad.body_radius = 0.0;
  CHECK(testing::error_kind([&] { synth::make_quadruped(bad); }) == ErrorKind::Domain);
  bad = {};
  bad.segments = 9;
  CHECK(testing::error_kind([&] { synth::make_quadruped(bad); }) == ErrorKind::Domain);
}

TEST_CASE("symmetric base features") {
  const auto q = synth::make_quadruped({});
  synth::FeatureRecipe clean;
  clean.noise = 0.0;
  clean.side_cue = 0.0;
  const FeatureMatrix f = synth::synth_base_features(q, clean, 1);
  for (int i = 0; i < f.rows(); ++i) {
    CHECK(std::abs(f.row(i).cast<double>().norm() - 1.0) <= 1e-6);
    CHECK(f.row(i) == f.row(q.mirror.mirror[i]));
  }

  // Head and tail tips: extremes of the longitudinal coordinate.
  Eigen::Index head = 0, tail = 0;
  q.canonical.col(0).maxCoeff(&head);
  q.canonical.col(0).minCoeff(&tail);
  CHECK(cosine(f, static_cast<int>(head), static_cast<int>(tail)) < 0.9);

  synth::FeatureRecipe cue = clean;
  cue.side_cue = 0.007;
  const FeatureMatrix g = synth::synth_base_features(q, cue, 1);
  for (int i = 0; i < g.rows(); ++i) CHECK(cosine(g, i, q.mirror.mirror[i]) >= 0.99);

  const synth::FeatureRecipe def;
  const FeatureMatrix a = synth::synth_base_features(q, def, 5);
  CHECK(a == synth::synth_base_features(q, def, 5));
  CHECK(a != synth::synth_base_features(q, def, 6));
  CHECK(a.cols() == 32);

  synth::FeatureRecipe pos = def;
  pos.kind = synth::FeatureRecipe::Kind::Positional;
  const FeatureMatrix p = synth::synth_base_features(q, pos, 5);
  for (int i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).cast<double>().norm() - 1.0) <= 1e-6);

  synth::FeatureRecipe small = def;
  small.dim = 3;
  CHECK(testing::error_kind([&] { synth::synth_base_features(q, small, 1); }) == ErrorKind::Domain);
  synth::FeatureRecipe negative = def;
  negative.noise = -0.1;
  CHECK(testing::error_kind([&] { synth::synth_base_features(q, negative, 1); }) == ErrorKind::Domain);
}

TEST_CASE("generic mesh features") {
  const Mesh m = synth::make_icosphere(2);
  synth::MirrorMap mirror;
  for (const Vec3& v : m.vertices) {
    int j = 0;
    for (int k = 0; k < m.vertex_count(); ++k)
      if ((m.vertices[k] - Vec3(v.x(), v.y(), -v.z())).norm() < (m.vertices[j] - Vec3(v.x(), v.y(), -v.z())).norm()) j = k;
    mirror.mirror.push_back(j);
    mirror.side.push_back(v.z() > 1e-9 ? Side::Left : v.z() < -1e-9 ? Side::Right : Side::Center);
  }
  synth::FeatureRecipe clean;
  clean.noise = 0.0;
  clean.side_cue = 0.0;
  const FeatureMatrix f = synth::synth_base_features(m, mirror, clean, 1);
  for (int i = 0; i < f.rows(); ++i) CHECK(cosine(f, i, mirror.mirror[i]) >= 1.0 - 1e-6);
  synth::MirrorMap wrong = mirror;
  wrong.side.pop_back();
  CHECK(testing::error_kind([&] { synth::synth_base_features(m, wrong, clean, 1); }) == ErrorKind::Shape);
}

TEST_CASE("random poses") {
  const auto q = synth::make_quadruped({});
  const PoseParams a = synth::random_pose(q, 4);
  CHECK(a.flatten() == synth::random_pose(q, 4).flatten());
  CHECK(a.flatten() != synth::random_pose(q, 5).flatten());
  for (const Vec3& r : a.bone_rotations) CHECK(r.norm() <= 0.35 * std::sqrt(3.0) + 1e-12);
  const PoseParams still = synth::random_pose(q, 4, 0.0);
  for (const Vec3& r : still.bone_rotations) CHECK(r == Vec3::Zero());
  CHECK(testing::error_kind([&] { synth::random_pose(q, 1, -1.0); }) == ErrorKind::Domain);
}

TEST_CASE("ground truth correspondence") {
  const auto q = synth::make_quadruped({});
  const std::vector<int> idx{0, 7, 300};
  const GroundTruth same = synth::ground_truth_correspondence(q.mesh, q.mesh, idx);
  for (std::size_t k = 0; k < idx.size(); ++k) CHECK(same.positions[k] == q.mesh.vertices[idx[k]]);

  const Eigen::Matrix3d r = axis_angle_to_matrix(Vec3(0.2, 0.5, -0.1));
  const Vec3 t(1, 2, 3);
  const Mesh moved = synth::transform_mesh(q.mesh, r, t);
  const GroundTruth rigid = synth::ground_truth_correspondence(q.mesh, moved, idx);
  for (std::size_t k = 0; k < idx.size(); ++k)
    CHECK((rigid.positions[k] - (r * q.mesh.vertices[idx[k]] + t)).norm() <= 1e-12);

  const PoseParams pose = synth::random_pose(q, 8);
  Mesh posed = q.mesh;
  posed.vertices = lbs_deform(q.skeleton, pose, q.mesh.vertices);
  const GroundTruth lbs = synth::ground_truth_correspondence(q.mesh, posed, idx);
  for (std::size_t k = 0; k < idx.size(); ++k) CHECK(lbs.positions[k] == posed.vertices[idx[k]]);

  const Mesh sphere = synth::make_icosphere(1);
  CHECK(testing::error_kind([&] { synth::ground_truth_correspondence(q.mesh, sphere, idx); }) == ErrorKind::Shape);
  const std::vector<int> out{q.mesh.vertex_count()};
  CHECK(testing::error_kind([&] { synth::ground_truth_correspondence(q.mesh, q.mesh, out); }) == ErrorKind::Index);
}

TEST_CASE("side confusion") {
  synth::MirrorMap m;
  m.side = {Side::Left, Side::Right, Side::Center, Side::Left};
  m.mirror = {1, 0, 2, 3};
  const std::vector<int> src{0, 1, 2, 3};
  CHECK(synth::side_confusion(m, m, src, src) == 0.0);
  const std::vector<int> swapped{1, 0, 2, 1};
  CHECK(synth::side_confusion(m, m, src, swapped) == 1.0);
  const std::vector<int> centered{2, 0, 0, 3};
  CHECK(synth::side_confusion(m, m, src, centered) == doctest::Approx(1.0 / 3.0));
  CHECK(testing::error_kind([&] { synth::side_confusion(m, m, src, std::vector<int>{0}); }) == ErrorKind::Shape);
}

TEST_CASE("raw symmetric features confuse limb sides") {
  const auto q = synth::make_quadruped(synth::random_quadruped_spec(7));
  Mesh posed = q.mesh;
  posed.vertices = lbs_deform(q.skeleton, synth::random_pose(q, 507), q.mesh.vertices);
  const synth::FeatureRecipe recipe;
  const FeatureMatrix fs = synth::synth_base_features(q, recipe, 2007);
  const FeatureMatrix ft = synth::synth_base_features(q, recipe, 3007);
  std::vector<int> left;
  for (int v : synth::limb_vertices(q))
    if (q.mirror.side[v] == Side::Left) left.push_back(v);
  REQUIRE(!left.empty());
  const Correspondence c = match_points(fs, ft, left);
  CHECK(synth::side_confusion(q.mirror, q.mirror, left, c.target) >= 0.3);
}
