#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "geodistill/matching.hpp"
#include "geodistill/mesh.hpp"
#include "support.hpp"

using namespace geodistill;

namespace {

std::vector<int> brute_argmax(const FeatureMatrix& q, const FeatureMatrix& c) {
  std::vector<int> out;
  for (int i = 0; i < q.rows(); ++i) {
    const Eigen::VectorXd u = q.row(i).cast<double>();
    int best = 0;
    double best_s = -2.0;
    for (int j = 0; j < c.rows(); ++j) {
      const Eigen::VectorXd v = c.row(j).cast<double>();
      const double s = u.dot(v) / (u.norm() * v.norm());
      if (s > best_s) best_s = s, best = j;
    }
    out.push_back(best);
  }
  return out;
}

// Cyclic Jacobi rotations on a symmetric matrix; eigenvalues descending.
std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd a) {
  const int n = static_cast<int>(a.rows());
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

Mesh cloud(int n, std::uint64_t seed) {
  Mesh m;
  m.vertices = testing::random_points(n, seed);
  return m;
}

}  // namespace

TEST_CASE("match points examples") {
  const FeatureMatrix f = testing::random_features(20, 6, 1);
  const Correspondence id = match_points(f, f);
  for (int i = 0; i < 20; ++i) CHECK(id.target[i] == i);

  FeatureMatrix e(2, 2), swapped(2, 2);
  e << 1, 0, 0, 1;
  swapped << 0, 1, 1, 0;
  const Correspondence c = match_points(e, swapped);
  CHECK(c.target == std::vector<int>{1, 0});
  CHECK(c.score == std::vector<double>{1.0, 1.0});

  CHECK(testing::error_kind([&] { match_points(e, testing::random_features(3, 3, 1)); }) == ErrorKind::Shape);
  const std::vector<int> bad{5};
  CHECK(testing::error_kind([&] { match_points(e, e, bad); }) == ErrorKind::Index);
}

TEST_CASE("match points equals brute force and ignores row scale") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FeatureMatrix s = testing::random_features(64, 8, seed);
    const FeatureMatrix t = testing::random_features(64, 8, seed + 50);
    const Correspondence c = match_points(s, t);
    CHECK(c.target == brute_argmax(s, t));
    for (double v : c.score) CHECK(std::abs(v) <= 1.0);

    FeatureMatrix s2 = s, t2 = t;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> scale(0.1f, 10.0f);
    for (int i = 0; i < 64; ++i) s2.row(i) *= scale(rng), t2.row(i) *= scale(rng);
    CHECK(match_points(s2, t2).target == c.target);
  }
  const FeatureMatrix s = testing::random_features(30, 4, 9);
  const std::vector<int> subset{29, 3, 3};
  const Correspondence c = match_points(s, s, subset);
  CHECK(c.source == subset);
  CHECK(c.target == subset);
}

TEST_CASE("error and accuracy examples") {
  Mesh target;
  target.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 0, 1}};
  Correspondence c;
  c.source = {0, 1};
  c.target = {0, 1};
  c.score = {1, 1};
  GroundTruth gt{{0, 1}, {{0, 0, 0}, {2, 0, 0}}};
  auto r = evaluate_correspondence(c, target, gt, 0.01);
  CHECK(r.err == 0.0);
  CHECK(r.acc == 100.0);
  CHECK(r.extent == doctest::Approx(std::sqrt(5.0)));

  gt.positions[1] = {2, 2, 0};
  r = evaluate_correspondence(c, target, gt, 0.01);
  CHECK(r.err == 2.0);  // (0 + 4) / 2
  CHECK(r.acc == 50.0);

  // Every error exactly the extent: strict inequality gives 0%.
  Mesh line;
  line.vertices = {{0, 0, 0}, {1, 0, 0}};
  Correspondence far{{0}, {1}, {0.0}};
  const GroundTruth at0{{0}, {{0, 0, 0}}};
  CHECK(correspondence_accuracy(far, line, at0, 0.999).acc == 0.0);
  CHECK(correspondence_accuracy(far, line, at0, 1.0).acc == 0.0);

  CHECK(testing::error_kind([&] { correspondence_accuracy(c, target, gt, 0.0); }) == ErrorKind::Domain);
  CHECK(testing::error_kind([&] { correspondence_accuracy(c, target, gt, 1.5); }) == ErrorKind::Domain);
  const GroundTruth short_gt{{0}, {{0, 0, 0}}};
  CHECK(testing::error_kind([&] { correspondence_error(c, target, short_gt); }) == ErrorKind::Shape);
}

TEST_CASE("metrics equal brute force recomputation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Mesh target = cloud(64, seed);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 63);
    std::normal_distribution<double> jitter(0.0, 0.02);
    Correspondence c;
    GroundTruth gt;
    for (int i = 0; i < 64; ++i) {
      c.source.push_back(i);
      c.target.push_back(pick(rng) % 4 == 0 ? pick(rng) : i);
      c.score.push_back(0.0);
      gt.source_indices.push_back(i);
      gt.positions.push_back(target.vertices[i] + Vec3(jitter(rng), jitter(rng), jitter(rng)));
    }
    const MetricReport r = evaluate_correspondence(c, target, gt, 0.01);

    double g = 0.0;
    for (const auto& a : target.vertices)
      for (const auto& b : target.vertices) g = std::max(g, (a - b).norm());
    double sum = 0.0;
    int hits = 0;
    for (int i = 0; i < 64; ++i) {
      const double e = (target.vertices[c.target[i]] - gt.positions[i]).norm();
      sum += e * e;
      hits += e < 0.01 * g ? 1 : 0;
    }
    CHECK(r.extent == g);
    CHECK(r.err == sum / 64.0);
    CHECK(r.acc == 100.0 * hits / 64.0);

    REQUIRE(r.curve.size() == 40);
    CHECK(r.curve.front().first == 0.0025);
    CHECK(r.curve.back().first == doctest::Approx(0.1));
    for (std::size_t k = 1; k < r.curve.size(); ++k) CHECK(r.curve[k].second >= r.curve[k - 1].second);
    for (const auto& [t, a] : r.curve) {
      int h = 0;
      for (double e : r.point_error) h += e < t * g ? 1 : 0;
      CHECK(a == 100.0 * h / 64.0);
    }
  }
}

TEST_CASE("ground truth and report files") {
  testing::TempDir dir("match");
  const GroundTruth gt{{4, 0, 9}, {{0.1, 0.2, 0.3}, {-1e-17, 5, 6}, {7, 8, 1.0 / 3.0}}};
  write_ground_truth(gt, dir / "gt.csv");
  const GroundTruth back = read_ground_truth(dir / "gt.csv");
  CHECK(back.source_indices == gt.source_indices);
  CHECK(back.positions == gt.positions);
  std::ofstream(dir / "bad.csv") << "source_index,target_x,target_y,target_z\n1,2,x,4\n";
  CHECK(testing::error_kind([&] { read_ground_truth(dir / "bad.csv"); }) == ErrorKind::Format);

  MetricReport r;
  r.err = 0.5;
  r.acc = 25.0;
  r.curve = {{0.0025, 10.0}, {0.005, 20.0}};
  write_metric_report(r, dir / "m.csv");
  write_accuracy_curve(r, dir / "c.csv");
  std::ifstream m(dir / "m.csv"), c(dir / "c.csv");
  std::string line;
  std::getline(m, line);
  CHECK(line == "metric,value");
  std::getline(m, line);
  CHECK(line == "err,0.5");
  std::getline(c, line);
  CHECK(line == "threshold,accuracy");
  std::getline(c, line);
  CHECK(line == "0.0025000000000000001,10");
}

TEST_CASE("evaluation samples") {
  const Mesh m = cloud(2000, 3);
  const auto s = evaluation_samples(m, 7);
  CHECK(s.size() == 1024);
  CHECK(std::set<int>(s.begin(), s.end()).size() == 1024);
  CHECK(s == evaluation_samples(m, 7));
  CHECK(evaluation_samples(cloud(10, 1), 7).size() == 10);
}

TEST_CASE("kmeans examples") {
  FeatureMatrix two(40, 3);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 0.01f);
  for (int i = 0; i < 40; ++i) {
    const float sgn = i % 2 ? -1.0f : 1.0f;
    two.row(i) << sgn + n(rng), n(rng), n(rng);
  }
  const KMeansResult r = kmeans(two, 2, 5);
  for (int i = 2; i < 40; ++i) CHECK(r.labels[i] == r.labels[i % 2]);
  CHECK(r.labels[0] != r.labels[1]);

  const FeatureMatrix f = testing::random_features(30, 4, 2, false);
  const KMeansResult one = kmeans(f, 1, 3);
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(4);
  const FeatureMatrix unit = normalize_rows(f);
  for (int i = 0; i < 30; ++i) mean += unit.row(i).cast<double>();
  mean.normalize();
  CHECK((one.centroids.row(0).cast<double>() - mean).norm() <= 1e-5);
  for (int l : one.labels) CHECK(l == 0);

  CHECK(testing::error_kind([&] { kmeans(f, 31, 1); }) == ErrorKind::Domain);
}

TEST_CASE("kmeans objective never increases and is seed deterministic") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FeatureMatrix f = testing::random_features(300, 6, seed + 10);
    const KMeansResult r = kmeans(f, 7, seed);
    REQUIRE_FALSE(r.objective.empty());
    for (std::size_t k = 1; k < r.objective.size(); ++k) CHECK(r.objective[k] <= r.objective[k - 1] + 1e-12);
    for (int i = 0; i < r.centroids.rows(); ++i)
      CHECK(std::abs(r.centroids.row(i).cast<double>().norm() - 1.0) <= 1e-6);
    const KMeansResult again = kmeans(f, 7, seed);
    CHECK(again.labels == r.labels);
    CHECK(again.centroids == r.centroids);
    CHECK(r.labels == segment_by_centroids(f, r.centroids));
  }
}

TEST_CASE("segment by centroids") {
  const FeatureMatrix c = testing::random_features(5, 4, 3);
  const auto labels = segment_by_centroids(c, c);
  for (int i = 0; i < 5; ++i) CHECK(labels[i] == i);
  const FeatureMatrix f = testing::random_features(100, 4, 4);
  for (int l : segment_by_centroids(f, FeatureMatrix(c.topRows(1)))) CHECK(l == 0);
  CHECK(segment_by_centroids(f, c) == brute_argmax(f, c));
}

TEST_CASE("pca") {
  FeatureMatrix constant(6, 3);
  constant.rowwise() = Eigen::RowVector3f(0.2f, 0.3f, 0.4f);
  const PcaResult z = pca_project(constant, 2);
  CHECK(z.projection.cwiseAbs().maxCoeff() <= 1e-6);

  // Points in a 2D affine plane inside R^4.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  const Eigen::RowVector4d origin(0.3, -0.1, 0.5, 0.2), u(1, 0.5, 0, -1), v(0, 1, -1, 0.5);
  FeatureMatrix plane(25, 4);
  for (int i = 0; i < 25; ++i) plane.row(i) = (origin + g(rng) * u + g(rng) * v).cast<float>();
  const PcaResult p = pca_project(plane, 2);
  const RowMatrix<double> rebuilt =
      (p.projection * p.components.transpose()).rowwise() + p.mean;
  CHECK((rebuilt - plane.cast<double>()).cwiseAbs().maxCoeff() <= 1e-6);

  const FeatureMatrix f = testing::random_features(20, 5, 8, false);
  const PcaResult full = pca_project(f, 5 - 1);
  const RowMatrix<double> x = f.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const RowMatrix<double> centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / 19.0;
  const auto ev = jacobi_eigenvalues(cov);
  double total = 0.0;
  for (double e : ev) total += e;
  for (int k = 0; k < 4; ++k) {
    CHECK(full.explained_variance[k] == doctest::Approx(ev[k]).epsilon(1e-9));
    CHECK(full.explained_ratio[k] == doctest::Approx(ev[k] / total).epsilon(1e-9));
    if (k) CHECK(full.explained_variance[k] <= full.explained_variance[k - 1]);
    CHECK(full.components.col(k).norm() == doctest::Approx(1.0));
  }
  CHECK(testing::error_kind([&] { pca_project(f, 20); }) == ErrorKind::Domain);

  // Rank one data asked for two components: the second is zero-filled.
  FeatureMatrix line(5, 3);
  for (int i = 0; i < 5; ++i) line.row(i) << static_cast<float>(i), 0.0f, 0.0f;
  const PcaResult r1 = pca_project(line, 2);
  CHECK(r1.projection.col(1).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("texture from image") {
  const FeatureMatrix f = testing::random_features(16 * 16, 6, 4);
  std::vector<Color> colors(256);
  for (int i = 0; i < 256; ++i) colors[i] = Color(i / 255.0f, 1.0f - i / 255.0f, 0.5f);
  std::vector<std::uint8_t> mask(256, 1);
  for (int i = 0; i < 256; i += 3) mask[i] = 0;
  const ImageFeatureMap img = make_image_feature_map(f, 16, 16, mask, colors);

  // Vertices share the foreground pixels' features.
  const std::vector<Color> own = texture_from_image(img.features, img);
  for (int i = 0; i < img.foreground_count(); ++i) {
    const auto [r, c] = img.pixels[i];
    CHECK(own[i] == colors[r * 16 + c]);
  }

  const FeatureMatrix verts = testing::random_features(50, 6, 5);
  const std::vector<Color> tex = texture_from_image(verts, img);
  const auto best = brute_argmax(verts, img.features);
  for (int i = 0; i < 50; ++i) {
    const auto [r, c] = img.pixels[best[i]];
    CHECK(tex[i] == colors[r * 16 + c]);
  }

  std::vector<std::uint8_t> single(256, 0);
  single[17] = 1;
  const ImageFeatureMap one = make_image_feature_map(f, 16, 16, single, colors);
  for (const Color& c : texture_from_image(verts, one)) CHECK(c == colors[17]);
  CHECK(testing::error_kind([&] { texture_from_image(testing::random_features(3, 5, 1), img); }) ==
        ErrorKind::Shape);
}

TEST_CASE("texture mesh to mesh") {
  const FeatureMatrix s = testing::random_features(64, 5, 6);
  std::vector<Color> colors(64);
  for (int i = 0; i < 64; ++i) colors[i] = Color(i / 63.0f, 0.0f, 1.0f);
  CHECK(texture_mesh_to_mesh(s, colors, s) == colors);
  const FeatureMatrix t = testing::random_features(64, 5, 7);
  const auto out = texture_mesh_to_mesh(s, colors, t);
  const auto best = brute_argmax(t, s);
  for (int i = 0; i < 64; ++i) CHECK(out[i] == colors[best[i]]);
  const std::vector<Color> flat(64, Color(0.1f, 0.2f, 0.3f));
  for (const Color& c : texture_mesh_to_mesh(s, flat, t)) CHECK(c == flat[0]);
  CHECK(testing::error_kind([&] { texture_mesh_to_mesh(s, std::vector<Color>(3), t); }) == ErrorKind::Shape);
}

TEST_CASE("label colors") {
  const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7, 0};
  const auto c = label_colors(labels);
  CHECK(c[0] == c[8]);
  std::set<std::tuple<float, float, float>> distinct;
  for (int i = 0; i < 8; ++i) distinct.insert({c[i].x(), c[i].y(), c[i].z()});
  CHECK(distinct.size() == 8);
  for (const Color& x : c) CHECK((x.minCoeff() >= 0.0f && x.maxCoeff() <= 1.0f));
}
