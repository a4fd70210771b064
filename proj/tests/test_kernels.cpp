#include <doctest.h>

#include <cmath>

#include "geodistill/kernels.hpp"
#include "geodistill/parallel.hpp"
#include "support.hpp"

using namespace geodistill;

namespace {

// Restores one worker after each case.
struct Threads {
  explicit Threads(int n) { set_thread_count(n); }
  ~Threads() { set_thread_count(1); }
};

}  // namespace

TEST_CASE("dot and cosine") {
  const std::vector<float> u{3, 4}, v{4, 3}, w{-3, -4};
  CHECK(kernels::dot(u, v) == 24.0);
  CHECK(kernels::cosine_from(kernels::dot(u, v), 5.0, 5.0) == doctest::Approx(0.96));
  CHECK(kernels::cosine_from(kernels::dot(u, w), 5.0, 5.0) == -1.0);
  const FeatureMatrix m = testing::random_features(4, 7, 3, false);
  const auto norms = kernels::row_norms(m);
  for (int i = 0; i < 4; ++i) CHECK(norms[i] == doctest::Approx(m.row(i).cast<double>().norm()).epsilon(1e-14));
}

TEST_CASE("argmax matches brute force and ties go low") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const FeatureMatrix q = testing::random_features(37, 9, seed, false);
    const FeatureMatrix c = testing::random_features(53, 9, seed + 100, false);
    const auto r = kernels::argmax_cosine_serial(q, c);
    for (int i = 0; i < q.rows(); ++i) {
      const Eigen::VectorXd qi = q.row(i).cast<double>();
      int best = -1;
      double best_s = -2.0;
      for (int j = 0; j < c.rows(); ++j) {
        const Eigen::VectorXd cj = c.row(j).cast<double>();
        const double s = qi.dot(cj) / (qi.norm() * cj.norm());
        if (s > best_s + 1e-12) best_s = s, best = j;
      }
      CHECK(r.index[i] == best);
      CHECK(r.score[i] == doctest::Approx(best_s).epsilon(1e-10));
    }
  }
  FeatureMatrix dup(3, 2);
  dup << 1, 0, 0, 1, 1, 0;
  FeatureMatrix one(1, 2);
  one << 2, 0;
  CHECK(kernels::argmax_cosine_serial(one, dup).index[0] == 0);
  CHECK(kernels::argmax_cosine_parallel(one, dup).index[0] == 0);
}

TEST_CASE("parallel kernels are bitwise equal to serial") {
  const FeatureMatrix q = testing::random_features(301, 16, 1);
  const FeatureMatrix c = testing::random_features(257, 16, 2);
  const auto points = testing::random_points(700, 4);
  const auto serial = kernels::argmax_cosine_serial(q, c);
  const double extent = kernels::max_pairwise_distance_serial(points);
  for (int threads : {1, 2, 3, 8}) {
    Threads guard(threads);
    const auto par = kernels::argmax_cosine_parallel(q, c);
    CHECK(par.index == serial.index);
    CHECK(par.score == serial.score);
    CHECK(kernels::max_pairwise_distance_parallel(points) == extent);
  }
}

TEST_CASE("max pairwise distance oracle") {
  const auto points = testing::random_points(90, 8);
  double oracle = 0.0;
  for (const auto& a : points)
    for (const auto& b : points) oracle = std::max(oracle, (a - b).norm());
  CHECK(kernels::max_pairwise_distance_serial(points) == oracle);
  const std::vector<Vec3> line{{0, 0, 0}, {2, 0, 0}, {1, 0, 0}};
  CHECK(kernels::max_pairwise_distance_serial(line) == 2.0);
}

TEST_CASE("thread count") {
  CHECK(thread_count() == 1);
  {
    Threads guard(3);
    CHECK(thread_count() == 3);
  }
  CHECK(thread_count() == 1);
}
