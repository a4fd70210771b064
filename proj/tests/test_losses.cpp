#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <Eigen/QR>

#include "geodistill/gradcheck.hpp"
#include "geodistill/losses.hpp"
#include "support.hpp"

using namespace geodistill;
using M = RowMatrix<double>;
constexpr M* kNoGrad = nullptr;

namespace {

M rows(std::initializer_list<std::initializer_list<double>> values) {
  M m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : values) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Eigen::MatrixXd col(std::initializer_list<double> values) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

M unit_rows(int n, int d, std::uint64_t seed) {
  M m = testing::random_features(n, d, seed).cast<double>();
  m.rowwise().normalize();
  return m;
}

Eigen::MatrixXd random_geodesics(int n, int a, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Eigen::MatrixXd g(n, a);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
  return g;
}

double cos_of(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v) { return u.dot(v) / (u.norm() * v.norm()); }

}  // namespace

TEST_CASE("cosine examples") {
  const std::vector<double> v{0.3, -2.0, 5.0};
  CHECK(cosine_similarity(std::span<const double>(v), std::span<const double>(v)) == doctest::Approx(1.0));
  const std::vector<double> x{1, 0}, y{0, 1}, xy{1, 1};
  CHECK(cosine_similarity(std::span<const double>(x), std::span<const double>(y)) == 0.0);
  CHECK(cosine_similarity(std::span<const double>(xy), std::span<const double>(x)) ==
        doctest::Approx(0.70711).epsilon(1e-5));
  const std::vector<float> big{1e20f, 1e20f};
  CHECK(cosine_similarity(std::span<const float>(big), std::span<const float>(big)) <= 1.0);
  const std::vector<double> zero{0, 0}, three{1, 2, 3};
  CHECK(testing::error_kind([&] { cosine_similarity(std::span<const double>(zero), std::span<const double>(x)); }) ==
        ErrorKind::Numeric);
  CHECK(testing::error_kind([&] { cosine_similarity(std::span<const double>(three), std::span<const double>(x)); }) ==
        ErrorKind::Shape);
}

TEST_CASE("contrastive examples") {
  const std::vector<int> a0{0}, a1{1};
  CHECK(contrastive_loss(rows({{1, 0}}), a0, col({0.0})) == 0.0);
  CHECK(contrastive_loss(rows({{0.6, 0.8}, {-0.6, -0.8}}), a1, col({1.0, 0.0})) == 0.0);
  CHECK(contrastive_loss(rows({{0, 1}, {0, 1}}), a1, col({0.5, 0.0})) == doctest::Approx(0.25));
  // Single pair with d' = 0.5 and identical embeddings.
  CHECK(contrastive_loss(rows({{0, 1}}), a0, col({0.5})) == 0.5);

  const std::vector<int> bad{2};
  CHECK(testing::error_kind([&] { contrastive_loss(rows({{1, 0}, {0, 1}}), bad, col({0, 0})); }) ==
        ErrorKind::Index);
  CHECK(testing::error_kind([&] { contrastive_loss(rows({{1, 0}, {0, 1}}), a0, col({0, 0, 0})); }) ==
        ErrorKind::Shape);
}

TEST_CASE("contrastive matches direct sum") {
  const M s = unit_rows(20, 5, 1);
  const std::vector<int> anchors{3, 0, 17, 9};
  const Eigen::MatrixXd g = random_geodesics(20, 4, 2);
  double oracle = 0.0;
  for (int n = 0; n < 20; ++n)
    for (int a = 0; a < 4; ++a) oracle += std::abs(g(n, a) - (1.0 - cos_of(s.row(n), s.row(anchors[a]))) / 2.0);
  oracle /= 80.0;
  CHECK(contrastive_loss(s, anchors, g) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(contrastive_loss(s, anchors, g) >= 0.0);
}

TEST_CASE("contrastive is invariant to rotations of the embedding") {
  const M s = unit_rows(15, 6, 3);
  const std::vector<int> anchors{1, 4, 8};
  const Eigen::MatrixXd g = random_geodesics(15, 3, 4);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(6, 6)).householderQ();
  const M rotated = s * q;
  CHECK(contrastive_loss(rotated, anchors, g) == doctest::Approx(contrastive_loss(s, anchors, g)).epsilon(1e-12));
}

TEST_CASE("contrastive is zero exactly when targets are met") {
  // Two points on a circle at angle theta: target d' = (1 - cos theta) / 2.
  for (double theta : {0.0, 0.4, 1.7, 3.0}) {
    const M s = rows({{1, 0}, {std::cos(theta), std::sin(theta)}});
    const std::vector<int> anchors{0};
    const double target = (1.0 - std::cos(theta)) / 2.0;
    CHECK(contrastive_loss(s, anchors, col({0.0, target})) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(contrastive_loss(s, anchors, col({0.0, target + 0.1})) > 1e-3);
  }
}

TEST_CASE("reconstruction examples") {
  const M base = unit_rows(6, 4, 5);
  CHECK(reconstruction_loss(base, base) == doctest::Approx(0.0).epsilon(1e-15));
  const M neg = -base;
  CHECK(reconstruction_loss(base, neg) == doctest::Approx(2.0));
  const M a = rows({{1, 0}, {0, 1}}), b = rows({{0, 1}, {-1, 0}});
  CHECK(reconstruction_loss(a, b) == 1.0);
  CHECK(testing::error_kind([&] { reconstruction_loss(a, unit_rows(3, 2, 1)); }) == ErrorKind::Shape);
  M g;
  reconstruction_loss(a, b, &g);
  CHECK(g == a * -0.5);
}

TEST_CASE("combined examples") {
  const LossValue v = combined_loss({1.0, 1.0}, 0.2, 0.3);
  CHECK(v.total == doctest::Approx(0.5));
  CHECK(v.contrastive == 0.2);
  CHECK(v.reconstruction == 0.3);
  CHECK(combined_loss({2.0, 0.0}, 0.2, 0.3).total == doctest::Approx(0.6));
  CHECK(combined_loss({0.0, 3.0}, 0.2, 0.3).total == doctest::Approx(0.6));
  CHECK(testing::error_kind([] { combined_loss({0.0, 0.0}, 0.2, 0.3); }) == ErrorKind::Domain);
  CHECK(testing::error_kind([] { combined_loss({-1.0, 1.0}, 0.2, 0.3); }) == ErrorKind::Domain);
}

TEST_CASE("ablation examples") {
  const M line = rows({{0, 0}, {2, 0}});
  const std::vector<int> a0{0};
  CHECK(ablation_loss(AblationVariant::Rgl, line, a0, col({0.0, 1.0})) == 1.0);
  CHECK(ablation_loss(AblationVariant::Ngl, line, a0, col({0.0, 2.0})) == 0.0);
  CHECK(ablation_loss(AblationVariant::Ngl, line, a0, col({0.0, 1.0})) == 1.0);

  LossDiagnostics diag;
  CHECK(ablation_loss(AblationVariant::Rgl, line, a0, col({0.0, 0.0}), kNoGrad, &diag) == 0.0);
  CHECK(diag.excluded_pairs == 1);

  // GSL: embedding distances proportional to geodesics.
  const M pts = rows({{0, 0}, {1, 0}, {0, 3}, {5, 5}});
  const std::vector<int> anchors{0, 1, 2, 3};
  Eigen::MatrixXd g(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int a = 0; a < 4; ++a) g(i, a) = 0.25 * (pts.row(i) - pts.row(a)).norm();
  CHECK(ablation_loss(AblationVariant::Gsl, pts, anchors, g, kNoGrad, nullptr, 2) ==
        doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("ablation losses match brute force") {
  const M e = testing::random_features(12, 3, 6, false).cast<double>();
  const std::vector<int> anchors{0, 5, 7, 11, 2};
  const Eigen::MatrixXd g = random_geodesics(12, 5, 7);
  double rgl = 0.0, ngl = 0.0, gsl = 0.0;
  for (int i = 0; i < 12; ++i) {
    std::vector<std::pair<double, int>> near;
    for (int a = 0; a < 5; ++a) {
      const double de = (e.row(i) - e.row(anchors[a])).norm();
      rgl += std::pow(de - g(i, a), 2) / std::pow(g(i, a), 2);
      ngl += std::pow(de - g(i, a), 2);
      if (anchors[a] != i) near.push_back({de, a});
    }
    std::sort(near.begin(), near.end());
    Eigen::VectorXd d(3), m(3);
    for (int j = 0; j < 3; ++j) d[j] = near[j].first, m[j] = g(i, near[j].second);
    gsl += 1.0 - d.dot(m) / (d.norm() * m.norm());
  }
  gsl /= 12.0;
  CHECK(ablation_loss(AblationVariant::Rgl, e, anchors, g) == doctest::Approx(rgl).epsilon(1e-12));
  CHECK(ablation_loss(AblationVariant::Ngl, e, anchors, g) == doctest::Approx(ngl).epsilon(1e-12));
  CHECK(ablation_loss(AblationVariant::Gsl, e, anchors, g, kNoGrad, nullptr, 3) == doctest::Approx(gsl).epsilon(1e-12));
  CHECK(ablation_loss(AblationVariant::Gsl, M(e * 13.0), anchors, g, kNoGrad, nullptr, 3) ==
        doctest::Approx(gsl).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  const M s = unit_rows(9, 4, 8);
  const std::vector<int> anchors{2, 6, 0};
  const Eigen::MatrixXd g = random_geodesics(9, 3, 9);

  auto fd_check = [&](const std::function<double(const M&)>& f, const M& x, const M& analytic) {
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      M up = x, down = x;
      up.data()[k] += h;
      down.data()[k] -= h;
      const double numeric = (f(up) - f(down)) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic.data()[k]) /
                                  std::max({std::abs(numeric), std::abs(analytic.data()[k]), 1e-3}));
    }
    return worst;
  };

  M grad;
  // Self pairs sit on the phi = 1 clamp for unit rows; shrink to stay off it.
  const M inside = s * 0.9;
  contrastive_loss(inside, anchors, g, &grad);
  CHECK(fd_check([&](const M& x) { return contrastive_loss(x, anchors, g); }, inside, grad) <= 1e-4);

  const M base = unit_rows(9, 4, 10);
  reconstruction_loss(base, s, &grad);
  CHECK(fd_check([&](const M& x) { return reconstruction_loss(base, x); }, s, grad) <= 1e-4);

  const M e = testing::random_features(9, 4, 11, false).cast<double>();
  for (auto v : {AblationVariant::Rgl, AblationVariant::Ngl, AblationVariant::Gsl}) {
    ablation_loss(v, e, anchors, g, &grad, nullptr, 2);
    CHECK(fd_check([&](const M& x) { return ablation_loss(v, x, anchors, g, kNoGrad, nullptr, 2); }, e, grad) <=
          1e-4);
  }
}

TEST_CASE("network gradient checks all pass") {
  for (const auto& r : gradcheck::run_all()) {
    INFO(r.name << " max rel err " << r.max_relative_error);
    CHECK(r.passed);
    CHECK(r.checked > 0);
    CHECK(r.max_relative_error <= 1e-4);
  }
}
