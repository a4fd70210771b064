#include "geodistill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "geodistill/losses.hpp"
#include "geodistill/nn.hpp"
#include "geodistill/pose.hpp"
#include "geodistill/trainer.hpp"

namespace geodistill::gradcheck {

Result check(const std::string& name, std::vector<double> x,
             const std::function<double(const std::vector<double>&)>& loss,
             const std::vector<double>& analytic, const std::vector<std::size_t>& coordinates,
             const Options& options,
             const std::function<std::vector<int>(const std::vector<double>&)>& signature) {
  Result r;
  r.name = name;
  const std::vector<int> base_sig = signature ? signature(x) : std::vector<int>{};
  for (std::size_t i : coordinates) {
    const double keep = x[i];
    x[i] = keep + options.step;
    const double up = loss(x);
    const bool up_kink = signature && signature(x) != base_sig;
    x[i] = keep - options.step;
    const double down = loss(x);
    const bool down_kink = signature && signature(x) != base_sig;
    x[i] = keep;
    if (up_kink || down_kink) {
      ++r.skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * options.step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
    r.max_relative_error = std::max(r.max_relative_error, std::abs(analytic[i] - numeric) / denom);
    ++r.checked;
  }
  r.passed = r.checked > 0 && r.max_relative_error <= options.tolerance;
  return r;
}

namespace {

RowMatrix<double> random_unit_rows(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix<double> m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  m.rowwise().normalize();
  return m;
}

std::vector<std::size_t> pick(std::size_t count, std::size_t total, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < std::min(count, total); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(std::min(count, total));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Result merge(const std::string& name, const std::vector<Result>& parts, double tolerance) {
  Result r;
  r.name = name;
  for (const auto& p : parts) {
    r.checked += p.checked;
    r.skipped += p.skipped;
    r.max_relative_error = std::max(r.max_relative_error, p.max_relative_error);
  }
  r.passed = r.checked > 0 && r.max_relative_error <= tolerance;
  return r;
}

Result network_check(const std::string& name, LossVariant variant, const Options& opt) {
  constexpr int f = 16, s = 4, n = 8, a = 3;
  std::mt19937_64 rng(opt.seed + static_cast<std::uint64_t>(variant) * 101);
  const nn::Architecture arch{f, s, uses_normalized_embedding(variant)};
  const auto model = nn::Autoencoder<double>::initialized(arch, rng());
  const RowMatrix<double> base = random_unit_rows(n, f, rng);
  const std::vector<int> anchors = {1, 4, 6};
  const bool raw = !uses_normalized_embedding(variant);
  std::uniform_real_distribution<double> dist(raw ? 0.2 : 0.05, raw ? 2.0 : 1.0);
  Eigen::MatrixXd geo(n, a);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < a; ++k) geo(i, k) = i == anchors[k] ? 0.0 : dist(rng);
  }
  const LossWeights weights{0.7, 1.3};

  auto with_params = [&](const std::vector<double>& x) {
    nn::Autoencoder<double> m = model;
    m.parameters() = x;
    return m;
  };
  auto loss = [&](const std::vector<double>& x) {
    return evaluate_objective<double>(with_params(x), base, anchors, geo, variant, weights).total;
  };
  auto signature = [&](const std::vector<double>& x) {
    LossDiagnostics diag;
    evaluate_objective<double>(with_params(x), base, anchors, geo, variant, weights, nullptr, &diag);
    return diag.signature;
  };
  std::vector<double> grad;
  evaluate_objective<double>(model, base, anchors, geo, variant, weights, &grad);
  const auto coords = pick(static_cast<std::size_t>(opt.parameters), model.parameter_count(), rng);
  return check(name, model.parameters(), loss, grad, coords, opt, signature);
}

struct PoseFixture {
  Skeleton skeleton;
  Mesh rest;
  AdjacencyIndex adjacency;
};

PoseFixture pose_fixture(std::mt19937_64& rng) {
  PoseFixture fx;
  fx.skeleton.bones = {Bone{-1, Vec3(0, 0, 0)}, Bone{0, Vec3(1, 0, 0)}, Bone{1, Vec3(2, 0, 0)}};
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  constexpr int cols = 10, rows = 3;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      fx.rest.vertices.emplace_back(-0.5 + 3.0 * c / (cols - 1), 0.3 * r, jitter(rng));
    }
  }
  for (int r = 0; r + 1 < rows; ++r) {
    for (int c = 0; c + 1 < cols; ++c) {
      const int v = r * cols + c;
      fx.rest.faces.push_back({v, v + 1, v + cols + 1});
      fx.rest.faces.push_back({v, v + cols + 1, v + cols});
    }
  }
  fx.adjacency = build_adjacency(fx.rest);
  std::uniform_real_distribution<double> w(0.05, 1.0);
  fx.skeleton.weights.resize(fx.rest.vertex_count(), 3);
  for (int v = 0; v < fx.rest.vertex_count(); ++v) {
    for (int b = 0; b < 3; ++b) fx.skeleton.weights(v, b) = w(rng);
    fx.skeleton.weights.row(v) /= fx.skeleton.weights.row(v).sum();
  }
  return fx;
}

PoseParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  PoseParams p = PoseParams::identity(3);
  p.root_rotation = Vec3(u(rng), u(rng), u(rng));
  p.translation = Vec3(u(rng), u(rng), u(rng));
  p.scale = 1.0 + 0.3 * u(rng);
  for (auto& b : p.bone_rotations) b = Vec3(u(rng), u(rng), u(rng));
  return p;
}

std::vector<std::size_t> all_of(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<int> signs(const std::vector<double>& values) {
  std::vector<int> out;
  out.reserve(values.size());
  for (double v : values) out.push_back((v > 0) - (v < 0));
  return out;
}

Result point_check(const Options& opt) {
  std::mt19937_64 rng(opt.seed + 11);
  const PoseFixture fx = pose_fixture(rng);
  std::vector<Result> parts;
  for (int trial = 0; trial < 8; ++trial) {
    const auto target = lbs_deform(fx.skeleton, random_params(rng), fx.rest.vertices);
    PointTargets t;
    std::normal_distribution<double> noise(0.0, 0.05);
    for (int v = 0; v < fx.rest.vertex_count(); v += 2) {
      t.source_indices.push_back(v);
      t.positions.push_back(target[v] + Vec3(noise(rng), noise(rng), noise(rng)));
    }
    const PoseParams pose = random_params(rng);
    auto deform = [&](const std::vector<double>& x) {
      return lbs_deform(fx.skeleton, PoseParams::unflatten(x, 3), fx.rest.vertices);
    };
    auto loss = [&](const std::vector<double>& x) { return point_loss(deform(x), t); };
    auto signature = [&](const std::vector<double>& x) {
      const auto d = deform(x);
      std::vector<double> diffs;
      for (std::size_t i = 0; i < t.size(); ++i) {
        for (int c = 0; c < 3; ++c) diffs.push_back(d[t.source_indices[i]][c] - t.positions[i][c]);
      }
      return signs(diffs);
    };
    const auto x = pose.flatten();
    std::vector<Vec3> g(fx.rest.vertices.size(), Vec3::Zero());
    point_loss(deform(x), t, &g);
    const auto analytic = lbs_pose_gradient(fx.skeleton, pose, fx.rest.vertices, g);
    parts.push_back(check("point", x, loss, analytic, all_of(x.size()), opt, signature));
  }
  return merge("point", parts, opt.tolerance);
}

Result arap_check(const Options& opt) {
  std::mt19937_64 rng(opt.seed + 13);
  const PoseFixture fx = pose_fixture(rng);
  std::vector<Result> parts;
  for (int trial = 0; trial < 8; ++trial) {
    const PoseParams pose = random_params(rng);
    auto deform = [&](const std::vector<double>& x) {
      return lbs_deform(fx.skeleton, PoseParams::unflatten(x, 3), fx.rest.vertices);
    };
    auto loss = [&](const std::vector<double>& x) { return arap_loss(fx.adjacency, deform(x)); };
    auto signature = [&](const std::vector<double>& x) {
      const auto d = deform(x);
      std::vector<double> diffs;
      for (const Edge& e : fx.adjacency.edges) diffs.push_back((d[e.a] - d[e.b]).norm() - e.length);
      return signs(diffs);
    };
    const auto x = pose.flatten();
    std::vector<Vec3> g(fx.rest.vertices.size(), Vec3::Zero());
    arap_loss(fx.adjacency, deform(x), &g);
    const auto analytic = lbs_pose_gradient(fx.skeleton, pose, fx.rest.vertices, g);
    parts.push_back(check("arap", x, loss, analytic, all_of(x.size()), opt, signature));
  }
  return merge("arap", parts, opt.tolerance);
}

Result smooth_check(const Options& opt) {
  std::mt19937_64 rng(opt.seed + 17);
  const PoseFixture fx = pose_fixture(rng);
  const std::size_t per = PoseParams::identity(3).flatten().size();
  std::vector<Result> parts;
  for (int trial = 0; trial < 4; ++trial) {
    const PoseParams p0 = random_params(rng), p1 = random_params(rng);
    auto frames = [&](const std::vector<double>& x) {
      std::vector<std::vector<Vec3>> f;
      for (std::size_t t = 0; t < 2; ++t) {
        const auto pose = PoseParams::unflatten(std::span<const double>(x).subspan(t * per, per), 3);
        f.push_back(lbs_deform(fx.skeleton, pose, fx.rest.vertices));
      }
      return f;
    };
    auto loss = [&](const std::vector<double>& x) { return smooth_loss(frames(x)); };
    std::vector<double> x = p0.flatten();
    const auto x1 = p1.flatten();
    x.insert(x.end(), x1.begin(), x1.end());
    std::vector<std::vector<Vec3>> g(2, std::vector<Vec3>(fx.rest.vertices.size(), Vec3::Zero()));
    smooth_loss(frames(x), &g);
    std::vector<double> analytic = lbs_pose_gradient(fx.skeleton, p0, fx.rest.vertices, g[0]);
    const auto a1 = lbs_pose_gradient(fx.skeleton, p1, fx.rest.vertices, g[1]);
    analytic.insert(analytic.end(), a1.begin(), a1.end());
    parts.push_back(check("smooth", x, loss, analytic, all_of(x.size()), opt));
  }
  return merge("smooth", parts, opt.tolerance);
}

}  // namespace

std::vector<Result> run_all(const Options& options) {
  return {network_check("L_c", LossVariant::OnlyLc, options),
          network_check("L_r", LossVariant::OnlyLr, options),
          network_check("combined", LossVariant::Full, options),
          network_check("RGL", LossVariant::Rgl, options),
          network_check("NGL", LossVariant::Ngl, options),
          network_check("GSL", LossVariant::Gsl, options),
          point_check(options),
          arap_check(options),
          smooth_check(options)};
}

}  // namespace geodistill::gradcheck
