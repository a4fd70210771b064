#include "geodistill/pose.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "geodistill/error.hpp"
#include "geodistill/features.hpp"
#include "geodistill/kernels.hpp"

namespace geodistill {

namespace {

Eigen::Matrix3d hat(const Vec3& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// R = I + a [v] + b [v]^2 with a = sin(t)/t, b = (1 - cos t)/t^2, plus the
// derivatives of a and b with respect to t^2. Series near zero.
struct RodriguesCoeffs {
  double a, b, da, db;
};

RodriguesCoeffs rodrigues(double t2) {
  if (t2 < 1e-8) {
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            -1.0 / 6.0 + t2 / 60.0, -1.0 / 24.0 + t2 / 360.0};
  }
  const double t = std::sqrt(t2);
  const double s = std::sin(t), c = std::cos(t);
  const double a = s / t;
  const double b = (1.0 - c) / t2;
  // da/dt = (t c - s)/t^2, db/dt = (t s - 2(1 - c))/t^3; d/d(t^2) = d/dt / (2t)
  return {a, b, (t * c - s) / (2.0 * t2 * t), (t * s - 2.0 * (1.0 - c)) / (2.0 * t2 * t2)};
}

// Bones ordered so that every parent precedes its children.
std::vector<int> topological_order(const Skeleton& sk) {
  const int b = sk.bone_count();
  std::vector<std::vector<int>> children(b);
  for (int i = 1; i < b; ++i) children[sk.bones[i].parent].push_back(i);
  std::vector<int> order{0};
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (int c : children[order[k]]) order.push_back(c);
  }
  return order;
}

struct Affine {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  Vec3 c = Vec3::Zero();
};

struct Kinematics {
  std::vector<int> order;
  std::vector<Eigen::Matrix3d> local;  // per-bone rotation A_b
  std::vector<Vec3> local_offset;      // h_b - A_b h_b
  std::vector<Affine> global;
  Eigen::Matrix3d root;
};

Kinematics forward_kinematics(const Skeleton& sk, const PoseParams& pose) {
  const int b = sk.bone_count();
  if (static_cast<int>(pose.bone_rotations.size()) != b) {
    fail(ErrorKind::Shape, "pose has " + std::to_string(pose.bone_rotations.size()) +
                               " bone rotations, skeleton has " + std::to_string(b) + " bones");
  }
  Kinematics k;
  k.order = topological_order(sk);
  k.local.resize(b);
  k.local_offset.resize(b);
  k.global.resize(b);
  for (int i : k.order) {
    k.local[i] = axis_angle_to_matrix(pose.bone_rotations[i]);
    k.local_offset[i] = sk.bones[i].head - k.local[i] * sk.bones[i].head;
    const Affine parent = sk.bones[i].parent < 0 ? Affine{} : k.global[sk.bones[i].parent];
    k.global[i].m = parent.m * k.local[i];
    k.global[i].c = parent.m * k.local_offset[i] + parent.c;
  }
  k.root = axis_angle_to_matrix(pose.root_rotation);
  return k;
}

void check_weights(const Skeleton& sk, std::size_t vertex_count) {
  if (sk.weights.rows() != static_cast<Eigen::Index>(vertex_count) ||
      sk.weights.cols() != sk.bone_count()) {
    fail(ErrorKind::Shape, "skinning weights are " + std::to_string(sk.weights.rows()) + "x" +
                               std::to_string(sk.weights.cols()) + ", expected " +
                               std::to_string(vertex_count) + "x" +
                               std::to_string(sk.bone_count()));
  }
  for (Eigen::Index n = 0; n < sk.weights.rows(); ++n) {
    if (std::abs(sk.weights.row(n).sum() - 1.0) > 1e-6) {
      fail(ErrorKind::Domain, "skinning row " + std::to_string(n) + " does not sum to 1");
    }
  }
}

// Blended (pre-root) position of every vertex.
std::vector<Vec3> blend(const Skeleton& sk, const Kinematics& k, std::span<const Vec3> rest) {
  std::vector<Vec3> out(rest.size(), Vec3::Zero());
  for (std::size_t n = 0; n < rest.size(); ++n) {
    for (int b = 0; b < sk.bone_count(); ++b) {
      const double w = sk.weights(static_cast<Eigen::Index>(n), b);
      if (w == 0.0) continue;
      out[n] += w * (k.global[b].m * rest[n] + k.global[b].c);
    }
  }
  return out;
}

int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

void validate_skeleton(const Skeleton& skeleton, int vertex_count) {
  const int b = skeleton.bone_count();
  if (b < 1) fail(ErrorKind::Topology, "skeleton has no bones");
  if (skeleton.bones[0].parent != -1) fail(ErrorKind::Topology, "bone 0 must be the root");
  for (int i = 1; i < b; ++i) {
    const int p = skeleton.bones[i].parent;
    if (p < 0 || p >= b || p == i) {
      fail(ErrorKind::Topology, "bone " + std::to_string(i) + " has invalid parent " + std::to_string(p));
    }
  }
  if (static_cast<int>(topological_order(skeleton).size()) != b) {
    fail(ErrorKind::Topology, "bone parents do not form a tree rooted at bone 0");
  }
  if ((skeleton.weights.array() < 0.0).any()) fail(ErrorKind::Domain, "negative skinning weight");
  check_weights(skeleton, static_cast<std::size_t>(vertex_count));
}

PoseParams PoseParams::identity(int bones) {
  PoseParams p;
  p.bone_rotations.assign(bones, Vec3::Zero());
  return p;
}

std::vector<double> PoseParams::flatten() const {
  std::vector<double> v;
  v.reserve(7 + 3 * bone_rotations.size());
  for (int i = 0; i < 3; ++i) v.push_back(root_rotation[i]);
  for (int i = 0; i < 3; ++i) v.push_back(translation[i]);
  v.push_back(scale);
  for (const Vec3& r : bone_rotations) {
    for (int i = 0; i < 3; ++i) v.push_back(r[i]);
  }
  return v;
}

PoseParams PoseParams::unflatten(std::span<const double> values, int bones) {
  if (values.size() != static_cast<std::size_t>(7 + 3 * bones)) {
    fail(ErrorKind::Shape, "flattened pose has the wrong length");
  }
  PoseParams p;
  p.root_rotation = Vec3(values[0], values[1], values[2]);
  p.translation = Vec3(values[3], values[4], values[5]);
  p.scale = values[6];
  for (int b = 0; b < bones; ++b) {
    p.bone_rotations.emplace_back(values[7 + 3 * b], values[8 + 3 * b], values[9 + 3 * b]);
  }
  return p;
}

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& v) {
  const auto [a, b, da, db] = rodrigues(v.squaredNorm());
  const Eigen::Matrix3d k = hat(v);
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

Eigen::Matrix3d axis_angle_derivative(const Vec3& v, int i) {
  const auto [a, b, da, db] = rodrigues(v.squaredNorm());
  const Eigen::Matrix3d k = hat(v);
  const Eigen::Matrix3d e = hat(Vec3::Unit(i));
  return a * e + b * (e * k + k * e) + 2.0 * v[i] * (da * k + db * k * k);
}

std::vector<Vec3> lbs_deform(const Skeleton& skeleton, const PoseParams& pose,
                             std::span<const Vec3> rest) {
  check_weights(skeleton, rest.size());
  // Blending with weights that sum to 1 only up to rounding would perturb the
  // rest shape, so the identity pose is answered directly.
  const auto flat = pose.flatten();
  if (flat[6] == 1.0 && std::all_of(flat.begin(), flat.begin() + 6, [](double v) { return v == 0.0; }) &&
      std::all_of(flat.begin() + 7, flat.end(), [](double v) { return v == 0.0; })) {
    if (pose.bone_rotations.size() != skeleton.bones.size()) fail(ErrorKind::Shape, "pose bone count mismatch");
    return {rest.begin(), rest.end()};
  }
  const Kinematics k = forward_kinematics(skeleton, pose);
  std::vector<Vec3> out = blend(skeleton, k, rest);
  for (Vec3& x : out) x = pose.scale * (k.root * x) + pose.translation;
  return out;
}

std::vector<double> lbs_pose_gradient(const Skeleton& skeleton, const PoseParams& pose,
                                      std::span<const Vec3> rest, std::span<const Vec3> d_deformed) {
  check_weights(skeleton, rest.size());
  if (d_deformed.size() != rest.size()) fail(ErrorKind::Shape, "gradient count mismatch");
  const int bones = skeleton.bone_count();
  const Kinematics k = forward_kinematics(skeleton, pose);
  const std::vector<Vec3> u = blend(skeleton, k, rest);

  std::vector<double> grad(7 + 3 * bones, 0.0);
  Eigen::Matrix3d g_root = Eigen::Matrix3d::Zero();
  Vec3 g_t = Vec3::Zero();
  double g_s = 0.0;
  std::vector<Eigen::Matrix3d> g_m(bones, Eigen::Matrix3d::Zero());
  std::vector<Vec3> g_c(bones, Vec3::Zero());
  for (std::size_t n = 0; n < rest.size(); ++n) {
    const Vec3& g = d_deformed[n];
    g_t += g;
    const Vec3 ru = k.root * u[n];
    g_s += g.dot(ru);
    g_root += pose.scale * g * u[n].transpose();
    const Vec3 g_u = pose.scale * (k.root.transpose() * g);
    for (int b = 0; b < bones; ++b) {
      const double w = skeleton.weights(static_cast<Eigen::Index>(n), b);
      if (w == 0.0) continue;
      g_m[b] += w * g_u * rest[n].transpose();
      g_c[b] += w * g_u;
    }
  }
  for (int i = 0; i < 3; ++i) {
    grad[i] = (g_root.array() * axis_angle_derivative(pose.root_rotation, i).array()).sum();
    grad[3 + i] = g_t[i];
  }
  grad[6] = g_s;

  // Reverse pass over the tree: children hand their gradients to parents.
  for (auto it = k.order.rbegin(); it != k.order.rend(); ++it) {
    const int b = *it;
    const int p = skeleton.bones[b].parent;
    const Eigen::Matrix3d parent_m = p < 0 ? Eigen::Matrix3d::Identity() : k.global[p].m;
    // M_b = M_p A_b, c_b = M_p o_b + c_p, o_b = h_b - A_b h_b
    Eigen::Matrix3d g_a = parent_m.transpose() * g_m[b];
    const Vec3 g_o = parent_m.transpose() * g_c[b];
    g_a -= g_o * skeleton.bones[b].head.transpose();
    if (p >= 0) {
      g_m[p] += g_m[b] * k.local[b].transpose() + g_c[b] * k.local_offset[b].transpose();
      g_c[p] += g_c[b];
    }
    for (int i = 0; i < 3; ++i) {
      grad[7 + 3 * b + i] =
          (g_a.array() * axis_angle_derivative(pose.bone_rotations[b], i).array()).sum();
    }
  }
  return grad;
}

double point_loss(std::span<const Vec3> deformed, const PointTargets& targets,
                  std::vector<Vec3>* grad, double weight) {
  if (targets.source_indices.size() != targets.positions.size()) {
    fail(ErrorKind::Shape, "point targets: index and position counts differ");
  }
  if (targets.size() == 0) fail(ErrorKind::Domain, "no correspondences");
  const double inv = 1.0 / static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int s = targets.source_indices[i];
    if (s < 0 || s >= static_cast<int>(deformed.size())) {
      fail(ErrorKind::Index, "correspondence source " + std::to_string(s) + " out of range");
    }
    const Vec3 d = deformed[s] - targets.positions[i];
    total += d.cwiseAbs().sum();
    if (grad) {
      for (int c = 0; c < 3; ++c) (*grad)[s][c] += weight * inv * sign_of(d[c]);
    }
  }
  return total * inv;
}

double arap_loss(const AdjacencyIndex& adjacency, std::span<const Vec3> deformed,
                 std::vector<Vec3>* grad, double weight) {
  if (adjacency.vertex_count() != static_cast<int>(deformed.size())) {
    fail(ErrorKind::Shape, "adjacency and vertex count differ");
  }
  if (adjacency.edges.empty()) return 0.0;
  const double inv = 1.0 / static_cast<double>(adjacency.edges.size());
  double total = 0.0;
  for (const Edge& e : adjacency.edges) {
    const Vec3 d = deformed[e.a] - deformed[e.b];
    const double len = d.norm();
    total += std::abs(e.length - len);
    if (grad && len > 0.0) {
      const Vec3 g = (weight * inv * sign_of(len - e.length) / len) * d;
      (*grad)[e.a] += g;
      (*grad)[e.b] -= g;
    }
  }
  return total * inv;
}

double smooth_loss(std::span<const std::vector<Vec3>> frames,
                   std::vector<std::vector<Vec3>>* grads, double weight) {
  if (frames.size() < 2) fail(ErrorKind::Domain, "temporal smoothing needs at least two frames");
  const std::size_t n = frames[0].size();
  for (const auto& f : frames) {
    if (f.size() != n) fail(ErrorKind::Shape, "frames have different point counts");
  }
  if (n == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(n * (frames.size() - 1));
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 d = frames[t][i] - frames[t + 1][i];
      total += d.squaredNorm();
      if (grads) {
        (*grads)[t][i] += 2.0 * weight * inv * d;
        (*grads)[t + 1][i] -= 2.0 * weight * inv * d;
      }
    }
  }
  return total * inv;
}

// ---------------------------------------------------------------- alignment

namespace {

struct FrameEval {
  double loss = 0.0;
  std::vector<Vec3> deformed;
  std::vector<Vec3> grad;  // w.r.t. deformed
};

FrameEval evaluate_frame(const Skeleton& sk, const PoseParams& pose, const Mesh& rest,
                         const AdjacencyIndex& adj, const PointTargets& targets,
                         const AlignConfig& cfg) {
  FrameEval f;
  f.deformed = lbs_deform(sk, pose, rest.vertices);
  f.grad.assign(f.deformed.size(), Vec3::Zero());
  f.loss = cfg.w_point * point_loss(f.deformed, targets, &f.grad, cfg.w_point);
  if (cfg.w_arap != 0.0) f.loss += cfg.w_arap * arap_loss(adj, f.deformed, &f.grad, cfg.w_arap);
  return f;
}

// Phase-aware step size: cosine decay restarts at each phase.
double step_size(const AlignConfig& cfg, int iteration, int phase_one) {
  if (!cfg.cosine_decay) return cfg.learning_rate;
  const bool first = iteration <= phase_one;
  const int len = first ? phase_one : cfg.iterations - phase_one;
  const int pos = first ? iteration - 1 : iteration - 1 - phase_one;
  if (len <= 0) return cfg.learning_rate;
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * pos / len));
}

void check_align_config(const AlignConfig& cfg) {
  if (cfg.iterations < 0) fail(ErrorKind::Domain, "iterations must be nonnegative");
  if (!(cfg.learning_rate >= 0.0)) fail(ErrorKind::Domain, "learning rate must be nonnegative");
  if (cfg.w_point < 0 || cfg.w_arap < 0 || cfg.w_smooth < 0) {
    fail(ErrorKind::Domain, "alignment weights must be nonnegative");
  }
}

nn::AdamWConfig align_optimizer(const AlignConfig& cfg) {
  nn::AdamWConfig a;
  a.learning_rate = cfg.learning_rate;
  a.weight_decay = 0.0;
  return a;
}

}  // namespace

AlignResult align_pose(const Skeleton& skeleton, const Mesh& rest, const PointTargets& targets,
                       const AlignConfig& config, const AlignObserver& observer) {
  check_align_config(config);
  validate_skeleton(skeleton, rest.vertex_count());
  if (targets.size() == 0) fail(ErrorKind::Domain, "no correspondences");
  const AdjacencyIndex adj = build_adjacency(rest);
  const int bones = skeleton.bone_count();
  AlignResult result;
  result.pose = PoseParams::identity(bones);
  std::vector<double> params = result.pose.flatten();
  nn::AdamWState<double> opt(align_optimizer(config), params.size());
  const int phase_one = config.iterations / 2;
  std::vector<std::uint8_t> root_only(params.size(), 0);
  std::fill(root_only.begin(), root_only.begin() + 7, 1);

  for (int it = 1; it <= config.iterations; ++it) {
    const PoseParams pose = PoseParams::unflatten(params, bones);
    const FrameEval f = evaluate_frame(skeleton, pose, rest, adj, targets, config);
    if (!std::isfinite(f.loss)) fail(ErrorKind::Numeric, "alignment loss is not finite at iteration " + std::to_string(it));
    result.loss_trace.push_back(f.loss);
    const std::vector<double> grad = lbs_pose_gradient(skeleton, pose, rest.vertices, f.grad);
    opt.config.learning_rate = step_size(config, it, phase_one);
    nn::adamw_step(params, grad, opt, it <= phase_one ? &root_only : nullptr);
    params[6] = std::max(params[6], 1e-6);
    if (observer) observer(it, PoseParams::unflatten(params, bones));
  }
  result.pose = PoseParams::unflatten(params, bones);
  return result;
}

PointTargets targets_from_features(const FeatureMatrix& source_features, const Mesh& target,
                                   const FeatureMatrix& target_features,
                                   std::span<const int> source_subset) {
  if (target_features.rows() != target.vertex_count()) {
    fail(ErrorKind::Shape, "target features do not match the target mesh");
  }
  const Correspondence corr = source_subset.empty()
                                  ? match_points(source_features, target_features)
                                  : match_points(source_features, target_features, source_subset);
  PointTargets t;
  t.source_indices = corr.source;
  for (int j : corr.target) t.positions.push_back(target.vertices[j]);
  return t;
}

std::vector<AlignResult> align_sequence(const Skeleton& skeleton, const Mesh& rest,
                                        std::span<const PointTargets> frames,
                                        const AlignConfig& config) {
  check_align_config(config);
  validate_skeleton(skeleton, rest.vertex_count());
  if (frames.size() < 2) fail(ErrorKind::Domain, "a sequence needs at least two frames");
  for (const auto& f : frames) {
    if (f.size() == 0) fail(ErrorKind::Domain, "a frame has no correspondences");
  }
  const AdjacencyIndex adj = build_adjacency(rest);
  const int bones = skeleton.bone_count();
  const std::size_t per = 7 + 3 * static_cast<std::size_t>(bones);
  const std::size_t t_count = frames.size();
  std::vector<double> params;
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto p = PoseParams::identity(bones).flatten();
    params.insert(params.end(), p.begin(), p.end());
  }
  nn::AdamWState<double> opt(align_optimizer(config), params.size());
  const int phase_one = config.iterations / 2;
  std::vector<std::uint8_t> root_only(params.size(), 0);
  for (std::size_t t = 0; t < t_count; ++t) {
    std::fill_n(root_only.begin() + static_cast<std::ptrdiff_t>(t * per), 7, 1);
  }

  std::vector<AlignResult> results(t_count);
  auto pose_at = [&](std::size_t t) {
    return PoseParams::unflatten(std::span<const double>(params).subspan(t * per, per), bones);
  };
  for (int it = 1; it <= config.iterations; ++it) {
    std::vector<FrameEval> evals(t_count);
    std::vector<PoseParams> poses(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
      poses[t] = pose_at(t);
      evals[t] = evaluate_frame(skeleton, poses[t], rest, adj, frames[t], config);
    }
    double total = 0.0;
    for (const auto& e : evals) total += e.loss;
    if (config.w_smooth != 0.0) {
      std::vector<std::vector<Vec3>> deformed(t_count), grads(t_count);
      for (std::size_t t = 0; t < t_count; ++t) {
        deformed[t] = evals[t].deformed;
        grads[t].assign(deformed[t].size(), Vec3::Zero());
      }
      total += config.w_smooth * smooth_loss(deformed, &grads, config.w_smooth);
      for (std::size_t t = 0; t < t_count; ++t) {
        for (std::size_t i = 0; i < grads[t].size(); ++i) evals[t].grad[i] += grads[t][i];
      }
    }
    if (!std::isfinite(total)) fail(ErrorKind::Numeric, "sequence loss is not finite at iteration " + std::to_string(it));
    std::vector<double> grad(params.size());
    for (std::size_t t = 0; t < t_count; ++t) {
      results[t].loss_trace.push_back(evals[t].loss);
      const auto g = lbs_pose_gradient(skeleton, poses[t], rest.vertices, evals[t].grad);
      std::copy(g.begin(), g.end(), grad.begin() + static_cast<std::ptrdiff_t>(t * per));
    }
    opt.config.learning_rate = step_size(config, it, phase_one);
    nn::adamw_step(params, grad, opt, it <= phase_one ? &root_only : nullptr);
    for (std::size_t t = 0; t < t_count; ++t) params[t * per + 6] = std::max(params[t * per + 6], 1e-6);
  }
  for (std::size_t t = 0; t < t_count; ++t) results[t].pose = pose_at(t);
  return results;
}

// ---------------------------------------------------------------- skinning

Eigen::MatrixXd SkinningRegressor::predict(const FeatureMatrix& features) const {
  if (features.cols() != weight.cols()) {
    fail(ErrorKind::Shape, "regressor expects dimension " + std::to_string(weight.cols()) +
                               ", got " + std::to_string(features.cols()));
  }
  Eigen::MatrixXd z = features.cast<double>() * weight.transpose();
  z.rowwise() += bias.transpose();
  for (Eigen::Index n = 0; n < z.rows(); ++n) {
    const double m = z.row(n).maxCoeff();
    z.row(n) = (z.row(n).array() - m).exp().matrix();
    z.row(n) /= z.row(n).sum();
  }
  return z;
}

double skinning_mse(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols()) {
    fail(ErrorKind::Shape, "skinning matrices differ in shape");
  }
  if (predicted.size() == 0) fail(ErrorKind::Domain, "empty skinning matrix");
  return (predicted - truth).squaredNorm() / static_cast<double>(predicted.size());
}

SkinningResult regress_skinning(const FeatureMatrix& train_features,
                                const Eigen::MatrixXd& train_weights,
                                const FeatureMatrix& test_features,
                                const Eigen::MatrixXd& test_weights, const SkinningConfig& config) {
  const auto b = train_weights.cols();
  if (b < 2) fail(ErrorKind::Domain, "skinning regression needs at least two bones");
  if (train_features.rows() == 0 || test_features.rows() == 0) {
    fail(ErrorKind::Domain, "degenerate train/test split");
  }
  if (train_features.rows() != train_weights.rows() || test_features.rows() != test_weights.rows() ||
      test_weights.cols() != b || test_features.cols() != train_features.cols()) {
    fail(ErrorKind::Shape, "skinning features and weights disagree in shape");
  }
  for (const Eigen::MatrixXd* w : {&train_weights, &test_weights}) {
    for (Eigen::Index n = 0; n < w->rows(); ++n) {
      if (std::abs(w->row(n).sum() - 1.0) > 1e-6) {
        fail(ErrorKind::Domain, "skinning row " + std::to_string(n) + " does not sum to 1");
      }
    }
  }
  const auto d = train_features.cols();
  SkinningResult result;
  SkinningRegressor& reg = result.regressor;
  std::mt19937_64 rng(config.seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> uni(-bound, bound);
  reg.weight.resize(b, d);
  for (Eigen::Index i = 0; i < reg.weight.size(); ++i) reg.weight.data()[i] = uni(rng);
  reg.bias = Eigen::VectorXd::Zero(b);

  const Eigen::MatrixXd x = train_features.cast<double>();
  const auto wsize = static_cast<std::size_t>(reg.weight.size());
  std::vector<double> params(wsize + static_cast<std::size_t>(b));
  auto pack = [&] {
    std::copy_n(reg.weight.data(), wsize, params.begin());
    std::copy_n(reg.bias.data(), b, params.begin() + static_cast<std::ptrdiff_t>(wsize));
  };
  auto unpack = [&] {
    std::copy_n(params.begin(), wsize, reg.weight.data());
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(wsize), b, reg.bias.data());
  };
  pack();
  nn::AdamWConfig acfg;
  acfg.learning_rate = config.learning_rate;
  acfg.weight_decay = config.weight_decay;
  nn::AdamWState<double> opt(acfg, params.size());
  const double scale = 2.0 / static_cast<double>(train_weights.size());
  std::vector<double> grad(params.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Eigen::MatrixXd p = reg.predict(train_features);
    const Eigen::MatrixXd dp = scale * (p - train_weights);
    // Softmax backward: dz = p * (dp - rowsum(dp * p))
    const Eigen::VectorXd inner = (dp.array() * p.array()).rowwise().sum();
    const Eigen::MatrixXd dz = (p.array() * (dp.colwise() - inner).array()).matrix();
    const Eigen::MatrixXd dw = dz.transpose() * x;  // B x d, column-major like reg.weight
    std::copy_n(dw.data(), wsize, grad.begin());
    const Eigen::VectorXd db = dz.colwise().sum().transpose();
    std::copy_n(db.data(), b, grad.begin() + static_cast<std::ptrdiff_t>(wsize));
    nn::adamw_step(params, grad, opt);
    unpack();
  }
  result.train_mse = skinning_mse(reg.predict(train_features), train_weights);
  result.test_mse = skinning_mse(reg.predict(test_features), test_weights);
  return result;
}

std::vector<std::vector<int>> kfold_split(int n, int folds, std::uint64_t seed) {
  if (folds < 2 || folds > n) fail(ErrorKind::Domain, "fold count must lie in [2, n]");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend
  // on the standard library's shuffle.
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  std::vector<std::vector<int>> out(folds);
  for (int f = 0; f < folds; ++f) {
    const int begin = static_cast<int>(static_cast<long long>(n) * f / folds);
    const int end = static_cast<int>(static_cast<long long>(n) * (f + 1) / folds);
    out[f].assign(idx.begin() + begin, idx.begin() + end);
  }
  return out;
}

// ---------------------------------------------------------------- files

void save_skeleton(const Skeleton& skeleton, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "bones " << skeleton.bone_count() << '\n';
  for (int b = 0; b < skeleton.bone_count(); ++b) {
    const Bone& bone = skeleton.bones[b];
    out << b << ' ' << bone.parent << ' ' << bone.head.x() << ' ' << bone.head.y() << ' '
        << bone.head.z() << '\n';
  }
  const std::filesystem::path weights = path.filename().string() + ".weights.saf";
  out << "weights " << weights.string() << '\n';
  write_features(skeleton.weights.cast<float>(), path.parent_path() / weights);
}

Skeleton load_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  Skeleton sk;
  std::string line;
  std::string weights_name;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    if (key == "bones") {
      int count = 0;
      if (!(ss >> count) || count < 1) fail(ErrorKind::Format, path.string() + ": bad bone count");
      sk.bones.resize(count);
      for (int i = 0; i < count; ++i) {
        if (!std::getline(in, line)) fail(ErrorKind::Format, path.string() + ": truncated bone list");
        std::istringstream row(line);
        int id = 0;
        Bone bone;
        if (!(row >> id >> bone.parent >> bone.head.x() >> bone.head.y() >> bone.head.z())) {
          fail(ErrorKind::Format, path.string() + ": bad bone row");
        }
        if (id < 0 || id >= count) fail(ErrorKind::Index, path.string() + ": bone id out of range");
        sk.bones[id] = bone;
      }
    } else if (key == "weights") {
      if (!(ss >> weights_name)) fail(ErrorKind::Format, path.string() + ": missing weights file");
    } else {
      fail(ErrorKind::Format, path.string() + ": unknown section '" + key + "'");
    }
  }
  if (sk.bones.empty()) fail(ErrorKind::Format, path.string() + ": no bones section");
  if (weights_name.empty()) fail(ErrorKind::Format, path.string() + ": no weights section");
  sk.weights = read_features(path.parent_path() / weights_name).cast<double>();
  // Stored in single precision; restore exact unit row sums.
  for (Eigen::Index n = 0; n < sk.weights.rows(); ++n) {
    const double s = sk.weights.row(n).sum();
    if (s > 0.0) sk.weights.row(n) /= s;
  }
  validate_skeleton(sk, static_cast<int>(sk.weights.rows()));
  return sk;
}

void write_pose_csv(const PoseParams& pose, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "bone,rx,ry,rz,tx,ty,tz,scale\n";
  const Vec3& r = pose.root_rotation;
  const Vec3& t = pose.translation;
  out << "root," << r.x() << ',' << r.y() << ',' << r.z() << ',' << t.x() << ',' << t.y() << ','
      << t.z() << ',' << pose.scale << '\n';
  for (std::size_t b = 0; b < pose.bone_rotations.size(); ++b) {
    const Vec3& q = pose.bone_rotations[b];
    out << b << ',' << q.x() << ',' << q.y() << ',' << q.z() << ",0,0,0,1\n";
  }
}

PoseParams read_pose_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  PoseParams pose;
  std::string line;
  bool have_root = false;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("bone,", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    std::string id;
    double v[7];
    if (!(ss >> id >> v[0] >> v[1] >> v[2] >> v[3] >> v[4] >> v[5] >> v[6])) {
      fail(ErrorKind::Format, path.string() + ": bad pose row");
    }
    if (id == "root") {
      pose.root_rotation = Vec3(v[0], v[1], v[2]);
      pose.translation = Vec3(v[3], v[4], v[5]);
      pose.scale = v[6];
      have_root = true;
    } else {
      if (std::stoi(id) != static_cast<int>(pose.bone_rotations.size())) {
        fail(ErrorKind::Format, path.string() + ": bone rows out of order");
      }
      pose.bone_rotations.emplace_back(v[0], v[1], v[2]);
    }
  }
  if (!have_root) fail(ErrorKind::Format, path.string() + ": missing root row");
  if (!(pose.scale > 0.0)) fail(ErrorKind::Domain, path.string() + ": scale must be positive");
  return pose;
}

}  // namespace geodistill
