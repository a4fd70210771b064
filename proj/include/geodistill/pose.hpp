#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "geodistill/matching.hpp"
#include "geodistill/mesh.hpp"
#include "geodistill/nn.hpp"
#include "geodistill/types.hpp"

namespace geodistill {

struct Bone {
  int parent = -1;  // -1 only for bone 0
  Vec3 head = Vec3::Zero();
};

/// Kinematic tree plus N x B skinning weights (rows sum to 1).
struct Skeleton {
  std::vector<Bone> bones;
  Eigen::MatrixXd weights;

  int bone_count() const { return static_cast<int>(bones.size()); }
};

/// Throws Error(Topology) if the parents do not form a tree rooted at bone 0,
/// Error(Domain) for negative weights or rows not summing to 1 +- 1e-6.
void validate_skeleton(const Skeleton& skeleton, int vertex_count);

/// Root similarity transform (axis-angle rotation, translation, scale) and
/// one axis-angle rotation per bone about its rest head.
struct PoseParams {
  Vec3 root_rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  std::vector<Vec3> bone_rotations;

  static PoseParams identity(int bones);

  /// [root_rotation, translation, scale, bone_rotations...]
  std::vector<double> flatten() const;
  static PoseParams unflatten(std::span<const double> values, int bones);
};

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle);
/// Derivative of the rotation matrix with respect to component i.
Eigen::Matrix3d axis_angle_derivative(const Vec3& axis_angle, int i);

/// x = s * R * (sum_b w_b * G_b * rest) + t, G_b composed down the tree.
std::vector<Vec3> lbs_deform(const Skeleton& skeleton, const PoseParams& pose,
                             std::span<const Vec3> rest);

/// Gradient of a scalar loss with respect to the flattened pose, given the
/// loss gradient with respect to every deformed vertex.
std::vector<double> lbs_pose_gradient(const Skeleton& skeleton, const PoseParams& pose,
                                      std::span<const Vec3> rest, std::span<const Vec3> d_deformed);

// Loss terms; each optionally accumulates d(loss)/d(vertex) into `grad`
// (which must already be sized like the vertex list).

/// (1/|I|) sum_i ||x[src_i] - target_i||_1 over the supplied pairs.
double point_loss(std::span<const Vec3> deformed, const PointTargets& targets,
                  std::vector<Vec3>* grad = nullptr, double weight = 1.0);
/// (1/E) sum_e | rest_e - |x_a - x_b| |
double arap_loss(const AdjacencyIndex& adjacency, std::span<const Vec3> deformed,
                 std::vector<Vec3>* grad = nullptr, double weight = 1.0);
/// (1/(N(T-1))) sum_t sum_i ||x_{i,t} - x_{i,t+1}||^2
double smooth_loss(std::span<const std::vector<Vec3>> frames,
                   std::vector<std::vector<Vec3>>* grads = nullptr, double weight = 1.0);

struct AlignConfig {
  int iterations = 4000;
  double learning_rate = 0.01;
  double w_point = 1.0;
  double w_arap = 1.0;
  double w_smooth = 0.0;
  /// Cosine decay of the step size within each phase.
  bool cosine_decay = true;
};

struct AlignResult {
  PoseParams pose;
  std::vector<double> loss_trace;
};

/// Called after every iteration with the 1-based iteration index.
using AlignObserver = std::function<void(int, const PoseParams&)>;

/// Two-phase gradient fit: the first half of the iterations moves only the
/// root rotation, translation and scale; the second half also moves every
/// bone rotation.
AlignResult align_pose(const Skeleton& skeleton, const Mesh& rest, const PointTargets& targets,
                       const AlignConfig& config, const AlignObserver& observer = {});

/// Correspondences from feature matching: each source vertex is paired with
/// the position of its best-matching target vertex.
PointTargets targets_from_features(const FeatureMatrix& source_features, const Mesh& target,
                                   const FeatureMatrix& target_features,
                                   std::span<const int> source_subset = {});

/// Joint fit of one pose per frame with temporal smoothing between
/// neighboring frames.
std::vector<AlignResult> align_sequence(const Skeleton& skeleton, const Mesh& rest,
                                        std::span<const PointTargets> frames,
                                        const AlignConfig& config);

// ---------------------------------------------------------------- skinning

struct SkinningRegressor {
  Eigen::MatrixXd weight;  // B x d
  Eigen::VectorXd bias;    // B

  /// Row-softmax of the affine map; rows sum to 1.
  Eigen::MatrixXd predict(const FeatureMatrix& features) const;
};

struct SkinningConfig {
  int epochs = 2000;
  double learning_rate = 0.01;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct SkinningResult {
  SkinningRegressor regressor;
  double train_mse = 0.0;
  double test_mse = 0.0;
};

/// Fits the linear + softmax regressor on the training rows by full-batch
/// AdamW on the mean squared error and reports held-out MSE.
SkinningResult regress_skinning(const FeatureMatrix& train_features,
                                const Eigen::MatrixXd& train_weights,
                                const FeatureMatrix& test_features,
                                const Eigen::MatrixXd& test_weights, const SkinningConfig& config);

double skinning_mse(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth);

/// Contiguous folds over a seeded shuffle of 0..n-1.
std::vector<std::vector<int>> kfold_split(int n, int folds, std::uint64_t seed);

// ---------------------------------------------------------------- files

/// Text file with a "bones <B>" section of "id parent hx hy hz" rows and a
/// "weights <file>" line naming an SAF1 matrix relative to the skeleton file.
void save_skeleton(const Skeleton& skeleton, const std::filesystem::path& path);
Skeleton load_skeleton(const std::filesystem::path& path);

/// CSV "bone,rx,ry,rz,tx,ty,tz,scale": one "root" row then one row per bone.
void write_pose_csv(const PoseParams& pose, const std::filesystem::path& path);
PoseParams read_pose_csv(const std::filesystem::path& path);

}  // namespace geodistill
