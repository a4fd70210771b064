#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "geodistill/matching.hpp"
#include "geodistill/mesh.hpp"
#include "geodistill/pose.hpp"
#include "geodistill/types.hpp"

// Deterministic synthetic shapes with known symmetry, skeleton and
// correspondences.
namespace geodistill::synth {

/// Subdivided icosahedron projected to a sphere: 10 * 4^k + 2 vertices.
Mesh make_icosphere(int subdivisions, double radius = 1.0);

enum class Side : std::int8_t { Right = -1, Center = 0, Left = 1 };

/// Vertex involution across the sagittal plane z = 0.
struct MirrorMap {
  std::vector<int> mirror;
  std::vector<Side> side;
};

/// Ellipsoidal body along x (head at +x), four legs hanging along -y.
struct QuadrupedSpec {
  double body_length = 2.0;   // tip to tip
  double body_radius = 0.35;
  double leg_length = 0.7;
  int rings = 24;      // body rings between the poles
  int segments = 24;   // vertices per body ring (even)
  int leg_rings = 8;
  int patch = 3;       // leg attachment patch, in body quads per side
  double skin_falloff = 0.1;  // skinning softmax temperature over body radius
};

/// Proportions drawn around the defaults; resolution fields are kept, so
/// every shape from the same base spec shares its connectivity.
QuadrupedSpec random_quadruped_spec(std::uint64_t seed, const QuadrupedSpec& base = {});

enum Part : int { Body = 0, FrontLeft = 1, FrontRight = 2, HindLeft = 3, HindRight = 4 };

struct Quadruped {
  Mesh mesh;
  MirrorMap mirror;
  Skeleton skeleton;         // 0 spine, 1 neck, 2..5 legs FL FR HL HR
  std::vector<int> part;     // Part per vertex
  /// Pose- and proportion-independent coordinates per vertex:
  /// longitudinal in [-1, 1], vertical (body [-1, 1], legs below -1),
  /// |lateral| / radius, leg flag.
  Eigen::MatrixXd canonical;
};

/// Skinning weights are distance-based on the default proportions and shared
/// by every shape of the same resolution, like a template rig.
Quadruped make_quadruped(const QuadrupedSpec& spec);

struct FeatureRecipe {
  enum class Kind { SymmetricSemantic, Positional };
  Kind kind = Kind::SymmetricSemantic;
  int dim = 32;
  double noise = 0.05;
  /// Weight of a faint signed left/right channel; 0 makes mirrored vertices
  /// identical before noise.
  double side_cue = 0.007;
  double bandwidth = 1.0;
  /// When false the side channel is left noise-free.
  bool noisy_cue = false;
  std::uint64_t recipe_seed = 1234;  // fixes the feature function itself
};

/// Unit-norm descriptors. Symmetric-semantic features are a smooth function
/// of the canonical coordinates (|lateral| only, so mirrored vertices
/// coincide up to the side cue) plus Gaussian noise of total norm `noise`
/// drawn from `seed`. Positional features use raw coordinates instead.
FeatureMatrix synth_base_features(const Quadruped& shape, const FeatureRecipe& recipe,
                                  std::uint64_t seed);
/// Generic meshes: canonical coordinates come from the vertex positions
/// normalized by the bounding box, with |z| and no part channel.
FeatureMatrix synth_base_features(const Mesh& mesh, const MirrorMap& mirror,
                                  const FeatureRecipe& recipe, std::uint64_t seed);

/// Random pose: legs and neck swing by up to `magnitude` radians, the root
/// turns by up to the same amount and shifts by up to 5% of the bounding-box diagonal.
PoseParams random_pose(const Quadruped& shape, std::uint64_t seed, double magnitude = 0.35);

/// Ground truth for a target that shares the source's vertex bijection: the
/// target position of every listed source vertex.
GroundTruth ground_truth_correspondence(const Mesh& source, const Mesh& target,
                                        std::span<const int> source_indices);

/// Rigidly moved copy (rotation then translation).
Mesh transform_mesh(const Mesh& mesh, const Eigen::Matrix3d& rotation, const Vec3& translation);

/// Fraction of `sources` whose matched target lies on the opposite side.
double side_confusion(const MirrorMap& source_mirror, const MirrorMap& target_mirror,
                      std::span<const int> sources, std::span<const int> matched);

/// Vertices of the four legs.
std::vector<int> limb_vertices(const Quadruped& shape);

}  // namespace geodistill::synth
