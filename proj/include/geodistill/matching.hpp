#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "geodistill/features.hpp"
#include "geodistill/mesh.hpp"
#include "geodistill/types.hpp"

namespace geodistill {

/// Source vertex indices paired with target positions. Serves both as
/// ground truth for evaluation and as fitting targets for pose alignment.
struct PointTargets {
  std::vector<int> source_indices;
  std::vector<Vec3> positions;

  std::size_t size() const { return source_indices.size(); }
};
using GroundTruth = PointTargets;

/// CSV "source_index,target_x,target_y,target_z" with a header row.
void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth read_ground_truth(const std::filesystem::path& path);

struct Correspondence {
  std::vector<int> source;
  std::vector<int> target;
  std::vector<double> score;

  std::size_t size() const { return source.size(); }
};

/// Best cosine match in `target` for each source row (or for each listed
/// source row); ties go to the lowest target index.
Correspondence match_points(const FeatureMatrix& source, const FeatureMatrix& target);
Correspondence match_points(const FeatureMatrix& source, const FeatureMatrix& target,
                            std::span<const int> source_subset);

/// Source samples used for evaluation: FPS over the source vertices.
inline constexpr int kEvaluationSamples = 1024;
std::vector<int> evaluation_samples(const Mesh& source, std::uint64_t seed,
                                    int count = kEvaluationSamples);

struct MetricReport {
  double err = 0.0;
  double acc = 0.0;  // percent
  double epsilon = 0.0;
  double extent = 0.0;  // max Euclidean extent of the target
  std::vector<double> point_error;  // Euclidean, per matched point
  std::vector<std::pair<double, double>> curve;  // (threshold fraction, acc %)
};

/// Mean squared distance between matched target positions and ground truth.
/// The ground truth must list exactly the correspondence's source points.
MetricReport correspondence_error(const Correspondence& corr, const Mesh& target,
                                  const GroundTruth& gt);

/// Percentage of points with error < epsilon * max_extent(target), plus the
/// accuracy curve on thresholds 0.25%, 0.5%, ..., 10%.
MetricReport correspondence_accuracy(const Correspondence& corr, const Mesh& target,
                                     const GroundTruth& gt, double epsilon);

/// err and acc together (one extent computation).
MetricReport evaluate_correspondence(const Correspondence& corr, const Mesh& target,
                                     const GroundTruth& gt, double epsilon);

std::vector<double> accuracy_thresholds();

struct KMeansResult {
  FeatureMatrix centroids;   // k x d, unit rows
  std::vector<int> labels;
  std::vector<double> objective;  // mean cosine distance after each round
  int rounds = 0;
  int reseeded = 0;
};

inline constexpr int kKMeansMaxRounds = 300;

/// Spherical k-means: k-means++ seeding on cosine distance, argmax-cosine
/// assignment, renormalized mean centroids.
KMeansResult kmeans(const FeatureMatrix& features, int k, std::uint64_t seed,
                    int max_rounds = kKMeansMaxRounds);

std::vector<int> segment_by_centroids(const FeatureMatrix& features, const FeatureMatrix& centroids);

struct PcaResult {
  RowMatrix<double> projection;        // N x out_dim
  Eigen::MatrixXd components;          // d x out_dim, unit columns
  Eigen::RowVectorXd mean;             // 1 x d
  std::vector<double> explained_variance;
  std::vector<double> explained_ratio;
};

PcaResult pca_project(const FeatureMatrix& features, int out_dim = 2);

/// Each vertex takes the color of its best-matching foreground pixel.
std::vector<Color> texture_from_image(const FeatureMatrix& mesh_features,
                                      const ImageFeatureMap& image);

/// Each target vertex takes the color of its best-matching source vertex.
std::vector<Color> texture_mesh_to_mesh(const FeatureMatrix& source_features,
                                        std::span<const Color> source_colors,
                                        const FeatureMatrix& target_features);

/// Distinct colors for segment labels.
std::vector<Color> label_colors(std::span<const int> labels);

void write_metric_report(const MetricReport& report, const std::filesystem::path& path);
void write_accuracy_curve(const MetricReport& report, const std::filesystem::path& path);

}  // namespace geodistill
