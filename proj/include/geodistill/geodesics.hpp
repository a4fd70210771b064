#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "geodistill/mesh.hpp"
#include "geodistill/types.hpp"

namespace geodistill {

/// Distances from every vertex (rows) to each anchor (columns).
struct GeodesicField {
  std::vector<int> anchors;
  Eigen::MatrixXd distances;  // N x A
  bool rescaled = false;
  double scale = 1.0;  // the divisor applied by rescale_distances

  int vertex_count() const { return static_cast<int>(distances.rows()); }
  int anchor_count() const { return static_cast<int>(distances.cols()); }
};

/// Heat-method geodesic solver for one mesh. Both sparse factorizations are
/// computed once in the constructor and shared read-only by every solve, so
/// a single instance can serve many anchor sets (and many threads).
class HeatGeodesicSolver {
 public:
  /// `time_scale` multiplies the squared mean edge length to give the heat
  /// diffusion time. Throws Error(Topology) for multi-component meshes and
  /// Error(Numeric) if a factorization fails.
  explicit HeatGeodesicSolver(const Mesh& mesh, double time_scale = 1.0);
  ~HeatGeodesicSolver();
  HeatGeodesicSolver(HeatGeodesicSolver&&) noexcept;
  HeatGeodesicSolver& operator=(HeatGeodesicSolver&&) noexcept;

  /// One distance column per anchor, shifted so each anchor sits at 0 and
  /// clamped to be nonnegative. Columns are solved in parallel.
  GeodesicField solve(std::span<const int> anchors) const;

  int vertex_count() const;
  double mean_edge_length() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

GeodesicField heat_geodesic(const Mesh& mesh, std::span<const int> anchors,
                            double time_scale = 1.0);

/// Exact shortest paths along mesh edges; an upper bound on surface geodesics.
GeodesicField dijkstra_geodesic(const AdjacencyIndex& adjacency, std::span<const int> anchors);

/// Divides by the global maximum so the largest entry is exactly 1.
GeodesicField rescale_distances(const GeodesicField& field);

/// Field as an N x A float matrix, for dumping through SAF1.
FeatureMatrix field_to_matrix(const GeodesicField& field);

}  // namespace geodistill
