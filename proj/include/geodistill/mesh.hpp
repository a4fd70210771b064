#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace geodistill {

using Vec3 = Eigen::Vector3d;
using Color = Eigen::Vector3f;
using Face = std::array<int, 3>;

/// Triangle mesh. Colors, when present, are per-vertex RGB in [0, 1].
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::optional<std::vector<Color>> colors;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
};

struct Edge {
  int a = 0;
  int b = 0;
  double length = 0.0;
};

/// Vertex neighborhoods plus the unique undirected edge list (a < b).
struct AdjacencyIndex {
  std::vector<std::vector<int>> neighbors;
  std::vector<Edge> edges;

  int vertex_count() const { return static_cast<int>(neighbors.size()); }
};

enum class MeshFormat { Obj, Ply };

/// Picks the format from the file extension (.obj / .ply, case-insensitive).
MeshFormat mesh_format_from_path(const std::filesystem::path& path);

/// Throws Error(Index) for out-of-range or repeated face indices and
/// Error(Shape) for an empty vertex set.
void validate_mesh(const Mesh& mesh);

Mesh load_mesh(const std::filesystem::path& path, MeshFormat format);
Mesh load_mesh(const std::filesystem::path& path);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);

AdjacencyIndex build_adjacency(const Mesh& mesh);

/// Number of edge-connected components; isolated vertices count as their own
/// component.
int connected_components(const AdjacencyIndex& adjacency);

/// Greedy farthest point sampling under Euclidean distance. The start vertex
/// is drawn uniformly from `seed`; ties go to the lowest index.
std::vector<int> farthest_point_sampling(std::span<const Vec3> points, int count,
                                         std::uint64_t seed);
std::vector<int> farthest_point_sampling_from(std::span<const Vec3> points, int count,
                                              int start);

/// Largest pairwise Euclidean distance between vertices (exact).
double max_extent(const Mesh& mesh);

double bounding_box_diagonal(std::span<const Vec3> points);

}  // namespace geodistill
