#include "geodistill/geodesics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <Eigen/SparseCholesky>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>

#include "geodistill/error.hpp"

namespace geodistill {

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

constexpr double kMinCotWeight = 1e-8;
constexpr double kPoissonRegularization = 1e-8;

double cot_at(const Vec3& apex, const Vec3& a, const Vec3& b) {
  const Vec3 u = a - apex;
  const Vec3 v = b - apex;
  const double den = u.cross(v).norm();
  if (den <= 0.0) fail(ErrorKind::Numeric, "degenerate triangle in cotangent Laplacian");
  return u.dot(v) / den;
}

void check_anchors(std::span<const int> anchors, int n) {
  if (anchors.empty()) fail(ErrorKind::Domain, "at least one anchor is required");
  for (int a : anchors) {
    if (a < 0 || a >= n) fail(ErrorKind::Index, "anchor " + std::to_string(a) + " out of range");
  }
}

}  // namespace

struct HeatGeodesicSolver::Impl {
  std::vector<Vec3> positions;
  std::vector<Face> faces;
  // Per face: the three opposite-angle cotangents, the unit normal and area.
  std::vector<Eigen::Vector3d> face_cot;
  std::vector<Vec3> face_normal;
  std::vector<double> face_area;
  double mean_edge = 0.0;
  Eigen::SimplicialLDLT<SparseMatrix> heat;
  Eigen::SimplicialLDLT<SparseMatrix> poisson;

  Eigen::VectorXd distance_column(int source) const {
    const int n = static_cast<int>(positions.size());
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
    delta[source] = 1.0;
    const Eigen::VectorXd u = heat.solve(delta);

    Eigen::VectorXd div = Eigen::VectorXd::Zero(n);
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const Face& tri = faces[f];
      const Vec3& n_f = face_normal[f];
      Vec3 grad = Vec3::Zero();
      for (int k = 0; k < 3; ++k) {
        const Vec3 opposite = positions[tri[(k + 2) % 3]] - positions[tri[(k + 1) % 3]];
        grad += u[tri[k]] * n_f.cross(opposite);
      }
      grad /= 2.0 * face_area[f];
      const double len = grad.norm();
      if (!(len > 0.0)) continue;
      const Vec3 x = -grad / len;
      for (int k = 0; k < 3; ++k) {
        const int i = tri[k];
        const int j = tri[(k + 1) % 3];
        const int l = tri[(k + 2) % 3];
        const Vec3 e1 = positions[j] - positions[i];
        const Vec3 e2 = positions[l] - positions[i];
        // cot of the angle at l is opposite edge (i,j); at j opposite (i,l).
        div[i] += 0.5 * (face_cot[f][(k + 2) % 3] * e1.dot(x) +
                         face_cot[f][(k + 1) % 3] * e2.dot(x));
      }
    }
    // Neumann compatibility: the right-hand side must sum to zero.
    div.array() -= div.mean();
    Eigen::VectorXd phi = poisson.solve(-div);
    if (!phi.allFinite()) fail(ErrorKind::Numeric, "non-finite geodesic solve");
    phi.array() -= phi[source];
    return phi.cwiseMax(0.0);
  }
};

HeatGeodesicSolver::HeatGeodesicSolver(const Mesh& mesh, double time_scale)
    : impl_(std::make_unique<Impl>()) {
  if (!(time_scale > 0.0)) fail(ErrorKind::Domain, "time scale must be positive");
  const AdjacencyIndex adjacency = build_adjacency(mesh);
  if (mesh.vertex_count() < 3 || mesh.face_count() < 1) {
    fail(ErrorKind::Shape, "geodesics need at least 3 vertices and 1 face");
  }
  const int components = connected_components(adjacency);
  if (components != 1) {
    fail(ErrorKind::Topology, "mesh has " + std::to_string(components) +
                                  " connected components; geodesics need exactly one");
  }
  Impl& s = *impl_;
  s.positions = mesh.vertices;
  s.faces = mesh.faces;
  const int n = mesh.vertex_count();

  double edge_sum = 0.0;
  for (const Edge& e : adjacency.edges) edge_sum += e.length;
  s.mean_edge = edge_sum / static_cast<double>(adjacency.edges.size());
  const double h2 = s.mean_edge * s.mean_edge;

  std::vector<Triplet> stiffness;
  stiffness.reserve(mesh.faces.size() * 12);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);
  s.face_cot.reserve(mesh.faces.size());
  s.face_normal.reserve(mesh.faces.size());
  s.face_area.reserve(mesh.faces.size());
  // Off-diagonal weights are accumulated per undirected edge so the clamp
  // applies to the full (cot alpha + cot beta) / 2 weight.
  std::vector<std::vector<std::pair<int, double>>> weight(n);
  auto add_weight = [&](int a, int b, double w) {
    if (a > b) std::swap(a, b);
    for (auto& [other, acc] : weight[a]) {
      if (other == b) {
        acc += w;
        return;
      }
    }
    weight[a].emplace_back(b, w);
  };
  for (const Face& f : mesh.faces) {
    const Vec3& p0 = mesh.vertices[f[0]];
    const Vec3& p1 = mesh.vertices[f[1]];
    const Vec3& p2 = mesh.vertices[f[2]];
    const Vec3 cross = (p1 - p0).cross(p2 - p0);
    const double area = 0.5 * cross.norm();
    if (!(area > 0.0)) fail(ErrorKind::Numeric, "zero-area face in geodesic operator");
    const Eigen::Vector3d cot(cot_at(p0, p1, p2), cot_at(p1, p2, p0), cot_at(p2, p0, p1));
    s.face_cot.push_back(cot);
    s.face_normal.push_back(cross.normalized());
    s.face_area.push_back(area);
    for (int k = 0; k < 3; ++k) {
      mass[f[k]] += area / 3.0;
      // Edge opposite corner k.
      add_weight(f[(k + 1) % 3], f[(k + 2) % 3], 0.5 * cot[k]);
    }
  }
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  for (int a = 0; a < n; ++a) {
    for (const auto& [b, raw] : weight[a]) {
      const double w = std::max(raw, kMinCotWeight);
      stiffness.emplace_back(a, b, -w);
      stiffness.emplace_back(b, a, -w);
      diag[a] += w;
      diag[b] += w;
    }
  }
  for (int i = 0; i < n; ++i) stiffness.emplace_back(i, i, diag[i]);
  SparseMatrix laplacian(n, n);
  laplacian.setFromTriplets(stiffness.begin(), stiffness.end());
  SparseMatrix mass_matrix(n, n);
  {
    std::vector<Triplet> m;
    for (int i = 0; i < n; ++i) m.emplace_back(i, i, mass[i]);
    mass_matrix.setFromTriplets(m.begin(), m.end());
  }
  const double t = time_scale * h2;
  s.heat.compute(mass_matrix + t * laplacian);
  if (s.heat.info() != Eigen::Success) fail(ErrorKind::Numeric, "heat operator factorization failed");
  s.poisson.compute(laplacian + (kPoissonRegularization / h2) * mass_matrix);
  if (s.poisson.info() != Eigen::Success) {
    fail(ErrorKind::Numeric, "Poisson operator factorization failed");
  }
}

HeatGeodesicSolver::~HeatGeodesicSolver() = default;
HeatGeodesicSolver::HeatGeodesicSolver(HeatGeodesicSolver&&) noexcept = default;
HeatGeodesicSolver& HeatGeodesicSolver::operator=(HeatGeodesicSolver&&) noexcept = default;

int HeatGeodesicSolver::vertex_count() const { return static_cast<int>(impl_->positions.size()); }
double HeatGeodesicSolver::mean_edge_length() const { return impl_->mean_edge; }

GeodesicField HeatGeodesicSolver::solve(std::span<const int> anchors) const {
  const int n = vertex_count();
  check_anchors(anchors, n);
  GeodesicField field;
  field.anchors.assign(anchors.begin(), anchors.end());
  field.distances.resize(n, static_cast<Eigen::Index>(anchors.size()));
  const auto count = static_cast<std::ptrdiff_t>(anchors.size());
  // Exceptions may not cross the OpenMP region; record and rethrow after.
  bool failed = false;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t a = 0; a < count; ++a) {
    try {
      field.distances.col(a) = impl_->distance_column(anchors[a]);
    } catch (const Error&) {
#pragma omp atomic write
      failed = true;
    }
  }
  if (failed) fail(ErrorKind::Numeric, "non-finite geodesic solve");
  return field;
}

GeodesicField heat_geodesic(const Mesh& mesh, std::span<const int> anchors, double time_scale) {
  return HeatGeodesicSolver(mesh, time_scale).solve(anchors);
}

GeodesicField dijkstra_geodesic(const AdjacencyIndex& adjacency, std::span<const int> anchors) {
  const int n = adjacency.vertex_count();
  check_anchors(anchors, n);
  // Edge lengths keyed by neighbor position.
  std::vector<std::vector<double>> lengths(n);
  for (int v = 0; v < n; ++v) lengths[v].resize(adjacency.neighbors[v].size());
  for (const Edge& e : adjacency.edges) {
    const auto& na = adjacency.neighbors[e.a];
    const auto& nb = adjacency.neighbors[e.b];
    lengths[e.a][std::lower_bound(na.begin(), na.end(), e.b) - na.begin()] = e.length;
    lengths[e.b][std::lower_bound(nb.begin(), nb.end(), e.a) - nb.begin()] = e.length;
  }
  GeodesicField field;
  field.anchors.assign(anchors.begin(), anchors.end());
  field.distances.resize(n, static_cast<Eigen::Index>(anchors.size()));
  using Entry = std::pair<double, int>;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    dist[anchors[a]] = 0.0;
    queue.emplace(0.0, anchors[a]);
    while (!queue.empty()) {
      const auto [d, v] = queue.top();
      queue.pop();
      if (d > dist[v]) continue;
      for (std::size_t k = 0; k < adjacency.neighbors[v].size(); ++k) {
        const int w = adjacency.neighbors[v][k];
        const double nd = d + lengths[v][k];
        if (nd < dist[w]) {
          dist[w] = nd;
          queue.emplace(nd, w);
        }
      }
    }
    for (int v = 0; v < n; ++v) {
      if (!std::isfinite(dist[v])) {
        fail(ErrorKind::Topology, "vertex " + std::to_string(v) + " unreachable from anchor " +
                                      std::to_string(anchors[a]));
      }
      field.distances(v, static_cast<Eigen::Index>(a)) = dist[v];
    }
  }
  return field;
}

GeodesicField rescale_distances(const GeodesicField& field) {
  if (field.distances.size() == 0) fail(ErrorKind::Shape, "empty geodesic field");
  if ((field.distances.array() < 0.0).any()) {
    fail(ErrorKind::Domain, "geodesic field has negative entries");
  }
  const double max = field.distances.maxCoeff();
  if (!(max > 0.0)) fail(ErrorKind::Domain, "geodesic field is identically zero");
  GeodesicField out = field;
  out.distances = field.distances / max;
  out.rescaled = true;
  out.scale = field.scale * max;
  return out;
}

FeatureMatrix field_to_matrix(const GeodesicField& field) {
  return field.distances.cast<float>();
}

}  // namespace geodistill
