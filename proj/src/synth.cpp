#include "geodistill/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "geodistill/error.hpp"
#include "geodistill/features.hpp"

namespace geodistill::synth {

Mesh make_icosphere(int subdivisions, double radius) {
  if (subdivisions < 0) fail(ErrorKind::Domain, "subdivisions must be nonnegative");
  if (!(radius > 0.0)) fail(ErrorKind::Domain, "radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (Vec3& v : m.vertices) v.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const int idx = m.vertex_count() - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    next.reserve(m.faces.size() * 4);
    for (const Face& f : m.faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.faces = std::move(next);
  }
  for (Vec3& v : m.vertices) v *= radius;
  return m;
}

QuadrupedSpec random_quadruped_spec(std::uint64_t seed, const QuadrupedSpec& base) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  QuadrupedSpec s = base;
  s.body_length = base.body_length * jitter(rng);
  s.body_radius = base.body_radius * jitter(rng);
  s.leg_length = base.leg_length * jitter(rng);
  return s;
}

namespace {

void check_spec(const QuadrupedSpec& s) {
  if (!(s.body_length > 0.0) || !(s.body_radius > 0.0) || !(s.leg_length > 0.0)) {
    fail(ErrorKind::Domain, "quadruped dimensions must be positive");
  }
  if (s.body_radius * 2.0 >= s.body_length) {
    fail(ErrorKind::Domain, "body radius must be below half the body length");
  }
  if (s.segments < 8 || s.segments % 2 != 0) fail(ErrorKind::Domain, "segments must be even and >= 8");
  if (s.patch < 1) fail(ErrorKind::Domain, "leg patch must be at least one quad");
  if (s.patch + 2 > s.segments / 2) fail(ErrorKind::Domain, "leg patch too wide for the segment count");
  if (s.rings < 4 * s.patch + 4) fail(ErrorKind::Domain, "too few rings for four leg patches");
  if (s.leg_rings < 1) fail(ErrorKind::Domain, "leg_rings must be positive");
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

struct Builder {
  std::vector<Vec3> pos;
  std::vector<Vec3> canon;  // u, v, w (leg flag stored separately)
  std::vector<int> part;
  std::vector<int> mirror;
  std::vector<Face> faces;

  int add(const Vec3& p, const Vec3& c, int prt) {
    pos.push_back(p);
    canon.push_back(c);
    part.push_back(prt);
    mirror.push_back(-1);
    return static_cast<int>(pos.size()) - 1;
  }
};

Quadruped build_quadruped(const QuadrupedSpec& spec) {
  const int nr = spec.rings, ns = spec.segments, k = spec.patch, half = ns / 2;
  const double a = spec.body_length / 2.0, r_body = spec.body_radius;

  // Body grid (ring i from tail to head, column j around the x axis; j = 0
  // is the bottom line, j = ns/2 the top). Columns past ns/2 are exact
  // mirror images of their partners.
  std::vector<Vec3> grid(static_cast<std::size_t>(nr) * ns);
  std::vector<Vec3> grid_canon(grid.size());
  auto gid = [&](int i, int j) { return static_cast<std::size_t>(i) * ns + j; };
  for (int i = 0; i < nr; ++i) {
    const double theta = std::numbers::pi * (i + 1) / (nr + 1);
    const double c = -std::cos(theta), s = std::sin(theta);
    for (int j = 0; j <= half; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / ns;
      const double cy = (j == half) ? 1.0 : -std::cos(phi);
      const double cz = (j == 0 || j == half) ? 0.0 : std::sin(phi);
      grid[gid(i, j)] = Vec3(a * c, r_body * s * cy, r_body * s * cz);
      grid_canon[gid(i, j)] = Vec3(c, s * cy, s * std::abs(cz));
      if (j > 0 && j < half) {
        const Vec3& p = grid[gid(i, j)];
        grid[gid(i, ns - j)] = Vec3(p.x(), p.y(), -p.z());
        grid_canon[gid(i, ns - j)] = grid_canon[gid(i, j)];
      }
    }
  }

  // Leg patches on the left half (0 < j < ns/2), mirrored on the right.
  const int gap = 1;
  const int front_i0 = nr - k - 1 - nr / 6;
  const int hind_i0 = nr / 6;
  struct Patch {
    int i0;
    int j0;
  };
  const std::array<Patch, 2> left_patches = {Patch{front_i0, gap}, Patch{hind_i0, gap}};
  std::vector<char> removed(grid.size(), 0);
  std::set<std::pair<int, int>> removed_quads;
  for (const Patch& p : left_patches) {
    for (int i = p.i0; i < p.i0 + k; ++i) {
      for (int j = p.j0; j < p.j0 + k; ++j) {
        removed_quads.insert({i, j});
        removed_quads.insert({i, ns - 1 - j});
      }
    }
    for (int i = p.i0 + 1; i < p.i0 + k; ++i) {
      for (int j = p.j0 + 1; j < p.j0 + k; ++j) {
        removed[gid(i, j)] = 1;
        removed[gid(i, ns - j)] = 1;
      }
    }
  }

  Builder b;
  std::vector<int> grid_index(grid.size(), -1);
  const int tail = b.add(Vec3(-a, 0, 0), Vec3(-1, 0, 0), Body);
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < ns; ++j) {
      if (removed[gid(i, j)]) continue;
      grid_index[gid(i, j)] = b.add(grid[gid(i, j)], grid_canon[gid(i, j)], Body);
    }
  }
  const int head = b.add(Vec3(a, 0, 0), Vec3(1, 0, 0), Body);
  b.mirror[tail] = tail;
  b.mirror[head] = head;
  for (int i = 0; i < nr; ++i) {
    for (int j = 0; j < ns; ++j) {
      const int v = grid_index[gid(i, j)];
      if (v >= 0) b.mirror[v] = grid_index[gid(i, (ns - j) % ns)];
    }
  }

  auto g = [&](int i, int j) { return grid_index[gid(i, (j + ns) % ns)]; };
  for (int j = 0; j < ns; ++j) b.faces.push_back({tail, g(0, j), g(0, j + 1)});
  for (int i = 0; i + 1 < nr; ++i) {
    for (int j = 0; j < ns; ++j) {
      if (removed_quads.count({i, j})) continue;
      const int p00 = g(i, j), p01 = g(i, j + 1), p10 = g(i + 1, j), p11 = g(i + 1, j + 1);
      // Diagonals flip at the top/bottom lines so triangulation is mirror symmetric.
      if (j < half) {
        b.faces.push_back({p00, p10, p11});
        b.faces.push_back({p00, p11, p01});
      } else {
        b.faces.push_back({p00, p10, p01});
        b.faces.push_back({p01, p10, p11});
      }
    }
  }
  for (int j = 0; j < ns; ++j) b.faces.push_back({g(nr - 1, j), head, g(nr - 1, j + 1)});

  std::set<std::pair<int, int>> directed;
  for (const Face& f : b.faces) {
    for (int e = 0; e < 3; ++e) directed.insert({f[e], f[(e + 1) % 3]});
  }

  // Left legs, then their mirror images.
  const double depth = spec.leg_length;
  std::array<Vec3, 4> hips;
  std::array<Vec3, 4> feet;
  const std::array<int, 2> left_parts = {FrontLeft, HindLeft};
  for (int leg = 0; leg < 2; ++leg) {
    const Patch& p = left_patches[leg];
    std::vector<int> loop;
    for (int j = p.j0; j < p.j0 + k; ++j) loop.push_back(g(p.i0, j));
    for (int i = p.i0; i < p.i0 + k; ++i) loop.push_back(g(i, p.j0 + k));
    for (int j = p.j0 + k; j > p.j0; --j) loop.push_back(g(p.i0 + k, j));
    for (int i = p.i0 + k; i > p.i0; --i) loop.push_back(g(i, p.j0));
    if (directed.count({loop[1], loop[0]})) std::reverse(loop.begin(), loop.end());
    const int m = static_cast<int>(loop.size());

    Vec3 center = Vec3::Zero();
    Vec3 center_canon = Vec3::Zero();
    double y_top = std::numeric_limits<double>::infinity();
    for (int v : loop) {
      center += b.pos[v];
      center_canon += b.canon[v];
      y_top = std::min(y_top, b.pos[v].y());
    }
    center /= m;
    center_canon /= m;
    double spread = 0.0;
    for (int v : loop) spread += Eigen::Vector2d(b.pos[v].x() - center.x(), b.pos[v].z() - center.z()).norm();
    const double r_leg = 0.85 * spread / m;

    const int first_new = static_cast<int>(b.pos.size());
    std::vector<int> upper = loop;
    for (int ring = 1; ring <= spec.leg_rings; ++ring) {
      const double y = y_top - depth * ring / spec.leg_rings;
      const double v_canon = -1.0 - static_cast<double>(ring) / spec.leg_rings;
      std::vector<int> lower(m);
      for (int q = 0; q < m; ++q) {
        const Vec3& lp = b.pos[loop[q]];
        const Eigen::Vector2d dir = Eigen::Vector2d(lp.x() - center.x(), lp.z() - center.z()).normalized();
        const Vec3& lc = b.canon[loop[q]];
        lower[q] = b.add(Vec3(center.x() + r_leg * dir.x(), y, center.z() + r_leg * dir.y()),
                         Vec3(lc.x(), v_canon, lc.z()), left_parts[leg]);
      }
      for (int q = 0; q < m; ++q) {
        const int q1 = (q + 1) % m;
        b.faces.push_back({upper[q1], upper[q], lower[q]});
        b.faces.push_back({upper[q1], lower[q], lower[q1]});
      }
      upper = std::move(lower);
    }
    const double foot_y = y_top - depth - 0.5 * r_leg;
    const int foot = b.add(Vec3(center.x(), foot_y, center.z()),
                           Vec3(center_canon.x(), -2.1, center_canon.z()),
                           left_parts[leg]);
    for (int q = 0; q < m; ++q) b.faces.push_back({upper[(q + 1) % m], upper[q], foot});

    const int last_new = static_cast<int>(b.pos.size());
    const std::size_t first_face = b.faces.size() - static_cast<std::size_t>(m) * (2 * spec.leg_rings + 1);
    const std::size_t last_face = b.faces.size();
    // Mirror copy.
    const int offset = static_cast<int>(b.pos.size()) - first_new;
    for (int v = first_new; v < last_new; ++v) {
      const Vec3& p = b.pos[v];
      const int w = b.add(Vec3(p.x(), p.y(), -p.z()), b.canon[v], left_parts[leg] + 1);
      b.mirror[v] = w;
      b.mirror[w] = v;
    }
    auto mirrored = [&](int v) { return v >= first_new ? v + offset : b.mirror[v]; };
    for (std::size_t f = first_face; f < last_face; ++f) {
      const Face face = b.faces[f];
      b.faces.push_back({mirrored(face[0]), mirrored(face[2]), mirrored(face[1])});
    }
    const Vec3 hip(center.x(), center.y(), center.z());
    const Vec3 foot_pos(center.x(), foot_y, center.z());
    hips[2 * leg] = hip;
    hips[2 * leg + 1] = Vec3(hip.x(), hip.y(), -hip.z());
    feet[2 * leg] = foot_pos;
    feet[2 * leg + 1] = Vec3(foot_pos.x(), foot_pos.y(), -foot_pos.z());
  }

  Quadruped q;
  const int n = static_cast<int>(b.pos.size());
  q.mesh.vertices = b.pos;
  q.mesh.faces = b.faces;
  q.part = b.part;
  q.mirror.mirror = b.mirror;
  q.mirror.side.resize(n);
  q.canonical.resize(n, 4);
  for (int v = 0; v < n; ++v) {
    const double z = b.pos[v].z();
    q.mirror.side[v] = z > 0.0 ? Side::Left : (z < 0.0 ? Side::Right : Side::Center);
    q.canonical.row(v) << b.canon[v].x(), b.canon[v].y(), b.canon[v].z(), b.part[v] == Body ? 0.0 : 1.0;
  }

  // Skeleton: spine (root, pivot at the body center), neck, four legs.
  const double x_neck = 0.75 * a;
  Skeleton& sk = q.skeleton;
  sk.bones = {Bone{-1, Vec3::Zero()}, Bone{0, Vec3(x_neck, 0, 0)}};
  for (int l = 0; l < 4; ++l) sk.bones.push_back(Bone{0, hips[l]});
  // Leg order in hips[]: FL, FR, HL, HR.
  std::array<std::pair<Vec3, Vec3>, 6> segments = {
      std::pair{Vec3(-a, 0, 0), Vec3(x_neck, 0, 0)}, std::pair{Vec3(x_neck, 0, 0), Vec3(a, 0, 0)},
      std::pair{hips[0], feet[0]}, std::pair{hips[1], feet[1]},
      std::pair{hips[2], feet[2]}, std::pair{hips[3], feet[3]}};
  const double tau = spec.skin_falloff * r_body;
  sk.weights.resize(n, 6);
  for (int v = 0; v < n; ++v) {
    std::array<double, 6> d;
    for (int s = 0; s < 6; ++s) d[s] = segment_distance(b.pos[v], segments[s].first, segments[s].second);
    const double dmin = *std::min_element(d.begin(), d.end());
    double total = 0.0;
    for (int s = 0; s < 6; ++s) {
      sk.weights(v, s) = std::exp(-(d[s] - dmin) / tau);
      total += sk.weights(v, s);
    }
    sk.weights.row(v) /= total;
  }
  return q;
}

}  // namespace

Quadruped make_quadruped(const QuadrupedSpec& spec) {
  check_spec(spec);
  Quadruped q = build_quadruped(spec);
  const QuadrupedSpec defaults;
  if (spec.body_length != defaults.body_length || spec.body_radius != defaults.body_radius ||
      spec.leg_length != defaults.leg_length) {
    QuadrupedSpec tmpl = spec;
    tmpl.body_length = defaults.body_length;
    tmpl.body_radius = defaults.body_radius;
    tmpl.leg_length = defaults.leg_length;
    q.skeleton.weights = build_quadruped(tmpl).skeleton.weights;
  }
  return q;
}

// ---------------------------------------------------------------- features

namespace {

FeatureMatrix fourier_features(const Eigen::MatrixXd& coords, std::span<const Side> sides,
                               std::span<const double> cue_strength, const FeatureRecipe& recipe,
                               std::uint64_t seed) {
  if (recipe.dim < 4) fail(ErrorKind::Domain, "feature dimension must be at least 4");
  if (!(recipe.noise >= 0.0)) fail(ErrorKind::Domain, "noise level must be nonnegative");
  if (!(recipe.side_cue >= 0.0)) fail(ErrorKind::Domain, "side cue must be nonnegative");
  const auto n = coords.rows();
  const auto c = coords.cols();
  const int semantic = recipe.dim - 1;
  std::mt19937_64 recipe_rng(recipe.recipe_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Eigen::MatrixXd omega(semantic, c);
  Eigen::VectorXd offset(semantic);
  for (int k = 0; k < semantic; ++k) {
    for (Eigen::Index j = 0; j < c; ++j) omega(k, j) = recipe.bandwidth * normal(recipe_rng);
    offset[k] = phase(recipe_rng);
  }

  std::mt19937_64 noise_rng(seed);
  const double sigma = recipe.noise / std::sqrt(static_cast<double>(recipe.dim));
  FeatureMatrix out(n, recipe.dim);
  Eigen::VectorXd row(recipe.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < semantic; ++k) row[k] = std::cos(omega.row(k).dot(coords.row(i)) + offset[k]);
    row.head(semantic).normalize();
    row[semantic] = recipe.side_cue * static_cast<double>(sides[i]) * std::tanh(cue_strength[i] / 0.25);
    if (sigma > 0.0) {
      const int noisy = recipe.noisy_cue ? recipe.dim : semantic;
      for (int k = 0; k < noisy; ++k) row[k] += sigma * normal(noise_rng);
    }
    out.row(i) = (row / row.norm()).cast<float>().transpose();
  }
  return out;
}

}  // namespace

FeatureMatrix synth_base_features(const Quadruped& shape, const FeatureRecipe& recipe,
                                  std::uint64_t seed) {
  const auto n = shape.canonical.rows();
  if (recipe.kind == FeatureRecipe::Kind::Positional) {
    const double diag = bounding_box_diagonal(shape.mesh.vertices);
    Eigen::MatrixXd coords(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) coords.row(i) = shape.mesh.vertices[i].transpose() / diag * 4.0;
    std::vector<Side> none(n, Side::Center);
    std::vector<double> zero(n, 0.0);
    return fourier_features(coords, none, zero, recipe, seed);
  }
  std::vector<double> lateral(n);
  for (Eigen::Index i = 0; i < n; ++i) lateral[i] = shape.canonical(i, 2);
  return fourier_features(shape.canonical, shape.mirror.side, lateral, recipe, seed);
}

FeatureMatrix synth_base_features(const Mesh& mesh, const MirrorMap& mirror,
                                  const FeatureRecipe& recipe, std::uint64_t seed) {
  const int n = mesh.vertex_count();
  if (static_cast<int>(mirror.side.size()) != n) fail(ErrorKind::Shape, "mirror map does not match mesh");
  Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
  for (const Vec3& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 extent = (hi - lo).cwiseMax(1e-12);
  const Vec3 mid = 0.5 * (hi + lo);
  Eigen::MatrixXd coords(n, 3);
  std::vector<double> lateral(n);
  for (int i = 0; i < n; ++i) {
    const Vec3& p = mesh.vertices[i];
    coords(i, 0) = 2.0 * (p.x() - mid.x()) / extent.x();
    coords(i, 1) = 2.0 * (p.y() - mid.y()) / extent.y();
    coords(i, 2) = 2.0 * std::abs(p.z()) / extent.z();
    lateral[i] = coords(i, 2);
  }
  if (recipe.kind == FeatureRecipe::Kind::Positional) {
    for (int i = 0; i < n; ++i) coords(i, 2) = 2.0 * mesh.vertices[i].z() / extent.z();
    std::vector<Side> none(n, Side::Center);
    return fourier_features(coords, none, lateral, recipe, seed);
  }
  return fourier_features(coords, mirror.side, lateral, recipe, seed);
}

// ---------------------------------------------------------------- poses

PoseParams random_pose(const Quadruped& shape, std::uint64_t seed, double magnitude) {
  if (!(magnitude >= 0.0)) fail(ErrorKind::Domain, "pose magnitude must be nonnegative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const int bones = shape.skeleton.bone_count();
  PoseParams pose = PoseParams::identity(bones);
  pose.root_rotation = magnitude * Vec3(uni(rng), uni(rng), uni(rng));
  const double diag = bounding_box_diagonal(shape.mesh.vertices);
  pose.translation = 0.05 * diag * Vec3(uni(rng), uni(rng), uni(rng));
  pose.bone_rotations[0] = 0.2 * magnitude * Vec3(uni(rng), uni(rng), uni(rng));
  for (int b = 1; b < bones; ++b) {
    // Mostly a fore/aft swing about the lateral axis.
    pose.bone_rotations[b] = magnitude * Vec3(0.3 * uni(rng), 0.3 * uni(rng), uni(rng));
  }
  return pose;
}

GroundTruth ground_truth_correspondence(const Mesh& source, const Mesh& target,
                                        std::span<const int> source_indices) {
  if (source.vertex_count() != target.vertex_count()) {
    fail(ErrorKind::Shape, "source and target vertex counts differ (" +
                               std::to_string(source.vertex_count()) + " vs " +
                               std::to_string(target.vertex_count()) + ")");
  }
  GroundTruth gt;
  for (int s : source_indices) {
    if (s < 0 || s >= source.vertex_count()) fail(ErrorKind::Index, "source index out of range");
    gt.source_indices.push_back(s);
    gt.positions.push_back(target.vertices[s]);
  }
  return gt;
}

Mesh transform_mesh(const Mesh& mesh, const Eigen::Matrix3d& rotation, const Vec3& translation) {
  Mesh out = mesh;
  for (Vec3& v : out.vertices) v = rotation * v + translation;
  return out;
}

double side_confusion(const MirrorMap& source_mirror, const MirrorMap& target_mirror,
                      std::span<const int> sources, std::span<const int> matched) {
  if (sources.size() != matched.size()) fail(ErrorKind::Shape, "source and match counts differ");
  std::size_t sided = 0, wrong = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const Side s = source_mirror.side.at(sources[i]);
    if (s == Side::Center) continue;
    ++sided;
    const Side t = target_mirror.side.at(matched[i]);
    if (static_cast<int>(t) == -static_cast<int>(s)) ++wrong;
  }
  return sided == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(sided);
}

std::vector<int> limb_vertices(const Quadruped& shape) {
  std::vector<int> out;
  for (std::size_t v = 0; v < shape.part.size(); ++v) {
    if (shape.part[v] != Body) out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace geodistill::synth
