#include "geodistill/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>

#include "geodistill/error.hpp"
#include "geodistill/kernels.hpp"

namespace geodistill {

static_assert(std::endian::native == std::endian::little,
              "binary readers assume a little-endian host");

MeshFormat mesh_format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".obj") return MeshFormat::Obj;
  if (ext == ".ply") return MeshFormat::Ply;
  fail(ErrorKind::Format, "unknown mesh extension '" + ext + "' for " + path.string());
}

void validate_mesh(const Mesh& mesh) {
  const int n = mesh.vertex_count();
  if (n == 0) fail(ErrorKind::Shape, "mesh has no vertices");
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& face = mesh.faces[f];
    for (int idx : face) {
      if (idx < 0 || idx >= n) {
        fail(ErrorKind::Index, "face " + std::to_string(f) + " references vertex " +
                                   std::to_string(idx) + " of " + std::to_string(n));
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      fail(ErrorKind::Index, "face " + std::to_string(f) + " repeats a vertex index");
    }
  }
  if (mesh.colors && mesh.colors->size() != mesh.vertices.size()) {
    fail(ErrorKind::Shape, "color count does not match vertex count");
  }
}

// ---------------------------------------------------------------- OBJ

namespace {

// Parses the vertex part of an OBJ face token ("7", "7/1", "7//3", "-1").
int parse_obj_index(const std::string& token, int vertex_count, int line_no) {
  const std::string head = token.substr(0, token.find('/'));
  long value = 0;
  try {
    std::size_t used = 0;
    value = std::stol(head, &used);
    if (used != head.size()) throw std::invalid_argument(head);
  } catch (const std::exception&) {
    fail(ErrorKind::Format, "bad face index '" + token + "' on line " + std::to_string(line_no));
  }
  if (value == 0) fail(ErrorKind::Index, "face index 0 on line " + std::to_string(line_no));
  return value > 0 ? static_cast<int>(value - 1) : static_cast<int>(vertex_count + value);
}

Mesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  Mesh mesh;
  std::vector<Color> colors;
  bool any_color = false;
  bool all_color = true;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::vector<double> values;
      std::string tok;
      while (ss >> tok) {
        try {
          values.push_back(std::stod(tok));
        } catch (const std::exception&) {
          fail(ErrorKind::Format, "bad vertex value on line " + std::to_string(line_no));
        }
      }
      if (values.size() < 3) {
        fail(ErrorKind::Format, "vertex with fewer than 3 coordinates on line " +
                                    std::to_string(line_no));
      }
      mesh.vertices.emplace_back(values[0], values[1], values[2]);
      if (values.size() >= 6) {
        any_color = true;
        colors.emplace_back(static_cast<float>(values[3]), static_cast<float>(values[4]),
                            static_cast<float>(values[5]));
      } else {
        all_color = false;
        colors.emplace_back(Color::Zero());
      }
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ss >> tok) poly.push_back(parse_obj_index(tok, mesh.vertex_count(), line_no));
      if (poly.size() < 3) {
        fail(ErrorKind::Format, "face with fewer than 3 vertices on line " +
                                    std::to_string(line_no));
      }
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
      }
    }
  }
  if (any_color && all_color) mesh.colors = std::move(colors);
  validate_mesh(mesh);
  return mesh;
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3& v = mesh.vertices[i];
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z();
    if (mesh.colors) {
      const Color& c = (*mesh.colors)[i];
      out << ' ' << c.x() << ' ' << c.y() << ' ' << c.z();
    }
    out << '\n';
  }
  for (const Face& f : mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------- PLY

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::Int8;
  if (name == "uchar" || name == "uint8") return PlyType::UInt8;
  if (name == "short" || name == "int16") return PlyType::Int16;
  if (name == "ushort" || name == "uint16") return PlyType::UInt16;
  if (name == "int" || name == "int32") return PlyType::Int32;
  if (name == "uint" || name == "uint32") return PlyType::UInt32;
  if (name == "float" || name == "float32") return PlyType::Float32;
  if (name == "double" || name == "float64") return PlyType::Float64;
  fail(ErrorKind::Format, "unknown PLY type '" + name + "'");
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

class PlyReader {
 public:
  PlyReader(std::istream& in, bool binary) : in_(in), binary_(binary) {}

  double read(PlyType type) {
    if (!binary_) {
      double v = 0;
      if (!(in_ >> v)) fail(ErrorKind::Format, "truncated ASCII PLY body");
      return v;
    }
    switch (type) {
      case PlyType::Int8: return raw<std::int8_t>();
      case PlyType::UInt8: return raw<std::uint8_t>();
      case PlyType::Int16: return raw<std::int16_t>();
      case PlyType::UInt16: return raw<std::uint16_t>();
      case PlyType::Int32: return raw<std::int32_t>();
      case PlyType::UInt32: return raw<std::uint32_t>();
      case PlyType::Float32: return raw<float>();
      case PlyType::Float64: return raw<double>();
    }
    return 0;
  }

 private:
  template <typename T>
  T raw() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) fail(ErrorKind::Format, "truncated binary PLY body");
    return value;
  }

  std::istream& in_;
  bool binary_;
};

Mesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    fail(ErrorKind::Format, path.string() + " is not a PLY file");
  }
  bool binary = false;
  std::vector<PlyElement> elements;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "binary_little_endian") {
        binary = true;
      } else if (fmt == "ascii") {
        binary = false;
      } else {
        fail(ErrorKind::Format, "unsupported PLY format '" + fmt + "'");
      }
    } else if (key == "element") {
      PlyElement el;
      ss >> el.name >> el.count;
      elements.push_back(el);
    } else if (key == "property") {
      if (elements.empty()) fail(ErrorKind::Format, "PLY property before element");
      PlyProperty prop;
      std::string type;
      ss >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ss >> count_type >> item_type >> prop.name;
        prop.is_list = true;
        prop.count_type = parse_ply_type(count_type);
        prop.type = parse_ply_type(item_type);
      } else {
        prop.type = parse_ply_type(type);
        ss >> prop.name;
      }
      elements.back().properties.push_back(prop);
    } else if (key == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) fail(ErrorKind::Format, "PLY header not terminated");

  Mesh mesh;
  PlyReader reader(in, binary);
  for (const PlyElement& el : elements) {
    if (el.name == "vertex") {
      int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
      for (int p = 0; p < static_cast<int>(el.properties.size()); ++p) {
        const std::string& n = el.properties[p].name;
        if (n == "x") ix = p;
        if (n == "y") iy = p;
        if (n == "z") iz = p;
        if (n == "red") ir = p;
        if (n == "green") ig = p;
        if (n == "blue") ib = p;
      }
      if (ix < 0 || iy < 0 || iz < 0) fail(ErrorKind::Format, "PLY vertex lacks x/y/z");
      const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
      std::vector<Color> colors;
      std::vector<double> values(el.properties.size());
      for (std::size_t i = 0; i < el.count; ++i) {
        for (std::size_t p = 0; p < el.properties.size(); ++p) {
          const PlyProperty& prop = el.properties[p];
          if (prop.is_list) {
            const auto len = static_cast<std::size_t>(reader.read(prop.count_type));
            for (std::size_t k = 0; k < len; ++k) reader.read(prop.type);
            values[p] = 0;
          } else {
            values[p] = reader.read(prop.type);
          }
        }
        mesh.vertices.emplace_back(values[ix], values[iy], values[iz]);
        if (has_color) {
          auto channel = [&](int p) {
            const PlyType t = el.properties[p].type;
            const bool is_float = t == PlyType::Float32 || t == PlyType::Float64;
            return static_cast<float>(is_float ? values[p] : values[p] / 255.0);
          };
          colors.emplace_back(channel(ir), channel(ig), channel(ib));
        }
      }
      if (has_color) mesh.colors = std::move(colors);
    } else if (el.name == "face") {
      for (std::size_t i = 0; i < el.count; ++i) {
        for (const PlyProperty& prop : el.properties) {
          if (!prop.is_list) {
            reader.read(prop.type);
            continue;
          }
          const auto len = static_cast<std::size_t>(reader.read(prop.count_type));
          std::vector<int> poly(len);
          for (std::size_t k = 0; k < len; ++k) {
            poly[k] = static_cast<int>(reader.read(prop.type));
          }
          if (prop.name != "vertex_indices" && prop.name != "vertex_index") continue;
          if (len < 3) fail(ErrorKind::Format, "PLY face with fewer than 3 vertices");
          for (std::size_t k = 1; k + 1 < len; ++k) {
            mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < el.count; ++i) {
        for (const PlyProperty& prop : el.properties) {
          const std::size_t len =
              prop.is_list ? static_cast<std::size_t>(reader.read(prop.count_type)) : 1;
          for (std::size_t k = 0; k < len; ++k) reader.read(prop.type);
        }
      }
    }
  }
  validate_mesh(mesh);
  return mesh;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void save_ply(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertices.size() << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  if (mesh.colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.faces.size() << '\n';
  out << "property list uchar int vertex_indices\nend_header\n";
  auto to_byte = [](float c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0f, 1.0f) * 255.0f));
  };
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const Vec3& v = mesh.vertices[i];
    put(out, v.x());
    put(out, v.y());
    put(out, v.z());
    if (mesh.colors) {
      const Color& c = (*mesh.colors)[i];
      put(out, to_byte(c.x()));
      put(out, to_byte(c.y()));
      put(out, to_byte(c.z()));
    }
  }
  for (const Face& f : mesh.faces) {
    put<std::uint8_t>(out, 3);
    for (int idx : f) put<std::int32_t>(out, idx);
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

Mesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  return format == MeshFormat::Obj ? load_obj(path) : load_ply(path);
}

Mesh load_mesh(const std::filesystem::path& path) {
  return load_mesh(path, mesh_format_from_path(path));
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format) {
  validate_mesh(mesh);
  if (format == MeshFormat::Obj) {
    save_obj(mesh, path);
  } else {
    save_ply(mesh, path);
  }
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  save_mesh(mesh, path, mesh_format_from_path(path));
}

// ---------------------------------------------------------------- adjacency

AdjacencyIndex build_adjacency(const Mesh& mesh) {
  validate_mesh(mesh);
  const int n = mesh.vertex_count();
  AdjacencyIndex adj;
  adj.neighbors.resize(n);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(mesh.faces.size() * 3);
  for (const Face& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      pairs.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  adj.edges.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const double length = (mesh.vertices[a] - mesh.vertices[b]).norm();
    if (!(length > 0.0)) {
      fail(ErrorKind::Numeric, "zero-length edge between vertices " + std::to_string(a) +
                                   " and " + std::to_string(b));
    }
    adj.edges.push_back({a, b, length});
    adj.neighbors[a].push_back(b);
    adj.neighbors[b].push_back(a);
  }
  for (auto& nb : adj.neighbors) std::sort(nb.begin(), nb.end());
  return adj;
}

int connected_components(const AdjacencyIndex& adjacency) {
  const int n = adjacency.vertex_count();
  std::vector<char> seen(n, 0);
  int components = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (seen[s]) continue;
    ++components;
    seen[s] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int w : adjacency.neighbors[v]) {
        if (!seen[w]) {
          seen[w] = 1;
          stack.push_back(w);
        }
      }
    }
  }
  return components;
}

// ---------------------------------------------------------------- sampling

std::vector<int> farthest_point_sampling_from(std::span<const Vec3> points, int count,
                                              int start) {
  const int n = static_cast<int>(points.size());
  if (count <= 0) fail(ErrorKind::Domain, "sample count must be positive");
  if (count > n) {
    fail(ErrorKind::Domain, "cannot sample " + std::to_string(count) + " of " +
                                std::to_string(n) + " points");
  }
  if (start < 0 || start >= n) fail(ErrorKind::Index, "start index out of range");
  std::vector<int> chosen;
  chosen.reserve(count);
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  int current = start;
  for (int k = 0; k < count; ++k) {
    chosen.push_back(current);
    min_dist[current] = -1.0;
    int best = -1;
    double best_dist = -1.0;
    for (int i = 0; i < n; ++i) {
      if (min_dist[i] < 0.0) continue;
      const double d = (points[i] - points[current]).norm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  return chosen;
}

std::vector<int> farthest_point_sampling(std::span<const Vec3> points, int count,
                                         std::uint64_t seed) {
  if (points.empty()) fail(ErrorKind::Shape, "cannot sample from an empty point set");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(points.size()) - 1);
  return farthest_point_sampling_from(points, count, pick(rng));
}

double max_extent(const Mesh& mesh) {
  if (mesh.vertex_count() < 2) fail(ErrorKind::Shape, "extent needs at least two vertices");
  return kernels::max_pairwise_distance_parallel(mesh.vertices);
}

double bounding_box_diagonal(std::span<const Vec3> points) {
  if (points.empty()) return 0.0;
  Vec3 lo = points[0];
  Vec3 hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

}  // namespace geodistill
