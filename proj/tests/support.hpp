#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "geodistill/error.hpp"
#include "geodistill/mesh.hpp"
#include "geodistill/types.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("geodistill_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline geodistill::FeatureMatrix random_features(int n, int d, std::uint64_t seed,
                                                 bool unit = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  geodistill::FeatureMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  if (unit) m.rowwise().normalize();
  return m;
}

inline std::vector<geodistill::Vec3> random_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<geodistill::Vec3> p(n);
  for (auto& v : p) v = geodistill::Vec3(u(rng), u(rng), u(rng));
  return p;
}

// Kind of the geodistill::Error thrown by f, or nullopt if it returns.
template <typename F>
std::optional<geodistill::ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const geodistill::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// Two triangles forming the unit square in the z=0 plane.
inline geodistill::Mesh unit_square() {
  geodistill::Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

}  // namespace testing
