#include "geodistill/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "geodistill/error.hpp"
#include "geodistill/image.hpp"

namespace geodistill {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'F', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& context) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(ErrorKind::Format, context + ": truncated header");
  return value;
}

}  // namespace

void write_saf1(std::ostream& out, const FeatureMatrix& m) {
  if (m.rows() < 1 || m.cols() < 1) fail(ErrorKind::Shape, "feature matrix must be non-empty");
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorKind::Shape, "feature matrix too large for SAF1");
  }
  out.write(kMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(float)));
}

FeatureMatrix read_saf1(std::istream& in, const std::string& context) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    fail(ErrorKind::Format, context + ": bad magic, expected SAF1");
  }
  const auto rows = get<std::uint32_t>(in, context);
  const auto dim = get<std::uint32_t>(in, context);
  if (rows == 0 || dim == 0) fail(ErrorKind::Format, context + ": empty matrix");
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * dim;
  if (count > static_cast<std::uint64_t>(std::numeric_limits<std::ptrdiff_t>::max()) /
                  sizeof(float)) {
    fail(ErrorKind::Format, context + ": rows*dim overflows");
  }
  // Guard against allocating for a header that lies about its payload.
  const auto here = in.tellg();
  if (here != std::streampos(-1)) {
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(here);
    if (static_cast<std::uint64_t>(end - here) < count * sizeof(float)) {
      fail(ErrorKind::Format, context + ": truncated payload (header claims " +
                                  std::to_string(rows) + "x" + std::to_string(dim) + ")");
    }
  }
  FeatureMatrix m(rows, dim);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) fail(ErrorKind::Format, context + ": truncated payload");
  for (std::uint64_t k = 0; k < count; ++k) {
    if (!std::isfinite(m.data()[k])) {
      fail(ErrorKind::Numeric, context + ": non-finite entry at row " +
                                   std::to_string(k / dim) + ", column " + std::to_string(k % dim));
    }
  }
  return m;
}

void write_features(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  write_saf1(out, m);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return read_saf1(in, path.string());
}

FeatureMatrix normalize_rows(const FeatureMatrix& m) {
  FeatureMatrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double norm = m.row(i).cast<double>().norm();
    if (norm < 1e-12) fail(ErrorKind::Numeric, "row " + std::to_string(i) + " has zero norm");
    out.row(i) = (m.row(i).cast<double>() / norm).cast<float>();
  }
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& data_path) {
  return std::filesystem::path(data_path.string() + ".meta");
}

void write_sidecar(const Sidecar& meta, const std::filesystem::path& data_path) {
  std::ofstream out(sidecar_path(data_path));
  if (!out) fail(ErrorKind::Io, "cannot write " + sidecar_path(data_path).string());
  for (const auto& [key, value] : meta) out << key << '=' << value << '\n';
}

Sidecar read_sidecar(const std::filesystem::path& data_path) {
  const auto path = sidecar_path(data_path);
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "missing sidecar " + path.string());
  Sidecar meta;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Format, path.string() + ": bad line '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

ImageFeatureMap make_image_feature_map(const FeatureMatrix& features, int height, int width,
                                       std::vector<std::uint8_t> mask,
                                       std::vector<Color> colors) {
  if (height <= 0 || width <= 0) fail(ErrorKind::Shape, "image size must be positive");
  const auto pixels = static_cast<std::size_t>(height) * width;
  if (static_cast<std::size_t>(features.rows()) != pixels) {
    fail(ErrorKind::Shape, "feature rows (" + std::to_string(features.rows()) +
                               ") do not match image size " + std::to_string(height) + "x" +
                               std::to_string(width));
  }
  if (mask.size() != pixels) fail(ErrorKind::Shape, "mask size does not match feature map");
  if (colors.size() != pixels) fail(ErrorKind::Shape, "color image size does not match feature map");
  ImageFeatureMap map;
  map.height = height;
  map.width = width;
  map.dim = static_cast<int>(features.cols());
  map.mask = std::move(mask);
  map.colors = std::move(colors);
  std::vector<Eigen::Index> rows;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const auto k = static_cast<std::size_t>(r) * width + c;
      if (map.mask[k]) {
        map.pixels.emplace_back(r, c);
        rows.push_back(static_cast<Eigen::Index>(k));
      }
    }
  }
  if (rows.empty()) fail(ErrorKind::Domain, "no foreground pixels");
  FeatureMatrix fg(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) fg.row(i) = features.row(rows[i]);
  map.features = normalize_rows(fg);
  return map;
}

ImageFeatureMap read_image_feature_map(const std::filesystem::path& feature_path,
                                       const std::filesystem::path& mask_path,
                                       const std::filesystem::path& color_path) {
  const FeatureMatrix features = read_features(feature_path);
  const Sidecar meta = read_sidecar(feature_path);
  auto dim_of = [&](const char* key) {
    const auto it = meta.find(key);
    if (it == meta.end()) fail(ErrorKind::Format, "sidecar lacks '" + std::string(key) + "'");
    try {
      return std::stoi(it->second);
    } catch (const std::exception&) {
      fail(ErrorKind::Format, "sidecar value for '" + std::string(key) + "' is not an integer");
    }
  };
  const int height = dim_of("height");
  const int width = dim_of("width");
  const Image mask_img = read_image(mask_path);
  const Image color_img = read_image(color_path);
  if (mask_img.height != height || mask_img.width != width) {
    fail(ErrorKind::Shape, "mask is " + std::to_string(mask_img.height) + "x" +
                               std::to_string(mask_img.width) + ", features are " +
                               std::to_string(height) + "x" + std::to_string(width));
  }
  if (color_img.height != height || color_img.width != width) {
    fail(ErrorKind::Shape, "color image size does not match feature map");
  }
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width);
  std::vector<Color> colors(mask.size());
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const auto k = static_cast<std::size_t>(r) * width + c;
      mask[k] = mask_img.at(r, c, 0) != 0 ? 1 : 0;
      if (color_img.channels >= 3) {
        colors[k] = Color(color_img.at(r, c, 0), color_img.at(r, c, 1), color_img.at(r, c, 2)) / 255.0f;
      } else {
        colors[k] = Color::Constant(color_img.at(r, c, 0) / 255.0f);
      }
    }
  }
  return make_image_feature_map(features, height, width, std::move(mask), std::move(colors));
}

}  // namespace geodistill
