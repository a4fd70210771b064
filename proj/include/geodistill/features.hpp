#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "geodistill/mesh.hpp"
#include "geodistill/types.hpp"

namespace geodistill {

// SAF1 container: "SAF1", u32 rows, u32 dim, rows*dim f32, all little-endian.
void write_features(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix read_features(const std::filesystem::path& path);

// Stream variants, used to embed SAF1 payloads in other containers.
void write_saf1(std::ostream& out, const FeatureMatrix& m);
FeatureMatrix read_saf1(std::istream& in, const std::string& context);

/// Scales every row to unit Euclidean norm; throws Error(Numeric) naming the
/// first row whose norm is below 1e-12.
FeatureMatrix normalize_rows(const FeatureMatrix& m);

/// Plain-text key=value metadata stored next to a binary file.
using Sidecar = std::map<std::string, std::string>;

std::filesystem::path sidecar_path(const std::filesystem::path& data_path);
void write_sidecar(const Sidecar& meta, const std::filesystem::path& data_path);
Sidecar read_sidecar(const std::filesystem::path& data_path);

/// Per-pixel features of a masked image. Only foreground pixels are kept;
/// `pixels` holds their (row, col) and `features` their unit-norm descriptors.
struct ImageFeatureMap {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<std::uint8_t> mask;  // H*W, 1 = foreground
  std::vector<Color> colors;       // H*W
  std::vector<std::pair<int, int>> pixels;
  FeatureMatrix features;

  int foreground_count() const { return static_cast<int>(pixels.size()); }
};

/// Assembles a map from an SAF1 file with H*W rows (H and W in its sidecar),
/// a grayscale mask (nonzero = foreground) and a color image of equal size.
ImageFeatureMap read_image_feature_map(const std::filesystem::path& feature_path,
                                       const std::filesystem::path& mask_path,
                                       const std::filesystem::path& color_path);

/// In-memory variant of the above.
ImageFeatureMap make_image_feature_map(const FeatureMatrix& features, int height, int width,
                                       std::vector<std::uint8_t> mask,
                                       std::vector<Color> colors);

}  // namespace geodistill
