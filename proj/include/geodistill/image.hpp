#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace geodistill {

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int row, int col, int channel) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels + channel];
  }
};

/// Reads PNG (via libpng) or binary PGM/PPM, chosen by extension.
Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

}  // namespace geodistill
