#include "geodistill/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <string>

#include "geodistill/error.hpp"

namespace geodistill {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    fail(ErrorKind::Format, path.string() + ": " + png.message);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.channels = color ? 3 : 1;
  img.data.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.data.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    fail(ErrorKind::Format, path.string() + ": " + message);
  }
  return img;
}

void write_png(const Image& img, const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.data.data(), 0, nullptr)) {
    fail(ErrorKind::Io, path.string() + ": " + png.message);
  }
}

// Skips whitespace and '#' comments inside a netpbm header.
int read_pnm_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = -1;
  if (!(in >> value)) fail(ErrorKind::Format, "bad netpbm header");
  return value;
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5" && magic != "P6") {
    fail(ErrorKind::Format, path.string() + ": only binary PGM (P5) and PPM (P6) are supported");
  }
  Image img;
  img.channels = magic == "P5" ? 1 : 3;
  img.width = read_pnm_int(in);
  img.height = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255) {
    fail(ErrorKind::Format, path.string() + ": unsupported netpbm dimensions or depth");
  }
  in.get();
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!in) fail(ErrorKind::Format, path.string() + ": truncated pixel data");
  return img;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm(path);
  fail(ErrorKind::Format, "unsupported image extension '" + ext + "'");
}

void write_image(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorKind::Shape, "images must have 1 or 3 channels");
  }
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    write_png(image, path);
  } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    write_pnm(image, path);
  } else {
    fail(ErrorKind::Format, "unsupported image extension '" + ext + "'");
  }
}

}  // namespace geodistill
