#include "fsam/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace fsam {

namespace {

struct DecodedPng {
  std::vector<png_byte> pixels;
  Index height = 0;
  Index width = 0;
  Index channels = 0;
};

DecodedPng decode_png(const std::filesystem::path& path, bool force_gray) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(ErrorKind::UnreadableFile, "cannot decode " + path.string() + ": " + image.message);
  const bool color = !force_gray && (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  DecodedPng out;
  out.height = image.height;
  out.width = image.width;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::UnreadableFile, "cannot decode " + path.string() + ": " + image.message);
  }
  return out;
}

void encode_png(const std::filesystem::path& path, const std::vector<png_byte>& pixels, Index height, Index width,
                Index channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr))
    fail(ErrorKind::Io, "cannot write " + path.string() + ": " + image.message);
}

png_byte quantize(double v) {
  return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const DecodedPng png = decode_png(path, false);
  Image img(png.height, png.width, png.channels);
  for (Index y = 0; y < png.height; ++y)
    for (Index x = 0; x < png.width; ++x)
      for (Index c = 0; c < png.channels; ++c)
        img.channels[static_cast<std::size_t>(c)](y, x) =
            png.pixels[static_cast<std::size_t>((y * png.width + x) * png.channels + c)] / 255.0;
  return img;
}

LabelGrid read_mask(const std::filesystem::path& path) {
  const DecodedPng png = decode_png(path, true);
  LabelGrid mask(png.height, png.width);
  for (Index y = 0; y < png.height; ++y)
    for (Index x = 0; x < png.width; ++x) mask(y, x) = png.pixels[static_cast<std::size_t>(y * png.width + x)];
  return mask;
}

void write_image(const std::filesystem::path& path, const Image& image) {
  const Index c = image.num_channels();
  require(c == 1 || c == 3, ErrorKind::DimensionMismatch, "write_image: need 1 or 3 channels");
  std::vector<png_byte> pixels(static_cast<std::size_t>(image.height() * image.width() * c));
  for (Index y = 0; y < image.height(); ++y)
    for (Index x = 0; x < image.width(); ++x)
      for (Index k = 0; k < c; ++k)
        pixels[static_cast<std::size_t>((y * image.width() + x) * c + k)] =
            quantize(image.channels[static_cast<std::size_t>(k)](y, x));
  encode_png(path, pixels, image.height(), image.width(), c);
}

void write_plane(const std::filesystem::path& path, const Plane<double>& values) {
  write_image(path, Image(std::vector<Plane<double>>{values}));
}

void write_mask(const std::filesystem::path& path, const LabelGrid& mask) {
  require(mask.size() == 0 || (mask.minCoeff() >= 0 && mask.maxCoeff() <= 255), ErrorKind::LabelOutOfRange,
          "write_mask: labels must fit in 8 bits");
  std::vector<png_byte> pixels(static_cast<std::size_t>(mask.size()));
  for (Index y = 0; y < mask.rows(); ++y)
    for (Index x = 0; x < mask.cols(); ++x)
      pixels[static_cast<std::size_t>(y * mask.cols() + x)] = static_cast<png_byte>(mask(y, x));
  encode_png(path, pixels, mask.rows(), mask.cols(), 1);
}

}  // namespace fsam
