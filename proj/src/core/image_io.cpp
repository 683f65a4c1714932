#include "panp/core/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <fmt/format.h>
#include <png.h>

#include "panp/core/error.hpp"

namespace panp {
namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void flush_nothing(png_structp) {}

std::vector<std::uint8_t> encode(const std::uint8_t* pixels, std::size_t width, std::size_t height,
                                 int color_type, int channels) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_nothing);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + y * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

std::vector<std::uint8_t> to_gray8(const PixelImage& image) {
  float peak = 0.0f;
  for (float v : image.values.flat()) peak = std::max(peak, v);
  std::vector<std::uint8_t> out(image.values.size(), 0);
  if (peak <= 0.0f) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = std::clamp(image.values.flat()[i] / peak, 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  return encode(image.pixels.data(), image.width, image.height, PNG_COLOR_TYPE_RGB, 3);
}

std::vector<std::uint8_t> encode_png_gray(const PixelImage& image) {
  const auto gray = to_gray8(image);
  return encode(gray.data(), image.width(), image.height(), PNG_COLOR_TYPE_GRAY, 1);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_bytes(path, encode_png(image));
}

void write_png_gray(const std::filesystem::path& path, const PixelImage& image) {
  write_bytes(path, encode_png_gray(image));
}

void write_pgm(const std::filesystem::path& path, const PixelImage& image) {
  const auto gray = to_gray8(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(fmt::format("cannot open {} for writing", path.string()));
  f << "P5\n" << image.width() << " " << image.height() << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(fmt::format("cannot open {} for writing", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(fmt::format("write failed for {}", path.string()));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace panp
