#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "panp/core/types.hpp"

namespace panp {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(w * h * 3, fill) {}
  void set(std::size_t x, std::size_t y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = &pixels[(y * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

/// Normalizes by max (negative values clip to 0) into 8-bit gray.
std::vector<std::uint8_t> to_gray8(const PixelImage& image);

/// PNG encoding is deterministic: fixed compression settings, no time chunk.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_png_gray(const PixelImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png_gray(const std::filesystem::path& path, const PixelImage& image);
void write_pgm(const std::filesystem::path& path, const PixelImage& image);

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace panp
