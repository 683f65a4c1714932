#include "panp/core/resample.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fmt/format.h>

#include "panp/core/error.hpp"

namespace panp {
namespace {

double catmull_rom(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> build_taps(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const auto last = static_cast<long>(in) - 1;
  for (std::size_t u = 0; u < out; ++u) {
    const double src = (static_cast<double>(u) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      const long idx = static_cast<long>(base) + k - 1;
      taps[u].index[k] = static_cast<std::size_t>(std::clamp(idx, 0L, last));
      taps[u].weight[k] = catmull_rom(frac - (k - 1));
    }
  }
  return taps;
}

}  // namespace

PixelImage resize_bicubic(const PixelImage& image, std::size_t new_width, std::size_t new_height) {
  if (image.width() < 4 || image.height() < 4)
    throw Error(fmt::format("bicubic source must be at least 4x4, got {}x{}", image.width(), image.height()));
  if (new_width < 4 || new_height < 4)
    throw Error(fmt::format("bicubic target must be at least 4x4, got {}x{}", new_width, new_height));

  const auto tx = build_taps(image.width(), new_width);
  const auto ty = build_taps(image.height(), new_height);

  // Horizontal pass into double precision, then vertical.
  Array2D<double> tmp(image.height(), new_width);
  for (std::size_t r = 0; r < image.height(); ++r) {
    const auto src = image.values.row(r);
    for (std::size_t u = 0; u < new_width; ++u) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += tx[u].weight[k] * src[tx[u].index[k]];
      tmp(r, u) = acc;
    }
  }
  const double pixel = image.pixel_size * static_cast<double>(image.width()) / static_cast<double>(new_width);
  PixelImage out(new_width, new_height, pixel);
  for (std::size_t v = 0; v < new_height; ++v) {
    for (std::size_t u = 0; u < new_width; ++u) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += ty[v].weight[k] * tmp(ty[v].index[k], u);
      out.values(v, u) = static_cast<float>(acc);
    }
  }
  return out;
}

float sample_bilinear(const Array2D<float>& a, double row, double col) {
  const double r = std::clamp(row, 0.0, static_cast<double>(a.rows() - 1));
  const double c = std::clamp(col, 0.0, static_cast<double>(a.cols() - 1));
  const auto r0 = static_cast<std::size_t>(r);
  const auto c0 = static_cast<std::size_t>(c);
  const std::size_t r1 = std::min(r0 + 1, a.rows() - 1);
  const std::size_t c1 = std::min(c0 + 1, a.cols() - 1);
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  const double top = (1.0 - fc) * a(r0, c0) + fc * a(r0, c1);
  const double bot = (1.0 - fc) * a(r1, c0) + fc * a(r1, c1);
  return static_cast<float>((1.0 - fr) * top + fr * bot);
}

}  // namespace panp
