#pragma once

#include "panp/core/types.hpp"

namespace panp {

/// Catmull-Rom (a = -0.5) bicubic resampling with clamped edges. Pixel centers
/// are aligned, i.e. output pixel u samples source coordinate
/// (u + 0.5) * in / out - 0.5. Both sizes must be at least 4 in each axis.
PixelImage resize_bicubic(const PixelImage& image, std::size_t new_width, std::size_t new_height);

/// Bilinear sample at fractional (row, col) with coordinates clamped to the array.
float sample_bilinear(const Array2D<float>& a, double row, double col);

}  // namespace panp
