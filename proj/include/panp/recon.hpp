#pragma once

#include <complex>
#include <cstddef>
#include <span>

#include <json.hpp>

#include "panp/acoustics.hpp"
#include "panp/core/types.hpp"

namespace panp::recon {

inline constexpr std::size_t kDefaultZeroSamples = 150;

/// Rows [0, n_zero) set to zero.
RfFrame zero_early_samples(RfFrame frame, std::size_t n_zero = kDefaultZeroSamples);

/// Element-wise mean of equally shaped frames.
RfFrame average_frames(std::span<const RfFrame> frames);

/// Sampling of a migrated image. Row r lies at depth r * dz below the array;
/// column i lies at x0 + i * dx_lateral relative to the array midline.
struct ReconGeometry {
  double dx_lateral = 0.0;
  double dz = 0.0;
  double x0 = 0.0;
  std::size_t fft_rows = 0;  // zero-padded transform size along time
  std::size_t fft_cols = 0;  // zero-padded transform size along channels

  [[nodiscard]] nlohmann::json describe() const;
};

/// Complex analytic image along depth; its real part is the plain f-k image.
struct MigratedImage {
  Array2D<std::complex<double>> values;
  ReconGeometry geometry;
};

/// Envelope image, the magnitude of a MigratedImage.
struct ReconImage {
  Array2D<float> values;
  ReconGeometry geometry;
};

/// Fourier-domain (f-k / Stolt) migration for one-way photoacoustic travel to a
/// planar line array. Both axes are zero-padded to the next power of two of
/// twice their length. Linear in the RF data.
MigratedImage fk_migrate(const RfFrame& frame, const acoustics::MediumConfig& medium);

/// fk_migrate followed by the magnitude of the analytic signal along depth.
ReconImage fk_reconstruct(const RfFrame& frame, const acoustics::MediumConfig& medium);

/// Standard display grid: 578 x 565 pixels of 70 um, cropped to 512 x 512 by
/// dropping the top 53 rows and 33 columns on each side.
struct StandardGeometry {
  std::size_t full_width = 578;
  std::size_t full_height = 565;
  double pixel = 70e-6;
  std::size_t crop = 512;

  [[nodiscard]] std::size_t crop_top() const { return full_height - crop; }
  [[nodiscard]] std::size_t crop_left() const { return (full_width - crop) / 2; }

  /// Physical position (lateral offset from the array midline, depth) of the
  /// center of cropped pixel (col, row) in an image of side `size`.
  [[nodiscard]] double x_of(double col, std::size_t size = 512) const;
  [[nodiscard]] double z_of(double row, std::size_t size = 512) const;
  /// Inverse mapping to fractional pixel coordinates of a cropped image of side `size`.
  [[nodiscard]] double col_of(double x, std::size_t size = 512) const;
  [[nodiscard]] double row_of(double z, std::size_t size = 512) const;
};

/// Bilinear resampling onto the full standard grid, then the standard crop.
PixelImage to_standard_image(const ReconImage& recon, const StandardGeometry& geom = {});

/// Same mapping for a simulation-grid field whose lateral center is the array
/// midline and whose row 0 is the sensor line. Samples outside the grid are 0.
PixelImage field_to_standard_image(const ScalarField& field, const StandardGeometry& geom = {});

}  // namespace panp::recon
