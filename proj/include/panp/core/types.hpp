#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "panp/core/array2d.hpp"

namespace panp {

/// Isotropic 2D simulation grid.
///
/// Column i has its center at x = (i + 0.5) * dx measured from the left grid
/// edge; row j sits at depth z = j * dx below the probe surface, so row 0 is the
/// sensor/tissue surface line.
struct Grid2D {
  std::size_t nx = 400;
  std::size_t nz = 400;
  double dx = 0.1e-3;

  void validate() const;
  [[nodiscard]] double extent_x() const { return static_cast<double>(nx) * dx; }
  [[nodiscard]] double extent_z() const { return static_cast<double>(nz) * dx; }
  [[nodiscard]] double x_at(std::size_t i) const { return (static_cast<double>(i) + 0.5) * dx; }
  [[nodiscard]] double z_at(std::size_t j) const { return static_cast<double>(j) * dx; }
  [[nodiscard]] double center_x() const { return 0.5 * extent_x(); }

  bool operator==(const Grid2D&) const = default;
};

/// Linear array probe and acquisition settings.
struct TransducerArray {
  std::size_t n_elements = 128;
  double pitch = 0.3e-3;
  double center_freq = 7e6;
  double frac_bandwidth = 0.809;
  double sample_rate = 40e6;
  std::size_t n_samples = 1024;
  double sound_speed = 1540.0;

  void validate() const;
  [[nodiscard]] double aperture() const { return static_cast<double>(n_elements) * pitch; }
  /// Lateral element center relative to the array midline.
  [[nodiscard]] double element_offset(std::size_t k) const {
    return (static_cast<double>(k) - 0.5 * static_cast<double>(n_elements - 1)) * pitch;
  }
  [[nodiscard]] double sample_depth() const { return sound_speed / sample_rate; }

  bool operator==(const TransducerArray&) const = default;
};

enum class Role { rf, fluence, initial_pressure, recon_image, network_output, weights };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

/// Time x channel matrix of sensor samples; row 0 is the acquisition trigger.
struct RfFrame {
  Array2D<float> samples;
  TransducerArray array;

  [[nodiscard]] std::size_t n_samples() const { return samples.rows(); }
  [[nodiscard]] std::size_t n_channels() const { return samples.cols(); }
  [[nodiscard]] double sample_rate() const { return array.sample_rate; }

  static RfFrame zeros(const TransducerArray& array) {
    return {Array2D<float>(array.n_samples, array.n_elements, 0.0f), array};
  }
};

/// Scalar field on a simulation grid; values are nz x nx (depth rows).
struct ScalarField {
  Grid2D grid;
  Array2D<float> values;
  Role role = Role::fluence;

  ScalarField() = default;
  ScalarField(Grid2D g, Role r, float fill = 0.0f)
      : grid(g), values(g.nz, g.nx, fill), role(r) {}
  ScalarField(Grid2D g, Array2D<float> v, Role r);
};

/// Image on a uniform pixel grid (height rows x width columns).
struct PixelImage {
  Array2D<float> values;
  double pixel_size = 70e-6;

  PixelImage() = default;
  PixelImage(std::size_t width, std::size_t height, double pixel = 70e-6, float fill = 0.0f)
      : values(height, width, fill), pixel_size(pixel) {}
  PixelImage(Array2D<float> v, double pixel) : values(std::move(v)), pixel_size(pixel) {}

  [[nodiscard]] std::size_t width() const { return values.cols(); }
  [[nodiscard]] std::size_t height() const { return values.rows(); }
  float& at(std::size_t x, std::size_t y) { return values(y, x); }
  [[nodiscard]] float at(std::size_t x, std::size_t y) const { return values(y, x); }
};

bool all_finite(const Array2D<float>& a);

}  // namespace panp
