#include "panp/core/types.hpp"

#include <cmath>
#include <fmt/format.h>

#include "panp/core/error.hpp"

namespace panp {

void Grid2D::validate() const {
  if (nx < 2 || nz < 2) throw ConfigError(fmt::format("grid must be at least 2x2, got {}x{}", nx, nz));
  if (!(dx > 0.0)) throw ConfigError(fmt::format("grid spacing must be positive, got {}", dx));
}

void TransducerArray::validate() const {
  if (n_elements == 0 || n_samples == 0) throw ConfigError("transducer needs elements and samples");
  if (!(pitch > 0.0)) throw ConfigError("transducer pitch must be positive");
  if (!(frac_bandwidth > 0.0 && frac_bandwidth < 2.0))
    throw ConfigError(fmt::format("fractional bandwidth must lie in (0, 2), got {}", frac_bandwidth));
  if (!(sample_rate > 2.0 * center_freq))
    throw ConfigError(fmt::format("sample rate {} Hz does not exceed twice the center frequency {} Hz",
                            sample_rate, center_freq));
  if (!(sound_speed > 0.0)) throw ConfigError("sound speed must be positive");
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::rf: return "rf";
    case Role::fluence: return "fluence";
    case Role::initial_pressure: return "initial_pressure";
    case Role::recon_image: return "recon_image";
    case Role::network_output: return "network_output";
    case Role::weights: return "weights";
  }
  return "unknown";
}

Role role_from_string(std::string_view name) {
  for (Role r : {Role::rf, Role::fluence, Role::initial_pressure, Role::recon_image,
                 Role::network_output, Role::weights}) {
    if (to_string(r) == name) return r;
  }
  throw Error(fmt::format("unknown role tag '{}'", name));
}

ScalarField::ScalarField(Grid2D g, Array2D<float> v, Role r)
    : grid(g), values(std::move(v)), role(r) {
  if (values.rows() != grid.nz || values.cols() != grid.nx)
    throw Error(fmt::format("field is {}x{} but grid is {}x{}", values.rows(), values.cols(),
                            grid.nz, grid.nx));
}

bool all_finite(const Array2D<float>& a) {
  for (float v : a.flat())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace panp
