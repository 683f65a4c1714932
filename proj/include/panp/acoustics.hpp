#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include <json.hpp>

#include "panp/core/types.hpp"

namespace panp::acoustics {

struct MediumConfig {
  double sound_speed = 1540.0;  // m/s
  double density = 1000.0;      // kg/m^3
  bool lossless = true;

  void validate() const;
};

struct SolverConfig {
  double dt = 0.0;                    // s, 1 / internal_sample_rate
  double internal_sample_rate = 0.0;  // Hz, integer multiple of the RF rate
  std::size_t n_steps = 0;            // recorded samples, including t = 0
  std::size_t pml_width = 20;         // cells on every side
  double pml_alpha = 2.0;             // nepers per grid point

  [[nodiscard]] double cfl(const MediumConfig& m, const Grid2D& g) const {
    return m.sound_speed * dt / g.dx;
  }
};

inline constexpr double kMaxCfl = 0.3;
inline constexpr double kMinInternalRate = 80e6;

/// Smallest integer multiple (>= 2) of the array sample rate whose time step
/// satisfies c dt / dx <= max_cfl, with enough steps for n_samples RF rows.
SolverConfig make_solver_config(const Grid2D& grid, const MediumConfig& medium,
                                const TransducerArray& array, double max_cfl = kMaxCfl);

/// Per-element pressure traces at the solver's internal rate (rows = time).
struct Traces {
  Array2D<double> data;
  double sample_rate = 0.0;
};

struct EnergyProbe {
  std::size_t interval = 50;
  std::function<void(std::size_t step, double energy)> on_sample;
};

/// Lossless 2D first-order k-space pseudospectral solver with split-field PML
/// outside the grid. Elements are point receivers on row 0, centered on the grid.
Traces pstd_forward(const ScalarField& p0, const MediumConfig& medium, const TransducerArray& array,
                    const SolverConfig& solver, const EnergyProbe* probe = nullptr);

struct AnalyticResponse {
  Traces traces;
  std::vector<double> arrival_times;  // |source - element| / c
};

/// Free-space 2D response to a point initial pressure, H(t - r/c) / sqrt(t^2 - r^2/c^2)
/// averaged over each sample interval. Source position in grid coordinates (m).
AnalyticResponse analytic_point_forward(double source_x, double source_z, double amplitude,
                                        const MediumConfig& medium, const TransducerArray& array,
                                        const Grid2D& grid, double sample_rate, std::size_t n_samples);

/// Lateral position of element k in grid coordinates.
double element_x(const TransducerArray& array, const Grid2D& grid, std::size_t k);

/// Gaussian magnitude response: unit gain at f_c, -6 dB at f_c (1 +- B/2).
double transducer_gain(double frequency, const TransducerArray& array);
Traces apply_transducer_response(Traces traces, const TransducerArray& array);

/// Zero-phase windowed-sinc low-pass (cutoff 0.45 x RF rate) then decimation to
/// the array's sample rate, truncated or zero-padded to n_samples rows.
RfFrame downsample_to_rf(const Traces& traces, const TransducerArray& array);

/// pstd_forward -> apply_transducer_response -> downsample_to_rf.
RfFrame simulate_rf(const ScalarField& p0, const MediumConfig& medium, const TransducerArray& array,
                    const SolverConfig& solver);

nlohmann::json to_json(const SolverConfig& s);
nlohmann::json to_json(const MediumConfig& m);

}  // namespace panp::acoustics
