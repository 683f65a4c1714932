#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "panp/core/types.hpp"

namespace panp::optics {

/// Bulk tissue optics. Coefficients are in mm^-1.
struct OpticalProperties {
  double mu_a = 1.0;
  double mu_s = 10.0;
  double g = 0.9;
  double n = 1.4;

  void validate() const;
};

/// Straight needle entering the surface at (entry_x, 0) and descending at
/// angle_deg from the probe surface until its tip reaches `depth`.
/// Lengths in meters, entry_x measured from the left grid edge.
struct NeedlePose {
  double entry_x = 20e-3;
  double angle_deg = 45.0;
  double depth = 10e-3;
  double diameter = 0.91e-3;
  std::string gauge = "20G";

  [[nodiscard]] double tip_x() const;
  [[nodiscard]] double tip_z() const { return depth; }
};

struct BeamConfig {
  double width = 38.4e-3;
};

struct McConfig {
  std::uint64_t n_photons = 100'000;
  std::uint64_t rng_seed = 1;
  double roulette_threshold = 1e-4;
  double roulette_survival = 0.1;
  // Photons are split into this many reduction blocks, summed in block order,
  // so the result does not depend on the thread count.
  std::size_t reduction_blocks = 16;
  unsigned threads = 1;
};

/// Needle outer diameters in meters keyed by gauge label.
const std::map<std::string, double>& default_gauge_table();
double gauge_diameter(const std::string& gauge);

struct NeedleMask {
  ScalarField mask;  // 1 inside the shaft, 0 elsewhere
  double tip_x = 0.0;
  double tip_z = 0.0;
};

/// Cells whose centers lie within diameter/2 of the needle axis. Throws if the
/// tip falls outside the grid.
NeedleMask rasterize_needle(const NeedlePose& pose, const Grid2D& grid);

/// Photon weight bookkeeping. roulette is the net weight removed by Russian
/// roulette (killed minus weight added to survivors).
struct WeightAudit {
  double launched = 0.0;
  double deposited = 0.0;
  double escaped = 0.0;
  double roulette = 0.0;

  [[nodiscard]] double relative_error() const;
};

struct FluenceMap {
  ScalarField fluence;   // relative to the incident beam fluence
  ScalarField absorbed;  // absorbed energy per cell, as a fraction of the beam energy incident on one cell width
  WeightAudit audit;
};

/// 2D weight-dropping Monte Carlo. Packets launch straight down from z = 0,
/// uniformly across the beam; cells of `needle_mask` absorb every packet that
/// enters them. Row j covers depths [(j - 1/2) dx, (j + 1/2) dx] clipped at the
/// surface.
FluenceMap mc_fluence(const Grid2D& grid, const OpticalProperties& tissue,
                      const ScalarField* needle_mask, const BeamConfig& beam, const McConfig& cfg);

struct P0Config {
  // Lower bound for the absorbed-energy fraction on needle cells. Diffuse light
  // at mu_a >= 1 mm^-1 dies off within a few millimetres, so without it the
  // deeper shaft would carry no signal at all.
  double floor = 0.2;
};

/// Initial pressure on the needle: absorbed-energy fraction, floored, zero
/// outside the mask. The Grueneisen factor is absorbed into later normalization.
ScalarField build_p0(const FluenceMap& fluence, const ScalarField& needle_mask, const P0Config& cfg = {});

nlohmann::json to_json(const OpticalProperties& p);
nlohmann::json to_json(const McConfig& c);
nlohmann::json to_json(const NeedlePose& p);
NeedlePose pose_from_json(const nlohmann::json& j);

}  // namespace panp::optics
