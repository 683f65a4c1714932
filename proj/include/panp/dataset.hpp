#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "panp/acoustics.hpp"
#include "panp/core/config.hpp"
#include "panp/core/types.hpp"
#include "panp/detect.hpp"
#include "panp/optics.hpp"
#include "panp/recon.hpp"

namespace panp::dataset {

/// Procedural vessel background. Amplitudes are relative: the clean vessel RF
/// is scaled to unit peak before noise is added.
struct BackgroundConfig {
  std::size_t min_vessels = 2;
  std::size_t max_vessels = 5;
  double min_radius = 0.2e-3;
  double max_radius = 0.8e-3;
  double min_depth = 7e-3;
  double max_depth = 30e-3;
  double two_layer_probability = 0.4;
  double line_probability = 0.3;  // in-plane vessel segments instead of disks
  double noise_std = 0.05;  // per acquired frame
  std::size_t frames = 1;   // acquisitions averaged into one background
  std::uint64_t rng_seed = 1;

  void validate() const;
};

struct Vessel {
  enum class Kind { disk, line } kind = Kind::disk;
  double x = 0.0, z = 0.0;    // center, grid coordinates (m)
  double radius = 0.0;
  double x2 = 0.0, z2 = 0.0;  // far end of a line vessel
  bool two_layer = false;
  double amplitude = 1.0;

  /// Radius of a circle around (x, z) containing the vessel.
  [[nodiscard]] double extent() const;
};

/// Non-overlapping vessels inside the array aperture (rejection sampling).
std::vector<Vessel> sample_vessels(const BackgroundConfig& cfg, const Grid2D& grid, const TransducerArray& array);
ScalarField vessel_p0(const std::vector<Vessel>& vessels, const Grid2D& grid);

/// Vessels through the forward chain, scaled to unit peak (all zero without vessels).
RfFrame simulate_vessel_rf(const BackgroundConfig& cfg, const Grid2D& grid, const TransducerArray& array,
                           const acoustics::MediumConfig& medium);
/// Mean of cfg.frames noisy copies of `clean`, early samples zeroed.
RfFrame add_background_noise(RfFrame clean, const BackgroundConfig& cfg);
/// simulate_vessel_rf followed by add_background_noise.
RfFrame gen_background_rf(const BackgroundConfig& cfg, const Grid2D& grid, const TransducerArray& array,
                          const acoustics::MediumConfig& medium);

/// Needle RF scaled to max |amplitude| = target_peak, plus the background.
RfFrame composite_rf(const RfFrame& needle_rf, const RfFrame& background_rf, double target_peak);

/// Standard 512 x 512 frame of a needle p0, normalized to unit maximum.
PixelImage make_ground_truth(const ScalarField& p0, const recon::StandardGeometry& geom = {});

/// Needle axis from depth min_depth to the tip, in pixels of a side x side
/// standard image and clipped to it; b is the tip. nullopt if nothing is left.
std::optional<detect::NeedleSegment> truth_segment(const optics::NeedlePose& pose, const Grid2D& grid,
                                                   std::size_t side, const recon::StandardGeometry& geom = {},
                                                   double min_depth = 0.0);

struct PoseGrid {
  std::vector<double> depths{5e-3, 10e-3, 15e-3, 20e-3, 25e-3};
  std::vector<double> angles_deg{20, 25, 30, 35, 40, 45, 50, 55, 60, 65};
  std::vector<double> mu_a{1.0, 1.5, 2.0};
  // Tip lateral offset from the grid center, drawn uniformly per pose.
  double tip_offset = 8e-3;
  std::uint64_t seed = 1;
};

struct NeedleSpec {
  optics::NeedlePose pose;
  double mu_a = 1.0;
};

struct DatasetConfig {
  Grid2D grid;
  TransducerArray array;
  acoustics::MediumConfig medium;
  optics::OpticalProperties tissue;  // mu_a is replaced per pose
  optics::BeamConfig beam;
  optics::McConfig mc;
  optics::P0Config p0;
  PoseGrid poses;
  std::string gauge = "20G";
  BackgroundConfig background;
  std::size_t n_backgrounds = 20;
  std::size_t count = 2000;
  std::uint64_t seed = 1;
  double target_peak_factor = 1.5;  // times the single-frame background 99th-percentile |amplitude|
  std::size_t zero_samples = recon::kDefaultZeroSamples;
  unsigned jobs = 1;
  std::string cache_dir;  // optional shared simulation cache; not part of the config hash

  void validate() const;
};

nlohmann::json to_json(const DatasetConfig& cfg);
/// Reads a (possibly partial) config over the defaults; throws ConfigError listing every problem.
DatasetConfig dataset_config_from_json(const nlohmann::json& j);
void read_dataset_config(ConfigReader& r, DatasetConfig& cfg);

/// All needle placements, mu_a-major then depth then angle.
std::vector<NeedleSpec> enumerate_needles(const DatasetConfig& cfg);

struct ManifestEntry {
  std::size_t index = 0;
  std::size_t needle_id = 0;
  std::size_t background_id = 0;
  std::string needle_rf;
  std::string needle_p0;
  std::string background_rf;
  std::string composite_image;
  std::string ground_truth;
  optics::NeedlePose pose;
  double mu_a = 0.0;
  double target_peak = 0.0;
  std::string split;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json config;
  std::filesystem::path root;  // directory the relative paths resolve against (not serialized)

  [[nodiscard]] std::vector<const ManifestEntry*> split(const std::string& name) const;
  [[nodiscard]] std::filesystem::path path_of(const std::string& rel) const { return root / rel; }
  [[nodiscard]] DatasetConfig dataset_config() const { return dataset_config_from_json(config); }
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Sizes of the 8:1:1 split for n entries (train, val, test).
std::array<std::size_t, 3> split_sizes(std::size_t n);

/// Simulates (or reuses cached) needles and backgrounds, composites, reconstructs
/// and writes images, ground truths and manifest.json under out_dir. Needle RF
/// is normalized after its first zero_samples are cleared, since those samples
/// never reach the image.
DatasetManifest gen_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

/// Rebuilds an entry's composite image from its stored RF; returns the largest
/// absolute difference to the stored image.
double regeneration_error(const DatasetManifest& m, const ManifestEntry& e);

/// The RF-to-image step shared by generation and the audit.
PixelImage reconstruct_standard(const RfFrame& rf, const acoustics::MediumConfig& medium, std::size_t zero_samples);

}  // namespace panp::dataset
