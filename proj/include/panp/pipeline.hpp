#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "panp/core/config.hpp"
#include "panp/core/image_io.hpp"
#include "panp/dataset.hpp"
#include "panp/detect.hpp"
#include "panp/metrics.hpp"
#include "panp/neural.hpp"

namespace panp::pipeline {

struct EvalConfig {
  std::size_t size = 256;  // evaluation frame side; U-Net outputs are resampled to it
  detect::ThresholdConfig threshold;  // needle masks and post-processing
  detect::HoughConfig hough;
  std::size_t snr_dilation = 3;

  void validate() const;
};

nlohmann::json to_json(const EvalConfig& c);
void read_eval_config(ConfigReader r, EvalConfig& c);

enum class Method { conventional, unet, unet_postproc, unet_postproc_line, sht };
inline constexpr std::array<Method, 5> kMethods{Method::conventional, Method::unet, Method::unet_postproc,
                                                Method::unet_postproc_line, Method::sht};
std::string to_string(Method m);

struct MethodEval {
  bool detected = false;
  std::optional<double> snr;  // intensity images only; absent when undefined
  std::optional<double> mhd;  // frames with a visible needle only
  std::optional<detect::NeedleSegment> segment;
};

struct FrameEval {
  std::size_t index = 0;
  bool visible = false;  // part of the needle lies below the blanked early samples
  bool has_unet = false;
  std::optional<detect::NeedleSegment> truth;
  std::array<MethodEval, kMethods.size()> methods;

  MethodEval& operator[](Method m) { return methods[static_cast<std::size_t>(m)]; }
  const MethodEval& operator[](Method m) const { return methods[static_cast<std::size_t>(m)]; }
};

/// Conventional and (optional) U-Net images must both be size x size. An empty
/// predicted set scores the image diagonal as its MHD.
FrameEval evaluate_frame(const PixelImage& conventional, const PixelImage* unet,
                         const std::optional<detect::NeedleSegment>& truth, const EvalConfig& cfg);

/// Depth below which the needle can appear in the image.
double visible_depth(const dataset::DatasetConfig& cfg);

/// The composite image of an entry resampled to size x size.
PixelImage conventional_image(const dataset::DatasetManifest& m, const dataset::ManifestEntry& e, std::size_t size);

/// Returns the U-Net image of an entry (size x size), or nullopt to evaluate without one.
using Predictor = std::function<std::optional<PixelImage>(const dataset::ManifestEntry&)>;

/// Entries of `split` ("all" for every entry), in manifest order.
std::vector<const dataset::ManifestEntry*> select(const dataset::DatasetManifest& m, const std::string& split);

std::vector<FrameEval> evaluate(const dataset::DatasetManifest& m, const std::string& split, const Predictor& unet,
                                const EvalConfig& cfg, unsigned jobs = 1);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
};

Stat stat_of(const std::vector<double>& v);

struct MethodSummary {
  Stat snr;
  Stat mhd;
  std::size_t detected = 0;
  std::size_t snr_undefined = 0;
};

struct EvalSummary {
  std::size_t frames = 0;
  std::size_t visible = 0;
  bool has_unet = false;
  std::array<MethodSummary, kMethods.size()> methods;
  double snr_ratio = 0.0;  // mean U-Net SNR over mean conventional SNR; NaN if undefined
  double mhd_ordering = 0.0;  // fraction of visible frames with conventional > U-Net > post-processed
  double mean_snr_ratio_per_frame = 0.0;

  const MethodSummary& operator[](Method m) const { return methods[static_cast<std::size_t>(m)]; }
};

EvalSummary summarize(const std::vector<FrameEval>& frames);

nlohmann::json to_json(const FrameEval& f);
nlohmann::json to_json(const EvalSummary& s);
/// Conventional / U-Net / U-Net + post-processing / SHT rows of "mean ± std" strings.
nlohmann::json summary_table(const EvalSummary& s);
/// Full metrics document: schema version, config, summary, table and frames.
nlohmann::json metrics_json(const std::vector<FrameEval>& frames, const EvalConfig& cfg, const std::string& split);

/// Detector output for `method` ("unet-postproc" or "hough"): segment
/// endpoints, Hough lines with votes and the threshold used.
nlohmann::json detection_json(const PixelImage& image, const std::string& method, const EvalConfig& cfg);

/// Grayscale base with the segment's Bresenham pixels set to pure green.
RgbImage render_overlay(const PixelImage& image, const std::optional<detect::NeedleSegment>& segment);

struct PlotSeries {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

/// Line plot of the means over a band of mean +- std per series.
RgbImage render_plot(const std::vector<PlotSeries>& series, std::size_t width = 640, std::size_t height = 400);

struct PipelineConfig {
  dataset::DatasetConfig dataset;
  neural::NetworkConfig network;
  neural::TrainConfig train;
  EvalConfig eval;
  bool overlays = true;
  unsigned jobs = 1;

  // Sweep grids.
  std::vector<std::size_t> averaging{4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24};
  std::vector<std::string> gauges{"16G", "18G", "20G", "25G", "30G"};
  std::vector<std::size_t> scales{3, 4, 5};
  std::vector<std::size_t> input_sizes{64, 128, 256};
  std::size_t sweep_count = 0;  // entries per regenerated sweep point; 0 uses dataset.count
  std::string weights;  // trained network for the averaging, diameter and input sweeps

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Reads a config over the defaults; throws ConfigError listing every offending key.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig read_pipeline_config(const std::filesystem::path& path);
/// Sets the dataset seed (pairing, split, backgrounds) and the training seed.
void apply_seed(PipelineConfig& c, std::uint64_t seed);

/// Training and validation pairs of a manifest split at the given input size.
std::vector<neural::TrainPair> load_pairs(const dataset::DatasetManifest& m, const std::string& split,
                                          std::size_t size, unsigned jobs = 1);

/// U-Net output of an image inferred at infer_size (the training input side)
/// and resampled to out_size x out_size.
PixelImage enhance(const neural::Network& net, const PixelImage& image, std::size_t infer_size, std::size_t out_size);
/// Training input side recorded in a weights file, or `fallback` if absent.
std::size_t trained_input_size(const std::filesystem::path& weights, std::size_t fallback);

/// Writes one U-Net output per entry (out_size x out_size) as dir/<image name>.
void write_predictions(const neural::Network& net, const dataset::DatasetManifest& m, const std::string& split,
                       const std::filesystem::path& dir, std::size_t infer_size, std::size_t out_size,
                       unsigned jobs = 1);
/// Predictor reading write_predictions output; throws if a file is missing.
Predictor predictions_from(const std::filesystem::path& dir);

struct PipelineResult {
  dataset::DatasetManifest manifest;
  neural::TrainResult train;
  std::vector<FrameEval> frames;
  EvalSummary summary;
};

/// gen-dataset, train, infer on the test split, detect, evaluate. Writes
/// dataset/, weights.padf, train.json, predictions/, detections/, overlays/,
/// metrics.json and summary.json (no wall times) plus timing.json under out_dir.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

enum class SweepKind { averaging, diameter, capacity, input_size };
SweepKind sweep_kind_from_string(const std::string& s);
std::string to_string(SweepKind k);

struct SweepTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

/// One row per grid point. Writes sweep_<kind>.csv, sweep_<kind>.json and
/// PNG plots of SNR and MHD (mean +- std) under out_dir.
SweepTable run_sweep(SweepKind kind, const PipelineConfig& cfg, const std::filesystem::path& out_dir);

std::string to_csv(const SweepTable& t);

}  // namespace panp::pipeline
