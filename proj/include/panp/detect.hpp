#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "panp/core/types.hpp"

namespace panp::detect {

/// Pixel coordinates: x is the column (lateral), y the row (depth), origin at
/// the top-left pixel center.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Straight needle in pixel coordinates; b is the tip (the deeper end).
struct NeedleSegment {
  Point a;
  Point b;

  [[nodiscard]] double length() const;
  /// Angle of b - a from the +x axis in degrees, folded into [0, 180).
  [[nodiscard]] double angle_deg() const;
};

using Mask = Array2D<std::uint8_t>;

std::size_t count_set(const Mask& mask);

enum class ThresholdMethod { fraction_of_max, otsu };

struct ThresholdConfig {
  ThresholdMethod method = ThresholdMethod::fraction_of_max;
  double alpha = 0.2;
};

struct Binarized {
  Mask mask;
  double threshold = 0.0;
};

/// mask = image >= threshold. An image without positive values gives an empty mask.
Binarized binarize(const PixelImage& image, const ThresholdConfig& cfg = {});

/// Otsu threshold over a 256-bin histogram spanning [min, max]; returns the
/// lower edge of the first bin of the upper class.
double otsu_threshold(const Array2D<float>& values);

/// Keeps the 8-connected component with the most boundary pixels (a pixel is
/// boundary if any 4-neighbor is outside the component). Ties go to the
/// component whose first pixel in row-major order comes first. Returns nullopt
/// for an empty mask.
std::optional<Mask> max_contour_select(const Mask& mask);

/// Total-least-squares line through the set pixels, clipped to the extreme
/// projections. Throws for fewer than two distinct pixels.
NeedleSegment fit_segment(const Mask& mask);

/// Accumulator for r = x sin(theta) + y cos(theta), theta in [0, 180).
/// Row index = r bin (r = (row - r_offset) * r_res), column = theta bin.
struct HoughAccumulator {
  Array2D<std::uint32_t> votes;
  double r_res = 1.0;
  double theta_res = 1.0;
  long r_offset = 0;

  [[nodiscard]] double r_of(std::size_t row) const { return (static_cast<double>(row) - static_cast<double>(r_offset)) * r_res; }
  [[nodiscard]] double theta_of(std::size_t col) const { return static_cast<double>(col) * theta_res; }
  [[nodiscard]] std::uint64_t total() const;
};

HoughAccumulator hough_accumulate(const Mask& mask, double r_res = 1.0, double theta_res = 1.0);

struct HoughLine {
  double r = 0.0;
  double theta_deg = 0.0;
  std::uint32_t votes = 0;
};

/// Greedy peak picking: highest bin first, its 3x3 neighborhood suppressed,
/// stopping at n_peaks or below min_votes.
std::vector<HoughLine> hough_peaks(const HoughAccumulator& acc, std::size_t n_peaks, std::uint32_t min_votes);

/// Part of a Hough line inside a width x height image, ordered so that b is deeper.
std::optional<NeedleSegment> clip_line(const HoughLine& line, std::size_t width, std::size_t height);

/// Standard Hough baseline: threshold, accumulate, take the strongest line.
struct HoughConfig {
  ThresholdConfig threshold;
  double r_res = 1.0;
  double theta_res = 1.0;
  std::size_t n_peaks = 1;
  std::uint32_t min_votes = 20;
};

struct HoughResult {
  std::vector<HoughLine> lines;
  std::optional<NeedleSegment> segment;  // strongest line clipped to the image
  double threshold = 0.0;
};

HoughResult hough_detect(const PixelImage& image, const HoughConfig& cfg = {});

/// Thresholding plus maximum contour selection on an enhanced image.
struct PostprocResult {
  Mask mask;  // empty (all zero) when nothing survived
  std::optional<NeedleSegment> segment;
  double threshold = 0.0;
};

PostprocResult postprocess(const PixelImage& image, const ThresholdConfig& cfg = {});

nlohmann::json to_json(const NeedleSegment& s);
nlohmann::json to_json(const HoughLine& l);
std::string to_string(ThresholdMethod m);
ThresholdMethod threshold_method_from_string(const std::string& s);

}  // namespace panp::detect
