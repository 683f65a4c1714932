#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "panp/detect.hpp"

namespace panp::metrics {

using detect::Point;
using PointSet = std::vector<Point>;

/// Mean over a in A of the distance from a to its nearest point in B.
double directed_distance(const PointSet& a, const PointSet& b);
/// Modified Hausdorff distance max(d(A, B), d(B, A)); uses a uniform-grid index.
double mhd(const PointSet& a, const PointSet& b);
/// Reference double loop; equal to mhd() bit for bit.
double mhd_brute_force(const PointSet& a, const PointSet& b);

PointSet mask_to_pointset(const detect::Mask& mask);

/// Bresenham rasterization between the rounded endpoints; points outside
/// [0, width) x [0, height) are dropped.
PointSet segment_to_pointset(const detect::NeedleSegment& segment, std::size_t width, std::size_t height);

struct Rect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  [[nodiscard]] std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

struct SnrReport {
  double signal = 0.0;  // mean over the rasterized segment
  double sigma = 0.0;   // population standard deviation of the background rectangle
  double snr = 0.0;
  Rect background;
  std::size_t needle_pixels = 0;
};

/// Background is the largest of the four rectangles flanking the segment's
/// bounding box dilated by `dilation` pixels (above, below, left, right).
/// Throws if that background is constant.
SnrReport snr(const PixelImage& image, const detect::NeedleSegment& segment, std::size_t dilation = 3);

struct SequenceStats {
  std::size_t frames_with_needle = 0;
  std::size_t frames_without = 0;
  std::size_t missed = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  double tpr = 0.0;
  double fpr = 0.0;
};

SequenceStats sequence_stats(const std::vector<bool>& detected, const std::vector<bool>& has_needle);

nlohmann::json to_json(const SnrReport& r);
nlohmann::json to_json(const SequenceStats& s);

}  // namespace panp::metrics
