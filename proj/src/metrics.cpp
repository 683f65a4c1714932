#include "panp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "panp/core/error.hpp"

namespace panp::metrics {

namespace {

double dist(const Point& p, const Point& q) {
  const double dx = p.x - q.x, dy = p.y - q.y;
  return std::sqrt(dx * dx + dy * dy);
}

void require_nonempty(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw Error("distance between point sets needs both sets non-empty");
}

/// Uniform bucket grid over the bounding box of a point set.
class GridIndex {
 public:
  explicit GridIndex(const PointSet& pts) : pts_(pts) {
    x0_ = y0_ = std::numeric_limits<double>::infinity();
    double x1 = -x0_, y1 = -y0_;
    for (const auto& p : pts) {
      x0_ = std::min(x0_, p.x);
      y0_ = std::min(y0_, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
    const double span = std::max({x1 - x0_, y1 - y0_, 1.0});
    const double per_side = std::max(1.0, std::ceil(std::sqrt(static_cast<double>(pts.size()) / 2.0)));
    cell_ = span / per_side;
    nx_ = static_cast<long>((x1 - x0_) / cell_) + 1;
    ny_ = static_cast<long>((y1 - y0_) / cell_) + 1;
    start_.assign(static_cast<std::size_t>(nx_ * ny_) + 1, 0);
    for (const auto& p : pts) ++start_[bucket(p) + 1];
    for (std::size_t k = 1; k < start_.size(); ++k) start_[k] += start_[k - 1];
    items_.resize(pts.size());
    auto fill = start_;
    for (std::size_t k = 0; k < pts.size(); ++k) items_[fill[bucket(pts[k])]++] = k;
  }

  [[nodiscard]] double nearest(const Point& q) const {
    const long cx = std::clamp(static_cast<long>(std::floor((q.x - x0_) / cell_)), 0L, nx_ - 1);
    const long cy = std::clamp(static_cast<long>(std::floor((q.y - y0_) / cell_)), 0L, ny_ - 1);
    // Distance from q to the box of the grid, so that rings outside it still prune.
    const double out_x = std::max({x0_ - q.x, q.x - (x0_ + static_cast<double>(nx_) * cell_), 0.0});
    const double out_y = std::max({y0_ - q.y, q.y - (y0_ + static_cast<double>(ny_) * cell_), 0.0});
    double best = std::numeric_limits<double>::infinity();
    const long max_ring = std::max(nx_, ny_);
    for (long ring = 0; ring <= max_ring; ++ring) {
      // Every point in ring k or beyond is at least (k - 1) cells away.
      if (ring > 0 && std::max({out_x, out_y, static_cast<double>(ring - 1) * cell_}) > best) break;
      for (long y = cy - ring; y <= cy + ring; ++y) {
        if (y < 0 || y >= ny_) continue;
        const bool edge_row = y == cy - ring || y == cy + ring;
        for (long x = cx - ring; x <= cx + ring; x += (edge_row || ring == 0) ? 1 : 2 * ring) {
          if (x < 0 || x >= nx_) continue;
          const auto b = static_cast<std::size_t>(y * nx_ + x);
          for (std::size_t k = start_[b]; k < start_[b + 1]; ++k) best = std::min(best, dist(q, pts_[items_[k]]));
        }
      }
    }
    return best;
  }

 private:
  [[nodiscard]] std::size_t bucket(const Point& p) const {
    const long bx = std::min(static_cast<long>((p.x - x0_) / cell_), nx_ - 1);
    const long by = std::min(static_cast<long>((p.y - y0_) / cell_), ny_ - 1);
    return static_cast<std::size_t>(by * nx_ + bx);
  }

  const PointSet& pts_;
  double x0_, y0_, cell_;
  long nx_, ny_;
  std::vector<std::size_t> start_, items_;
};

double directed_indexed(const PointSet& a, const GridIndex& index) {
  double sum = 0.0;
  for (const auto& p : a) sum += index.nearest(p);
  return sum / static_cast<double>(a.size());
}

double directed_brute(const PointSet& a, const PointSet& b) {
  double sum = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, dist(p, q));
    sum += best;
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace

double directed_distance(const PointSet& a, const PointSet& b) {
  require_nonempty(a, b);
  return directed_indexed(a, GridIndex(b));
}

double mhd(const PointSet& a, const PointSet& b) {
  require_nonempty(a, b);
  return std::max(directed_indexed(a, GridIndex(b)), directed_indexed(b, GridIndex(a)));
}

double mhd_brute_force(const PointSet& a, const PointSet& b) {
  require_nonempty(a, b);
  return std::max(directed_brute(a, b), directed_brute(b, a));
}

PointSet mask_to_pointset(const detect::Mask& mask) {
  PointSet out;
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) out.push_back({static_cast<double>(c), static_cast<double>(r)});
  return out;
}

PointSet segment_to_pointset(const detect::NeedleSegment& segment, std::size_t width, std::size_t height) {
  long x0 = std::lround(segment.a.x), y0 = std::lround(segment.a.y);
  const long x1 = std::lround(segment.b.x), y1 = std::lround(segment.b.y);
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  PointSet out;
  for (;;) {
    if (x0 >= 0 && y0 >= 0 && x0 < static_cast<long>(width) && y0 < static_cast<long>(height))
      out.push_back({static_cast<double>(x0), static_cast<double>(y0)});
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return out;
}

SnrReport snr(const PixelImage& image, const detect::NeedleSegment& segment, std::size_t dilation) {
  const std::size_t w = image.width(), h = image.height();
  const auto pts = segment_to_pointset(segment, w, h);
  if (pts.empty()) throw Error("needle segment lies outside the image");
  SnrReport rep;
  double sum = 0.0;
  std::size_t bx0 = w, by0 = h, bx1 = 0, by1 = 0;
  for (const auto& p : pts) {
    const auto x = static_cast<std::size_t>(p.x), y = static_cast<std::size_t>(p.y);
    sum += image.at(x, y);
    bx0 = std::min(bx0, x);
    by0 = std::min(by0, y);
    bx1 = std::max(bx1, x + 1);
    by1 = std::max(by1, y + 1);
  }
  rep.needle_pixels = pts.size();
  rep.signal = sum / static_cast<double>(pts.size());

  bx0 = bx0 > dilation ? bx0 - dilation : 0;
  by0 = by0 > dilation ? by0 - dilation : 0;
  bx1 = std::min(w, bx1 + dilation);
  by1 = std::min(h, by1 + dilation);
  const Rect flanks[4] = {{0, 0, w, by0}, {0, by1, w, h}, {0, 0, bx0, h}, {bx1, 0, w, h}};
  rep.background = flanks[0];
  for (const auto& r : flanks)
    if (r.area() > rep.background.area()) rep.background = r;
  if (rep.background.area() < 2) throw Error("undefined SNR: no background region beside the needle");

  double mean = 0.0;
  for (std::size_t y = rep.background.y0; y < rep.background.y1; ++y)
    for (std::size_t x = rep.background.x0; x < rep.background.x1; ++x) mean += image.at(x, y);
  mean /= static_cast<double>(rep.background.area());
  double var = 0.0;
  for (std::size_t y = rep.background.y0; y < rep.background.y1; ++y)
    for (std::size_t x = rep.background.x0; x < rep.background.x1; ++x) {
      const double d = image.at(x, y) - mean;
      var += d * d;
    }
  rep.sigma = std::sqrt(var / static_cast<double>(rep.background.area()));
  if (!(rep.sigma > 0.0)) throw Error("undefined SNR: background is constant");
  rep.snr = rep.signal / rep.sigma;
  return rep;
}

SequenceStats sequence_stats(const std::vector<bool>& detected, const std::vector<bool>& has_needle) {
  if (detected.size() != has_needle.size())
    throw Error(fmt::format("{} detections for {} labelled frames", detected.size(), has_needle.size()));
  SequenceStats s;
  for (std::size_t k = 0; k < detected.size(); ++k) {
    if (has_needle[k]) {
      ++s.frames_with_needle;
      detected[k] ? ++s.true_positives : ++s.missed;
    } else {
      ++s.frames_without;
      if (detected[k]) ++s.false_positives;
    }
  }
  s.tpr = s.frames_with_needle ? static_cast<double>(s.true_positives) / static_cast<double>(s.frames_with_needle) : 0.0;
  s.fpr = s.frames_without ? static_cast<double>(s.false_positives) / static_cast<double>(s.frames_without) : 0.0;
  return s;
}

nlohmann::json to_json(const SnrReport& r) {
  return {{"signal", r.signal},
          {"sigma", r.sigma},
          {"snr", r.snr},
          {"needle_pixels", r.needle_pixels},
          {"background", {r.background.x0, r.background.y0, r.background.x1, r.background.y1}}};
}

nlohmann::json to_json(const SequenceStats& s) {
  return {{"frames_with_needle", s.frames_with_needle},
          {"frames_without", s.frames_without},
          {"missed", s.missed},
          {"true_positives", s.true_positives},
          {"false_positives", s.false_positives},
          {"tpr", s.tpr},
          {"fpr", s.fpr}};
}

}  // namespace panp::metrics
