#include "panp/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "panp/core/error.hpp"

namespace panp::detect {

using std::numbers::pi;

double NeedleSegment::length() const { return std::hypot(b.x - a.x, b.y - a.y); }

double NeedleSegment::angle_deg() const {
  double deg = std::atan2(b.y - a.y, b.x - a.x) * 180.0 / pi;
  deg = std::fmod(deg + 360.0, 180.0);
  return deg >= 180.0 ? deg - 180.0 : deg;
}

std::size_t count_set(const Mask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.flat().begin(), mask.flat().end(), [](auto v) { return v != 0; }));
}

double otsu_threshold(const Array2D<float>& values) {
  if (values.empty()) return 0.0;
  const auto [lo_it, hi_it] = std::minmax_element(values.flat().begin(), values.flat().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return lo;
  constexpr std::size_t bins = 256;
  std::vector<double> hist(bins, 0.0);
  const double scale = static_cast<double>(bins) / (hi - lo);
  for (float v : values.flat()) hist[std::min(bins - 1, static_cast<std::size_t>((v - lo) * scale))] += 1.0;

  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (std::size_t k = 0; k < bins; ++k) sum_all += static_cast<double>(k) * hist[k];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  std::size_t best_k = 1;
  for (std::size_t k = 1; k < bins; ++k) {
    w0 += hist[k - 1];
    sum0 += static_cast<double>(k - 1) * hist[k - 1];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  return lo + static_cast<double>(best_k) / scale;
}

Binarized binarize(const PixelImage& image, const ThresholdConfig& cfg) {
  Binarized out{Mask(image.height(), image.width(), 0), 0.0};
  if (image.values.empty()) return out;
  const double peak = max_value(image.values);
  if (!(peak > 0.0)) return out;
  switch (cfg.method) {
    case ThresholdMethod::fraction_of_max:
      if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0))
        throw ConfigError(fmt::format("threshold fraction must lie in (0, 1], got {}", cfg.alpha));
      out.threshold = cfg.alpha * peak;
      break;
    case ThresholdMethod::otsu:
      out.threshold = otsu_threshold(image.values);
      break;
  }
  const auto src = image.values.flat();
  auto dst = out.mask.flat();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k] >= out.threshold ? 1 : 0;
  return out;
}

std::optional<Mask> max_contour_select(const Mask& mask) {
  const long rows = static_cast<long>(mask.rows()), cols = static_cast<long>(mask.cols());
  std::vector<int> label(mask.size(), -1);
  std::vector<std::size_t> boundary;
  std::vector<std::size_t> stack;
  int n_labels = 0;
  auto set = [&](long r, long c) {
    return r >= 0 && r < rows && c >= 0 && c < cols && mask(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) != 0;
  };
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) {
      const auto idx = static_cast<std::size_t>(r * cols + c);
      if (!set(r, c) || label[idx] >= 0) continue;
      const int id = n_labels++;
      boundary.push_back(0);
      label[idx] = id;
      stack.push_back(idx);
      while (!stack.empty()) {
        const auto cur = stack.back();
        stack.pop_back();
        const long cr = static_cast<long>(cur) / cols, cc = static_cast<long>(cur) % cols;
        // Components are 8-connected, so every set 4-neighbor belongs to the same one.
        if (!set(cr - 1, cc) || !set(cr + 1, cc) || !set(cr, cc - 1) || !set(cr, cc + 1)) ++boundary[id];
        for (long dr = -1; dr <= 1; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || !set(cr + dr, cc + dc)) continue;
            const auto n = static_cast<std::size_t>((cr + dr) * cols + cc + dc);
            if (label[n] < 0) {
              label[n] = id;
              stack.push_back(n);
            }
          }
      }
    }
  if (n_labels == 0) return std::nullopt;
  // Labels are assigned in row-major order of first pixel, so the first maximum wins ties.
  const int keep = static_cast<int>(std::max_element(boundary.begin(), boundary.end()) - boundary.begin());
  Mask out(mask.rows(), mask.cols(), 0);
  for (std::size_t k = 0; k < label.size(); ++k) out.flat()[k] = label[k] == keep ? 1 : 0;
  return out;
}

NeedleSegment fit_segment(const Mask& mask) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        sx += static_cast<double>(c);
        sy += static_cast<double>(r);
        ++n;
      }
  if (n < 2) throw Error(fmt::format("cannot fit a segment to {} pixel{}", n, n == 1 ? "" : "s"));
  const double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
  double cxx = 0.0, cxy = 0.0, cyy = 0.0;
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        const double dx = static_cast<double>(c) - mx, dy = static_cast<double>(r) - my;
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
      }
  // Principal axis of the 2x2 scatter matrix.
  const double theta = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
  const double ux = std::cos(theta), uy = std::sin(theta);
  double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        const double t = (static_cast<double>(c) - mx) * ux + (static_cast<double>(r) - my) * uy;
        tmin = std::min(tmin, t);
        tmax = std::max(tmax, t);
      }
  NeedleSegment s{{mx + tmin * ux, my + tmin * uy}, {mx + tmax * ux, my + tmax * uy}};
  if (s.a.y > s.b.y || (s.a.y == s.b.y && s.a.x > s.b.x)) std::swap(s.a, s.b);
  return s;
}

std::uint64_t HoughAccumulator::total() const {
  return std::accumulate(votes.flat().begin(), votes.flat().end(), std::uint64_t{0});
}

HoughAccumulator hough_accumulate(const Mask& mask, double r_res, double theta_res) {
  if (!(r_res > 0.0) || !(theta_res > 0.0)) throw ConfigError("Hough resolutions must be positive");
  const auto n_theta = static_cast<std::size_t>(std::ceil(180.0 / theta_res - 1e-9));
  const double diag = std::hypot(static_cast<double>(mask.cols()), static_cast<double>(mask.rows()));
  const auto half = static_cast<long>(std::ceil(diag / r_res));
  HoughAccumulator acc{Array2D<std::uint32_t>(static_cast<std::size_t>(2 * half + 1), n_theta, 0u), r_res, theta_res, half};
  std::vector<double> sn(n_theta), cs(n_theta);
  for (std::size_t t = 0; t < n_theta; ++t) {
    const double th = static_cast<double>(t) * theta_res * pi / 180.0;
    sn[t] = std::sin(th);
    cs[t] = std::cos(th);
  }
  for (std::size_t y = 0; y < mask.rows(); ++y)
    for (std::size_t x = 0; x < mask.cols(); ++x) {
      if (!mask(y, x)) continue;
      for (std::size_t t = 0; t < n_theta; ++t) {
        const double r = static_cast<double>(x) * sn[t] + static_cast<double>(y) * cs[t];
        const long row = std::lround(r / r_res) + half;
        ++acc.votes(static_cast<std::size_t>(row), t);
      }
    }
  return acc;
}

std::vector<HoughLine> hough_peaks(const HoughAccumulator& acc, std::size_t n_peaks, std::uint32_t min_votes) {
  std::vector<HoughLine> out;
  if (n_peaks == 0) throw ConfigError("n_peaks must be at least 1");
  const auto& v = acc.votes;
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < v.size(); ++k)
    if (v.flat()[k] >= min_votes && v.flat()[k] > 0) order.push_back(k);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v.flat()[a] > v.flat()[b]; });
  std::vector<char> suppressed(v.size(), 0);
  const long rows = static_cast<long>(v.rows()), cols = static_cast<long>(v.cols());
  const bool wraps = std::abs(static_cast<double>(cols) * acc.theta_res - 180.0) < 1e-9;
  for (std::size_t k : order) {
    if (out.size() >= n_peaks) break;
    if (suppressed[k]) continue;
    const long r = static_cast<long>(k) / cols, c = static_cast<long>(k) % cols;
    out.push_back({acc.r_of(static_cast<std::size_t>(r)), acc.theta_of(static_cast<std::size_t>(c)), v.flat()[k]});
    for (long dr = -1; dr <= 1; ++dr)
      for (long dc = -1; dc <= 1; ++dc) {
        long rr = r + dr, cc = c + dc;
        // theta wraps at 180 deg with r negated
        if (wraps && (cc < 0 || cc >= cols)) {
          cc = (cc + cols) % cols;
          rr = 2 * acc.r_offset - rr;
        }
        if (rr >= 0 && rr < rows && cc >= 0 && cc < cols) suppressed[static_cast<std::size_t>(rr * cols + cc)] = 1;
      }
  }
  return out;
}

std::optional<NeedleSegment> clip_line(const HoughLine& line, std::size_t width, std::size_t height) {
  // Points with x sin(t) + y cos(t) = r: p = r n + s d, n = (sin, cos), d = (cos, -sin).
  const double th = line.theta_deg * pi / 180.0;
  const double nx = std::sin(th), ny = std::cos(th);
  const double dx = ny, dy = -nx;
  const double px = line.r * nx, py = line.r * ny;
  const double xmax = static_cast<double>(width) - 1.0, ymax = static_cast<double>(height) - 1.0;
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  auto clip = [&](double p, double d, double vmax) {
    if (std::abs(d) < 1e-12) return p >= -1e-9 && p <= vmax + 1e-9;
    double t0 = (0.0 - p) / d, t1 = (vmax - p) / d;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
    return true;
  };
  if (!clip(px, dx, xmax) || !clip(py, dy, ymax) || !(hi > lo)) return std::nullopt;
  NeedleSegment s{{px + lo * dx, py + lo * dy}, {px + hi * dx, py + hi * dy}};
  if (s.a.y > s.b.y || (s.a.y == s.b.y && s.a.x > s.b.x)) std::swap(s.a, s.b);
  return s;
}

HoughResult hough_detect(const PixelImage& image, const HoughConfig& cfg) {
  const auto bin = binarize(image, cfg.threshold);
  HoughResult out;
  out.threshold = bin.threshold;
  const auto acc = hough_accumulate(bin.mask, cfg.r_res, cfg.theta_res);
  out.lines = hough_peaks(acc, cfg.n_peaks, cfg.min_votes);
  if (!out.lines.empty()) out.segment = clip_line(out.lines.front(), image.width(), image.height());
  return out;
}

PostprocResult postprocess(const PixelImage& image, const ThresholdConfig& cfg) {
  const auto bin = binarize(image, cfg);
  PostprocResult out{Mask(image.height(), image.width(), 0), std::nullopt, bin.threshold};
  auto kept = max_contour_select(bin.mask);
  if (!kept) return out;
  out.mask = std::move(*kept);
  if (count_set(out.mask) >= 2) out.segment = fit_segment(out.mask);
  return out;
}

nlohmann::json to_json(const NeedleSegment& s) {
  return {{"a", {s.a.x, s.a.y}}, {"b", {s.b.x, s.b.y}}};
}

nlohmann::json to_json(const HoughLine& l) {
  return {{"r", l.r}, {"theta_deg", l.theta_deg}, {"votes", l.votes}};
}

std::string to_string(ThresholdMethod m) {
  return m == ThresholdMethod::otsu ? "otsu" : "fraction_of_max";
}

ThresholdMethod threshold_method_from_string(const std::string& s) {
  if (s == "otsu") return ThresholdMethod::otsu;
  if (s == "fraction_of_max") return ThresholdMethod::fraction_of_max;
  throw ConfigError(fmt::format("unknown threshold method '{}' (expected fraction_of_max or otsu)", s));
}

}  // namespace panp::detect
