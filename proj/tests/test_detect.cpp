#include <doctest.h>

#include <cmath>
#include <numbers>

#include "panp/core/error.hpp"
#include "panp/detect.hpp"
#include "panp/metrics.hpp"

using namespace panp;
using namespace panp::detect;

namespace {

Mask empty_mask(std::size_t w, std::size_t h) { return Mask(h, w, 0); }

void draw(Mask& m, const NeedleSegment& s) {
  for (const auto& p : metrics::segment_to_pointset(s, m.cols(), m.rows()))
    m(static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x)) = 1;
}

PixelImage from_mask(const Mask& m, float on, float off = 0.0f) {
  PixelImage img(m.cols(), m.rows());
  for (std::size_t k = 0; k < m.size(); ++k) img.values.flat()[k] = m.flat()[k] ? on : off;
  return img;
}

// Exhaustive oracle: the threshold maximizing between-class variance over the distinct values.
double otsu_oracle(const std::vector<float>& v) {
  std::vector<float> levels(v);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double best = -1.0, best_t = 0.0;
  for (std::size_t k = 1; k < levels.size(); ++k) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (float x : v) (x < levels[k] ? (n0 += 1, s0 += x) : (n1 += 1, s1 += x));
    const double var = n0 * n1 * std::pow(s0 / n0 - s1 / n1, 2);
    if (var > best) best = var, best_t = levels[k];
  }
  return best_t;
}

}  // namespace

TEST_CASE("binarize fraction of max") {
  PixelImage img(8, 8);
  img.at(3, 4) = 10.0f;
  auto b = binarize(img);
  CHECK(count_set(b.mask) == 1);
  CHECK(b.mask(4, 3) == 1);
  CHECK(b.threshold == doctest::Approx(2.0));

  PixelImage flat(5, 5, 70e-6, 3.0f);
  CHECK(count_set(binarize(flat).mask) == 25);

  PixelImage zero(5, 5);
  CHECK(count_set(binarize(zero).mask) == 0);
}

TEST_CASE("otsu separates a bimodal image") {
  PixelImage img(40, 40, 70e-6, 10.0f);
  for (std::size_t y = 10; y < 20; ++y)
    for (std::size_t x = 5; x < 30; ++x) img.at(x, y) = 200.0f;
  auto b = binarize(img, {ThresholdMethod::otsu, 0.2});
  CHECK(b.threshold > 10.0);
  CHECK(b.threshold <= 200.0);
  CHECK(count_set(b.mask) == 250);

  // Against the exhaustive scan on a noisy three-level image.
  Array2D<float> v(30, 30);
  for (std::size_t k = 0; k < v.size(); ++k) v.flat()[k] = static_cast<float>((k * 37) % 11 + (k % 3 == 0 ? 100 : 0));
  const double t = otsu_threshold(v);
  const double oracle = otsu_oracle({v.flat().begin(), v.flat().end()});
  std::size_t a = 0, o = 0;
  for (float x : v.flat()) a += x >= t, o += x >= oracle;
  CHECK(a == o);
}

TEST_CASE("max contour keeps the largest boundary") {
  auto m = empty_mask(100, 60);
  for (std::size_t y = 5; y < 30; ++y)
    for (std::size_t x = 5; x < 35; ++x) m(y, x) = 1;  // boundary 2*(30+25)-4 = 106
  for (std::size_t y = 40; y < 43; ++y)
    for (std::size_t x = 60; x < 64; ++x) m(y, x) = 1;  // boundary 10
  auto kept = max_contour_select(m);
  REQUIRE(kept);
  CHECK(count_set(*kept) == 750);
  CHECK((*kept)(40, 60) == 0);

  // Single blob is kept as is.
  auto one = empty_mask(20, 20);
  for (std::size_t y = 2; y < 8; ++y) one(y, 3) = 1;
  CHECK(max_contour_select(one)->flat().size() == one.size());
  CHECK(count_set(*max_contour_select(one)) == 6);

  // Tie: the blob with the first pixel in row-major order wins.
  auto tie = empty_mask(30, 30);
  for (std::size_t y = 20; y < 23; ++y)
    for (std::size_t x = 2; x < 5; ++x) tie(y, x) = 1;
  for (std::size_t y = 3; y < 6; ++y)
    for (std::size_t x = 20; x < 23; ++x) tie(y, x) = 1;
  auto t = max_contour_select(tie);
  REQUIRE(t);
  CHECK((*t)(3, 20) == 1);
  CHECK((*t)(20, 2) == 0);

  CHECK_FALSE(max_contour_select(empty_mask(10, 10)).has_value());
}

TEST_CASE("max contour output is a connected subset") {
  auto m = empty_mask(64, 64);
  for (std::size_t k = 0; k < m.size(); ++k) m.flat()[k] = ((k * 2654435761u) >> 7) % 3 == 0;
  auto kept = max_contour_select(m);
  REQUIRE(kept);
  std::size_t n = 0;
  std::vector<std::pair<long, long>> stack;
  Mask seen(64, 64, 0);
  for (std::size_t k = 0; k < m.size(); ++k) {
    CHECK((kept->flat()[k] <= m.flat()[k]));
    if (kept->flat()[k] && stack.empty() && n == 0) stack.push_back({static_cast<long>(k / 64), static_cast<long>(k % 64)});
  }
  seen(stack[0].first, stack[0].second) = 1;
  while (!stack.empty()) {
    auto [y, x] = stack.back();
    stack.pop_back();
    ++n;
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        const long yy = y + dy, xx = x + dx;
        if (yy < 0 || xx < 0 || yy >= 64 || xx >= 64) continue;
        if ((*kept)(yy, xx) && !seen(yy, xx)) seen(yy, xx) = 1, stack.push_back({yy, xx});
      }
  }
  CHECK(n == count_set(*kept));
}

TEST_CASE("fit_segment round trip") {
  auto m = empty_mask(80, 60);
  draw(m, {{10, 10}, {60, 35}});
  const auto s = fit_segment(m);
  CHECK(std::hypot(s.a.x - 10, s.a.y - 10) <= 1.0);
  CHECK(std::hypot(s.b.x - 60, s.b.y - 35) <= 1.0);

  auto strip = empty_mask(50, 10);
  for (std::size_t x = 5; x < 45; ++x) strip(4, x) = 1;
  const double ang = fit_segment(strip).angle_deg();
  CHECK(std::min(ang, 180.0 - ang) <= 0.5);

  auto single = empty_mask(5, 5);
  single(2, 2) = 1;
  CHECK_THROWS_AS(fit_segment(single), Error);
  CHECK_THROWS_AS(fit_segment(empty_mask(5, 5)), Error);
}

TEST_CASE("fit_segment is rotation equivariant") {
  const double cx = 100, cy = 100, half = 70;
  for (int deg = 0; deg < 180; deg += 15) {
    const double t = deg * std::numbers::pi / 180.0;
    auto m = empty_mask(200, 200);
    draw(m, {{cx - half * std::cos(t), cy - half * std::sin(t)}, {cx + half * std::cos(t), cy + half * std::sin(t)}});
    const double got = fit_segment(m).angle_deg();
    double diff = std::fmod(std::abs(got - deg), 180.0);
    diff = std::min(diff, 180.0 - diff);
    CHECK_MESSAGE(diff <= 1.0, "rotation " << deg << " fitted " << got);
  }
}

TEST_CASE("fit_segment puts the tip deeper") {
  auto m = empty_mask(80, 80);
  draw(m, {{70, 60}, {10, 5}});
  const auto s = fit_segment(m);
  CHECK(s.b.y > s.a.y);
}

TEST_CASE("hough accumulator follows r = x sin t + y cos t") {
  auto m = empty_mask(4, 4);
  m(0, 1) = 1;  // x = 1, y = 0
  const auto acc = hough_accumulate(m);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < acc.votes.rows(); ++r)
    if (acc.votes(r, 90)) hit = r;
  CHECK(acc.r_of(hit) == doctest::Approx(1.0));
  CHECK(acc.r_of(static_cast<std::size_t>(acc.r_offset)) == 0.0);

  auto h = empty_mask(50, 50);
  for (std::size_t x = 0; x < 50; ++x) h(7, x) = 1;
  auto p = hough_peaks(hough_accumulate(h), 1, 1);
  REQUIRE(p.size() == 1);
  CHECK(p[0].r == 7.0);
  CHECK(p[0].theta_deg == 0.0);

  auto v = empty_mask(50, 50);
  for (std::size_t y = 0; y < 50; ++y) v(y, 12) = 1;
  p = hough_peaks(hough_accumulate(v), 1, 1);
  REQUIRE(p.size() == 1);
  CHECK(p[0].r == 12.0);
  CHECK(p[0].theta_deg == 90.0);
}

TEST_CASE("hough total votes") {
  auto m = empty_mask(40, 30);
  for (std::size_t k = 0; k < m.size(); k += 7) m.flat()[k] = 1;
  for (double res : {1.0, 2.0, 0.5}) {
    const auto acc = hough_accumulate(m, 1.0, res);
    CHECK(acc.total() == count_set(m) * acc.votes.cols());
    CHECK(acc.votes.cols() == static_cast<std::size_t>(std::lround(180.0 / res)));
  }
}

TEST_CASE("hough recovers a noiseless line") {
  // 200-pixel line at theta = 30 deg, r = 200: one pixel per column, y = (r - x sin t) / cos t.
  const double t = 30.0 * std::numbers::pi / 180.0, r = 200.0;
  auto m = empty_mask(300, 300);
  std::size_t n = 0;
  for (std::size_t x = 0; x < 200; ++x, ++n)
    m(static_cast<std::size_t>(std::lround((r - x * std::sin(t)) / std::cos(t))), x) = 1;
  REQUIRE(n == 200);
  const auto p = hough_peaks(hough_accumulate(m), 1, 1);
  REQUIRE(p.size() == 1);
  CHECK(std::abs(p[0].r - r) <= 1.0);
  CHECK(std::abs(p[0].theta_deg - 30.0) <= 1.0);
  CHECK(p[0].votes + 2 >= n);
  CHECK(p[0].votes <= n);

  CHECK(hough_peaks(hough_accumulate(empty_mask(20, 20)), 3, 1).empty());
}

TEST_CASE("hough finds two perpendicular lines") {
  auto m = empty_mask(120, 120);
  for (std::size_t x = 10; x < 110; ++x) m(40, x) = 1;
  for (std::size_t y = 10; y < 110; ++y) m(y, 70) = 1;
  const auto p = hough_peaks(hough_accumulate(m), 5, 50);
  REQUIRE(p.size() == 2);
  bool horiz = false, vert = false;
  for (const auto& l : p) {
    horiz |= l.theta_deg == 0.0 && l.r == 40.0;
    vert |= l.theta_deg == 90.0 && l.r == 70.0;
  }
  CHECK(horiz);
  CHECK(vert);
}

TEST_CASE("hough_detect on a bright line") {
  auto m = empty_mask(128, 128);
  draw(m, {{20, 30}, {100, 90}});
  auto img = from_mask(m, 1.0f);
  const auto res = hough_detect(img);
  REQUIRE(res.segment);
  CHECK(res.segment->b.y >= res.segment->a.y);
  CHECK(std::abs(res.segment->angle_deg() - std::atan2(60.0, 80.0) * 180 / std::numbers::pi) <= 1.5);
  CHECK_FALSE(hough_detect(PixelImage(32, 32)).segment.has_value());
}

TEST_CASE("postprocess keeps the needle and drops speckle") {
  auto m = empty_mask(128, 128);
  draw(m, {{20, 30}, {100, 90}});
  auto img = from_mask(m, 1.0f);
  img.at(5, 120) = 0.9f;
  img.at(110, 10) = 0.8f;
  const auto r = postprocess(img);
  REQUIRE(r.segment);
  CHECK(r.mask(120, 5) == 0);
  CHECK(std::hypot(r.segment->b.x - 100, r.segment->b.y - 90) <= 1.0);
  CHECK_FALSE(postprocess(PixelImage(16, 16)).segment.has_value());
}

TEST_CASE("threshold method names round trip") {
  for (auto m : {ThresholdMethod::fraction_of_max, ThresholdMethod::otsu})
    CHECK(threshold_method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(threshold_method_from_string("mean"), ConfigError);
}
