#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "panp/core/container.hpp"
#include "panp/core/error.hpp"
#include "panp/dataset.hpp"
#include "panp/detect.hpp"

using namespace panp;
using namespace panp::dataset;
namespace fs = std::filesystem;

namespace {

Grid2D small_grid() { return {200, 200, 0.2e-3}; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("panp_ds_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DatasetConfig tiny_config() {
  DatasetConfig c;
  c.grid = small_grid();
  c.mc.n_photons = 20'000;
  c.poses.depths = {10e-3};
  c.poses.angles_deg = {30, 50};
  c.poses.mu_a = {1.0};
  c.n_backgrounds = 2;
  c.count = 10;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("background with no vessels and no noise is zero") {
  BackgroundConfig b;
  b.min_vessels = b.max_vessels = 0;
  b.noise_std = 0.0;
  const auto rf = gen_background_rf(b, small_grid(), {}, {});
  CHECK(max_abs(rf.samples) == 0.0f);
  CHECK(rf.samples.rows() == 1024);
  CHECK(rf.samples.cols() == 128);
}

TEST_CASE("background config validation") {
  BackgroundConfig b;
  b.noise_std = -1;
  CHECK_THROWS_AS(b.validate(), ConfigError);
  b = {};
  b.min_vessels = 4;
  b.max_vessels = 2;
  CHECK_THROWS_AS(b.validate(), ConfigError);
  b = {};
  b.min_radius = 1e-3;
  b.max_radius = 0.5e-3;
  CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("vessel sampling is deterministic and disjoint") {
  BackgroundConfig b;
  b.rng_seed = 11;
  const auto grid = small_grid();
  for (std::uint64_t seed = 1; seed < 40; ++seed) {
    b.rng_seed = seed;
    const auto v = sample_vessels(b, grid, {});
    CHECK(v.size() >= b.min_vessels);
    CHECK(v.size() <= b.max_vessels);
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = i + 1; j < v.size(); ++j)
        CHECK(std::hypot(v[i].x - v[j].x, v[i].z - v[j].z) > v[i].extent() + v[j].extent());
    const auto again = sample_vessels(b, grid, {});
    REQUIRE(again.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(again[i].x == v[i].x);
  }
}

TEST_CASE("background noise is deterministic and zeroed early") {
  BackgroundConfig b;
  b.min_vessels = b.max_vessels = 0;
  b.noise_std = 0.05;
  b.rng_seed = 3;
  const auto r1 = gen_background_rf(b, small_grid(), {}, {});
  const auto r2 = gen_background_rf(b, small_grid(), {}, {});
  CHECK(r1.samples.flat().size() == r2.samples.flat().size());
  CHECK(std::equal(r1.samples.flat().begin(), r1.samples.flat().end(), r2.samples.flat().begin()));
  for (std::size_t t = 0; t < 150; ++t) CHECK(r1.samples(t, 7) == 0.0f);
  double s2 = 0;
  std::size_t n = 0;
  for (std::size_t t = 150; t < 1024; ++t)
    for (std::size_t c = 0; c < 128; ++c) s2 += double(r1.samples(t, c)) * r1.samples(t, c), ++n;
  CHECK(std::sqrt(s2 / n) == doctest::Approx(0.05).epsilon(0.03));

  // Averaging k frames shrinks the noise by sqrt(k).
  b.frames = 16;
  const auto avg = gen_background_rf(b, small_grid(), {}, {});
  s2 = 0;
  for (std::size_t t = 150; t < 1024; ++t)
    for (std::size_t c = 0; c < 128; ++c) s2 += double(avg.samples(t, c)) * avg.samples(t, c);
  CHECK(std::sqrt(s2 / n) == doctest::Approx(0.05 / 4).epsilon(0.05));
}

TEST_CASE("three vessels reconstruct as three blobs") {
  BackgroundConfig b;
  b.min_vessels = b.max_vessels = 3;
  b.line_probability = 0.0;
  b.two_layer_probability = 0.0;
  b.min_radius = 0.5e-3;
  b.max_radius = 0.8e-3;
  b.noise_std = 0.0;
  b.rng_seed = 21;
  const auto grid = small_grid();
  const auto vessels = sample_vessels(b, grid, {});
  REQUIRE(vessels.size() == 3);
  const auto img = reconstruct_standard(gen_background_rf(b, grid, {}, {}), {}, 150);
  // Band-limited detection shows each disk as its upper and lower rims, so the
  // half-max components are grouped by the nearest vessel: every component
  // belongs to one vessel and every vessel shows up.
  auto mask = detect::binarize(img, {detect::ThresholdMethod::fraction_of_max, 0.5}).mask;
  const recon::StandardGeometry g;
  std::set<std::size_t> found;
  std::size_t stray = 0;
  detect::Mask left = mask;
  while (detect::count_set(left)) {
    auto comp = *detect::max_contour_select(left);
    double cx = 0, cy = 0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < comp.rows(); ++y)
      for (std::size_t x = 0; x < comp.cols(); ++x)
        if (comp(y, x)) cx += x, cy += y, ++n, left(y, x) = 0;
    cx /= n, cy /= n;
    bool hit = false;
    for (std::size_t k = 0; k < 3; ++k) {
      const double px = g.col_of(vessels[k].x - grid.center_x()), py = g.row_of(vessels[k].z);
      if (std::hypot(px - cx, py - cy) < vessels[k].radius / g.pixel + 5) found.insert(k), hit = true;
    }
    stray += !hit;
  }
  CHECK(stray == 0);
  CHECK(found.size() == 3);
}

TEST_CASE("composite normalizes and is linear") {
  TransducerArray a;
  RfFrame needle = RfFrame::zeros(a), bg = RfFrame::zeros(a);
  for (std::size_t k = 0; k < needle.samples.size(); ++k) {
    needle.samples.flat()[k] = std::sin(0.01 * k) * (k % 97 == 0 ? 4.0f : 0.5f);
    bg.samples.flat()[k] = std::cos(0.003 * k) * 0.1f;
  }
  const auto zero = RfFrame::zeros(a);
  CHECK(max_abs(composite_rf(needle, zero, 1.0).samples) == doctest::Approx(1.0).epsilon(1e-6));
  const auto c = composite_rf(needle, bg, 2.0);
  const float scale = 2.0f / max_abs(needle.samples);
  for (std::size_t k = 0; k < c.samples.size(); k += 101)
    CHECK(c.samples.flat()[k] - bg.samples.flat()[k] == doctest::Approx(needle.samples.flat()[k] * scale).epsilon(1e-5));
  CHECK_THROWS_AS(composite_rf(zero, bg, 1.0), Error);
  TransducerArray other;
  other.n_elements = 64;
  CHECK_THROWS_AS(composite_rf(needle, RfFrame::zeros(other), 1.0), Error);
}

TEST_CASE("needle dominates when its peak is twice the background maximum") {
  const auto grid = small_grid();
  optics::NeedlePose pose;
  pose.entry_x = grid.center_x() - 10e-3;
  pose.angle_deg = 40;
  pose.depth = 12e-3;
  auto p0 = rasterize_needle(pose, grid).mask;
  p0.role = Role::initial_pressure;
  const auto solver = acoustics::make_solver_config(grid, {}, {});
  const auto needle = recon::zero_early_samples(acoustics::simulate_rf(p0, {}, {}, solver));
  // White-noise background: a compact disk focuses about twice as much image
  // amplitude per unit RF peak as an oblique shaft, so vessels are left out.
  BackgroundConfig b;
  b.min_vessels = b.max_vessels = 0;
  b.rng_seed = 4;
  b.noise_std = 0.05;
  const auto bg = gen_background_rf(b, grid, {}, {});
  const auto img = reconstruct_standard(composite_rf(needle, bg, 2.0 * max_abs(bg.samples)), {}, 150);
  const auto gt = make_ground_truth(p0);
  std::size_t arg = 0;
  for (std::size_t k = 0; k < img.values.size(); ++k)
    if (img.values.flat()[k] > img.values.flat()[arg]) arg = k;
  // Argmax within 3 px of the needle support.
  bool near = false;
  const long ay = long(arg / 512), ax = long(arg % 512);
  for (long dy = -3; dy <= 3; ++dy)
    for (long dx = -3; dx <= 3; ++dx) {
      const long y = ay + dy, x = ax + dx;
      if (y >= 0 && x >= 0 && y < 512 && x < 512 && gt.values(y, x) > 0) near = true;
    }
  CHECK(near);
}

TEST_CASE("ground truth normalization and support") {
  const auto grid = Grid2D{};
  optics::NeedlePose pose;
  pose.entry_x = 5e-3;
  pose.angle_deg = 35;
  pose.depth = 14e-3;
  const auto m = rasterize_needle(pose, grid).mask;
  ScalarField p0(grid, Role::initial_pressure);
  for (std::size_t k = 0; k < p0.values.size(); ++k) p0.values.flat()[k] = m.values.flat()[k] * (0.2f + 0.001f * (k % 300));
  const auto gt = make_ground_truth(p0);
  CHECK(max_value(gt.values) == 1.0f);
  CHECK(gt.width() == 512);
  // Support within a 3 px dilation of the needle mask sampled on the image grid.
  const auto mask_img = recon::field_to_standard_image(m);
  for (std::size_t y = 0; y < 512; ++y)
    for (std::size_t x = 0; x < 512; ++x) {
      if (gt.values(y, x) <= 0) continue;
      bool ok = false;
      for (long dy = -3; dy <= 3 && !ok; ++dy)
        for (long dx = -3; dx <= 3 && !ok; ++dx) {
          const long yy = long(y) + dy, xx = long(x) + dx;
          ok = yy >= 0 && xx >= 0 && yy < 512 && xx < 512 && mask_img.values(yy, xx) >= 0.5f;
        }
      CHECK(ok);
    }
  CHECK_THROWS_AS(make_ground_truth(ScalarField(grid, Role::initial_pressure)), Error);
}

TEST_CASE("tip pixel lies on the ground truth for every default pose") {
  const DatasetConfig cfg;
  const auto needles = enumerate_needles(cfg);
  REQUIRE(needles.size() == 150);
  std::set<std::string> distinct;
  for (const auto& n : needles) {
    distinct.insert(fmt::format("{} {} {} {}", n.pose.depth, n.pose.angle_deg, n.mu_a, n.pose.entry_x));
    const auto mask = rasterize_needle(n.pose, cfg.grid).mask;
    const auto gt = make_ground_truth(mask);
    const auto seg = truth_segment(n.pose, cfg.grid, 512);
    REQUIRE(seg);
    const auto tx = std::size_t(std::lround(seg->b.x)), ty = std::size_t(std::lround(seg->b.y));
    CHECK_MESSAGE(gt.values(ty, tx) > 0.0f, "depth " << n.pose.depth << " angle " << n.pose.angle_deg);
  }
  CHECK(distinct.size() == 150);
}

TEST_CASE("split sizes are 8:1:1") {
  CHECK(split_sizes(10) == std::array<std::size_t, 3>{8, 1, 1});
  CHECK(split_sizes(200) == std::array<std::size_t, 3>{160, 20, 20});
  CHECK(split_sizes(50) == std::array<std::size_t, 3>{40, 5, 5});
  for (std::size_t n = 1; n < 300; ++n) {
    const auto s = split_sizes(n);
    CHECK(s[0] + s[1] + s[2] == n);
    CHECK(std::abs(double(s[0]) - 0.8 * n) <= 1.0);
    CHECK(std::abs(double(s[1]) - 0.1 * n) <= 1.0);
    CHECK(std::abs(double(s[2]) - 0.1 * n) <= 1.0);
  }
}

TEST_CASE("dataset config json round trip and errors") {
  DatasetConfig c = tiny_config();
  c.background.frames = 6;
  const auto j = to_json(c);
  const auto back = dataset_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.background.frames == 6);

  auto bad = j;
  bad["grid"]["nx"] = "wide";
  bad["mystery"] = 1;
  bad["background"]["colour"] = "red";
  try {
    dataset_config_from_json(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("grid.nx") != std::string::npos);
    CHECK(msg.find("mystery") != std::string::npos);
    CHECK(msg.find("background.colour") != std::string::npos);
  }
  c.gauge = "99G";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("small dataset generation") {
  const auto cfg = tiny_config();
  const auto dir1 = scratch("a"), dir2 = scratch("b");
  const auto m = gen_dataset(cfg, dir1);
  REQUIRE(m.entries.size() == 10);
  CHECK(m.split("train").size() == 8);
  CHECK(m.split("val").size() == 1);
  CHECK(m.split("test").size() == 1);
  std::set<std::size_t> seen;
  for (const auto& e : m.entries) {
    seen.insert(e.index);
    for (const auto& rel : {e.needle_rf, e.needle_p0, e.background_rf, e.composite_image, e.ground_truth})
      CHECK_MESSAGE(fs::exists(m.path_of(rel)), rel);
    CHECK(regeneration_error(m, e) == 0.0);
    CHECK(e.target_peak > 0.0);
  }
  CHECK(seen.size() == 10);

  // Needle simulations are reused: two poses only.
  std::set<std::string> needle_files;
  for (const auto& e : m.entries) needle_files.insert(e.needle_rf);
  CHECK(needle_files.size() == 2);

  const auto loaded = load_manifest(dir1 / "manifest.json");
  CHECK(to_json(loaded) == to_json(m));
  CHECK(loaded.dataset_config().count == 10);

  gen_dataset(cfg, dir2);
  CHECK(slurp(dir1 / "manifest.json") == slurp(dir2 / "manifest.json"));
  CHECK(slurp(dir1 / m.entries[3].composite_image) == slurp(dir2 / m.entries[3].composite_image));

  auto other = cfg;
  other.seed = 6;
  CHECK(json_hash(to_json(other)) != m.config_hash);

  auto j = read_json((dir1 / "manifest.json").string());
  j["schema_version"] = 99;
  CHECK_THROWS_AS(manifest_from_json(j, dir1), ConfigError);
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}
