#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "panp/core/error.hpp"
#include "panp/optics.hpp"

using namespace panp;
using namespace panp::optics;

namespace {

// Mean fluence over rows [r0, r1) and all columns covered by the beam.
double band_mean(const ScalarField& f, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  double s = 0.0;
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) s += f.values(r, c);
  return s / double((r1 - r0) * (c1 - c0));
}

double stddev(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

TEST_CASE("needle tip geometry") {
  Grid2D g;
  NeedlePose p;
  p.entry_x = 10e-3;
  p.angle_deg = 45;
  p.depth = 5e-3;
  auto m = rasterize_needle(p, g);
  CHECK(m.tip_x == doctest::Approx(15e-3));
  CHECK(m.tip_z == doctest::Approx(5e-3));

  p.angle_deg = 90;
  m = rasterize_needle(p, g);
  CHECK(m.tip_x == doctest::Approx(10e-3));
  CHECK(m.tip_z == doctest::Approx(5e-3));

  p.entry_x = 39e-3;
  p.angle_deg = 20;
  p.depth = 30e-3;
  CHECK(p.tip_x() == doctest::Approx(39e-3 + 30e-3 / std::tan(20.0 * M_PI / 180)));
  CHECK_THROWS_WITH_AS(rasterize_needle(p, g), doctest::Contains("overhang"), Error);
}

TEST_CASE("needle mask follows the center-distance rule") {
  Grid2D g{200, 200, 0.1e-3};
  NeedlePose p;
  p.entry_x = 5e-3;
  p.angle_deg = 30;
  p.depth = 8e-3;
  p.diameter = 0.91e-3;
  auto m = rasterize_needle(p, g);
  const double ex = p.entry_x, tx = m.tip_x, tz = m.tip_z;
  std::size_t count = 0;
  for (std::size_t j = 0; j < g.nz; ++j)
    for (std::size_t i = 0; i < g.nx; ++i) {
      // Independent point-segment distance.
      const double x = (i + 0.5) * g.dx, z = j * g.dx;
      const double L = std::hypot(tx - ex, tz);
      const double ux = (tx - ex) / L, uz = tz / L;
      double t = (x - ex) * ux + z * uz;
      t = std::min(std::max(t, 0.0), L);
      const double d = std::hypot(x - (ex + t * ux), z - t * uz);
      const bool inside = d <= p.diameter / 2;
      REQUIRE((m.mask.values(j, i) == 1.0f) == inside);
      count += inside;
    }
  CHECK(count > 0);
}

TEST_CASE("Beer-Lambert without scattering") {
  Grid2D g;
  OpticalProperties t{1.0, 0.0, 0.9, 1.4};
  McConfig cfg;
  cfg.n_photons = 1'000'000;
  cfg.rng_seed = 11;
  auto f = mc_fluence(g, t, nullptr, BeamConfig{}, cfg);
  CHECK(f.audit.relative_error() < 1e-9);
  // Every column under the uniform beam is statistically identical, so the
  // on-axis profile is estimated over the full beam width in 1 mm depth bins.
  // Row j covers depth [(j - 1/2) dx, (j + 1/2) dx]; 1 mm bins start at rows 10k + 1/2 edges.
  const std::size_t c0 = 8, c1 = 392;  // 38.4 mm beam on a 40 mm grid
  for (int b = 0; b < 5; ++b) {
    // rows whose cells tile [b, b+1) mm up to half cells: use rows b*10+1 .. b*10+10
    // which cover [(10b + 0.5) dx, (10b + 10.5) dx].
    const double z0 = (10 * b + 0.5) * 0.1, z1 = z0 + 1.0;
    const double expect = (std::exp(-z0) - std::exp(-z1)) / 1.0;
    const double got = band_mean(f.fluence, 10 * b + 1, 10 * b + 11, c0, c1);
    INFO("bin " << b << " expect " << expect << " got " << got);
    CHECK(std::abs(got - expect) / expect < 0.02);
  }
}

TEST_CASE("weight audit closes with scattering and roulette") {
  Grid2D g{200, 200, 0.2e-3};
  OpticalProperties t{1.5, 10.0, 0.9, 1.4};
  McConfig cfg;
  cfg.n_photons = 20000;
  BeamConfig beam{38.4e-3};
  auto f = mc_fluence(g, t, nullptr, beam, cfg);
  CHECK(f.audit.relative_error() < 1e-9);
  CHECK(f.audit.roulette != 0.0);

  NeedlePose p;
  p.entry_x = 12e-3;
  p.angle_deg = 40;
  p.depth = 10e-3;
  auto m = rasterize_needle(p, g);
  auto fn = mc_fluence(g, t, &m.mask, beam, cfg);
  CHECK(fn.audit.relative_error() < 1e-9);
}

TEST_CASE("paper tissue gives a decaying, nonnegative profile") {
  Grid2D g;
  for (double mu_a : {1.0, 1.5, 2.0}) {
    OpticalProperties t{mu_a, 10.0, 0.9, 1.4};
    McConfig cfg;
    cfg.n_photons = 100000;
    auto f = mc_fluence(g, t, nullptr, BeamConfig{}, cfg);
    CHECK(all_finite(f.fluence.values));
    for (float v : f.fluence.values.flat()) REQUIRE(v >= 0.0f);
    // Lateral average over the beam in 0.5 mm slabs until the signal is lost in noise.
    double prev = 1e300;
    for (std::size_t r = 1; r + 5 <= 41; r += 5) {
      const double m = band_mean(f.fluence, r, r + 5, 8, 392);
      INFO("mu_a " << mu_a << " row " << r);
      CHECK(m < prev);
      prev = m;
    }
  }
}

TEST_CASE("reproducible and thread-count independent") {
  Grid2D g{100, 100, 0.2e-3};
  OpticalProperties t;
  McConfig cfg;
  cfg.n_photons = 5000;
  BeamConfig beam{15e-3};
  auto a = mc_fluence(g, t, nullptr, beam, cfg);
  auto b = mc_fluence(g, t, nullptr, beam, cfg);
  cfg.threads = 4;
  auto c = mc_fluence(g, t, nullptr, beam, cfg);
  CHECK(a.fluence.values == b.fluence.values);
  CHECK(a.fluence.values == c.fluence.values);
  cfg.rng_seed = 2;
  auto d = mc_fluence(g, t, nullptr, beam, cfg);
  CHECK_FALSE(a.fluence.values == d.fluence.values);
}

TEST_CASE("doubling photons shrinks the spread by sqrt 2") {
  Grid2D g{100, 60, 0.2e-3};
  OpticalProperties t{1.0, 10.0, 0.9, 1.4};
  BeamConfig beam{20e-3};
  auto spread = [&](std::uint64_t n) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 100; ++s) {
      McConfig cfg;
      cfg.n_photons = n;
      cfg.rng_seed = 1000 + s + n * 7919;
      auto f = mc_fluence(g, t, nullptr, beam, cfg);
      v.push_back(band_mean(f.fluence, 5, 10, 45, 55));
    }
    return stddev(v);
  };
  const double ratio = spread(1000) / spread(2000);
  INFO("ratio " << ratio);
  CHECK(ratio > std::sqrt(2.0) * 0.8);
  CHECK(ratio < std::sqrt(2.0) * 1.2);
}

TEST_CASE("initial pressure lives on the needle") {
  Grid2D g{200, 200, 0.2e-3};
  OpticalProperties t{1.0, 10.0, 0.9, 1.4};
  McConfig cfg;
  cfg.n_photons = 20000;
  BeamConfig beam{38.4e-3};

  ScalarField empty(g, Role::initial_pressure);
  auto f0 = mc_fluence(g, t, &empty, beam, cfg);
  auto p_empty = build_p0(f0, empty);
  for (float v : p_empty.values.flat()) REQUIRE(v == 0.0f);

  // Twins share angle and diameter; compare the same 5 mm of shaft behind each tip.
  auto tip_energy = [&](const NeedlePose& pose) {
    auto m = rasterize_needle(pose, g);
    auto f = mc_fluence(g, t, &m.mask, beam, cfg);
    auto p = build_p0(f, m.mask);
    for (std::size_t k = 0; k < p.values.size(); ++k)
      if (p.values.flat()[k] > 0.0f) REQUIRE(m.mask.values.flat()[k] == 1.0f);
    const double a = pose.angle_deg * M_PI / 180;
    double e = 0.0;
    for (std::size_t j = 0; j < g.nz; ++j)
      for (std::size_t i = 0; i < g.nx; ++i) {
        const double back = (m.tip_x - g.x_at(i)) * std::cos(a) + (m.tip_z - g.z_at(j)) * std::sin(a);
        if (back >= 0.0 && back <= 5e-3) e += p.values(j, i);
      }
    return e;
  };
  NeedlePose shallow;
  shallow.entry_x = 12e-3;
  shallow.angle_deg = 45;
  shallow.depth = 5e-3;
  NeedlePose deep = shallow;
  deep.entry_x = 2e-3;
  deep.depth = 25e-3;
  const double es = tip_energy(shallow), ed = tip_energy(deep);
  INFO("shallow " << es << " deep " << ed);
  CHECK(es >= ed);

  auto ms = rasterize_needle(shallow, g);
  auto fs = mc_fluence(g, t, &ms.mask, beam, cfg);
  CHECK_THROWS(build_p0(fs, ScalarField(Grid2D{100, 100, 0.2e-3}, Role::initial_pressure)));
}
