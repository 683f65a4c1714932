#include <doctest.h>

#include <cmath>
#include <vector>

#include "panp/acoustics.hpp"
#include "panp/core/fft.hpp"

using namespace panp;
using namespace panp::acoustics;

namespace {

// 400 x 160 cells of 0.1 mm: wide enough for the full aperture, 16 mm deep.
Grid2D test_grid() { return {400, 160, 0.1e-3}; }

SolverConfig short_solver(const Grid2D& g, std::size_t steps) {
  auto s = make_solver_config(g, MediumConfig{}, TransducerArray{});
  s.n_steps = steps;
  return s;
}

std::vector<double> envelope(const Array2D<double>& a, std::size_t ch) {
  const std::size_t n = next_pow2(a.rows());
  ComplexFft1d fft(n);
  auto b = fft.data();
  std::fill(b.begin(), b.end(), cplx{});
  for (std::size_t t = 0; t < a.rows(); ++t) b[t] = a(t, ch);
  fft.forward();
  for (std::size_t k = 1; k < n / 2; ++k) b[k] *= 2.0;
  for (std::size_t k = n / 2 + 1; k < n; ++k) b[k] = 0.0;
  fft.inverse();
  std::vector<double> e(a.rows());
  for (std::size_t t = 0; t < a.rows(); ++t) e[t] = std::abs(b[t]) / double(n);
  return e;
}

std::size_t argmax(const std::vector<double>& v) {
  return std::size_t(std::max_element(v.begin(), v.end()) - v.begin());
}

double max_abs_d(const Array2D<double>& a) {
  double m = 0;
  for (double v : a.flat()) m = std::max(m, std::abs(v));
  return m;
}

const Traces& point_source_traces() {
  static const Traces t = [] {
    Grid2D g = test_grid();
    ScalarField p0(g, Role::initial_pressure);
    p0.values(100, 201) = 1.0f;  // 10 mm below element 64
    return pstd_forward(p0, MediumConfig{}, TransducerArray{}, short_solver(g, 1300));
  }();
  return t;
}

}  // namespace

TEST_CASE("solver configuration") {
  auto s = make_solver_config(Grid2D{}, MediumConfig{}, TransducerArray{});
  CHECK(s.internal_sample_rate == 80e6);
  CHECK(s.n_steps == 2048);
  CHECK(s.cfl(MediumConfig{}, Grid2D{}) <= kMaxCfl);
  auto fine = make_solver_config(Grid2D{400, 400, 0.02e-3}, MediumConfig{}, TransducerArray{});
  CHECK(std::fmod(fine.internal_sample_rate, 40e6) == 0.0);
  CHECK(fine.cfl(MediumConfig{}, Grid2D{400, 400, 0.02e-3}) <= kMaxCfl);
  CHECK(fine.internal_sample_rate >= kMinInternalRate);
}

TEST_CASE("zero source gives zero traces") {
  Grid2D g = test_grid();
  ScalarField p0(g, Role::initial_pressure);
  auto t = pstd_forward(p0, MediumConfig{}, TransducerArray{}, short_solver(g, 200));
  for (double v : t.data.flat()) REQUIRE(v == 0.0);
}

TEST_CASE("solver errors") {
  Grid2D g = test_grid();
  ScalarField p0(g, Role::initial_pressure);
  auto s = short_solver(g, 10);
  s.dt *= 2.0;
  CHECK_THROWS_WITH(pstd_forward(p0, MediumConfig{}, TransducerArray{}, s), doctest::Contains("CFL"));
  ScalarField bad(g, Role::initial_pressure);
  bad.values = Array2D<float>(10, 10);
  CHECK_THROWS(pstd_forward(bad, MediumConfig{}, TransducerArray{}, short_solver(g, 10)));
}

TEST_CASE("point source arrival under element 64") {
  const auto& t = point_source_traces();
  const double expect = 10e-3 / 1540.0;  // 6.49 us
  const auto env = envelope(t.data, 64);
  const double got = double(argmax(env)) / t.sample_rate;
  INFO("peak at " << got * 1e6 << " us");
  CHECK(std::abs(got - expect) * t.sample_rate <= 1.0);
}

TEST_CASE("pstd arrivals agree with the analytic response on every channel") {
  const auto& t = point_source_traces();
  Grid2D g = test_grid();
  auto a = analytic_point_forward(g.x_at(201), g.z_at(100), 1.0, MediumConfig{}, TransducerArray{}, g,
                                  t.sample_rate, t.data.rows());
  std::size_t worst = 0;
  for (std::size_t k = 0; k < 128; ++k) {
    const auto pk = argmax(envelope(t.data, k));
    const auto ak = argmax(envelope(a.traces.data, k));
    const double tau = a.arrival_times[k] * t.sample_rate;
    worst = std::max<std::size_t>(worst, pk > ak ? pk - ak : ak - pk);
    INFO("channel " << k << " pstd " << pk << " analytic " << ak << " tau " << tau);
    REQUIRE(std::abs(double(pk) - tau) <= 2.0);
  }
  CHECK(worst <= 2);
}

TEST_CASE("analytic oracle geometry") {
  Grid2D g = test_grid();
  TransducerArray arr;
  MediumConfig m;
  const double sx = g.x_at(150), sz = 8e-3;
  auto a = analytic_point_forward(sx, sz, 1.0, m, arr, g, 80e6, 1200);
  for (std::size_t k = 0; k < arr.n_elements; ++k) {
    const double r = std::hypot(element_x(arr, g, k) - sx, sz);
    REQUIRE(a.arrival_times[k] == r / m.sound_speed);
  }
  // Peak amplitude falls with distance.
  auto peak = [&](std::size_t k) {
    double p = 0;
    for (std::size_t n = 0; n < 1200; ++n) p = std::max(p, a.traces.data(n, k));
    return p;
  };
  const double near = peak(0), far = peak(127);
  CHECK(a.arrival_times[0] < a.arrival_times[127]);
  CHECK(near / far >= 1.0);
  CHECK_THROWS(analytic_point_forward(-1e-3, 5e-3, 1.0, m, arr, g, 80e6, 10));
  CHECK_THROWS(analytic_point_forward(5e-3, 50e-3, 1.0, m, arr, g, 80e6, 10));
}

TEST_CASE("mirror symmetric sources give mirrored traces") {
  Grid2D g = test_grid();
  ScalarField p0(g, Role::initial_pressure);
  p0.values(60, 150) = 1.0f;
  p0.values(60, 399 - 150) = 1.0f;
  auto t = pstd_forward(p0, MediumConfig{}, TransducerArray{}, short_solver(g, 600));
  const double scale = max_abs_d(t.data);
  for (std::size_t n = 0; n < t.data.rows(); ++n)
    for (std::size_t k = 0; k < 64; ++k)
      REQUIRE(std::abs(t.data(n, k) - t.data(n, 127 - k)) <= 1e-6 * scale);
}

TEST_CASE("forward model is linear") {
  Grid2D g{400, 100, 0.1e-3};
  ScalarField a(g, Role::initial_pressure), b(g, Role::initial_pressure), c(g, Role::initial_pressure);
  for (std::size_t i = 100; i < 140; ++i) a.values(40, i) = 1.0f;
  for (std::size_t j = 30; j < 70; ++j) b.values(j, 250) = 0.5f;
  const float s = 2.0f, r = -0.75f;
  for (std::size_t k = 0; k < c.values.size(); ++k)
    c.values.flat()[k] = s * a.values.flat()[k] + r * b.values.flat()[k];
  auto solver = short_solver(g, 400);
  auto ta = simulate_rf(a, MediumConfig{}, TransducerArray{}, solver);
  auto tb = simulate_rf(b, MediumConfig{}, TransducerArray{}, solver);
  auto tc = simulate_rf(c, MediumConfig{}, TransducerArray{}, solver);
  double scale = 0;
  for (float v : tc.samples.flat()) scale = std::max(scale, double(std::abs(v)));
  REQUIRE(scale > 0);
  for (std::size_t k = 0; k < tc.samples.size(); ++k) {
    const double expect = s * ta.samples.flat()[k] + r * tb.samples.flat()[k];
    REQUIRE(std::abs(tc.samples.flat()[k] - expect) <= 1e-6 * scale);
  }
}

TEST_CASE("field energy does not grow") {
  Grid2D g{200, 200, 0.1e-3};
  ScalarField p0(g, Role::initial_pressure);
  for (std::size_t j = 90; j < 110; ++j)
    for (std::size_t i = 90; i < 110; ++i) p0.values(j, i) = 1.0f;
  std::vector<double> e;
  EnergyProbe probe{50, [&](std::size_t, double v) { e.push_back(v); }};
  TransducerArray arr;
  arr.n_elements = 32;
  pstd_forward(p0, MediumConfig{}, arr, short_solver(g, 1500), &probe);
  REQUIRE(e.size() == 30);
  for (std::size_t k = 1; k < e.size(); ++k) {
    INFO("sample " << k << " " << e[k - 1] << " -> " << e[k]);
    CHECK(e[k] <= e[k - 1] * 1.001);
  }
  CHECK(e.back() < 0.01 * e.front());
}

TEST_CASE("lateral shift by one pitch shifts the channels") {
  Grid2D g{400, 100, 0.1e-3};
  ScalarField a(g, Role::initial_pressure), b(g, Role::initial_pressure);
  for (std::size_t j = 40; j < 44; ++j)
    for (std::size_t i = 190; i < 194; ++i) {
      a.values(j, i) = 1.0f;
      b.values(j, i + 3) = 1.0f;
    }
  auto solver = short_solver(g, 500);
  auto ta = pstd_forward(a, MediumConfig{}, TransducerArray{}, solver);
  auto tb = pstd_forward(b, MediumConfig{}, TransducerArray{}, solver);
  const double scale = max_abs_d(ta.data);
  double worst = 0;
  for (std::size_t n = 0; n < ta.data.rows(); ++n)
    for (std::size_t k = 32; k < 96; ++k)
      worst = std::max(worst, std::abs(tb.data(n, k + 1) - ta.data(n, k)));
  INFO("worst relative deviation " << worst / scale);
  CHECK(worst <= 1e-3 * scale);
}

TEST_CASE("transducer response") {
  TransducerArray arr;
  CHECK(transducer_gain(7e6, arr) == 1.0);
  CHECK(std::abs(transducer_gain(7e6 * (1 + 0.809 / 2), arr) - 0.5012) < 1e-3);
  CHECK(std::abs(transducer_gain(7e6 * (1 - 0.809 / 2), arr) - 0.5012) < 1e-3);
  // Independent evaluation at DC from the -6 dB definition.
  const double hw = 0.5 * 0.809 * 7e6;
  const double sigma = hw / std::sqrt(-2.0 * std::log(std::pow(10.0, -0.3)));
  const double dc = std::exp(-0.5 * (7e6 / sigma) * (7e6 / sigma));
  CHECK(transducer_gain(0.0, arr) == doctest::Approx(dc).epsilon(1e-12));
  CHECK(transducer_gain(0.0, arr) < 0.015);

  // A 7 MHz tone passes unchanged in the interior; DC is suppressed.
  Traces t{Array2D<double>(2048, 2), 80e6};
  for (std::size_t n = 0; n < 2048; ++n) {
    t.data(n, 0) = std::sin(2 * M_PI * 7e6 * n / 80e6);
    t.data(n, 1) = 1.0;
  }
  auto f = apply_transducer_response(t, arr);
  for (std::size_t n = 600; n < 1400; ++n) {
    REQUIRE(std::abs(f.data(n, 0) - t.data(n, 0)) < 2e-2);
    REQUIRE(std::abs(f.data(n, 1)) < 0.02);
  }
}

TEST_CASE("downsampling") {
  TransducerArray arr;
  Traces t{Array2D<double>(2048, 128), 80e6};
  for (std::size_t n = 0; n < 2048; ++n)
    for (std::size_t k = 0; k < 128; ++k) t.data(n, k) = std::sin(2 * M_PI * 5e6 * n / 80e6 + 0.1 * k);
  auto rf = downsample_to_rf(t, arr);
  CHECK(rf.n_samples() == 1024);
  CHECK(rf.n_channels() == 128);
  for (std::size_t r = 100; r < 900; ++r) {
    const double expect = std::sin(2 * M_PI * 5e6 * r / 40e6 + 0.1 * 7);
    REQUIRE(std::abs(rf.samples(r, 7) - expect) < 0.01);
  }
  // Short traces are zero-padded to n_samples.
  Traces short_t{Array2D<double>(300, 128, 1.0), 80e6};
  auto rs = downsample_to_rf(short_t, arr);
  CHECK(rs.n_samples() == 1024);
  CHECK(rs.samples(1000, 0) == 0.0f);

  Traces odd{Array2D<double>(100, 128), 100e6};
  CHECK_THROWS(downsample_to_rf(odd, arr));
}
