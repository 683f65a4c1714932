#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "panp/core/container.hpp"
#include "panp/core/resample.hpp"
#include "panp/core/rng.hpp"

using namespace panp;

namespace {

std::filesystem::path tmp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "panp_test_core";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Array2D<float> random_array(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Array2D<float> a(rows, cols);
  for (auto& v : a.flat()) v = static_cast<float>(rng.normal());
  return a;
}

bool bit_equal(const Array2D<float>& a, const Array2D<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("grid and transducer defaults") {
  Grid2D g;
  CHECK(g.extent_x() == doctest::Approx(40e-3));
  TransducerArray a;
  CHECK(a.aperture() == doctest::Approx(38.4e-3));
  CHECK(a.sample_depth() * a.n_samples == doctest::Approx(39.424e-3));
  CHECK_NOTHROW(a.validate());
  a.sample_rate = 10e6;
  CHECK_THROWS_AS(a.validate(), ConfigError);
}

TEST_CASE("rf frame round trip") {
  TransducerArray arr;
  RfFrame f{random_array(1024, 128, 1), arr};
  auto p = tmp_path("rf.padf");
  save_rf(p, f);
  RfFrame g = load_rf(p);
  CHECK(bit_equal(f.samples, g.samples));
  CHECK(g.array == arr);
}

TEST_CASE("container round trip is bit exact for every role") {
  for (Role role : {Role::rf, Role::fluence, Role::initial_pressure, Role::recon_image,
                    Role::network_output, Role::weights}) {
    ContainerHeader h;
    h.role = role;
    h.rows = 17;
    h.cols = 9;
    h.sample_rate_hz = 40e6;
    h.extra = {{"note", "x"}, {"n", 3}};
    auto payload = random_array(17, 9, 7);
    // Include awkward values.
    payload(0, 0) = -0.0f;
    payload(1, 1) = std::numeric_limits<float>::denorm_min();
    auto bytes = encode_container(h, payload);
    auto [h2, p2] = decode_container(bytes);
    CHECK(h2 == h);
    CHECK(bit_equal(payload, p2));
  }
}

TEST_CASE("container layout") {
  ContainerHeader h;
  h.rows = 1;
  h.cols = 2;
  Array2D<float> p(1, 2, 1.0f);
  auto bytes = encode_container(h, p);
  CHECK(std::memcmp(bytes.data(), "PADF", 4) == 0);
  CHECK(bytes[4] == 1);
  std::uint32_t n = bytes[5] | (bytes[6] << 8) | (bytes[7] << 16) | (std::uint32_t(bytes[8]) << 24);
  CHECK(bytes.size() == 9 + n + 8);
  auto hdr = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + n);
  CHECK(hdr["role"] == "rf");
  CHECK(hdr["rows"] == 1);
  CHECK(hdr["cols"] == 2);
  float last;
  std::memcpy(&last, bytes.data() + bytes.size() - 4, 4);
  CHECK(last == 1.0f);
}

TEST_CASE("container errors are distinct") {
  ContainerHeader h;
  h.rows = 4;
  h.cols = 4;
  auto bytes = encode_container(h, Array2D<float>(4, 4, 2.0f));

  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      decode_container(b);
    } catch (const ContainerError& e) {
      return e.kind();
    }
    FAIL("no error");
    return ContainerError::Kind::io;
  };

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == ContainerError::Kind::bad_magic);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  CHECK(kind_of(truncated) == ContainerError::Kind::truncated);

  auto extra = bytes;
  extra.insert(extra.end(), 4, 0);
  CHECK(kind_of(extra) == ContainerError::Kind::dimension_mismatch);

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(kind_of(bad_version) == ContainerError::Kind::bad_version);

  Array2D<float> nan(2, 2, 0.0f);
  nan(1, 1) = std::nanf("");
  h.rows = h.cols = 2;
  CHECK_THROWS_AS(encode_container(h, nan), ContainerError);

  CHECK_THROWS_AS(read_container(tmp_path("does_not_exist.padf")), ContainerError);
}

TEST_CASE("image header keeps pixel size") {
  PixelImage img(512, 512, 70e-6, 0.25f);
  auto p = tmp_path("img.padf");
  save_image(p, img, Role::recon_image);
  auto [h, payload] = read_container(p);
  REQUIRE(h.pixel_size_m.has_value());
  CHECK(*h.pixel_size_m == 70e-6);
  CHECK(h.role == Role::recon_image);
  auto back = load_image(p);
  CHECK(back.pixel_size == 70e-6);
  CHECK(bit_equal(back.values, img.values));
}

TEST_CASE("bicubic keeps constants") {
  PixelImage img(512, 512, 70e-6, 3.5f);
  auto out = resize_bicubic(img, 128, 128);
  CHECK(out.width() == 128);
  CHECK(out.height() == 128);
  CHECK(out.pixel_size == doctest::Approx(280e-6));
  for (float v : out.values.flat()) REQUIRE(v == 3.5f);
}

TEST_CASE("bicubic reproduces a ramp") {
  const std::size_t n = 512, m = 128;
  PixelImage img(n, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < n; ++x) img.at(x, y) = static_cast<float>(x);
  auto out = resize_bicubic(img, m, 8);
  // Output pixel u samples source coordinate (u + 0.5) * n / m - 0.5.
  for (std::size_t u = 2; u + 2 < m; ++u) {
    const double expect = (u + 0.5) * double(n) / double(m) - 0.5;
    REQUIRE(std::abs(out.at(u, 4) - expect) <= 1e-6 * expect);
  }
}

TEST_CASE("bicubic is linear") {
  PixelImage a(64, 48), b(64, 48), c(64, 48);
  auto ra = random_array(48, 64, 3), rb = random_array(48, 64, 4);
  a.values = ra;
  b.values = rb;
  const float s = 0.7f, t = -1.3f;
  for (std::size_t k = 0; k < c.values.size(); ++k)
    c.values.flat()[k] = s * ra.flat()[k] + t * rb.flat()[k];
  auto ya = resize_bicubic(a, 20, 33), yb = resize_bicubic(b, 20, 33), yc = resize_bicubic(c, 20, 33);
  for (std::size_t k = 0; k < yc.values.size(); ++k) {
    const double expect = s * ya.values.flat()[k] + t * yb.values.flat()[k];
    REQUIRE(std::abs(yc.values.flat()[k] - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("bicubic rejects small sizes") {
  PixelImage img(16, 16);
  CHECK_THROWS(resize_bicubic(img, 3, 16));
  CHECK_THROWS(resize_bicubic(PixelImage(3, 16), 8, 8));
}

TEST_CASE("rng streams") {
  Rng a(5, 0), b(5, 0), c(5, 1);
  CHECK(a.next() == b.next());
  CHECK(a.next() != c.next());
  Rng r(9);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.01);
}
