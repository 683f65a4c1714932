#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>

#include "panp/core/error.hpp"
#include "panp/core/rng.hpp"
#include "panp/neural.hpp"

using namespace panp;
using namespace panp::neural;

namespace {

Tensor<double> random_tensor(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor<double> t(c, h, w);
  Rng rng(seed);
  for (auto& v : t.v) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 0.5) {
  std::vector<double> v(n);
  Rng rng(seed);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.v.size(); ++k) s += a.v[k] * b.v[k];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Central difference of f with respect to v[k].
template <typename V>
double numeric(V& v, std::size_t k, const std::function<double()>& f, double h = 1e-6) {
  const double keep = v[k];
  v[k] = keep + h;
  const double fp = f();
  v[k] = keep - h;
  const double fm = f();
  v[k] = keep;
  return (fp - fm) / (2 * h);
}

// Checks every input and parameter gradient of L = <layer(x), r> for random r.
void check_layer(Tensor<double> x, std::vector<double> w, std::vector<double> b,
                 const std::function<Tensor<double>(const Tensor<double>&, const double*, const double*)>& fwd,
                 const std::function<Tensor<double>(const Tensor<double>&, const double*, const Tensor<double>&,
                                                    double*, double*)>& bwd) {
  const auto y = fwd(x, w.data(), b.data());
  Tensor<double> r = random_tensor(y.c, y.h, y.w, 99);
  std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
  const auto dx = bwd(x, w.data(), r, dw.data(), db.data());
  auto loss = [&] { return dot(fwd(x, w.data(), b.data()), r); };
  double worst = 0;
  for (std::size_t k = 0; k < x.v.size(); ++k) worst = std::max(worst, rel_err(dx.v[k], numeric(x.v, k, loss)));
  for (std::size_t k = 0; k < w.size(); ++k) worst = std::max(worst, rel_err(dw[k], numeric(w, k, loss)));
  for (std::size_t k = 0; k < b.size(); ++k) worst = std::max(worst, rel_err(db[k], numeric(b, k, loss)));
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("parameter count of the default network") {
  // Hand count for channels 16/32/64:
  //  enc0 (1*9+1)*16 + (16*9+1)*16, enc1 (16*9+1)*32 + (32*9+1)*32, enc2 (32*9+1)*64 + (64*9+1)*64
  //  dec1 up (64*4+1)*32, convs (64*9+1)*32 + (32*9+1)*32
  //  dec0 up (32*4+1)*16, convs (32*9+1)*16 + (16*9+1)*16, final 16+1
  const std::size_t hand = 160 + 2320 + 4640 + 9248 + 18496 + 36928 + 8224 + 18464 + 9248 + 2064 + 4624 + 2320 + 17;
  CHECK(hand == 116753);
  CHECK(parameter_count({}) == 116753);
  CHECK(Network(NetworkConfig{}).params().size() == 116753);
  for (std::size_t s : {3, 4, 5}) {
    NetworkConfig c{s, 8};
    CHECK(Network(c).params().size() == parameter_count(c));
  }
  CHECK_THROWS_AS(NetworkConfig({2, 16}).validate(), ConfigError);
  CHECK_THROWS_AS(NetworkConfig({6, 16}).validate(), ConfigError);
}

TEST_CASE("conv layer gradients") {
  for (std::size_t k : {1, 3}) {
    const std::size_t cin = 3, cout = 4;
    check_layer(
        random_tensor(cin, 5, 6, 1), random_vector(cout * cin * k * k, 2), random_vector(cout, 3),
        [&](const Tensor<double>& x, const double* w, const double* b) { return ops::conv_forward(x, w, b, cout, k); },
        [&](const Tensor<double>& x, const double* w, const Tensor<double>& dy, double* dw, double* db) {
          return ops::conv_backward(x, w, cout, k, dy, dw, db);
        });
  }
}

TEST_CASE("conv matches a direct convolution") {
  const auto x = random_tensor(2, 4, 5, 7);
  const auto w = random_vector(3 * 2 * 9, 8);
  const auto b = random_vector(3, 9);
  const auto y = ops::conv_forward(x, w.data(), b.data(), 3, 3);
  for (std::size_t o = 0; o < 3; ++o)
    for (long i = 0; i < 4; ++i)
      for (long j = 0; j < 5; ++j) {
        double s = b[o];
        for (std::size_t c = 0; c < 2; ++c)
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
              const long yy = i + dy, xx = j + dx;
              if (yy < 0 || yy >= 4 || xx < 0 || xx >= 5) continue;
              s += w[((o * 2 + c) * 3 + std::size_t(dy + 1)) * 3 + std::size_t(dx + 1)] * x(c, yy, xx);
            }
        CHECK(y(o, i, j) == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("relu gradient") {
  auto x = random_tensor(2, 4, 4, 5);
  std::vector<double> none;
  check_layer(
      x, none, none,
      [](const Tensor<double>& in, const double*, const double*) {
        auto y = in;
        ops::relu_inplace(y);
        return y;
      },
      [](const Tensor<double>& in, const double*, const Tensor<double>& dy, double*, double*) {
        auto y = in;
        ops::relu_inplace(y);
        auto d = dy;
        ops::relu_backward(y, d);
        return d;
      });
}

TEST_CASE("max pool gradient and tie break") {
  std::vector<double> none;
  check_layer(
      random_tensor(2, 6, 4, 11), none, none,
      [](const Tensor<double>& in, const double*, const double*) {
        std::vector<std::uint32_t> am;
        return ops::maxpool_forward(in, am);
      },
      [](const Tensor<double>& in, const double*, const Tensor<double>& dy, double*, double*) {
        std::vector<std::uint32_t> am;
        ops::maxpool_forward(in, am);
        return ops::maxpool_backward(dy, am, in.c, in.h, in.w);
      });

  Tensor<double> tie(1, 2, 2, 1.0);
  std::vector<std::uint32_t> am;
  ops::maxpool_forward(tie, am);
  CHECK(am[0] == 0);
  tie(0, 1, 0) = 2.0;
  tie(0, 1, 1) = 2.0;
  ops::maxpool_forward(tie, am);
  CHECK(am[0] == 2);
  Tensor<double> g(1, 1, 1, 5.0);
  const auto dx = ops::maxpool_backward(g, am, 1, 2, 2);
  CHECK(std::vector<double>(dx.v.begin(), dx.v.end()) == std::vector<double>{0, 0, 5, 0});
}

TEST_CASE("transposed conv gradient") {
  const std::size_t cin = 3, cout = 2;
  check_layer(
      random_tensor(cin, 3, 4, 21), random_vector(cout * 4 * cin, 22), random_vector(cout, 23),
      [&](const Tensor<double>& x, const double* w, const double* b) { return ops::upconv_forward(x, w, b, cout); },
      [&](const Tensor<double>& x, const double* w, const Tensor<double>& dy, double* dw, double* db) {
        return ops::upconv_backward(x, w, cout, dy, dw, db);
      });
  // Each input pixel paints its own 2x2 output block.
  Tensor<double> x(1, 1, 1, 2.0);
  std::vector<double> w{1, 2, 3, 4}, b{0.5};
  const auto y = ops::upconv_forward(x, w.data(), b.data(), 1);
  CHECK(std::vector<double>(y.v.begin(), y.v.end()) == std::vector<double>{2.5, 4.5, 6.5, 8.5});
}

TEST_CASE("concat gradient") {
  std::vector<double> none;
  const auto other = random_tensor(2, 3, 3, 31);
  check_layer(
      random_tensor(3, 3, 3, 32), none, none,
      [&](const Tensor<double>& in, const double*, const double*) { return ops::concat(other, in); },
      [&](const Tensor<double>&, const double*, const Tensor<double>& dy, double*, double*) {
        return ops::split(dy, 2).second;
      });
}

TEST_CASE("full network gradient, tiny net, every parameter") {
  UNet<double> net(NetworkConfig{3, 2});
  net.initialize(5);
  for (auto& p : net.params()) p += 0.01;  // nonzero biases
  std::vector<Tensor<double>> xs{random_tensor(1, 16, 16, 41)}, ts{random_tensor(1, 16, 16, 42)};
  AlignedVector<double> grad;
  net.loss_and_gradient(xs, ts, grad);
  AlignedVector<double> dummy;
  auto loss = [&] { return net.loss_and_gradient(xs, ts, dummy); };
  double worst = 0;
  for (std::size_t k = 0; k < net.params().size(); ++k)
    worst = std::max(worst, rel_err(grad[k], numeric(net.params(), k, loss)));
  MESSAGE("worst relative error " << worst << " over " << net.params().size() << " parameters");
  CHECK(worst < 1e-4);
}

TEST_CASE("full network gradient, default 3-scale net on 16x16") {
  UNet<double> net(NetworkConfig{});
  net.initialize(6);
  Rng rb(7);
  for (const auto& l : net.layers())
    for (std::size_t k = 0; k < l.cout; ++k) net.params()[l.bias_offset() + k] = rb.uniform(-0.05, 0.05);
  std::vector<Tensor<double>> xs{random_tensor(1, 16, 16, 43), random_tensor(1, 16, 16, 45)};
  std::vector<Tensor<double>> ts{random_tensor(1, 16, 16, 44), random_tensor(1, 16, 16, 46)};
  AlignedVector<double> grad;
  net.loss_and_gradient(xs, ts, grad);
  AlignedVector<double> dummy;
  auto loss = [&] { return net.loss_and_gradient(xs, ts, dummy); };
  // 12 kernel entries and 2 biases from every layer.
  Rng pick(8);
  double worst = 0;
  for (const auto& l : net.layers()) {
    std::vector<std::size_t> idx;
    for (int k = 0; k < 12; ++k) idx.push_back(l.offset + pick.below(l.kernel_size()));
    for (int k = 0; k < 2; ++k) idx.push_back(l.bias_offset() + pick.below(l.cout));
    double layer_worst = 0;
    for (std::size_t k : idx) layer_worst = std::max(layer_worst, rel_err(grad[k], numeric(net.params(), k, loss)));
    CHECK_MESSAGE(layer_worst < 1e-4, l.name);
    worst = std::max(worst, layer_worst);
  }
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("forward shapes and errors") {
  Network net(NetworkConfig{});
  net.initialize(1);
  CHECK(net.forward(Tensor<float>(1, 128, 128, 0.5f)).h == 128);
  const auto t0 = std::chrono::steady_clock::now();
  const auto y = net.forward(Tensor<float>(1, 256, 256, 0.5f));
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("256x256 forward pass " << ms << " ms");
  CHECK(y.h == 256);
  CHECK(y.w == 256);
  CHECK(ms < 500.0);
  try {
    net.forward(Tensor<float>(1, 30, 32));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("multiple of 4") != std::string::npos);
  }
  Network five(NetworkConfig{5, 4});
  CHECK_THROWS_WITH_AS(five.forward(Tensor<float>(1, 24, 24)), doctest::Contains("multiple of 16"), Error);
}

TEST_CASE("zeroed final layer gives zero output") {
  Network net(NetworkConfig{});
  net.initialize(3);
  const auto& fin = net.layers().back();
  std::fill(net.params().begin() + static_cast<long>(fin.offset), net.params().end(), 0.0f);
  const auto y = net.forward(prepare_input(PixelImage(64, 64, 70e-6, 1.0f), 64));
  for (float v : y.v) CHECK(v == 0.0f);
}

TEST_CASE("loss properties") {
  UNet<double> net(NetworkConfig{3, 2});
  net.initialize(9);
  std::vector<Tensor<double>> xs{random_tensor(1, 8, 8, 1)};
  std::vector<Tensor<double>> ts{net.forward(xs[0])};
  AlignedVector<double> grad;
  CHECK(net.loss_and_gradient(xs, ts, grad) == 0.0);
  for (double g : grad) CHECK(g == 0.0);
  const auto a = random_tensor(1, 8, 8, 2), b = random_tensor(1, 8, 8, 3);
  CHECK(mse(a, b) == mse(b, a));
  CHECK_THROWS_AS(mse(a, random_tensor(1, 8, 4, 3)), Error);
  std::vector<Tensor<double>> bad{random_tensor(1, 8, 4, 1)};
  CHECK_THROWS_AS(net.loss_and_gradient(xs, bad, grad), Error);
}

TEST_CASE("cosine learning rate") {
  TrainConfig c;
  c.iterations = 5000;
  CHECK(lr_at(0, c) == 0.001);
  CHECK(lr_at(2500, c) == 0.0005);
  CHECK(lr_at(5000, c) == 0.0);
  CHECK(lr_at(1250, c) == doctest::Approx(0.0005 * (1 + std::sqrt(0.5))).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(5001, c), Error);
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

namespace {

TrainPair blob_pair(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  TrainPair p{Tensor<float>(1, size, size), Tensor<float>(1, size, size)};
  const double cx = rng.uniform(8, size - 8.0), cy = rng.uniform(8, size - 8.0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const float g = static_cast<float>(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 18.0));
      p.target(0, y, x) = g;
      p.input(0, y, x) = 0.6f * g + static_cast<float>(0.2 * rng.uniform());
    }
  return p;
}

}  // namespace

TEST_CASE("single pair overfit") {
  const auto pair = blob_pair(32, 1);
  TrainConfig c;
  c.iterations = 500;
  c.batch_size = 1;
  c.seed = 2;
  const auto res = train({pair}, {pair}, NetworkConfig{}, c);
  REQUIRE(res.loss_history.size() == 500);
  for (double l : res.loss_history) CHECK(std::isfinite(l));
  const double final_mse = evaluate_mse(res.weights, {pair});
  MESSAGE("initial " << res.loss_history.front() << " final " << final_mse);
  CHECK(final_mse < 1e-4 * res.loss_history.front());
  CHECK(res.val_history.size() == 20);
  CHECK(res.val_history.back().first == 500);
}

TEST_CASE("training is deterministic and weights round trip") {
  std::vector<TrainPair> tr{blob_pair(32, 3), blob_pair(32, 4), blob_pair(32, 5)}, va{blob_pair(32, 6)};
  TrainConfig c;
  c.iterations = 30;
  c.seed = 11;
  const auto a = train(tr, va, NetworkConfig{}, c);
  const auto b = train(tr, va, NetworkConfig{}, c);
  CHECK(a.weights.params() == b.weights.params());
  CHECK(a.loss_history == b.loss_history);
  c.seed = 12;
  CHECK(train(tr, va, NetworkConfig{}, c).weights.params() != a.weights.params());

  const auto path = std::filesystem::temp_directory_path() / "panp_weights_test.padf";
  save_weights(path, a.weights);
  const auto back = load_weights(path);
  CHECK(back.params() == a.weights.params());
  CHECK(back.config().n_scales == 3);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(train({}, va, NetworkConfig{}, c), Error);
  CHECK_THROWS_AS(train(tr, {}, NetworkConfig{}, c), Error);
}

TEST_CASE("inference") {
  Network net(NetworkConfig{});
  net.initialize(4);
  PixelImage img(512, 512);
  for (std::size_t k = 0; k < img.values.size(); ++k) img.values.flat()[k] = float((k * 7919) % 101) / 100.0f;
  const auto a = infer(net, img), b = infer(net, img);
  CHECK(a.width() == 256);
  CHECK(a.pixel_size == doctest::Approx(140e-6));
  CHECK(a.values.flat().size() == b.values.flat().size());
  CHECK(std::equal(a.values.flat().begin(), a.values.flat().end(), b.values.flat().begin()));
  for (float v : a.values.flat()) CHECK(v >= 0.0f);
  // Zero input with zero biases gives exactly zero.
  const auto z = infer(net, PixelImage(512, 512));
  for (float v : z.values.flat()) CHECK(v == 0.0f);
}
