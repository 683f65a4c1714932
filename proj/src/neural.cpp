#include "panp/neural.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "panp/core/config.hpp"
#include "panp/core/container.hpp"
#include "panp/core/error.hpp"
#include "panp/core/resample.hpp"
#include "panp/core/rng.hpp"

namespace panp::neural {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<Mat<S>>;
template <typename S>
using CMapM = Eigen::Map<const Mat<S>>;

template <typename S>
Mat<S> im2col(const Tensor<S>& x) {
  const long h = static_cast<long>(x.h), w = static_cast<long>(x.w);
  Mat<S> col(static_cast<long>(x.c) * 9, h * w);
  for (std::size_t c = 0; c < x.c; ++c)
    for (long ky = 0; ky < 3; ++ky)
      for (long kx = 0; kx < 3; ++kx) {
        S* row = col.row(static_cast<long>(c) * 9 + ky * 3 + kx).data();
        for (long y = 0; y < h; ++y) {
          const long sy = y + ky - 1;
          S* out = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, S(0));
            continue;
          }
          const S* src = &x.v[(c * x.h + static_cast<std::size_t>(sy)) * x.w];
          for (long xx = 0; xx < w; ++xx) {
            const long sx = xx + kx - 1;
            out[xx] = sx < 0 || sx >= w ? S(0) : src[sx];
          }
        }
      }
  return col;
}

template <typename S>
void col2im(const Mat<S>& col, Tensor<S>& dx) {
  const long h = static_cast<long>(dx.h), w = static_cast<long>(dx.w);
  for (std::size_t c = 0; c < dx.c; ++c)
    for (long ky = 0; ky < 3; ++ky)
      for (long kx = 0; kx < 3; ++kx) {
        const S* row = col.row(static_cast<long>(c) * 9 + ky * 3 + kx).data();
        for (long y = 0; y < h; ++y) {
          const long sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          S* dst = &dx.v[(c * dx.h + static_cast<std::size_t>(sy)) * dx.w];
          const S* in = row + y * w;
          for (long xx = 0; xx < w; ++xx) {
            const long sx = xx + kx - 1;
            if (sx >= 0 && sx < w) dst[sx] += in[xx];
          }
        }
      }
}

template <typename S>
S row_sum(const S* p, long n) {
  S s = 0;
  for (long k = 0; k < n; ++k) s += p[k];
  return s;
}

}  // namespace

namespace ops {

template <typename S>
Tensor<S> conv_forward(const Tensor<S>& x, const S* w, const S* b, std::size_t cout, std::size_t k) {
  Tensor<S> y(cout, x.h, x.w);
  const long hw = static_cast<long>(x.plane()), co = static_cast<long>(cout);
  MapM<S> ym(y.v.data(), co, hw);
  CMapM<S> wm(w, co, static_cast<long>(x.c * k * k));
  if (k == 1) ym.noalias() = wm * CMapM<S>(x.v.data(), static_cast<long>(x.c), hw);
  else ym.noalias() = wm * im2col(x);
  for (long r = 0; r < co; ++r) ym.row(r).array() += b[r];
  return y;
}

template <typename S>
Tensor<S> conv_backward(const Tensor<S>& x, const S* w, std::size_t cout, std::size_t k, const Tensor<S>& dy, S* dw,
                        S* db) {
  const long hw = static_cast<long>(x.plane()), co = static_cast<long>(cout), ck = static_cast<long>(x.c * k * k);
  CMapM<S> dym(dy.v.data(), co, hw);
  CMapM<S> wm(w, co, ck);
  MapM<S> dwm(dw, co, ck);
  // Plain loops for reductions: Eigen's vectorized sums depend on pointer
  // alignment, which would make training non-reproducible.
  for (long r = 0; r < co; ++r) db[r] += row_sum(dy.v.data() + r * hw, hw);
  Tensor<S> dx(x.c, x.h, x.w);
  if (k == 1) {
    CMapM<S> xm(x.v.data(), static_cast<long>(x.c), hw);
    dwm.noalias() += dym * xm.transpose();
    MapM<S>(dx.v.data(), static_cast<long>(x.c), hw).noalias() = wm.transpose() * dym;
  } else {
    const Mat<S> col = im2col(x);
    dwm.noalias() += dym * col.transpose();
    const Mat<S> dcol = wm.transpose() * dym;
    col2im(dcol, dx);
  }
  return dx;
}

template <typename S>
void relu_inplace(Tensor<S>& x) {
  for (auto& v : x.v) v = v > S(0) ? v : S(0);
}

template <typename S>
void relu_backward(const Tensor<S>& y, Tensor<S>& dy) {
  for (std::size_t k = 0; k < dy.v.size(); ++k)
    if (!(y.v[k] > S(0))) dy.v[k] = S(0);
}

template <typename S>
Tensor<S> maxpool_forward(const Tensor<S>& x, std::vector<std::uint32_t>& argmax) {
  Tensor<S> y(x.c, x.h / 2, x.w / 2);
  argmax.assign(y.v.size(), 0);
  std::size_t o = 0;
  for (std::size_t c = 0; c < x.c; ++c)
    for (std::size_t i = 0; i < y.h; ++i)
      for (std::size_t j = 0; j < y.w; ++j, ++o) {
        std::size_t best = (c * x.h + 2 * i) * x.w + 2 * j;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t idx = (c * x.h + 2 * i + a) * x.w + 2 * j + b;
            if (x.v[idx] > x.v[best]) best = idx;
          }
        y.v[o] = x.v[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  return y;
}

template <typename S>
Tensor<S> maxpool_backward(const Tensor<S>& dy, const std::vector<std::uint32_t>& argmax, std::size_t c, std::size_t h,
                           std::size_t w) {
  Tensor<S> dx(c, h, w);
  for (std::size_t o = 0; o < dy.v.size(); ++o) dx.v[argmax[o]] += dy.v[o];
  return dx;
}

template <typename S>
Tensor<S> upconv_forward(const Tensor<S>& x, const S* w, const S* b, std::size_t cout) {
  const long hw = static_cast<long>(x.plane());
  const Mat<S> t = CMapM<S>(w, static_cast<long>(cout * 4), static_cast<long>(x.c)) *
                   CMapM<S>(x.v.data(), static_cast<long>(x.c), hw);
  Tensor<S> y(cout, 2 * x.h, 2 * x.w);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ab = 0; ab < 4; ++ab) {
      const S* row = t.row(static_cast<long>(co * 4 + ab)).data();
      const std::size_t a = ab / 2, bb = ab % 2;
      for (std::size_t i = 0; i < x.h; ++i)
        for (std::size_t j = 0; j < x.w; ++j) y(co, 2 * i + a, 2 * j + bb) = row[i * x.w + j] + b[co];
    }
  return y;
}

template <typename S>
Tensor<S> upconv_backward(const Tensor<S>& x, const S* w, std::size_t cout, const Tensor<S>& dy, S* dw, S* db) {
  const long hw = static_cast<long>(x.plane());
  Mat<S> dt(static_cast<long>(cout * 4), hw);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ab = 0; ab < 4; ++ab) {
      S* row = dt.row(static_cast<long>(co * 4 + ab)).data();
      const std::size_t a = ab / 2, bb = ab % 2;
      for (std::size_t i = 0; i < x.h; ++i)
        for (std::size_t j = 0; j < x.w; ++j) row[i * x.w + j] = dy(co, 2 * i + a, 2 * j + bb);
      db[co] += row_sum(row, hw);
    }
  CMapM<S> xm(x.v.data(), static_cast<long>(x.c), hw);
  MapM<S>(dw, static_cast<long>(cout * 4), static_cast<long>(x.c)).noalias() += dt * xm.transpose();
  Tensor<S> dx(x.c, x.h, x.w);
  MapM<S>(dx.v.data(), static_cast<long>(x.c), hw).noalias() =
      CMapM<S>(w, static_cast<long>(cout * 4), static_cast<long>(x.c)).transpose() * dt;
  return dx;
}

template <typename S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.h != b.h || a.w != b.w) throw Error("concat: spatial sizes differ");
  Tensor<S> y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<long>(a.v.size()));
  return y;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split(const Tensor<S>& d, std::size_t ca) {
  Tensor<S> a(ca, d.h, d.w), b(d.c - ca, d.h, d.w);
  std::copy(d.v.begin(), d.v.begin() + static_cast<long>(a.v.size()), a.v.begin());
  std::copy(d.v.begin() + static_cast<long>(a.v.size()), d.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

#define PANP_OPS(S)                                                                                              \
  template Tensor<S> conv_forward(const Tensor<S>&, const S*, const S*, std::size_t, std::size_t);               \
  template Tensor<S> conv_backward(const Tensor<S>&, const S*, std::size_t, std::size_t, const Tensor<S>&, S*,   \
                                   S*);                                                                          \
  template void relu_inplace(Tensor<S>&);                                                                        \
  template void relu_backward(const Tensor<S>&, Tensor<S>&);                                                     \
  template Tensor<S> maxpool_forward(const Tensor<S>&, std::vector<std::uint32_t>&);                             \
  template Tensor<S> maxpool_backward(const Tensor<S>&, const std::vector<std::uint32_t>&, std::size_t,          \
                                      std::size_t, std::size_t);                                                 \
  template Tensor<S> upconv_forward(const Tensor<S>&, const S*, const S*, std::size_t);                          \
  template Tensor<S> upconv_backward(const Tensor<S>&, const S*, std::size_t, const Tensor<S>&, S*, S*);         \
  template Tensor<S> concat(const Tensor<S>&, const Tensor<S>&);                                                 \
  template std::pair<Tensor<S>, Tensor<S>> split(const Tensor<S>&, std::size_t);
PANP_OPS(float)
PANP_OPS(double)
#undef PANP_OPS

}  // namespace ops

void NetworkConfig::validate() const {
  if (n_scales < 3 || n_scales > 5) throw ConfigError(fmt::format("n_scales must be 3, 4 or 5, got {}", n_scales));
  if (base_channels == 0) throw ConfigError("base_channels must be at least 1");
}

nlohmann::json to_json(const NetworkConfig& c) {
  return {{"n_scales", c.n_scales}, {"base_channels", c.base_channels}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  ConfigReader r(j);
  r.get("n_scales", c.n_scales).get("base_channels", c.base_channels);
  r.reject_unknown();
  r.finish();
  c.validate();
  return c;
}

std::size_t Layer::kernel_size() const {
  switch (kind) {
    case Kind::conv3: return cout * cin * 9;
    case Kind::upconv2: return cout * 4 * cin;
    case Kind::conv1: return cout * cin;
  }
  return 0;
}

std::vector<Layer> layer_table(const NetworkConfig& cfg) {
  cfg.validate();
  std::vector<Layer> out;
  std::size_t offset = 0;
  auto add = [&](Layer::Kind kind, std::string name, std::size_t cin, std::size_t cout) {
    Layer l{kind, std::move(name), cin, cout, offset};
    offset += l.n_params();
    out.push_back(std::move(l));
  };
  std::size_t in = 1;
  for (std::size_t s = 0; s < cfg.n_scales; ++s) {
    add(Layer::Kind::conv3, fmt::format("enc{}.conv1", s), in, cfg.channels(s));
    add(Layer::Kind::conv3, fmt::format("enc{}.conv2", s), cfg.channels(s), cfg.channels(s));
    in = cfg.channels(s);
  }
  for (std::size_t s = cfg.n_scales - 1; s-- > 0;) {
    add(Layer::Kind::upconv2, fmt::format("dec{}.up", s), cfg.channels(s + 1), cfg.channels(s));
    add(Layer::Kind::conv3, fmt::format("dec{}.conv1", s), 2 * cfg.channels(s), cfg.channels(s));
    add(Layer::Kind::conv3, fmt::format("dec{}.conv2", s), cfg.channels(s), cfg.channels(s));
  }
  add(Layer::Kind::conv1, "final", cfg.channels(0), 1);
  return out;
}

std::size_t parameter_count(const NetworkConfig& cfg) {
  cfg.validate();
  // conv3 cin->cout: 9 cin cout + cout; up-conv: 4 cin cout + cout; 1x1: cin + 1.
  std::size_t n = 0, in = 1;
  for (std::size_t s = 0; s < cfg.n_scales; ++s) {
    const std::size_t c = cfg.channels(s);
    n += 9 * in * c + c + 9 * c * c + c;
    in = c;
  }
  for (std::size_t s = 0; s + 1 < cfg.n_scales; ++s) {
    const std::size_t c = cfg.channels(s);
    n += 4 * (2 * c) * c + c + 9 * (2 * c) * c + c + 9 * c * c + c;
  }
  return n + cfg.channels(0) + 1;
}

template <typename S>
struct UNet<S>::Cache {
  std::vector<Tensor<S>> inputs;   // input of each layer, indexed like layers_
  std::vector<Tensor<S>> outputs;  // output of each layer (post-ReLU where applied)
  std::vector<std::vector<std::uint32_t>> argmax;  // per pooling step
  std::vector<std::array<std::size_t, 3>> pooled_shape;
};

template <typename S>
UNet<S>::UNet(const NetworkConfig& cfg) : cfg_(cfg), layers_(layer_table(cfg)) {
  params_.assign(layers_.back().offset + layers_.back().n_params(), S(0));
}

template <typename S>
void UNet<S>::initialize(std::uint64_t seed) {
  std::fill(params_.begin(), params_.end(), S(0));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const double fan_in = static_cast<double>(L.cin) * (L.kind == Layer::Kind::conv3 ? 9.0 : 1.0);
    const double bound = std::sqrt(6.0 / fan_in);
    Rng rng(seed, l);
    for (std::size_t k = 0; k < L.kernel_size(); ++k) params_[L.offset + k] = static_cast<S>(rng.uniform(-bound, bound));
  }
}

template <typename S>
void UNet<S>::check_input(const Tensor<S>& x) const {
  if (x.c != 1) throw Error(fmt::format("network input must have 1 channel, got {}", x.c));
  const std::size_t d = cfg_.divisor();
  if (x.h == 0 || x.w == 0 || x.h % d != 0 || x.w % d != 0)
    throw Error(fmt::format("input {}x{} is not a multiple of {} (required by {} scales)", x.w, x.h, d, cfg_.n_scales));
}

template <typename S>
Tensor<S> UNet<S>::run(const Tensor<S>& x, Cache* cache) const {
  check_input(x);
  const S* p = params_.data();
  std::size_t li = 0;
  auto conv = [&](const Tensor<S>& in, bool relu) {
    const auto& L = layers_[li];
    Tensor<S> y = L.kind == Layer::Kind::upconv2
                      ? ops::upconv_forward(in, p + L.offset, p + L.bias_offset(), L.cout)
                      : ops::conv_forward(in, p + L.offset, p + L.bias_offset(), L.cout,
                                          L.kind == Layer::Kind::conv3 ? 3 : 1);
    if (relu) ops::relu_inplace(y);
    if (cache) {
      cache->inputs[li] = in;
      cache->outputs[li] = y;
    }
    ++li;
    return y;
  };
  if (cache) {
    cache->inputs.assign(layers_.size(), {});
    cache->outputs.assign(layers_.size(), {});
    cache->argmax.assign(cfg_.n_scales - 1, {});
    cache->pooled_shape.assign(cfg_.n_scales - 1, {});
  }
  std::vector<Tensor<S>> skips;
  Tensor<S> h = x;
  for (std::size_t s = 0; s < cfg_.n_scales; ++s) {
    if (s > 0) {
      std::vector<std::uint32_t> am;
      Tensor<S> pooled = ops::maxpool_forward(h, am);
      if (cache) {
        cache->argmax[s - 1] = std::move(am);
        cache->pooled_shape[s - 1] = {h.c, h.h, h.w};
      }
      h = std::move(pooled);
    }
    h = conv(h, true);
    h = conv(h, true);
    if (s + 1 < cfg_.n_scales) skips.push_back(h);
  }
  for (std::size_t s = cfg_.n_scales - 1; s-- > 0;) {
    Tensor<S> up = conv(h, false);
    h = conv(ops::concat(skips[s], up), true);
    h = conv(h, true);
  }
  return conv(h, false);
}

template <typename S>
Tensor<S> UNet<S>::forward(const Tensor<S>& x) const {
  return run(x, nullptr);
}

template <typename S>
S mse(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw Error("mse: shape mismatch");
  S acc = 0;
  for (std::size_t k = 0; k < a.v.size(); ++k) acc += (a.v[k] - b.v[k]) * (a.v[k] - b.v[k]);
  return acc / static_cast<S>(a.v.size());
}

template <typename S>
S UNet<S>::loss_and_gradient(const std::vector<Tensor<S>>& inputs, const std::vector<Tensor<S>>& targets,
                             AlignedVector<S>& grad) const {
  if (inputs.size() != targets.size() || inputs.empty()) throw Error("batch inputs and targets differ in count");
  if (grad.size() != params_.size()) grad.assign(params_.size(), S(0));
  const S* p = params_.data();
  S* g = grad.data();
  S total = 0;
  const S n_all = static_cast<S>(inputs.size() * inputs.front().v.size());
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (!inputs[b].same_shape(targets[b]) || !inputs[b].same_shape(inputs.front()))
      throw Error("batch shape mismatch");
    Cache cache;
    const Tensor<S> y = run(inputs[b], &cache);
    Tensor<S> dy(1, y.h, y.w);
    for (std::size_t k = 0; k < y.v.size(); ++k) {
      const S e = y.v[k] - targets[b].v[k];
      total += e * e;
      dy.v[k] = S(2) * e / n_all;
    }
    std::size_t li = layers_.size();
    auto back = [&](Tensor<S> d, bool relu) {
      --li;
      const auto& L = layers_[li];
      if (relu) ops::relu_backward(cache.outputs[li], d);
      return L.kind == Layer::Kind::upconv2
                 ? ops::upconv_backward(cache.inputs[li], p + L.offset, L.cout, d, g + L.offset, g + L.bias_offset())
                 : ops::conv_backward(cache.inputs[li], p + L.offset, L.cout, L.kind == Layer::Kind::conv3 ? 3 : 1, d,
                                      g + L.offset, g + L.bias_offset());
    };
    Tensor<S> d = back(std::move(dy), false);
    std::vector<Tensor<S>> dskip(cfg_.n_scales - 1);
    for (std::size_t s = 0; s + 1 < cfg_.n_scales; ++s) {
      d = back(std::move(d), true);
      d = back(std::move(d), true);
      auto [ds, du] = ops::split(d, cfg_.channels(s));
      dskip[s] = std::move(ds);
      d = back(std::move(du), false);
    }
    for (std::size_t s = cfg_.n_scales; s-- > 0;) {
      if (s + 1 < cfg_.n_scales)
        for (std::size_t k = 0; k < d.v.size(); ++k) d.v[k] += dskip[s].v[k];
      d = back(std::move(d), true);
      d = back(std::move(d), true);
      if (s > 0) {
        const auto& sh = cache.pooled_shape[s - 1];
        d = ops::maxpool_backward(d, cache.argmax[s - 1], sh[0], sh[1], sh[2]);
      }
    }
  }
  return total / n_all;
}

template class UNet<float>;
template class UNet<double>;
template float mse(const Tensor<float>&, const Tensor<float>&);
template double mse(const Tensor<double>&, const Tensor<double>&);

std::string architecture_hash(const NetworkConfig& cfg) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layer_table(cfg))
    layers.push_back({l.name, static_cast<int>(l.kind), l.cin, l.cout});
  return json_hash({{"config", to_json(cfg)}, {"layers", layers}});
}

void save_weights(const std::filesystem::path& path, const Network& net, nlohmann::json extra) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    const char* kind = l.kind == Layer::Kind::conv3 ? "conv3x3" : l.kind == Layer::Kind::upconv2 ? "upconv2x2" : "conv1x1";
    layers.push_back({{"name", l.name}, {"kind", kind}, {"cin", l.cin}, {"cout", l.cout}, {"offset", l.offset},
                      {"n_params", l.n_params()}});
  }
  extra["schema_version"] = kSchemaVersion;
  extra["network"] = to_json(net.config());
  extra["layers"] = layers;
  extra["architecture_hash"] = architecture_hash(net.config());
  ContainerHeader h;
  h.role = Role::weights;
  h.rows = 1;
  h.cols = net.params().size();
  h.extra = std::move(extra);
  Array2D<float> payload(1, net.params().size());
  std::copy(net.params().begin(), net.params().end(), payload.flat().begin());
  write_container(path, h, payload);
}

Network load_weights(const std::filesystem::path& path) {
  auto [h, payload] = read_container(path);
  if (h.role != Role::weights)
    throw Error(fmt::format("{} holds role '{}', expected weights", path.string(), to_string(h.role)));
  if (h.extra.value("schema_version", -1) != kSchemaVersion)
    throw ConfigError(fmt::format("{}: weights schema version does not match {}", path.string(), kSchemaVersion));
  if (!h.extra.contains("network")) throw Error(fmt::format("{}: missing network description", path.string()));
  Network net(network_config_from_json(h.extra["network"]));
  if (h.extra.value("architecture_hash", std::string()) != architecture_hash(net.config()) ||
      payload.size() != net.params().size())
    throw Error(fmt::format("{}: weights do not match their architecture ({} values, expected {})", path.string(),
                            payload.size(), net.params().size()));
  std::copy(payload.flat().begin(), payload.flat().end(), net.params().begin());
  return net;
}

void TrainConfig::validate() const {
  if (iterations == 0) throw ConfigError("iterations must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0))
    throw ConfigError("Adam parameters out of range");
  if (input_size < 4) throw ConfigError("input_size must be at least 4");
  if (val_every == 0) throw ConfigError("val_every must be at least 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations}, {"batch_size", c.batch_size}, {"lr0", c.lr0},     {"beta1", c.beta1},
          {"beta2", c.beta2},           {"eps", c.eps},               {"seed", c.seed},   {"input_size", c.input_size},
          {"val_every", c.val_every}};
}

double lr_at(std::size_t t, const TrainConfig& cfg) {
  if (t > cfg.iterations) throw Error(fmt::format("iteration {} outside [0, {}]", t, cfg.iterations));
  return 0.5 * cfg.lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.iterations)));
}

namespace {

Tensor<float> to_tensor(const PixelImage& img) {
  Tensor<float> t(1, img.height(), img.width());
  std::copy(img.values.flat().begin(), img.values.flat().end(), t.v.begin());
  return t;
}

PixelImage resized(const PixelImage& image, std::size_t size) {
  if (image.width() == size && image.height() == size) return image;
  return resize_bicubic(image, size, size);
}

}  // namespace

Tensor<float> prepare_input(const PixelImage& image, std::size_t size) {
  auto t = to_tensor(resized(image, size));
  const float peak = *std::max_element(t.v.begin(), t.v.end());
  if (peak > 0.0f)
    for (auto& v : t.v) v /= peak;
  return t;
}

Tensor<float> prepare_target(const PixelImage& image, std::size_t size) { return to_tensor(resized(image, size)); }

double evaluate_mse(const Network& net, const std::vector<TrainPair>& pairs) {
  if (pairs.empty()) throw Error("evaluate_mse: no pairs");
  double acc = 0.0;
  for (const auto& p : pairs) acc += mse(net.forward(p.input), p.target);
  return acc / static_cast<double>(pairs.size());
}

TrainResult train(const std::vector<TrainPair>& train_set, const std::vector<TrainPair>& val_set,
                  const NetworkConfig& net_cfg, const TrainConfig& cfg) {
  cfg.validate();
  net_cfg.validate();
  if (train_set.empty()) throw Error("training split is empty");
  if (val_set.empty()) throw Error("validation split is empty");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult res;
  Network net(net_cfg);
  net.initialize(cfg.seed);
  const std::size_t n = net.params().size();
  AlignedVector<float> grad(n), m(n, 0.0f), v(n, 0.0f);
  auto& w = net.params();

  Rng order_rng(cfg.seed, 0x0bde);
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      order_rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    return order[cursor++];
  };

  res.best_val = std::numeric_limits<double>::infinity();
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Tensor<float>> xs, ys;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto& pair = train_set[next_index()];
      xs.push_back(pair.input);
      ys.push_back(pair.target);
    }
    std::fill(grad.begin(), grad.end(), 0.0f);
    const double loss = net.loss_and_gradient(xs, ys, grad);
    if (!std::isfinite(loss)) throw Error(fmt::format("training loss is not finite at iteration {}", it));
    res.loss_history.push_back(loss);

    const double lr = lr_at(it, cfg);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
    const double step = lr / (1.0 - b1t);
    const double vcorr = 1.0 / std::sqrt(1.0 - b2t);
    for (std::size_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * grad[k];
      v[k] = b2 * v[k] + (1.0f - b2) * grad[k] * grad[k];
      w[k] -= static_cast<float>(step * m[k] / (std::sqrt(static_cast<double>(v[k])) * vcorr + cfg.eps));
    }

    if ((it + 1) % cfg.val_every == 0 || it + 1 == cfg.iterations) {
      const double val = evaluate_mse(net, val_set);
      res.val_history.emplace_back(it + 1, val);
      spdlog::info("iteration {:>5}  loss {:.6g}  val {:.6g}  lr {:.3g}", it + 1, loss, val, lr);
      if (val < res.best_val) {
        res.best_val = val;
        res.best_iteration = it + 1;
        res.weights = net;
      }
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

nlohmann::json to_json(const TrainResult& r) {
  nlohmann::json val = nlohmann::json::array();
  for (const auto& [it, v] : r.val_history) val.push_back({{"iteration", it}, {"val_mse", v}});
  return {{"iterations", r.loss_history.size()},
          {"final_loss", r.loss_history.empty() ? 0.0 : r.loss_history.back()},
          {"best_iteration", r.best_iteration},
          {"best_val_mse", r.best_val},
          {"loss_history", r.loss_history},
          {"validation", val}};
}

PixelImage infer(const Network& net, const PixelImage& image, std::size_t size) {
  const auto y = net.forward(prepare_input(image, size));
  PixelImage out(size, size, image.pixel_size * static_cast<double>(image.width()) / static_cast<double>(size));
  for (std::size_t k = 0; k < y.v.size(); ++k) out.values.flat()[k] = std::max(0.0f, y.v[k]);
  return out;
}

}  // namespace panp::neural
