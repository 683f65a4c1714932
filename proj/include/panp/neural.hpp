#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "panp/core/types.hpp"

namespace panp::neural {

/// Storage aligned to the widest SIMD width so that vectorized kernels always
/// take the same code path (and rounding) for a given shape.
template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

/// Channel-major (c, y, x) single-image tensor.
template <typename S>
struct Tensor {
  std::size_t c = 0, h = 0, w = 0;
  AlignedVector<S> v;

  Tensor() = default;
  Tensor(std::size_t c_, std::size_t h_, std::size_t w_, S fill = S(0)) : c(c_), h(h_), w(w_), v(c_ * h_ * w_, fill) {}

  S& operator()(std::size_t ch, std::size_t y, std::size_t x) { return v[(ch * h + y) * w + x]; }
  S operator()(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
  [[nodiscard]] std::size_t plane() const { return h * w; }
  [[nodiscard]] bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

// Layer primitives. Weights are row-major: conv (cout, cin, k, k); up-conv
// (cout, 2, 2, cin). Backward passes accumulate into dw / db and return dx.
namespace ops {

template <typename S>
Tensor<S> conv_forward(const Tensor<S>& x, const S* w, const S* b, std::size_t cout, std::size_t k);
template <typename S>
Tensor<S> conv_backward(const Tensor<S>& x, const S* w, std::size_t cout, std::size_t k, const Tensor<S>& dy, S* dw,
                        S* db);

template <typename S>
void relu_inplace(Tensor<S>& x);
/// Gradient through ReLU given its output.
template <typename S>
void relu_backward(const Tensor<S>& y, Tensor<S>& dy);

/// 2x2 / stride 2. argmax holds the flat input index of each output; ties go
/// to the first position in row-major order.
template <typename S>
Tensor<S> maxpool_forward(const Tensor<S>& x, std::vector<std::uint32_t>& argmax);
template <typename S>
Tensor<S> maxpool_backward(const Tensor<S>& dy, const std::vector<std::uint32_t>& argmax, std::size_t c, std::size_t h,
                           std::size_t w);

/// Transposed 2x2 convolution with stride 2 (doubles the spatial size).
template <typename S>
Tensor<S> upconv_forward(const Tensor<S>& x, const S* w, const S* b, std::size_t cout);
template <typename S>
Tensor<S> upconv_backward(const Tensor<S>& x, const S* w, std::size_t cout, const Tensor<S>& dy, S* dw, S* db);

template <typename S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b);
/// Splits a gradient of concat(a, b) back into its parts; `ca` channels go to the first.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> split(const Tensor<S>& d, std::size_t ca);

}  // namespace ops

struct NetworkConfig {
  std::size_t n_scales = 3;
  std::size_t base_channels = 16;

  void validate() const;
  /// Input sides must be multiples of this.
  [[nodiscard]] std::size_t divisor() const { return std::size_t{1} << (n_scales - 1); }
  [[nodiscard]] std::size_t channels(std::size_t scale) const { return base_channels << scale; }
};

nlohmann::json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const nlohmann::json& j);

struct Layer {
  enum class Kind { conv3, upconv2, conv1 };
  Kind kind = Kind::conv3;
  std::string name;
  std::size_t cin = 0, cout = 0;
  std::size_t offset = 0;  // of the kernel in the flat parameter vector; bias follows

  [[nodiscard]] std::size_t kernel_size() const;
  [[nodiscard]] std::size_t n_params() const { return kernel_size() + cout; }
  [[nodiscard]] std::size_t bias_offset() const { return offset + kernel_size(); }
};

/// Layers in execution order: encoder convs, then per decoder scale the
/// up-conv and two convs, then the final 1x1 conv.
std::vector<Layer> layer_table(const NetworkConfig& cfg);
/// Closed-form parameter count of the architecture.
std::size_t parameter_count(const NetworkConfig& cfg);

template <typename S>
class UNet {
 public:
  UNet() = default;
  explicit UNet(const NetworkConfig& cfg);

  /// Kaiming-uniform kernels (bound sqrt(6 / fan_in)), zero biases.
  void initialize(std::uint64_t seed);

  [[nodiscard]] const NetworkConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  AlignedVector<S>& params() { return params_; }
  [[nodiscard]] const AlignedVector<S>& params() const { return params_; }

  /// Single-channel H x W in and out. Throws if a side is not a multiple of divisor().
  [[nodiscard]] Tensor<S> forward(const Tensor<S>& x) const;

  /// Mean squared error over all pixels of the batch; gradients are added to
  /// `grad` (sized like params()).
  S loss_and_gradient(const std::vector<Tensor<S>>& inputs, const std::vector<Tensor<S>>& targets,
                      AlignedVector<S>& grad) const;

  template <typename T>
  [[nodiscard]] UNet<T> cast() const {
    UNet<T> out(cfg_);
    for (std::size_t k = 0; k < params_.size(); ++k) out.params()[k] = static_cast<T>(params_[k]);
    return out;
  }

 private:
  struct Cache;
  Tensor<S> run(const Tensor<S>& x, Cache* cache) const;
  void check_input(const Tensor<S>& x) const;

  NetworkConfig cfg_;
  std::vector<Layer> layers_;
  AlignedVector<S> params_;
};

using Network = UNet<float>;

template <typename S>
S mse(const Tensor<S>& a, const Tensor<S>& b);

/// Hash of the architecture (config and layer shapes), stored with the weights.
std::string architecture_hash(const NetworkConfig& cfg);

void save_weights(const std::filesystem::path& path, const Network& net, nlohmann::json extra = nlohmann::json::object());
/// Throws if the file is not a weights container or its shapes disagree with its config.
Network load_weights(const std::filesystem::path& path);

struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t batch_size = 4;
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::size_t input_size = 128;
  std::size_t val_every = 25;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

/// Cosine annealing from lr0 to 0 over cfg.iterations.
double lr_at(std::size_t t, const TrainConfig& cfg);

/// Network input: bicubic resize to size x size, then scaled to unit maximum.
Tensor<float> prepare_input(const PixelImage& image, std::size_t size);
/// Training target: bicubic resize only.
Tensor<float> prepare_target(const PixelImage& image, std::size_t size);

struct TrainPair {
  Tensor<float> input;
  Tensor<float> target;
};

struct TrainResult {
  Network weights;  // best validation loss
  std::vector<double> loss_history;  // training batch loss per iteration
  std::vector<std::pair<std::size_t, double>> val_history;  // (iteration, validation MSE)
  std::size_t best_iteration = 0;
  double best_val = 0.0;
  double seconds = 0.0;
};

/// Adam with the cosine schedule; validation every cfg.val_every iterations
/// and after the last one. Throws on an empty split or a non-finite loss.
TrainResult train(const std::vector<TrainPair>& train_set, const std::vector<TrainPair>& val_set,
                  const NetworkConfig& net_cfg, const TrainConfig& cfg);

nlohmann::json to_json(const TrainResult& r);

/// prepare_input at `size`, forward pass, clamped at zero.
PixelImage infer(const Network& net, const PixelImage& image, std::size_t size = 256);

/// Mean squared error of the network over pairs.
double evaluate_mse(const Network& net, const std::vector<TrainPair>& pairs);

}  // namespace panp::neural
