#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskiq/image.hpp"
#include "taskiq/rng.hpp"

namespace taskiq::nn {

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;
  std::size_t size() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
};

enum class LayerKind { conv, maxpool, dense };
enum class Activation { leaky_relu, sigmoid, linear };
enum class Branch { trunk, detection, estimation };

std::string to_string(LayerKind k);
std::string to_string(Activation a);
std::string to_string(Branch b);

/// One layer of the network. Convolutions use valid padding and stride 1.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  Branch branch = Branch::trunk;
  int filters = 0;  // conv
  int kernel = 5;   // conv
  double leaky_slope = 0.01;
  int window = 2;  // maxpool
  int stride = 2;  // maxpool
  int units = 0;   // dense
  Activation activation = Activation::leaky_relu;
  Shape in;
  Shape out;

  std::size_t n_weights() const;
  std::size_t n_biases() const;
  std::size_t n_params() const { return n_weights() + n_biases(); }
};

/// Shared conv block, then a detection head (pool + sigmoid unit) and an estimation
/// branch (conv block + pool + linear units).
struct Architecture {
  int input_width = 16;
  int input_height = 16;
  int filters = 16;
  int kernel = 5;
  int shared_layers = 1;
  int estimation_layers = 1;
  int theta_dim = 1;
  double leaky_slope = 0.01;

  void validate() const;
  /// Layer list in evaluation order: trunk, detection head, estimation branch.
  std::vector<LayerSpec> layers() const;
  bool operator==(const Architecture&) const = default;
};

class ShapeMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Activations laid out [C][H][W][N]; the batch index is innermost so every inner
/// loop runs over contiguous memory.
template <class T>
struct Tensor {
  Shape shape;
  int n = 0;
  std::vector<T> data;

  void resize(Shape s, int batch) {
    shape = s;
    n = batch;
    data.assign(s.size() * static_cast<std::size_t>(batch), T(0));
  }
  T& at(int c, int y, int x, int b) {
    return data[((static_cast<std::size_t>(c) * shape.h + y) * shape.w + x) * n + b];
  }
  T at(int c, int y, int x, int b) const {
    return data[((static_cast<std::size_t>(c) * shape.h + y) * shape.w + x) * n + b];
  }
};

/// Per-call scratch: cached activations and pooling switches. One per worker.
template <class T>
struct Workspace {
  std::vector<Tensor<T>> act;            // act[0] = input, act[i+1] = output of layer i
  std::vector<std::vector<int>> argmax;  // per layer, maxpool only
  std::vector<Tensor<T>> grad;           // gradient w.r.t. act[i]
  bool has_detection = false;
  bool has_estimation = false;
};

/// Which parameters a loss reaches. Offsets are into the flat parameter vector:
/// [detection head | trunk | estimation branch].
struct ParamRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

template <class T>
class MultiTaskNet {
 public:
  MultiTaskNet() = default;
  explicit MultiTaskNet(const Architecture& arch);

  const Architecture& architecture() const { return arch_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t n_params() const { return params_.size(); }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }

  ParamRange detection_range() const { return {0, trunk_begin_}; }
  ParamRange trunk_range() const { return {trunk_begin_, estimation_begin_}; }
  ParamRange estimation_range() const { return {estimation_begin_, params_.size()}; }
  /// Parameters updated by the detection step (trunk + detection head).
  ParamRange detection_path() const { return {0, estimation_begin_}; }
  /// Parameters updated by the estimation step (trunk + estimation branch).
  ParamRange estimation_path() const { return {trunk_begin_, params_.size()}; }

  /// He-style fan-in Gaussian init for conv layers, 1/sqrt(fan_in) for dense heads, zero biases.
  void initialize(Rng& rng);

  // Fixed affine maps around the learned layers: x_in = (g - in_offset) * in_scale,
  // theta_hat = raw * out_scale + out_offset.
  T in_offset = T(0);
  T in_scale = T(1);
  std::vector<T> out_offset;
  std::vector<T> out_scale;

  /// Copies images into the input tensor of `ws` with the input map applied.
  void load_batch(std::span<const Image* const> images, Workspace<T>& ws) const;
  void load_batch(std::span<const Image> images, Workspace<T>& ws) const;

  /// Runs the trunk and the requested heads on the batch in ws.act[0].
  void forward(Workspace<T>& ws, bool detection = true, bool estimation = true) const;

  /// Posterior p(H1|g) per batch member (requires a detection forward).
  std::vector<T> detection_output(const Workspace<T>& ws) const;
  /// Logit of the detection unit per batch member.
  std::vector<T> detection_logit(const Workspace<T>& ws) const;
  /// Estimate, n x theta_dim row-major, output map applied.
  std::vector<T> estimation_output(const Workspace<T>& ws) const;

  /// Back-propagates d loss / d logit (size n) through the detection path, accumulating
  /// into `grad` (same size as params).
  void backward_detection(Workspace<T>& ws, std::span<const T> dlogit, std::span<T> grad) const;
  /// Back-propagates d loss / d theta_hat (n x theta_dim, post output map) through the
  /// estimation path. With `into_trunk` false the trunk gradient is left untouched.
  void backward_estimation(Workspace<T>& ws, std::span<const T> dtheta, std::span<T> grad,
                           bool into_trunk = true) const;

  /// Hash of every leaky-ReLU sign and pooling switch in the last forward pass.
  std::uint64_t activation_pattern(const Workspace<T>& ws) const;

  struct Prediction {
    double posterior = 0.5;
    std::vector<double> estimate;
  };
  std::vector<Prediction> predict(std::span<const Image* const> images, int batch = 64) const;
  Prediction predict(const Image& image) const;

  template <class U>
  MultiTaskNet<U> cast() const {
    MultiTaskNet<U> out(arch_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    out.in_offset = static_cast<U>(in_offset);
    out.in_scale = static_cast<U>(in_scale);
    out.out_offset.assign(out_offset.begin(), out_offset.end());
    out.out_scale.assign(out_scale.begin(), out_scale.end());
    return out;
  }

 private:
  void forward_layer(std::size_t i, const Tensor<T>& in, Tensor<T>& out, std::vector<int>& argmax) const;
  void backward_layer(std::size_t i, const Tensor<T>& in, const Tensor<T>& out, const std::vector<int>& argmax,
                      const Tensor<T>& dout, Tensor<T>* din, std::span<T> grad) const;
  void ensure_workspace(Workspace<T>& ws) const;

  Architecture arch_;
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offset_;    // first parameter of each layer
  std::vector<std::size_t> input_of_;  // act index feeding each layer
  std::vector<T> params_;
  std::size_t trunk_begin_ = 0;
  std::size_t estimation_begin_ = 0;
  // layer index ranges
  std::size_t n_trunk_ = 0;
  std::size_t det_first_ = 0;
  std::size_t det_last_ = 0;
  std::size_t est_first_ = 0;
};

extern template class MultiTaskNet<float>;
extern template class MultiTaskNet<double>;

}  // namespace taskiq::nn
