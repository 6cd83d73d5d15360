#include "taskiq/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace taskiq::nn {

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "?";
}

std::string to_string(Branch b) {
  switch (b) {
    case Branch::trunk: return "shared";
    case Branch::detection: return "detection";
    case Branch::estimation: return "estimation";
  }
  return "?";
}

std::size_t LayerSpec::n_weights() const {
  switch (kind) {
    case LayerKind::conv: return static_cast<std::size_t>(filters) * in.c * kernel * kernel;
    case LayerKind::dense: return static_cast<std::size_t>(units) * in.size();
    case LayerKind::maxpool: return 0;
  }
  return 0;
}

std::size_t LayerSpec::n_biases() const {
  switch (kind) {
    case LayerKind::conv: return static_cast<std::size_t>(filters);
    case LayerKind::dense: return static_cast<std::size_t>(units);
    case LayerKind::maxpool: return 0;
  }
  return 0;
}

namespace {

LayerSpec conv_layer(Branch br, Shape in, int filters, int kernel, double slope) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.branch = br;
  l.filters = filters;
  l.kernel = kernel;
  l.leaky_slope = slope;
  l.in = in;
  l.out = {filters, in.h - kernel + 1, in.w - kernel + 1};
  return l;
}

LayerSpec pool_layer(Branch br, Shape in) {
  LayerSpec l;
  l.kind = LayerKind::maxpool;
  l.branch = br;
  l.in = in;
  l.out = {in.c, (in.h - l.window) / l.stride + 1, (in.w - l.window) / l.stride + 1};
  if (in.h < l.window || in.w < l.window) l.out = {in.c, 0, 0};
  return l;
}

LayerSpec dense_layer(Branch br, Shape in, int units, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.branch = br;
  l.units = units;
  l.activation = act;
  l.in = in;
  l.out = {units, 1, 1};
  return l;
}

}  // namespace

void Architecture::validate() const {
  if (input_width <= 0 || input_height <= 0) throw ShapeMismatch("architecture: input size must be positive");
  if (filters <= 0 || kernel <= 0) throw ShapeMismatch("architecture: filters and kernel must be positive");
  if (shared_layers < 1 || estimation_layers < 1)
    throw ShapeMismatch("architecture: each conv block needs at least one layer");
  if (theta_dim < 1) throw ShapeMismatch("architecture: estimate dimension must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ShapeMismatch("architecture: leaky slope must be in [0,1)");
  const int shrink = (kernel - 1) * (shared_layers + estimation_layers);
  if (input_width - shrink < 2 || input_height - shrink < 2) {
    throw ShapeMismatch("architecture: " + std::to_string(shared_layers + estimation_layers) + " conv layers of size " +
                        std::to_string(kernel) + " do not fit a " + std::to_string(input_width) + "x" +
                        std::to_string(input_height) + " input");
  }
}

std::vector<LayerSpec> Architecture::layers() const {
  validate();
  std::vector<LayerSpec> out;
  Shape s{1, input_height, input_width};
  for (int i = 0; i < shared_layers; ++i) {
    out.push_back(conv_layer(Branch::trunk, s, filters, kernel, leaky_slope));
    s = out.back().out;
  }
  const Shape trunk_out = s;
  out.push_back(pool_layer(Branch::detection, trunk_out));
  out.push_back(dense_layer(Branch::detection, out.back().out, 1, Activation::sigmoid));
  s = trunk_out;
  for (int i = 0; i < estimation_layers; ++i) {
    out.push_back(conv_layer(Branch::estimation, s, filters, kernel, leaky_slope));
    s = out.back().out;
  }
  out.push_back(pool_layer(Branch::estimation, s));
  out.push_back(dense_layer(Branch::estimation, out.back().out, theta_dim, Activation::linear));
  return out;
}

template <class T>
MultiTaskNet<T>::MultiTaskNet(const Architecture& arch) : arch_(arch), layers_(arch.layers()) {
  n_trunk_ = static_cast<std::size_t>(arch.shared_layers);
  det_first_ = n_trunk_;
  det_last_ = n_trunk_ + 1;
  est_first_ = n_trunk_ + 2;
  input_of_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) input_of_[i] = i;
  input_of_[det_first_] = n_trunk_;
  input_of_[est_first_] = n_trunk_;

  offset_.assign(layers_.size(), 0);
  std::size_t pos = 0;
  for (std::size_t i = det_first_; i <= det_last_; ++i) {
    offset_[i] = pos;
    pos += layers_[i].n_params();
  }
  trunk_begin_ = pos;
  for (std::size_t i = 0; i < n_trunk_; ++i) {
    offset_[i] = pos;
    pos += layers_[i].n_params();
  }
  estimation_begin_ = pos;
  for (std::size_t i = est_first_; i < layers_.size(); ++i) {
    offset_[i] = pos;
    pos += layers_[i].n_params();
  }
  params_.assign(pos, T(0));
  out_offset.assign(static_cast<std::size_t>(arch.theta_dim), T(0));
  out_scale.assign(static_cast<std::size_t>(arch.theta_dim), T(1));
}

template <class T>
void MultiTaskNet<T>::initialize(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    if (l.kind == LayerKind::maxpool) continue;
    const double fan_in = l.kind == LayerKind::conv ? static_cast<double>(l.in.c * l.kernel * l.kernel)
                                                    : static_cast<double>(l.in.size());
    const double sd = l.kind == LayerKind::conv ? std::sqrt(2.0 / fan_in) : std::sqrt(1.0 / fan_in);
    T* w = params_.data() + offset_[i];
    for (std::size_t k = 0; k < l.n_weights(); ++k) w[k] = static_cast<T>(rng.normal(0.0, sd));
    std::fill(w + l.n_weights(), w + l.n_params(), T(0));
  }
}

template <class T>
void MultiTaskNet<T>::ensure_workspace(Workspace<T>& ws) const {
  if (ws.act.size() != layers_.size() + 1) {
    ws.act.resize(layers_.size() + 1);
    ws.grad.resize(layers_.size() + 1);
    ws.argmax.resize(layers_.size());
  }
}

template <class T>
void MultiTaskNet<T>::load_batch(std::span<const Image* const> images, Workspace<T>& ws) const {
  ensure_workspace(ws);
  const int n = static_cast<int>(images.size());
  Tensor<T>& in = ws.act[0];
  in.resize({1, arch_.input_height, arch_.input_width}, n);
  for (int b = 0; b < n; ++b) {
    const Image& g = *images[static_cast<std::size_t>(b)];
    if (g.width != arch_.input_width || g.height != arch_.input_height) {
      throw ShapeMismatch("network input is " + std::to_string(arch_.input_width) + "x" +
                          std::to_string(arch_.input_height) + ", image is " + std::to_string(g.width) + "x" +
                          std::to_string(g.height));
    }
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) in.at(0, y, x, b) = static_cast<T>((g(x, y) - in_offset) * in_scale);
    }
  }
  ws.has_detection = ws.has_estimation = false;
}

template <class T>
void MultiTaskNet<T>::load_batch(std::span<const Image> images, Workspace<T>& ws) const {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const Image& im : images) ptrs.push_back(&im);
  load_batch(std::span<const Image* const>(ptrs), ws);
}

template <class T>
void MultiTaskNet<T>::forward_layer(std::size_t i, const Tensor<T>& in, Tensor<T>& out,
                                    std::vector<int>& argmax) const {
  const LayerSpec& l = layers_[i];
  const int n = in.n;
  out.resize(l.out, n);
  const T* p = params_.data() + offset_[i];
  switch (l.kind) {
    case LayerKind::conv: {
      const int k = l.kernel;
      const int cin = l.in.c;
      const int oh = l.out.h;
      const int ow = l.out.w;
      const std::size_t row = static_cast<std::size_t>(ow) * n;
      const std::size_t in_row = static_cast<std::size_t>(l.in.w) * n;
      const std::size_t in_plane = static_cast<std::size_t>(l.in.h) * in_row;
      const std::size_t out_plane = static_cast<std::size_t>(oh) * row;
      const T* bias = p + l.n_weights();
      for (int f = 0; f < l.filters; ++f) {
        T* o = out.data.data() + f * out_plane;
        std::fill(o, o + out_plane, bias[f]);
        for (int c = 0; c < cin; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const T w = p[((static_cast<std::size_t>(f) * cin + c) * k + ky) * k + kx];
              for (int y = 0; y < oh; ++y) {
                T* orow = o + y * row;
                const T* irow = in.data.data() + c * in_plane + (y + ky) * in_row + static_cast<std::size_t>(kx) * n;
#pragma omp simd
                for (std::size_t j = 0; j < row; ++j) orow[j] += w * irow[j];
              }
            }
          }
        }
      }
      const T slope = static_cast<T>(l.leaky_slope);
      T* d = out.data.data();
#pragma omp simd
      for (std::size_t j = 0; j < out.data.size(); ++j) d[j] = d[j] > T(0) ? d[j] : d[j] * slope;
      break;
    }
    case LayerKind::maxpool: {
      argmax.assign(out.data.size(), 0);
      for (int c = 0; c < l.out.c; ++c) {
        for (int oy = 0; oy < l.out.h; ++oy) {
          for (int ox = 0; ox < l.out.w; ++ox) {
            for (int b = 0; b < n; ++b) {
              T best = -std::numeric_limits<T>::infinity();
              int best_idx = -1;
              for (int dy = 0; dy < l.window; ++dy) {
                for (int dx = 0; dx < l.window; ++dx) {
                  const int idx = static_cast<int>(
                      ((static_cast<std::size_t>(c) * l.in.h + oy * l.stride + dy) * l.in.w + ox * l.stride + dx) * n + b);
                  // first maximum wins, so ties route to a single input
                  if (in.data[static_cast<std::size_t>(idx)] > best || best_idx < 0) {
                    best = in.data[static_cast<std::size_t>(idx)];
                    best_idx = idx;
                  }
                }
              }
              const std::size_t o = ((static_cast<std::size_t>(c) * l.out.h + oy) * l.out.w + ox) * n + b;
              out.data[o] = best;
              argmax[o] = best_idx;
            }
          }
        }
      }
      break;
    }
    case LayerKind::dense: {
      const std::size_t fin = l.in.size();
      const T* bias = p + l.n_weights();
      for (int u = 0; u < l.units; ++u) {
        T* o = out.data.data() + static_cast<std::size_t>(u) * n;
        std::fill(o, o + n, bias[u]);
        const T* wrow = p + static_cast<std::size_t>(u) * fin;
        for (std::size_t f = 0; f < fin; ++f) {
          const T w = wrow[f];
          const T* irow = in.data.data() + f * n;
#pragma omp simd
          for (int b = 0; b < n; ++b) o[b] += w * irow[b];
        }
      }
      break;
    }
  }
}

template <class T>
void MultiTaskNet<T>::forward(Workspace<T>& ws, bool detection, bool estimation) const {
  ensure_workspace(ws);
  if (ws.act[0].n <= 0) throw ShapeMismatch("forward: empty batch");
  for (std::size_t i = 0; i < n_trunk_; ++i) forward_layer(i, ws.act[input_of_[i]], ws.act[i + 1], ws.argmax[i]);
  if (detection) {
    for (std::size_t i = det_first_; i <= det_last_; ++i)
      forward_layer(i, ws.act[input_of_[i]], ws.act[i + 1], ws.argmax[i]);
  }
  if (estimation) {
    for (std::size_t i = est_first_; i < layers_.size(); ++i)
      forward_layer(i, ws.act[input_of_[i]], ws.act[i + 1], ws.argmax[i]);
  }
  ws.has_detection = detection;
  ws.has_estimation = estimation;
}

template <class T>
std::vector<T> MultiTaskNet<T>::detection_logit(const Workspace<T>& ws) const {
  if (!ws.has_detection) throw std::logic_error("detection output requested without a detection forward pass");
  return ws.act[det_last_ + 1].data;
}

template <class T>
std::vector<T> MultiTaskNet<T>::detection_output(const Workspace<T>& ws) const {
  std::vector<T> z = detection_logit(ws);
  for (T& v : z) v = T(1) / (T(1) + std::exp(-v));
  return z;
}

template <class T>
std::vector<T> MultiTaskNet<T>::estimation_output(const Workspace<T>& ws) const {
  if (!ws.has_estimation) throw std::logic_error("estimate requested without an estimation forward pass");
  const Tensor<T>& z = ws.act.back();
  const int d = arch_.theta_dim;
  std::vector<T> out(static_cast<std::size_t>(z.n) * d);
  for (int b = 0; b < z.n; ++b) {
    for (int u = 0; u < d; ++u)
      out[static_cast<std::size_t>(b) * d + u] =
          z.data[static_cast<std::size_t>(u) * z.n + b] * out_scale[u] + out_offset[u];
  }
  return out;
}

template <class T>
void MultiTaskNet<T>::backward_layer(std::size_t i, const Tensor<T>& in, const Tensor<T>& out,
                                     const std::vector<int>& argmax, const Tensor<T>& dout, Tensor<T>* din,
                                     std::span<T> grad) const {
  const LayerSpec& l = layers_[i];
  const int n = in.n;
  const T* p = params_.data() + offset_[i];
  T* g = grad.data() + offset_[i];
  if (din) din->resize(l.in, n);
  switch (l.kind) {
    case LayerKind::conv: {
      const int k = l.kernel;
      const int cin = l.in.c;
      const int oh = l.out.h;
      const std::size_t row = static_cast<std::size_t>(l.out.w) * n;
      const std::size_t in_row = static_cast<std::size_t>(l.in.w) * n;
      const std::size_t in_plane = static_cast<std::size_t>(l.in.h) * in_row;
      const std::size_t out_plane = static_cast<std::size_t>(oh) * row;
      const T slope = static_cast<T>(l.leaky_slope);
      std::vector<T> dz(dout.data.size());
      for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = out.data[j] > T(0) ? dout.data[j] : dout.data[j] * slope;
      T* gb = g + l.n_weights();
      for (int f = 0; f < l.filters; ++f) {
        const T* dzf = dz.data() + f * out_plane;
        T sb = 0;
#pragma omp simd reduction(+ : sb)
        for (std::size_t j = 0; j < out_plane; ++j) sb += dzf[j];
        gb[f] += sb;
        for (int c = 0; c < cin; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const std::size_t widx = ((static_cast<std::size_t>(f) * cin + c) * k + ky) * k + kx;
              const T w = p[widx];
              T acc = 0;
              for (int y = 0; y < oh; ++y) {
                const T* drow = dzf + y * row;
                const std::size_t ioff = c * in_plane + (y + ky) * in_row + static_cast<std::size_t>(kx) * n;
                const T* irow = in.data.data() + ioff;
#pragma omp simd reduction(+ : acc)
                for (std::size_t j = 0; j < row; ++j) acc += drow[j] * irow[j];
                if (din) {
                  T* dirow = din->data.data() + ioff;
#pragma omp simd
                  for (std::size_t j = 0; j < row; ++j) dirow[j] += w * drow[j];
                }
              }
              g[widx] += acc;
            }
          }
        }
      }
      break;
    }
    case LayerKind::maxpool: {
      if (din) {
        for (std::size_t o = 0; o < dout.data.size(); ++o) din->data[static_cast<std::size_t>(argmax[o])] += dout.data[o];
      }
      break;
    }
    case LayerKind::dense: {
      const std::size_t fin = l.in.size();
      T* gb = g + l.n_weights();
      for (int u = 0; u < l.units; ++u) {
        const T* d = dout.data.data() + static_cast<std::size_t>(u) * n;
        T sb = 0;
#pragma omp simd reduction(+ : sb)
        for (int b = 0; b < n; ++b) sb += d[b];
        gb[u] += sb;
        const T* wrow = p + static_cast<std::size_t>(u) * fin;
        T* grow = g + static_cast<std::size_t>(u) * fin;
        for (std::size_t f = 0; f < fin; ++f) {
          const T* irow = in.data.data() + f * n;
          T acc = 0;
#pragma omp simd reduction(+ : acc)
          for (int b = 0; b < n; ++b) acc += d[b] * irow[b];
          grow[f] += acc;
          if (din) {
            T* dirow = din->data.data() + f * n;
            const T w = wrow[f];
#pragma omp simd
            for (int b = 0; b < n; ++b) dirow[b] += w * d[b];
          }
        }
      }
      break;
    }
  }
}

template <class T>
void MultiTaskNet<T>::backward_detection(Workspace<T>& ws, std::span<const T> dlogit, std::span<T> grad) const {
  if (!ws.has_detection) throw std::logic_error("backward_detection without a detection forward pass");
  if (grad.size() != params_.size()) throw ShapeMismatch("backward: gradient buffer size");
  const int n = ws.act[0].n;
  if (dlogit.size() != static_cast<std::size_t>(n)) throw ShapeMismatch("backward: dlogit size");
  Tensor<T>& top = ws.grad[det_last_ + 1];
  top.resize(layers_[det_last_].out, n);
  std::copy(dlogit.begin(), dlogit.end(), top.data.begin());
  backward_layer(det_last_, ws.act[det_last_], ws.act[det_last_ + 1], ws.argmax[det_last_], top,
                 &ws.grad[det_first_ + 1], grad);
  backward_layer(det_first_, ws.act[n_trunk_], ws.act[det_first_ + 1], ws.argmax[det_first_],
                 ws.grad[det_first_ + 1], &ws.grad[n_trunk_], grad);
  for (std::size_t i = n_trunk_; i-- > 0;) {
    backward_layer(i, ws.act[i], ws.act[i + 1], ws.argmax[i], ws.grad[i + 1], i > 0 ? &ws.grad[i] : nullptr, grad);
  }
}

template <class T>
void MultiTaskNet<T>::backward_estimation(Workspace<T>& ws, std::span<const T> dtheta, std::span<T> grad,
                                          bool into_trunk) const {
  if (!ws.has_estimation) throw std::logic_error("backward_estimation without an estimation forward pass");
  if (grad.size() != params_.size()) throw ShapeMismatch("backward: gradient buffer size");
  const int n = ws.act[0].n;
  const int d = arch_.theta_dim;
  if (dtheta.size() != static_cast<std::size_t>(n) * d) throw ShapeMismatch("backward: dtheta size");
  const std::size_t last = layers_.size() - 1;
  Tensor<T>& top = ws.grad[last + 1];
  top.resize(layers_[last].out, n);
  for (int b = 0; b < n; ++b) {
    for (int u = 0; u < d; ++u)
      top.data[static_cast<std::size_t>(u) * n + b] = dtheta[static_cast<std::size_t>(b) * d + u] * out_scale[u];
  }
  for (std::size_t i = last; i >= est_first_; --i) {
    const std::size_t src = input_of_[i];
    Tensor<T>* din = (i == est_first_ && !into_trunk) ? nullptr : &ws.grad[src];
    backward_layer(i, ws.act[src], ws.act[i + 1], ws.argmax[i], ws.grad[i + 1], din, grad);
    if (i == est_first_) break;
  }
  if (!into_trunk) return;
  for (std::size_t i = n_trunk_; i-- > 0;) {
    backward_layer(i, ws.act[i], ws.act[i + 1], ws.argmax[i], ws.grad[i + 1], i > 0 ? &ws.grad[i] : nullptr, grad);
  }
}

template <class T>
std::uint64_t MultiTaskNet<T>::activation_pattern(const Workspace<T>& ws) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool ran = i < n_trunk_ || (i >= det_first_ && i <= det_last_ && ws.has_detection) ||
                     (i >= est_first_ && ws.has_estimation);
    if (!ran) continue;
    if (layers_[i].kind == LayerKind::conv) {
      for (T v : ws.act[i + 1].data) mix(v > T(0) ? 1u : 0u);
    } else if (layers_[i].kind == LayerKind::maxpool) {
      for (int a : ws.argmax[i]) mix(static_cast<std::uint64_t>(a));
    }
  }
  return h;
}

template <class T>
std::vector<typename MultiTaskNet<T>::Prediction> MultiTaskNet<T>::predict(std::span<const Image* const> images,
                                                                          int batch) const {
  std::vector<Prediction> out;
  out.reserve(images.size());
  Workspace<T> ws;
  const std::size_t step = static_cast<std::size_t>(std::max(1, batch));
  for (std::size_t start = 0; start < images.size(); start += step) {
    const std::size_t count = std::min(step, images.size() - start);
    load_batch(images.subspan(start, count), ws);
    forward(ws);
    const auto p = detection_output(ws);
    const auto est = estimation_output(ws);
    const int d = arch_.theta_dim;
    for (std::size_t b = 0; b < count; ++b) {
      Prediction pr;
      pr.posterior = static_cast<double>(p[b]);
      pr.estimate.assign(est.begin() + static_cast<std::ptrdiff_t>(b * d),
                         est.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
      out.push_back(std::move(pr));
    }
  }
  return out;
}

template <class T>
typename MultiTaskNet<T>::Prediction MultiTaskNet<T>::predict(const Image& image) const {
  const Image* p = &image;
  return predict(std::span<const Image* const>(&p, 1)).front();
}

template class MultiTaskNet<float>;
template class MultiTaskNet<double>;

}  // namespace taskiq::nn
