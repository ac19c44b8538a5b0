#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ganforge/conv.hpp"
#include "ganforge/ops.hpp"
#include "ganforge/rng.hpp"

namespace ganforge {

enum class InitScheme {
  Normal002,  // N(0, 0.02)
  HeNormal,   // N(0, 2 / fan_in)
  UnitNormal, // N(0, 1), rescaled at runtime by equalized layers
  Zeros,
  Ones,
};

inline const char* to_string(InitScheme s) {
  switch (s) {
    case InitScheme::Normal002: return "normal_0.02";
    case InitScheme::HeNormal: return "he_normal";
    case InitScheme::UnitNormal: return "unit_normal";
    case InitScheme::Zeros: return "zeros";
    case InitScheme::Ones: return "ones";
  }
  return "?";
}

/// Named tensors of one network, in declaration order. Trainable entries are
/// autograd leaves; buffers (batch-norm running statistics) are not.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
    InitScheme init;
    bool trainable;
  };

  /// Adds `name` unless it already exists with the same shape.
  Var<T>& ensure(const std::string& name, const Shape& shape, InitScheme init, bool trainable, Rng& rng,
                 double fan_in = 1.0) {
    if (auto it = index_.find(name); it != index_.end()) {
      auto& e = entries_[it->second];
      if (e.var.shape() != shape) {
        throw Error("parameter " + name + " already declared with shape " + to_string(e.var.shape()) +
                    ", requested " + to_string(shape));
      }
      return e.var;
    }
    Tensor<T> value(shape);
    switch (init) {
      case InitScheme::Normal002: value = rng.normal_tensor<T>(shape, 0.02); break;
      case InitScheme::HeNormal: value = rng.normal_tensor<T>(shape, std::sqrt(2.0 / fan_in)); break;
      case InitScheme::UnitNormal: value = rng.normal_tensor<T>(shape, 1.0); break;
      case InitScheme::Zeros: break;
      case InitScheme::Ones: value = Tensor<T>(shape, T{1}); break;
    }
    return insert(name, std::move(value), init, trainable);
  }

  Var<T>& insert(const std::string& name, Tensor<T> value, InitScheme init, bool trainable) {
    if (index_.count(name)) throw Error("duplicate parameter name " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, Var<T>(std::move(value), trainable), init, trainable});
    return entries_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Var<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter " + name);
    return entries_[it->second].var;
  }
  const Var<T>& at(const std::string& name) const { return const_cast<ParameterStore*>(this)->at(name); }

  /// Overwrites the value of an existing entry; the shape must not change.
  void assign(const std::string& name, Tensor<T> value) {
    auto& var = at(name);
    if (var.shape() != value.shape()) {
      throw Error("parameter " + name + " has shape " + to_string(var.shape()) + ", got " +
                  to_string(value.shape()));
    }
    var.mutable_value() = std::move(value);
  }

  /// Replaces the handle stored under `name` (same shape), so a forward pass
  /// reads an externally owned variable.
  void bind(const std::string& name, Var<T> var) {
    auto& slot = at(name);
    if (slot.shape() != var.shape()) {
      throw Error("parameter " + name + " has shape " + to_string(slot.shape()) + ", cannot bind " +
                  to_string(var.shape()));
    }
    slot = std::move(var);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t count_trainable() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.trainable ? e.var.value().size() : 0;
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

enum class LayerKind {
  Conv,
  ConvTranspose,
  Dense,
  BatchNorm,
  LeakyReLU,
  ReLU,
  Tanh,
  Sigmoid,
  PixelNorm,
  MinibatchStdDev,
  SubPixelUpsample,
  ResidualBlock,
  Reshape,
  Flatten,
  Upsample,
  Downsample,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "Conv";
    case LayerKind::ConvTranspose: return "ConvTranspose";
    case LayerKind::Dense: return "Dense";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::LeakyReLU: return "LeakyReLU";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Tanh: return "Tanh";
    case LayerKind::Sigmoid: return "Sigmoid";
    case LayerKind::PixelNorm: return "PixelNorm";
    case LayerKind::MinibatchStdDev: return "MinibatchStdDev";
    case LayerKind::SubPixelUpsample: return "SubPixelUpsample";
    case LayerKind::ResidualBlock: return "ResidualBlock";
    case LayerKind::Reshape: return "Reshape";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Upsample: return "Upsample";
    case LayerKind::Downsample: return "Downsample";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::string name;
  std::int64_t kernel = 0;
  std::int64_t stride = 1;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  bool equalized = false;
  double slope = 0.2;
  std::int64_t factor = 2;
  Shape target_shape;            // Reshape: per-example shape
  std::vector<LayerSpec> body;   // ResidualBlock
};

namespace layers {

inline LayerSpec conv(std::string name, std::int64_t in, std::int64_t out, std::int64_t kernel,
                      std::int64_t stride = 1, bool equalized = false) {
  LayerSpec l;
  l.kind = LayerKind::Conv, l.name = std::move(name), l.in_channels = in, l.out_channels = out;
  l.kernel = kernel, l.stride = stride, l.equalized = equalized;
  return l;
}
inline LayerSpec conv_transpose(std::string name, std::int64_t in, std::int64_t out, std::int64_t kernel,
                                std::int64_t stride) {
  LayerSpec l = conv(std::move(name), in, out, kernel, stride);
  l.kind = LayerKind::ConvTranspose;
  return l;
}
inline LayerSpec dense(std::string name, std::int64_t in, std::int64_t out, bool equalized = false) {
  LayerSpec l;
  l.kind = LayerKind::Dense, l.name = std::move(name), l.in_channels = in, l.out_channels = out;
  l.equalized = equalized;
  return l;
}
inline LayerSpec batch_norm(std::string name, std::int64_t channels) {
  LayerSpec l;
  l.kind = LayerKind::BatchNorm, l.name = std::move(name), l.in_channels = l.out_channels = channels;
  return l;
}
inline LayerSpec simple(LayerKind kind, std::string name = {}) {
  LayerSpec l;
  l.kind = kind, l.name = std::move(name);
  return l;
}
inline LayerSpec leaky_relu(double slope = 0.2) {
  LayerSpec l = simple(LayerKind::LeakyReLU);
  l.slope = slope;
  return l;
}
inline LayerSpec reshape(Shape per_example) {
  LayerSpec l = simple(LayerKind::Reshape);
  l.target_shape = std::move(per_example);
  return l;
}
inline LayerSpec sub_pixel(std::int64_t factor) {
  LayerSpec l = simple(LayerKind::SubPixelUpsample);
  l.factor = factor;
  return l;
}
inline LayerSpec resample(LayerKind kind, std::int64_t factor = 2) {
  LayerSpec l = simple(kind);
  l.factor = factor;
  return l;
}
inline LayerSpec residual(std::string name, std::vector<LayerSpec> body) {
  LayerSpec l = simple(LayerKind::ResidualBlock, std::move(name));
  l.body = std::move(body);
  return l;
}

}  // namespace layers

inline bool has_weight(const LayerSpec& l) {
  return l.kind == LayerKind::Conv || l.kind == LayerKind::ConvTranspose || l.kind == LayerKind::Dense;
}

inline double fan_in(const LayerSpec& l) {
  if (l.kind == LayerKind::Dense) return static_cast<double>(l.in_channels);
  return static_cast<double>(l.in_channels * l.kernel * l.kernel);
}

inline Shape weight_shape(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv: return {l.out_channels, l.in_channels, l.kernel, l.kernel};
    case LayerKind::ConvTranspose: return {l.in_channels, l.out_channels, l.kernel, l.kernel};
    case LayerKind::Dense: return {l.out_channels, l.in_channels};
    default: throw Error("layer " + l.name + " has no weight");
  }
}

inline void validate(const LayerSpec& l) {
  if (l.kind == LayerKind::Conv || l.kind == LayerKind::ConvTranspose) {
    if (l.kernel != 1 && l.kernel != 3 && l.kernel != 5) {
      throw Error("layer " + l.name + ": kernel " + std::to_string(l.kernel) + " not in {1, 3, 5}");
    }
    if (l.stride != 1 && l.stride != 2) {
      throw Error("layer " + l.name + ": stride " + std::to_string(l.stride) + " not in {1, 2}");
    }
  }
  if (has_weight(l) && (l.in_channels <= 0 || l.out_channels <= 0)) {
    throw Error("layer " + l.name + ": channel counts must be positive");
  }
  for (const auto& b : l.body) validate(b);
}

/// Creates the parameters of `layer` (recursively) that are not yet in
/// `store`. Equalized layers always store unit-normal weights.
template <class T>
void declare_parameters(const LayerSpec& layer, ParameterStore<T>& store, InitScheme weight_init, Rng& rng) {
  validate(layer);
  if (has_weight(layer)) {
    InitScheme init = layer.equalized ? InitScheme::UnitNormal : weight_init;
    store.ensure(layer.name + ".weight", weight_shape(layer), init, true, rng, fan_in(layer));
    store.ensure(layer.name + ".bias", Shape{layer.out_channels}, InitScheme::Zeros, true, rng);
  } else if (layer.kind == LayerKind::BatchNorm) {
    store.ensure(layer.name + ".gamma", Shape{layer.in_channels}, InitScheme::Ones, true, rng);
    store.ensure(layer.name + ".beta", Shape{layer.in_channels}, InitScheme::Zeros, true, rng);
    store.ensure(layer.name + ".running_mean", Shape{layer.in_channels}, InitScheme::Zeros, false, rng);
    store.ensure(layer.name + ".running_var", Shape{layer.in_channels}, InitScheme::Ones, false, rng);
  }
  for (const auto& b : layer.body) declare_parameters(b, store, weight_init, rng);
}

/// Weight as used by the forward pass: stored weight times sqrt(2 / fan_in)
/// for equalized layers, the stored weight otherwise. Recomputed on every
/// call, so optimizers always act on the unit-scale stored values.
template <class T>
Var<T> equalized_scale(const ParameterStore<T>& params, const LayerSpec& layer) {
  const Var<T>& w = params.at(layer.name + ".weight");
  if (!layer.equalized) return w;
  return scale(w, static_cast<T>(std::sqrt(2.0 / fan_in(layer))));
}

/// Divides each pixel's channel vector by its root-mean-square.
template <class T>
Var<T> pixel_norm(const Var<T>& x, T epsilon = T{1e-8}) {
  if (x.value().rank() < 2 || x.value().dim(1) < 1) {
    throw Error("pixel_norm: needs at least one channel, got " + to_string(x.shape()));
  }
  Var<T> ms = reduce_mean(square(x), {1});
  return div(x, broadcast_to(sqrt(add_scalar(ms, epsilon)), x.shape()));
}

/// Appends one channel holding the batch-averaged population standard
/// deviation of every (channel, pixel) position.
template <class T>
Var<T> minibatch_stddev(const Var<T>& x) {
  if (x.value().rank() != 4) throw Error("minibatch_stddev: needs NCHW input, got " + to_string(x.shape()));
  if (x.value().dim(0) < 2) throw Error("minibatch_stddev: batch size must be >= 2, got 1");
  Var<T> mu = reduce_mean(x, {0});
  Var<T> centered = sub(x, broadcast_to(mu, x.shape()));
  Var<T> stddev = sqrt(reduce_mean(square(centered), {0}));
  Var<T> stat = reduce_mean(stddev, {1, 2, 3});
  const auto& s = x.shape();
  return concat_channels(x, broadcast_to(stat, Shape{s[0], 1, s[2], s[3]}));
}

enum class Mode { Train, Eval };

template <class T>
struct ForwardContext {
  Mode mode = Mode::Train;
  T bn_momentum = T{0.1};
  T bn_epsilon = T{1e-5};
  /// When set, receives (layer name or kind, output shape) for every layer.
  std::vector<std::pair<std::string, Shape>>* trace = nullptr;
};

/// Batch normalisation over all axes but the channel axis. In training mode
/// batch statistics are used and the running statistics are updated.
template <class T>
Var<T> batch_norm(const Var<T>& x, ParameterStore<T>& params, const std::string& name, const ForwardContext<T>& ctx) {
  const Tensor<T>& xv = x.value();
  const std::int64_t c = xv.dim(1);
  Shape stat_shape(static_cast<std::size_t>(xv.rank()), 1);
  stat_shape[1] = c;
  std::vector<int> axes{0};
  for (int a = 2; a < xv.rank(); ++a) axes.push_back(a);

  Var<T> gamma = broadcast_to(reshape(params.at(name + ".gamma"), stat_shape), x.shape());
  Var<T> beta = broadcast_to(reshape(params.at(name + ".beta"), stat_shape), x.shape());
  Var<T>& running_mean = params.at(name + ".running_mean");
  Var<T>& running_var = params.at(name + ".running_var");

  Var<T> centered, inv_std;
  if (ctx.mode == Mode::Train) {
    Var<T> mu = reduce_mean(x, axes);
    centered = sub(x, broadcast_to(mu, x.shape()));
    Var<T> var = reduce_mean(square(centered), axes);
    inv_std = div(constant(Tensor<T>(stat_shape, T{1})), sqrt(add_scalar(var, ctx.bn_epsilon)));
    const T m = ctx.bn_momentum;
    for (std::int64_t i = 0; i < c; ++i) {
      running_mean.mutable_value()[i] = (T{1} - m) * running_mean.value()[i] + m * mu.value()[i];
      running_var.mutable_value()[i] = (T{1} - m) * running_var.value()[i] + m * var.value()[i];
    }
  } else {
    Tensor<T> mu = running_mean.value().reshaped(stat_shape);
    Tensor<T> inv = running_var.value().reshaped(stat_shape);
    for (auto& v : inv.data()) v = T{1} / std::sqrt(v + ctx.bn_epsilon);
    centered = sub(x, constant(detail::broadcast_raw(mu, x.shape())));
    inv_std = constant(std::move(inv));
  }
  return add(mul(mul(centered, broadcast_to(inv_std, x.shape())), gamma), beta);
}

namespace detail {

inline void check_channels(const LayerSpec& l, const Shape& in, int rank) {
  if (static_cast<int>(in.size()) != rank || in[1] != l.in_channels) {
    Shape expected(static_cast<std::size_t>(rank), -1);
    expected[1] = l.in_channels;
    throw Error("layer " + l.name + " (" + to_string(l.kind) + ") expects input " + to_string(expected) +
                " (-1 = any), got " + to_string(in));
  }
}

template <class T>
Var<T> add_bias(const Var<T>& y, const Var<T>& bias) {
  Shape s(y.shape().size(), 1);
  s[1] = y.shape()[1];
  return add(y, broadcast_to(reshape(bias, s), y.shape()));
}

}  // namespace detail

template <class T>
Var<T> forward(const LayerSpec& layer, ParameterStore<T>& params, const Var<T>& x, const ForwardContext<T>& ctx) {
  const Shape& in = x.shape();
  Var<T> y;
  switch (layer.kind) {
    case LayerKind::Conv: {
      detail::check_channels(layer, in, 4);
      y = conv2d(x, equalized_scale(params, layer), same_geometry(layer.kernel, layer.stride));
      y = detail::add_bias(y, params.at(layer.name + ".bias"));
      break;
    }
    case LayerKind::ConvTranspose: {
      detail::check_channels(layer, in, 4);
      y = conv_transpose2d(x, equalized_scale(params, layer), same_geometry(layer.kernel, layer.stride),
                           in[2] * layer.stride, in[3] * layer.stride);
      y = detail::add_bias(y, params.at(layer.name + ".bias"));
      break;
    }
    case LayerKind::Dense: {
      detail::check_channels(layer, in, 2);
      y = matmul(x, equalized_scale(params, layer), false, true);
      y = detail::add_bias(y, params.at(layer.name + ".bias"));
      break;
    }
    case LayerKind::BatchNorm:
      if (in.size() < 2 || in[1] != layer.in_channels) detail::check_channels(layer, in, 4);
      y = batch_norm(x, params, layer.name, ctx);
      break;
    case LayerKind::LeakyReLU: y = leaky_relu(x, static_cast<T>(layer.slope)); break;
    case LayerKind::ReLU: y = relu(x); break;
    case LayerKind::Tanh: y = tanh(x); break;
    case LayerKind::Sigmoid: y = sigmoid(x); break;
    case LayerKind::PixelNorm: y = pixel_norm(x); break;
    case LayerKind::MinibatchStdDev: y = minibatch_stddev(x); break;
    case LayerKind::SubPixelUpsample: y = pixel_shuffle(x, layer.factor); break;
    case LayerKind::ResidualBlock: {
      Var<T> h = x;
      for (const auto& sub_layer : layer.body) h = forward(sub_layer, params, h, ctx);
      if (h.shape() != x.shape()) {
        throw Error("residual block " + layer.name + " changes shape " + to_string(x.shape()) + " -> " +
                    to_string(h.shape()));
      }
      y = add(x, h);
      break;
    }
    case LayerKind::Reshape: {
      Shape s{in[0]};
      s.insert(s.end(), layer.target_shape.begin(), layer.target_shape.end());
      y = reshape(x, s);
      break;
    }
    case LayerKind::Flatten: y = reshape(x, Shape{in[0], numel(in) / in[0]}); break;
    case LayerKind::Upsample: y = upsample_nearest(x, layer.factor); break;
    case LayerKind::Downsample: y = avg_pool(x, layer.factor); break;
  }
  if (ctx.trace) ctx.trace->emplace_back(layer.name.empty() ? to_string(layer.kind) : layer.name, y.shape());
  return y;
}

template <class T>
Var<T> forward(const std::vector<LayerSpec>& seq, ParameterStore<T>& params, Var<T> x, const ForwardContext<T>& ctx) {
  for (const auto& l : seq) x = forward(l, params, x, ctx);
  return x;
}

}  // namespace ganforge
