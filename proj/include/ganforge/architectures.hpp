#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ganforge/blocks.hpp"

namespace ganforge {

enum class Family { DCGAN, SRResNet, ProGAN };
enum class Role { Generator, Discriminator };
enum class LatentDist { Uniform, NormalizedGaussian };
enum class Phase { Stabilize, FadeIn };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::DCGAN: return "dcgan";
    case Family::SRResNet: return "srresnet";
    case Family::ProGAN: return "progan";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "dcgan") return Family::DCGAN;
  if (s == "srresnet") return Family::SRResNet;
  if (s == "progan") return Family::ProGAN;
  throw Error("unknown model family '" + s + "' (expected dcgan, srresnet or progan)");
}

inline const char* to_string(Phase p) { return p == Phase::Stabilize ? "stabilize" : "fade_in"; }

inline Phase parse_phase(const std::string& s) {
  if (s == "stabilize") return Phase::Stabilize;
  if (s == "fade_in") return Phase::FadeIn;
  throw Error("unknown progressive phase '" + s + "'");
}

inline bool is_power_of_two(std::int64_t v) { return v > 0 && std::has_single_bit(static_cast<std::uint64_t>(v)); }

inline int log2_exact(std::int64_t v) {
  if (!is_power_of_two(v)) throw Error(std::to_string(v) + " is not a power of two");
  return std::countr_zero(static_cast<std::uint64_t>(v));
}

struct ProgressiveStage {
  int resolution = 4;
  Phase phase = Phase::Stabilize;
  double alpha = 1.0;

  bool operator==(const ProgressiveStage&) const = default;
};

/// Knobs for scaling an architecture away from its 256x256 reference size.
struct ArchConfig {
  int resolution = 256;
  /// Every channel width is divided by this (1 = reference widths).
  int width_divisor = 1;
  /// DCGAN discriminator: minibatch-stddev channel before the dense head.
  bool minibatch_stddev = true;
  /// SRResNet generator: batch norm inside residual blocks.
  bool generator_batchnorm = true;
};

struct ProgressiveLevel {
  int resolution = 4;
  std::vector<LayerSpec> block;
  std::vector<LayerSpec> head;  // to-image (generator) or from-image (discriminator)
};

struct ModelSpec {
  Family family = Family::DCGAN;
  Role role = Role::Generator;
  int latent_dim = 256;
  LatentDist latent_dist = LatentDist::Uniform;
  int output_resolution = 256;
  InitScheme weight_init = InitScheme::Normal002;
  std::vector<LayerSpec> layers;
  std::vector<ProgressiveLevel> levels;  // ProGAN only, ascending resolution
  std::optional<ProgressiveStage> stage;
};

struct ModelPair {
  ModelSpec generator;
  ModelSpec discriminator;
};

namespace detail {

inline std::int64_t scaled(std::int64_t width, int divisor) { return std::max<std::int64_t>(1, width / divisor); }

inline void push_act(std::vector<LayerSpec>& v, LayerKind act) {
  v.push_back(act == LayerKind::LeakyReLU ? layers::leaky_relu(0.2) : layers::simple(act));
}

}  // namespace detail

/// Table-driven DCGAN. At resolution 256 the generator and discriminator
/// reproduce the reference tables row for row; smaller resolutions drop
/// leading upsampling pairs / trailing downsampling convs.
inline ModelPair build_dcgan(const ArchConfig& cfg = {}) {
  if (cfg.resolution < 16) throw Error("dcgan needs resolution >= 16, got " + std::to_string(cfg.resolution));
  const int doublings = log2_exact(cfg.resolution) - 3;
  const int d = cfg.width_divisor;
  using detail::scaled;

  ModelSpec g;
  g.family = Family::DCGAN, g.role = Role::Generator, g.latent_dim = 256, g.latent_dist = LatentDist::Uniform;
  g.output_resolution = cfg.resolution, g.weight_init = InitScheme::Normal002;
  const std::int64_t base = scaled(256, d);
  g.layers.push_back(layers::dense("g.fc", 256, base * 8 * 8));
  g.layers.push_back(layers::reshape({base, 8, 8}));
  g.layers.push_back(layers::batch_norm("g.fc_bn", base));
  g.layers.push_back(layers::simple(LayerKind::ReLU));
  std::int64_t ch = base;
  auto up = [&](const std::string& name, std::int64_t out, std::int64_t stride) {
    g.layers.push_back(layers::conv_transpose(name, ch, out, 5, stride));
    g.layers.push_back(layers::batch_norm(name + "_bn", out));
    g.layers.push_back(layers::simple(LayerKind::ReLU));
    ch = out;
  };
  const int pairs = std::max(0, doublings - 2);
  for (int i = 0; i < pairs; ++i) {
    up("g.up" + std::to_string(i) + "a", base, 2);
    up("g.up" + std::to_string(i) + "b", base, 1);
  }
  const std::int64_t tail[2] = {scaled(128, d), scaled(64, d)};
  for (int i = 2 - std::min(doublings, 2); i < 2; ++i) up("g.tail" + std::to_string(i), tail[i], 2);
  g.layers.push_back(layers::conv_transpose("g.out", ch, 1, 5, 1));
  g.layers.push_back(layers::simple(LayerKind::Tanh));

  ModelSpec dsc;
  dsc.family = Family::DCGAN, dsc.role = Role::Discriminator, dsc.latent_dim = 256;
  dsc.latent_dist = LatentDist::Uniform, dsc.output_resolution = cfg.resolution;
  dsc.weight_init = InitScheme::Normal002;
  ch = 1;
  for (int i = 0; i < doublings; ++i) {
    const std::int64_t out = scaled(64 << i, d);
    const std::string name = "d.conv" + std::to_string(i);
    dsc.layers.push_back(layers::conv(name, ch, out, 5, 2));
    if (i > 0) dsc.layers.push_back(layers::batch_norm(name + "_bn", out));
    dsc.layers.push_back(layers::leaky_relu(0.2));
    ch = out;
  }
  if (cfg.minibatch_stddev) {
    dsc.layers.push_back(layers::simple(LayerKind::MinibatchStdDev));
    ++ch;
  }
  dsc.layers.push_back(layers::simple(LayerKind::Flatten));
  dsc.layers.push_back(layers::dense("d.fc", ch * 8 * 8, scaled(1024, d)));
  dsc.layers.push_back(layers::leaky_relu(0.2));
  dsc.layers.push_back(layers::dense("d.out", scaled(1024, d), 1));
  dsc.layers.push_back(layers::simple(LayerKind::Sigmoid));
  return {g, dsc};
}

/// Residual noise-to-image generator (16 residual blocks at 16x16, sub-pixel
/// upsampling) and a batch-norm-free residual critic ending in one dense
/// layer.
inline ModelPair build_srresnet(const ArchConfig& cfg = {}) {
  if (cfg.resolution < 16) throw Error("srresnet needs resolution >= 16, got " + std::to_string(cfg.resolution));
  const int d = cfg.width_divisor;
  using detail::scaled;

  ModelSpec g;
  g.family = Family::SRResNet, g.role = Role::Generator, g.latent_dim = 256;
  g.latent_dist = LatentDist::NormalizedGaussian, g.output_resolution = cfg.resolution;
  g.weight_init = InitScheme::HeNormal;
  const std::int64_t w = scaled(64, d);
  g.layers.push_back(layers::dense("g.fc", 256, w * 16 * 16));
  g.layers.push_back(layers::reshape({w, 16, 16}));
  g.layers.push_back(layers::simple(LayerKind::ReLU));
  for (int i = 0; i < 16; ++i) {
    const std::string name = "g.res" + std::to_string(i);
    std::vector<LayerSpec> body;
    body.push_back(layers::conv(name + ".conv1", w, w, 3));
    if (cfg.generator_batchnorm) body.push_back(layers::batch_norm(name + ".bn1", w));
    body.push_back(layers::simple(LayerKind::ReLU));
    body.push_back(layers::conv(name + ".conv2", w, w, 3));
    if (cfg.generator_batchnorm) body.push_back(layers::batch_norm(name + ".bn2", w));
    g.layers.push_back(layers::residual(name, std::move(body)));
  }
  const int ups = log2_exact(cfg.resolution) - 4;
  for (int i = 0; i < ups; ++i) {
    g.layers.push_back(layers::conv("g.up" + std::to_string(i), w, 4 * w, 3));
    g.layers.push_back(layers::sub_pixel(2));
    g.layers.push_back(layers::simple(LayerKind::ReLU));
  }
  g.layers.push_back(layers::conv("g.out", w, 1, 3));
  g.layers.push_back(layers::simple(LayerKind::Tanh));

  ModelSpec dsc;
  dsc.family = Family::SRResNet, dsc.role = Role::Discriminator, dsc.latent_dim = 256;
  dsc.latent_dist = LatentDist::NormalizedGaussian, dsc.output_resolution = cfg.resolution;
  dsc.weight_init = InitScheme::HeNormal;
  std::int64_t ch = scaled(64, d);
  const std::int64_t cap = scaled(2048, d);
  dsc.layers.push_back(layers::conv("d.in", 1, ch, 3));
  dsc.layers.push_back(layers::leaky_relu(0.2));
  // One stage per downsampling down to 2x2; 12 residual blocks spread over
  // the stages, earlier stages taking the remainder.
  const int stages = log2_exact(cfg.resolution) - 1;
  for (int s = 0; s < stages; ++s) {
    const int blocks = 12 / stages + (s < 12 % stages ? 1 : 0);
    for (int b = 0; b < blocks; ++b) {
      const std::string name = "d.s" + std::to_string(s) + ".res" + std::to_string(b);
      dsc.layers.push_back(layers::residual(
          name, {layers::conv(name + ".conv1", ch, ch, 3), layers::leaky_relu(0.2),
                 layers::conv(name + ".conv2", ch, ch, 3)}));
    }
    const std::int64_t out = std::min(ch * 2, cap);
    dsc.layers.push_back(layers::conv("d.s" + std::to_string(s) + ".down", ch, out, 3, 2));
    dsc.layers.push_back(layers::leaky_relu(0.2));
    ch = out;
  }
  dsc.layers.push_back(layers::simple(LayerKind::Flatten));
  dsc.layers.push_back(layers::dense("d.out", ch * 2 * 2, 1));
  return {g, dsc};
}

/// Channel width of the progressive networks at `resolution`.
inline std::int64_t progan_width(int resolution, int divisor) {
  const std::int64_t w = resolution <= 32 ? 512 : 512 * 32 / resolution;
  return detail::scaled(w, divisor);
}

/// Progressive generator/discriminator containing every level up to the
/// stage resolution. All weight layers are equalized.
inline ModelPair build_progan(const ProgressiveStage& stage, const ArchConfig& cfg = {}) {
  if (stage.resolution < 4 || stage.resolution > 256 || !is_power_of_two(stage.resolution)) {
    throw Error("progan stage resolution must be a power of two in [4, 256], got " +
                std::to_string(stage.resolution));
  }
  if (stage.alpha < 0.0 || stage.alpha > 1.0) throw Error("progan stage alpha must lie in [0, 1]");
  if (stage.phase == Phase::FadeIn && stage.resolution == 4) throw Error("progan has no fade-in at 4x4");
  const int d = cfg.width_divisor;
  const bool eq = true;

  ModelSpec g;
  g.family = Family::ProGAN, g.role = Role::Generator, g.latent_dim = 512;
  g.latent_dist = LatentDist::NormalizedGaussian, g.output_resolution = stage.resolution;
  g.weight_init = InitScheme::UnitNormal, g.stage = stage;
  ModelSpec dsc = g;
  dsc.role = Role::Discriminator;

  for (int r = 4; r <= stage.resolution; r *= 2) {
    const std::string tag = std::to_string(r);
    const std::int64_t ch = progan_width(r, d);
    ProgressiveLevel gl{r, {}, {}}, dl{r, {}, {}};
    if (r == 4) {
      gl.block = {layers::dense("g.b4.fc", 512, ch * 16, eq), layers::reshape({ch, 4, 4}), layers::leaky_relu(),
                  layers::simple(LayerKind::PixelNorm), layers::conv("g.b4.conv", ch, ch, 5, 1, eq),
                  layers::leaky_relu(), layers::simple(LayerKind::PixelNorm)};
      dl.block = {layers::simple(LayerKind::MinibatchStdDev), layers::conv("d.b4.conv", ch + 1, ch, 5, 1, eq),
                  layers::leaky_relu(), layers::simple(LayerKind::Flatten),
                  layers::dense("d.b4.fc", ch * 16, ch, eq), layers::leaky_relu(),
                  layers::dense("d.b4.out", ch, 1, eq)};
    } else {
      const std::int64_t prev = progan_width(r / 2, d);
      gl.block = {layers::resample(LayerKind::Upsample), layers::conv("g.b" + tag + ".conv1", prev, ch, 5, 1, eq),
                  layers::leaky_relu(), layers::simple(LayerKind::PixelNorm),
                  layers::conv("g.b" + tag + ".conv2", ch, ch, 5, 1, eq), layers::leaky_relu(),
                  layers::simple(LayerKind::PixelNorm)};
      dl.block = {layers::conv("d.b" + tag + ".conv1", ch, ch, 5, 1, eq), layers::leaky_relu(),
                  layers::conv("d.b" + tag + ".conv2", ch, prev, 5, 1, eq), layers::leaky_relu(),
                  layers::resample(LayerKind::Downsample)};
    }
    gl.head = {layers::conv("g.img" + tag, ch, 1, 1, 1, eq), layers::simple(LayerKind::Tanh)};
    dl.head = {layers::conv("d.img" + tag, 1, ch, 1, 1, eq), layers::leaky_relu()};
    g.levels.push_back(std::move(gl));
    dsc.levels.push_back(std::move(dl));
  }
  return {g, dsc};
}

inline ModelPair build_models(Family family, const ArchConfig& cfg,
                              const std::optional<ProgressiveStage>& stage = std::nullopt) {
  switch (family) {
    case Family::DCGAN: return build_dcgan(cfg);
    case Family::SRResNet: return build_srresnet(cfg);
    case Family::ProGAN: return build_progan(stage.value_or(ProgressiveStage{cfg.resolution}), cfg);
  }
  throw Error("unknown family");
}

namespace detail {

inline void collect_trainable(const LayerSpec& l, std::vector<std::string>& out) {
  if (has_weight(l)) {
    out.push_back(l.name + ".weight");
    out.push_back(l.name + ".bias");
  } else if (l.kind == LayerKind::BatchNorm) {
    out.push_back(l.name + ".gamma");
    out.push_back(l.name + ".beta");
  }
  for (const auto& b : l.body) collect_trainable(b, out);
}

inline void collect_trainable(const std::vector<LayerSpec>& seq, std::vector<std::string>& out) {
  for (const auto& l : seq) collect_trainable(l, out);
}

}  // namespace detail

/// Trainable parameter names the forward pass of `spec` actually reads.
inline std::vector<std::string> active_parameters(const ModelSpec& spec) {
  std::vector<std::string> out;
  if (spec.family != Family::ProGAN) {
    detail::collect_trainable(spec.layers, out);
    return out;
  }
  for (const auto& lvl : spec.levels) detail::collect_trainable(lvl.block, out);
  detail::collect_trainable(spec.levels.back().head, out);
  if (spec.stage && spec.stage->phase == Phase::FadeIn) {
    detail::collect_trainable(spec.levels[spec.levels.size() - 2].head, out);
  }
  return out;
}

/// Draws a latent batch (n, latent_dim) from the spec's latent distribution.
/// Normalized-Gaussian rows are rescaled to unit root-mean-square.
template <class T>
Tensor<T> sample_latents(const ModelSpec& spec, std::int64_t n, Rng& rng);

template <class T>
void normalize_latent_rows(Tensor<T>& z) {
  const std::int64_t n = z.dim(0), dim = z.dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    T* row = z.ptr() + i * dim;
    double ms = 0;
    for (std::int64_t j = 0; j < dim; ++j) ms += static_cast<double>(row[j]) * row[j];
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(dim) + 1e-8);
    for (std::int64_t j = 0; j < dim; ++j) row[j] = static_cast<T>(row[j] * inv);
  }
}

template <class T>
Tensor<T> sample_latents(const ModelSpec& spec, std::int64_t n, Rng& rng) {
  Shape shape{n, spec.latent_dim};
  if (spec.latent_dist == LatentDist::Uniform) return rng.uniform_tensor<T>(shape, -1.0, 1.0);
  Tensor<T> z = rng.normal_tensor<T>(shape);
  normalize_latent_rows(z);
  return z;
}

/// A ModelSpec bound to its parameters.
template <class T>
class Network {
 public:
  Network() = default;
  Network(ModelSpec spec, Rng& init_rng) : spec_(std::move(spec)) { declare(init_rng); }

  const ModelSpec& spec() const { return spec_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// Switches to `next` (a later progressive stage or an identical spec);
  /// existing parameters are kept, new ones are initialised from `init_rng`.
  void grow(ModelSpec next, Rng& init_rng) {
    if (next.family != spec_.family || next.role != spec_.role) throw Error("grow: family/role mismatch");
    spec_ = std::move(next);
    declare(init_rng);
  }

  /// Moves the fade-in blend factor of a progressive network.
  void set_alpha(double alpha) {
    if (!spec_.stage) throw Error("set_alpha: network has no progressive stage");
    if (alpha < 0.0 || alpha > 1.0) throw Error("set_alpha: alpha must lie in [0, 1]");
    spec_.stage->alpha = alpha;
  }

  std::vector<Var<T>> active_vars() {
    std::vector<Var<T>> out;
    for (const auto& name : active_parameters(spec_)) out.push_back(params_.at(name));
    return out;
  }

  Var<T> forward(const Var<T>& x, const ForwardContext<T>& ctx = {}) {
    check_input(x.shape());
    if (spec_.family != Family::ProGAN) return ganforge::forward(spec_.layers, params_, x, ctx);
    return spec_.role == Role::Generator ? progressive_generate(x, ctx) : progressive_score(x, ctx);
  }

 private:
  void declare(Rng& rng) {
    for (const auto& l : spec_.layers) declare_parameters(l, params_, spec_.weight_init, rng);
    for (const auto& lvl : spec_.levels) {
      for (const auto& l : lvl.block) declare_parameters(l, params_, spec_.weight_init, rng);
      for (const auto& l : lvl.head) declare_parameters(l, params_, spec_.weight_init, rng);
    }
  }

  void check_input(const Shape& s) const {
    if (spec_.role == Role::Generator) {
      if (s.size() != 2 || s[1] != spec_.latent_dim) {
        throw Error(std::string(to_string(spec_.family)) + " generator expects latents (N, " +
                    std::to_string(spec_.latent_dim) + "), got " + to_string(s));
      }
    } else if (s.size() != 4 || s[1] != 1 || s[2] != spec_.output_resolution || s[3] != spec_.output_resolution) {
      const auto r = std::to_string(spec_.output_resolution);
      throw Error(std::string(to_string(spec_.family)) + " discriminator expects images (N, 1, " + r + ", " + r +
                  "), got " + to_string(s));
    }
  }

  bool fading() const { return spec_.stage && spec_.stage->phase == Phase::FadeIn; }

  Var<T> blend(const Var<T>& fresh, const Var<T>& old) const {
    const T a = static_cast<T>(spec_.stage->alpha);
    return add(scale(fresh, a), scale(old, T{1} - a));
  }

  Var<T> progressive_generate(const Var<T>& z, const ForwardContext<T>& ctx) {
    const auto& lv = spec_.levels;
    const std::size_t top = lv.size() - 1;
    Var<T> h = ganforge::forward(lv[0].block, params_, z, ctx);
    Var<T> prev = h;
    for (std::size_t l = 1; l <= top; ++l) {
      prev = h;
      h = ganforge::forward(lv[l].block, params_, h, ctx);
    }
    Var<T> out = ganforge::forward(lv[top].head, params_, h, ctx);
    if (!fading()) return out;
    Var<T> old = upsample_nearest(ganforge::forward(lv[top - 1].head, params_, prev, ctx), std::int64_t{2});
    return blend(out, old);
  }

  Var<T> progressive_score(const Var<T>& x, const ForwardContext<T>& ctx) {
    const auto& lv = spec_.levels;
    const std::size_t top = lv.size() - 1;
    Var<T> h = ganforge::forward(lv[top].head, params_, x, ctx);
    h = ganforge::forward(lv[top].block, params_, h, ctx);
    if (top == 0) return h;
    if (fading()) {
      Var<T> old = ganforge::forward(lv[top - 1].head, params_, avg_pool(x, std::int64_t{2}), ctx);
      h = blend(h, old);
    }
    for (std::size_t l = top; l-- > 0;) h = ganforge::forward(lv[l].block, params_, h, ctx);
    return h;
  }

  ModelSpec spec_;
  ParameterStore<T> params_;
};

}  // namespace ganforge
