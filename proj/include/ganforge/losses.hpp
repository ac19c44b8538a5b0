#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ganforge/ops.hpp"
#include "ganforge/rng.hpp"

namespace ganforge {

enum class LossKind { GAN, LSGAN, WGAN, WGAN_GP, DRAGAN };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::GAN: return "gan";
    case LossKind::LSGAN: return "lsgan";
    case LossKind::WGAN: return "wgan";
    case LossKind::WGAN_GP: return "wgan_gp";
    case LossKind::DRAGAN: return "dragan";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "gan") return LossKind::GAN;
  if (s == "lsgan") return LossKind::LSGAN;
  if (s == "wgan") return LossKind::WGAN;
  if (s == "wgan_gp") return LossKind::WGAN_GP;
  if (s == "dragan") return LossKind::DRAGAN;
  throw Error("unknown loss '" + s + "' (expected gan, lsgan, wgan, wgan_gp or dragan)");
}

inline bool has_penalty(LossKind k) { return k == LossKind::WGAN_GP || k == LossKind::DRAGAN; }
/// Kinds whose real term compares against a probability target.
inline bool uses_label_target(LossKind k) {
  return k == LossKind::GAN || k == LossKind::LSGAN || k == LossKind::DRAGAN;
}

struct PenaltyConfig {
  double lambda = 10.0;
  /// DRAGAN noise upper bound as a multiple of the real batch's stddev.
  double noise_scale = 0.5;
};

struct LossConfig {
  LossKind kind = LossKind::DRAGAN;
  PenaltyConfig penalty;
  /// Real-label target for probabilistic losses (one-sided smoothing at 0.9).
  double real_label_target = 0.9;

  double effective_target() const { return uses_label_target(kind) ? real_label_target : 1.0; }
};

template <class T>
struct ScoreBatch {
  Var<T> d_real;
  Var<T> d_fake;
};

template <class T>
struct LossPair {
  Var<T> d_loss;
  Var<T> g_loss;
};

/// Scores are clamped into [eps, 1 - eps] before any logarithm.
inline constexpr double kProbabilityEpsilon = 1e-7;
/// Floor inside the square root of the gradient-penalty norm.
inline constexpr double kNormFloor = 1e-12;

namespace detail {

template <class T>
Var<T> clamp_probability(const Var<T>& p) {
  return clamp(p, static_cast<T>(kProbabilityEpsilon), static_cast<T>(1.0 - kProbabilityEpsilon));
}

template <class T>
Var<T> one_minus(const Var<T>& p) {
  return add_scalar(neg(p), T{1});
}

}  // namespace detail

/// Cross-entropy GAN objective with the non-saturating generator term. The
/// real side is a cross-entropy against `target` (0.9 for one-sided label
/// smoothing, 1 for the plain objective); the fake side always targets 0.
template <class T>
LossPair<T> loss_gan(const ScoreBatch<T>& s, double target) {
  const T t = static_cast<T>(target);
  Var<T> real = detail::clamp_probability(s.d_real);
  Var<T> fake = detail::clamp_probability(s.d_fake);
  Var<T> real_term = scale(log(real), t);
  if (target != 1.0) real_term = add(real_term, scale(log(detail::one_minus(real)), T{1} - t));
  Var<T> d_loss = sub(neg(mean(real_term)), mean(log(detail::one_minus(fake))));
  Var<T> g_loss = neg(mean(log(fake)));
  return {d_loss, g_loss};
}

template <class T>
LossPair<T> loss_lsgan(const ScoreBatch<T>& s, double target) {
  const T t = static_cast<T>(target);
  Var<T> d_loss = add(mean(square(add_scalar(s.d_real, -t))), mean(square(s.d_fake)));
  Var<T> g_loss = mean(square(add_scalar(s.d_fake, -t)));
  return {d_loss, g_loss};
}

template <class T>
LossPair<T> loss_wgan(const ScoreBatch<T>& s) {
  return {add(neg(mean(s.d_real)), mean(s.d_fake)), neg(mean(s.d_fake))};
}

/// Critic: maps an image batch (N, C, H, W) to scores with N rows.
template <class T>
using Critic = std::function<Var<T>(const Var<T>&)>;

/// lambda * mean_i (||dD/dx (x_i)|| - 1)^2 evaluated at `points`, with the
/// per-example norm taken over all pixels. The result stays differentiable
/// with respect to the critic's parameters.
template <class T>
Var<T> gradient_penalty(const Critic<T>& critic, const Tensor<T>& points, double lambda) {
  Var<T> x(points, true);
  Var<T> scores = critic(x);
  Var<T> g = grad(sum(scores), {x}, GradOptions{.create_graph = true})[0];
  std::vector<int> axes;
  for (int a = 1; a < g.value().rank(); ++a) axes.push_back(a);
  Var<T> norms = sqrt(add_scalar(reduce_sum(square(g), axes), static_cast<T>(kNormFloor)));
  for (T v : norms.value().data()) {
    if (!std::isfinite(v)) {
      throw Error("gradient penalty: non-finite critic gradient norm (exploding discriminator)");
    }
  }
  return scale(mean(square(add_scalar(norms, T{-1}))), static_cast<T>(lambda));
}

/// alpha_i * a_i + (1 - alpha_i) * b_i with one alpha per example.
template <class T>
Tensor<T> mix_per_example(const Tensor<T>& a, const Tensor<T>& b, const std::vector<double>& alphas) {
  detail::require_same_shape("mix_per_example", a.shape(), b.shape());
  const std::int64_t n = a.dim(0), per = a.size() / n;
  if (static_cast<std::int64_t>(alphas.size()) != n) throw Error("mix_per_example: need one alpha per example");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const T al = static_cast<T>(alphas[static_cast<std::size_t>(i)]);
    for (std::int64_t j = 0; j < per; ++j) {
      const std::int64_t k = i * per + j;
      out[k] = al * a[k] + (T{1} - al) * b[k];
    }
  }
  return out;
}

inline std::vector<double> draw_alphas(std::int64_t n, Rng& rng) {
  std::vector<double> alphas(static_cast<std::size_t>(n));
  for (auto& a : alphas) a = rng.uniform(0.0, 1.0);
  return alphas;
}

/// WGAN_GP penalty at x_m = alpha * real + (1 - alpha) * fake for given alphas.
template <class T>
Var<T> wgan_gp_penalty(const Critic<T>& critic, const Tensor<T>& real, const Tensor<T>& fake,
                       const std::vector<double>& alphas, double lambda) {
  return gradient_penalty(critic, mix_per_example(real, fake, alphas), lambda);
}

/// WGAN loss plus gradient penalty on random real/fake interpolates. `fake`
/// may be attached to a generator graph; the penalty always uses its value.
template <class T>
LossPair<T> loss_wgan_gp(const Critic<T>& critic, const Var<T>& real, const Var<T>& fake, const PenaltyConfig& cfg,
                         Rng& rng) {
  detail::require_same_shape("loss_wgan_gp", real.shape(), fake.shape());
  LossPair<T> base = loss_wgan(ScoreBatch<T>{critic(real), critic(fake)});
  const auto alphas = draw_alphas(real.value().dim(0), rng);
  if (cfg.lambda == 0.0) return base;
  Var<T> penalty = wgan_gp_penalty(critic, real.value(), fake.value(), alphas, cfg.lambda);
  for (T v : base.d_loss.value().data()) {
    if (!std::isfinite(v)) throw Error("loss_wgan_gp: non-finite critic loss");
  }
  return {add(base.d_loss, penalty), base.g_loss};
}

/// Population standard deviation over every element of the batch.
template <class T>
double batch_stddev(const Tensor<T>& x) {
  // Shifted by the first element so a constant batch gives exactly 0.
  const double x0 = x[0];
  double m = 0;
  for (T v : x.data()) m += v - x0;
  m /= static_cast<double>(x.size());
  double s = 0;
  for (T v : x.data()) s += (v - x0 - m) * (v - x0 - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

/// DRAGAN perturbation points alpha * x + (1 - alpha) * x_p with
/// x_p ~ U(0, noise_scale * std(x)) per pixel.
template <class T>
Tensor<T> dragan_points(const Tensor<T>& real, const std::vector<double>& alphas, double noise_scale, Rng& rng) {
  const double hi = noise_scale * batch_stddev(real);
  Tensor<T> noise(real.shape());
  if (hi > 0.0) {
    for (auto& v : noise.data()) v = static_cast<T>(rng.uniform(0.0, hi));
  }
  return mix_per_example(real, noise, alphas);
}

template <class T>
LossPair<T> loss_dragan(const Critic<T>& critic, const Var<T>& real, const Var<T>& fake, const PenaltyConfig& cfg,
                        double target, Rng& rng) {
  detail::require_same_shape("loss_dragan", real.shape(), fake.shape());
  LossPair<T> base = loss_gan(ScoreBatch<T>{critic(real), critic(fake)}, target);
  const auto alphas = draw_alphas(real.value().dim(0), rng);
  Tensor<T> points = dragan_points(real.value(), alphas, cfg.noise_scale, rng);
  if (cfg.lambda == 0.0) return base;
  return {add(base.d_loss, gradient_penalty(critic, points, cfg.lambda)), base.g_loss};
}

/// Discriminator objective for `cfg.kind` (penalty included).
template <class T>
Var<T> discriminator_loss(const LossConfig& cfg, const Critic<T>& critic, const Var<T>& real, const Var<T>& fake,
                          Rng& rng) {
  const double target = cfg.effective_target();
  switch (cfg.kind) {
    case LossKind::GAN: return loss_gan(ScoreBatch<T>{critic(real), critic(fake)}, target).d_loss;
    case LossKind::LSGAN: return loss_lsgan(ScoreBatch<T>{critic(real), critic(fake)}, target).d_loss;
    case LossKind::WGAN: return loss_wgan(ScoreBatch<T>{critic(real), critic(fake)}).d_loss;
    case LossKind::WGAN_GP: return loss_wgan_gp(critic, real, fake, cfg.penalty, rng).d_loss;
    case LossKind::DRAGAN: return loss_dragan(critic, real, fake, cfg.penalty, target, rng).d_loss;
  }
  throw Error("unknown loss kind");
}

/// Generator objective for `cfg.kind` given the critic's scores on fakes.
template <class T>
Var<T> generator_loss(const LossConfig& cfg, const Var<T>& d_fake) {
  switch (cfg.kind) {
    case LossKind::GAN:
    case LossKind::DRAGAN: {
      return neg(mean(log(detail::clamp_probability(d_fake))));
    }
    case LossKind::LSGAN: return mean(square(add_scalar(d_fake, static_cast<T>(-cfg.effective_target()))));
    case LossKind::WGAN:
    case LossKind::WGAN_GP: return neg(mean(d_fake));
  }
  throw Error("unknown loss kind");
}

}  // namespace ganforge
