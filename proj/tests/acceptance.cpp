// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "ganforge/trainer.hpp"
#include "gradcheck.hpp"
#include "tables.hpp"
#include "tempdir.hpp"

using namespace ganforge;
using namespace ganforge::testing;

namespace {

// Pinned tolerances and thresholds.
constexpr double kFiniteDifferenceStep = 1e-4;
constexpr double kGradientRelError = 1e-3;
constexpr double kPenaltyTol = 1e-6;
constexpr int kPenaltyDraws = 100;
constexpr double kFadeTol = 1e-6;
constexpr double kStddevZeroTol = 1e-12;
constexpr double kStddevUnitTol = 1e-12;
constexpr double kPixelNormTol = 1e-4;
constexpr double kPcaValueRelTol = 1e-8;
constexpr double kPcaVectorTol = 1e-6;
constexpr double kTraceTol = 1e-6;
constexpr double kRealismMargin = 0.2;
constexpr int kReferenceDeltaFloor = 8;
constexpr int kGeneratedDeltaFloor = 4;

// Regression values from the first oracle run of the metric-sanity check.
constexpr double kFrozenRhoReference = 0.853514;
constexpr double kFrozenRhoNoise = 0.352963;
constexpr int kFrozenDeltaReference = 16;
constexpr double kFrozenRhoTol = 0.01;

constexpr int kPhantomCount = 2000;
constexpr int kPhantomResolution = 32;
constexpr std::uint64_t kPhantomSeed = 20;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

Tensor<double> random(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  return rng.uniform_tensor<double>(std::move(s), lo, hi);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1

// Dense critic on flattened 8x8 images: 64 -> 6 (tanh) -> 1.
Var<double> tiny_critic(const std::vector<Var<double>>& p, const Var<double>& x, bool probabilistic) {
  const std::int64_t n = x.shape()[0];
  Var<double> h = matmul(reshape(x, {n, 64}), p[0]);
  h = tanh(add(h, broadcast_to(p[1], h.shape())));
  Var<double> s = matmul(h, p[2]);
  s = add(s, broadcast_to(p[3], s.shape()));
  return probabilistic ? sigmoid(s) : s;
}

// Dense generator: latent 5 -> 64 (tanh) -> 1x8x8.
Var<double> tiny_generator(const Var<double>& z, const Var<double>& w, const Var<double>& b) {
  Var<double> h = matmul(z, w);
  h = tanh(add(h, broadcast_to(b, h.shape())));
  return reshape(h, {z.shape()[0], 1, 8, 8});
}

void loss_gradients(Outcome& out) {
  const std::vector<Tensor<double>> d_params = {random({64, 6}, 11, -0.3, 0.3), random({1, 6}, 12, -0.1, 0.1),
                                                random({6, 1}, 13, -0.8, 0.8), random({1, 1}, 14, -0.1, 0.1)};
  const std::vector<Tensor<double>> g_params = {random({5, 64}, 15, -0.4, 0.4), random({1, 64}, 16, -0.1, 0.1)};
  const Tensor<double> real = random({3, 1, 8, 8}, 17), fake = random({3, 1, 8, 8}, 18), z = random({3, 5}, 19);
  double worst = 0;
  for (auto kind : {LossKind::GAN, LossKind::LSGAN, LossKind::WGAN, LossKind::WGAN_GP, LossKind::DRAGAN}) {
    LossConfig cfg;
    cfg.kind = kind;
    const bool prob = kind != LossKind::WGAN && kind != LossKind::WGAN_GP;
    ScalarFn d_loss = [&](const std::vector<Var<double>>& p) {
      Rng rng(8);
      Critic<double> critic = [p, prob](const Var<double>& x) { return tiny_critic(p, x, prob); };
      return discriminator_loss(cfg, critic, Var<double>(real), Var<double>(fake), rng);
    };
    std::vector<Var<double>> fixed;
    for (const auto& t : d_params) fixed.emplace_back(t, false);
    const Critic<double> frozen = [fixed, prob](const Var<double>& x) { return tiny_critic(fixed, x, prob); };
    ScalarFn g_loss = [&](const std::vector<Var<double>>& p) {
      return generator_loss(cfg, frozen(tiny_generator(Var<double>(z), p[0], p[1])));
    };
    const double ed = check_gradients(d_loss, d_params, kFiniteDifferenceStep);
    const double eg = check_gradients(g_loss, g_params, kFiniteDifferenceStep);
    out.check(ed < kGradientRelError, std::string(to_string(kind)) + " D");
    out.check(eg < kGradientRelError, std::string(to_string(kind)) + " G");
    worst = std::max({worst, ed, eg});
  }
  out.detail << "max rel err " << worst << " over 5 losses, D and G params";
}

// ---------------------------------------------------------------- 2

Critic<double> linear_critic(const Tensor<double>& w) {
  return [w](const Var<double>& x) { return matmul(reshape(x, {x.shape()[0], w.size()}), Var<double>(w)); };
}

void penalty_oracle(Outcome& out) {
  Rng rng(42);
  double worst = 0;
  for (int draw = 0; draw < kPenaltyDraws; ++draw) {
    const Tensor<double> w = rng.uniform_tensor<double>({64, 1}, -0.4, 0.4);
    const Tensor<double> x = rng.uniform_tensor<double>({4, 1, 8, 8}, -1, 1);
    const Tensor<double> fake = rng.uniform_tensor<double>({4, 1, 8, 8}, -1, 1);
    std::vector<double> alphas;
    for (int i = 0; i < 4; ++i) alphas.push_back(rng.uniform());
    double norm2 = 0;
    for (double v : w.data()) norm2 += v * v;
    const double expected = 10.0 * std::pow(std::sqrt(norm2) - 1, 2);
    const double got = wgan_gp_penalty(linear_critic(w), x, fake, alphas, 10.0).value().item();
    worst = std::max(worst, std::abs(got - expected));
  }
  out.check(worst < kPenaltyTol, "closed form");

  Tensor<double> unit = rng.normal_tensor<double>({64, 1}, 1.0);
  double n = 0;
  for (double v : unit.data()) n += v * v;
  for (auto& v : unit.data()) v /= std::sqrt(n);
  const double zero = wgan_gp_penalty(linear_critic(unit), random({4, 1, 8, 8}, 1), random({4, 1, 8, 8}, 2),
                                      {0.1, 0.4, 0.6, 0.9}, 10.0)
                          .value()
                          .item();
  out.check(std::abs(zero) < kPenaltyTol, "unit norm");
  out.detail << kPenaltyDraws << " draws, max |err| " << worst << ", unit-norm penalty " << zero;
}

// ---------------------------------------------------------------- 3

using Trace = std::vector<std::pair<std::string, Shape>>;

template <class T>
Tensor<T> forward_traced(Network<T>& net, const Tensor<T>& x, Trace* trace = nullptr) {
  NoGrad guard;
  ForwardContext<T> ctx;
  ctx.trace = trace;
  return net.forward(Var<T>(x), ctx).value();
}

bool rows_match(const std::vector<TableRow>& table, const Trace& trace, std::int64_t batch) {
  const std::vector<Shape> got = activation_shapes(trace);
  if (got.size() != table.size()) return false;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (got[i] != row_shape(table[i], batch)) return false;
  }
  return true;
}

void architecture_shapes(Outcome& out) {
  const std::int64_t batch = 2;
  Rng rng(3);
  {
    ModelPair p = build_dcgan();
    Network<float> g(p.generator, rng), d(p.discriminator, rng);
    Trace gt, dt;
    Tensor<float> img = forward_traced(g, sample_latents<float>(g.spec(), batch, rng), &gt);
    forward_traced(d, img, &dt);
    out.check(rows_match(kDcganGeneratorTable, gt, batch), "DCGAN generator table");
    out.check(rows_match(kDcganDiscriminatorTable, dt, batch), "DCGAN discriminator table");
  }
  {
    ModelPair p = build_srresnet();
    Network<float> g(p.generator, rng), d(p.discriminator, rng);
    Trace dt;
    Tensor<float> img = forward_traced(g, sample_latents<float>(g.spec(), batch, rng));
    out.check(img.shape() == Shape({batch, 1, 256, 256}), "SRResNet generator output");
    Tensor<float> score = forward_traced(d, img, &dt);
    Shape last4;
    for (const auto& [name, shape] : dt) {
      if (shape.size() == 4) last4 = shape;
    }
    out.check(last4 == Shape({batch, 2048, 2, 2}), "SRResNet discriminator before dense head");
    out.check(p.discriminator.layers.back().kind == LayerKind::Dense, "SRResNet dense head");
    out.check(score.shape() == Shape({batch, 1}), "SRResNet score");
  }
  ArchConfig cfg;
  cfg.width_divisor = 4;
  int stages = 0;
  for (int r = 4; r <= 256; r *= 2) {
    for (Phase phase : {Phase::Stabilize, Phase::FadeIn}) {
      if (r == 4 && phase == Phase::FadeIn) continue;
      ModelPair p = build_progan({r, phase, phase == Phase::FadeIn ? 0.5 : 1.0}, cfg);
      Network<float> g(p.generator, rng), d(p.discriminator, rng);
      Tensor<float> img = forward_traced(g, sample_latents<float>(g.spec(), batch, rng));
      out.check(img.shape() == Shape({batch, 1, r, r}), "ProGAN stage " + std::to_string(r));
      out.check(forward_traced(d, img).shape() == Shape({batch, 1}), "ProGAN critic " + std::to_string(r));
      ++stages;
    }
  }
  out.detail << "DCGAN tables at 256, SRResNet 2048x2x2 head, " << stages << " ProGAN stages";
}

// ---------------------------------------------------------------- 4

template <class T>
void copy_params(Network<T>& dst, const Network<T>& src) {
  for (const auto& e : dst.params().entries()) dst.params().assign(e.name, src.params().at(e.name).value());
}

void fade_continuity(Outcome& out) {
  ArchConfig cfg;
  cfg.width_divisor = 16;
  Rng rng(7);
  double worst0 = 0, worst_line = 0;
  bool exact1 = true;
  for (int r = 8; r <= 64; r *= 2) {
    Network<double> g(build_progan({r, Phase::FadeIn, 0.0}, cfg).generator, rng);
    Network<double> prev(build_progan({r / 2, Phase::Stabilize, 1.0}, cfg).generator, rng);
    Network<double> stable(build_progan({r, Phase::Stabilize, 1.0}, cfg).generator, rng);
    copy_params(prev, g);
    copy_params(stable, g);
    const Tensor<double> z = sample_latents<double>(g.spec(), 3, rng);
    Tensor<double> low;
    {
      NoGrad guard;
      low = upsample_nearest(Var<double>(forward_traced(prev, z)), std::int64_t{2}).value();
    }
    const Tensor<double> at0 = forward_traced(g, z);
    for (std::int64_t i = 0; i < low.size(); ++i) worst0 = std::max(worst0, std::abs(at0[i] - low[i]));
    g.set_alpha(1.0);
    const Tensor<double> at1 = forward_traced(g, z);
    exact1 = exact1 && at1 == forward_traced(stable, z);
    for (double a : {0.1, 0.25, 0.5, 0.75, 0.9}) {
      g.set_alpha(a);
      const Tensor<double> mid = forward_traced(g, z);
      for (std::int64_t i = 0; i < mid.size(); ++i) {
        worst_line = std::max(worst_line, std::abs(mid[i] - ((1 - a) * at0[i] + a * at1[i])));
      }
    }
  }
  out.check(worst0 < kFadeTol, "alpha=0 vs upsampled previous stage");
  out.check(exact1, "alpha=1 vs stabilize");
  out.check(worst_line < kFadeTol, "linearity in alpha");
  out.detail << "stages 8..64: |a0 - up(prev)| " << worst0 << ", a1 exact " << (exact1 ? "yes" : "no")
             << ", line dev " << worst_line;
}

// ---------------------------------------------------------------- 5

void normalization_invariants(Outcome& out) {
  Tensor<double> one = random({1, 3, 4, 4}, 1);
  std::vector<double> rep;
  for (int i = 0; i < 5; ++i) rep.insert(rep.end(), one.data().begin(), one.data().end());
  const Tensor<double> same = minibatch_stddev(Var<double>(Tensor<double>({5, 3, 4, 4}, rep))).value();
  double zero_dev = 0;
  for (std::int64_t n = 0; n < 5; ++n)
    for (std::int64_t i = 0; i < 16; ++i) zero_dev = std::max(zero_dev, std::abs(same[n * 64 + 48 + i]));
  out.check(zero_dev < kStddevZeroTol, "identical batch");

  Tensor<double> pm({2, 2, 3, 3});
  for (std::int64_t i = 0; i < pm.size(); ++i) pm[i] = i < pm.size() / 2 ? 1.0 : -1.0;
  const Tensor<double> two = minibatch_stddev(Var<double>(pm)).value();
  double unit_dev = 0;
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < 9; ++i) unit_dev = std::max(unit_dev, std::abs(two[n * 27 + 18 + i] - 1.0));
  out.check(unit_dev < kStddevUnitTol, "two-point batch");

  const Tensor<float> y = pixel_norm(Var<float>(Rng(5).normal_tensor<float>({4, 32, 6, 6}, 3.0))).value();
  double ms_dev = 0;
  for (std::int64_t n = 0; n < 4; ++n)
    for (std::int64_t h = 0; h < 6; ++h)
      for (std::int64_t w = 0; w < 6; ++w) {
        double ms = 0;
        for (std::int64_t c = 0; c < 32; ++c) ms += double(y.at(n, c, h, w)) * y.at(n, c, h, w);
        ms_dev = std::max(ms_dev, std::abs(ms / 32 - 1.0));
      }
  out.check(ms_dev < kPixelNormTol, "pixel norm");
  out.detail << "zero-channel dev " << zero_dev << ", unit-channel dev " << unit_dev << ", mean-square dev " << ms_dev;
}

// ---------------------------------------------------------------- 6

void pca_oracle(Outcome& out) {
  Rng rng(6);
  ImageMatrix x(50, 64);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const ImageMatrix xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = xc.transpose() * xc / 50.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  double value_err = 0, vector_err = 0;
  for (auto method : {PcaMethod::Auto, PcaMethod::DenseCovariance, PcaMethod::Gram}) {
    const PcaBasis b = fit_pca(x, 16, 0, method);
    for (int i = 0; i < 16; ++i) {
      const double ref = es.eigenvalues()(63 - i);
      const Eigen::VectorXd u = es.eigenvectors().col(63 - i);
      value_err = std::max(value_err, std::abs(b.eigenvalues(i) - ref) / ref);
      const Eigen::VectorXd v = b.eigenvectors.row(i).transpose();
      const double sign = v.dot(u) < 0 ? -1.0 : 1.0;
      vector_err = std::max(vector_err, (v - sign * u).cwiseAbs().maxCoeff());
    }
  }
  const double trace_err = std::abs(diversity(x).sigma - es.eigenvalues().sum());
  out.check(value_err < kPcaValueRelTol, "eigenvalues");
  out.check(vector_err < kPcaVectorTol, "eigenvectors");
  out.check(trace_err < kTraceTol, "trace identity");
  out.detail << "eigenvalue rel err " << value_err << ", eigenvector err " << vector_err << ", trace err "
             << trace_err;
}

// ---------------------------------------------------------------- 7-9

struct Shared {
  TempDir root{"ganforge_acceptance"};
  std::optional<ImageSet> phantoms;

  const ImageSet& data() {
    if (!phantoms) {
      phantoms = load_images(make_phantom_dataset(root / "phantoms", kPhantomCount, kPhantomResolution, kPhantomSeed));
    }
    return *phantoms;
  }
};

ImageMatrix all_images(const ImageSet& set) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(set.count()));
  std::iota(idx.begin(), idx.end(), 0);
  return to_matrix(make_batch<double>(set, idx, set.resolution));
}

void metric_sanity(Outcome& out, Shared& shared) {
  const ImageMatrix ref = all_images(shared.data());
  const PcaBasis basis = fit_pca(ref);
  Rng rng(77);
  ImageMatrix noise(ref.rows(), ref.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = rng.uniform(-1.0, 1.0);
  const double rho_ref = realism(ref, basis).rho, rho_noise = realism(noise, basis).rho;
  const int delta_ref = diversity(ref).delta;
  out.check(rho_ref - rho_noise >= kRealismMargin, "realism margin");
  out.check(delta_ref >= kReferenceDeltaFloor, "reference diversity");
  out.check(std::abs(rho_ref - kFrozenRhoReference) < kFrozenRhoTol, "frozen rho(reference)");
  out.check(std::abs(rho_noise - kFrozenRhoNoise) < kFrozenRhoTol, "frozen rho(noise)");
  out.check(delta_ref == kFrozenDeltaReference, "frozen delta(reference)");
  out.detail.precision(6);
  out.detail << "rho(ref) " << rho_ref << ", rho(noise) " << rho_noise << ", margin " << rho_ref - rho_noise
             << ", delta(ref) " << delta_ref;
}

TrainConfig smoke_config() {
  TrainConfig c = default_train_config(Family::DCGAN);
  c.arch.resolution = kPhantomResolution;
  c.arch.width_divisor = 8;
  c.loss.kind = LossKind::DRAGAN;
  c.loss.penalty.lambda = 10.0;
  c.batch_size = 64;
  c.gd_rate = 3;
  c.optim.learning_rate = 0.0002;
  c.optim.beta1 = 0.5;
  c.epochs = 10;
  c.seed = 1234;
  c.sample_count = 16;
  return c;
}

struct SmokeRun {
  RunResult result;
  fs::path dir;
};

std::optional<SmokeRun> smoke;

void smoke_training(Outcome& out, Shared& shared) {
  const TrainConfig c = smoke_config();
  const fs::path dir = shared.root / "smoke-a";
  RunResult r;
  try {
    r = run_training(c, shared.data(), RunOptions{dir, false, {}});
  } catch (const TrainingDiverged& e) {
    out.check(false, std::string("diverged: ") + e.what());
    return;
  }
  smoke = SmokeRun{r, dir};
  out.check(r.completed, "run completed");

  std::ifstream log(dir / "metrics.jsonl");
  std::string line;
  std::int64_t lines = 0;
  bool finite = true;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    finite = finite && std::isfinite(j["L_D"].get<double>()) && std::isfinite(j["L_G"].get<double>());
    ++lines;
  }
  out.check(finite, "finite losses");
  out.check(lines == r.steps, "one log line per step");

  Network<float> g = load_generator<float>(read_checkpoint(r.last_checkpoint));
  Rng rng(99);
  const Tensor<float> samples = generate(g, sample_latents<float>(g.spec(), 1000, rng));
  const Diversity div = diversity(to_matrix(samples));
  out.check(div.delta >= kGeneratedDeltaFloor, "delta(generated)");
  out.check(div.sigma > 0, "sigma(generated)");

  const GrayImage grid = read_png_gray8(dir / ("samples-" + std::to_string(r.steps) + ".png"));
  const int cols = 4, tile = kPhantomResolution;
  double min_var = 1e300;
  for (int i = 0; i < 16; ++i) {
    const int oy = (i / cols) * (tile + 1) + 1, ox = (i % cols) * (tile + 1) + 1;
    double s = 0, s2 = 0;
    for (int y = 0; y < tile; ++y)
      for (int x = 0; x < tile; ++x) {
        const double v = grid.pixels[static_cast<std::size_t>((oy + y) * grid.width + ox + x)];
        s += v, s2 += v * v;
      }
    const double n = tile * tile;
    min_var = std::min(min_var, s2 / n - (s / n) * (s / n));
  }
  out.check(min_var > 0, "non-constant sample grid");
  out.detail << r.steps << " steps, final L_D " << r.last_metrics->d_loss << " L_G " << r.last_metrics->g_loss
             << ", sigma(gen) " << div.sigma << ", delta(gen) " << div.delta << ", min tile var " << min_var;
}

void determinism(Outcome& out, Shared& shared) {
  if (!smoke) {
    out.check(false, "smoke run unavailable");
    return;
  }
  const TrainConfig c = smoke_config();
  const fs::path again = shared.root / "smoke-b", split = shared.root / "smoke-split";
  run_training(c, shared.data(), RunOptions{again, false, {}});
  const std::string reference = slurp(smoke->dir / "metrics.jsonl");
  out.check(!reference.empty() && reference == slurp(again / "metrics.jsonl"), "two seeded runs");

  TrainConfig first = c;
  first.max_steps = smoke->result.steps / 2;
  RunResult part = run_training(first, shared.data(), RunOptions{split, false, {}});
  out.check(!part.completed && part.steps == first.max_steps, "interrupted at midpoint");
  run_training(c, shared.data(), RunOptions{split, true, {}});
  out.check(reference == slurp(split / "metrics.jsonl"), "resumed metrics log");

  const CheckpointData a = read_checkpoint(smoke->result.last_checkpoint);
  const CheckpointData b = read_checkpoint(split / smoke->result.last_checkpoint.filename());
  bool same = a.tensors.size() == b.tensors.size();
  for (std::size_t i = 0; same && i < a.tensors.size(); ++i) {
    same = a.tensors[i].name == b.tensors[i].name && a.tensors[i].value == b.tensors[i].value;
  }
  out.check(same, "resumed final tensors");
  out.detail << "midpoint " << first.max_steps << " of " << smoke->result.steps << " steps, "
             << reference.size() << " log bytes compared";
}

// ---------------------------------------------------------------- 10

void schedule_arithmetic(Outcome& out) {
  auto total = [](const std::vector<PhaseSpan>& s) {
    std::int64_t e = 0;
    for (const auto& p : s) e += p.epochs;
    return e;
  };
  const auto full = progressive_schedule(20, 256), small = progressive_schedule(1, 16);
  out.check(full.size() == 13, "13 phases");
  out.check(total(full) == 260, "260 epochs");
  out.check(small.size() == 5, "5 phases at 16");
  out.detail << full.size() << " phases / " << total(full) << " epochs; " << small.size() << " phases at 16";
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0: no runtime bound
  std::function<void(Outcome&)> run;
};

}  // namespace

int main() {
  Shared shared;
  const std::vector<Criterion> criteria = {
      {1, "loss gradients vs finite differences", 60, loss_gradients},
      {2, "gradient-penalty linear-critic oracle", 10, penalty_oracle},
      {3, "architecture shapes", 60, architecture_shapes},
      {4, "fade-in continuity", 60, fade_continuity},
      {5, "minibatch-stddev and pixel-norm invariants", 10, normalization_invariants},
      {6, "PCA oracle equivalence", 10, pca_oracle},
      {7, "metric sanity on phantoms", 300, [&](Outcome& o) { metric_sanity(o, shared); }},
      {8, "end-to-end smoke training", 1800, [&](Outcome& o) { smoke_training(o, shared); }},
      {9, "determinism and checkpoint resume", 0, [&](Outcome& o) { determinism(o, shared); }},
      {10, "progressive schedule arithmetic", 0, schedule_arithmetic},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) o.check(false, "runtime budget");
    failed += !o.pass;
    std::printf("%s  [%2d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
