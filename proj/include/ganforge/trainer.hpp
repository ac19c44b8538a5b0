#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ganforge/architectures.hpp"
#include "ganforge/checkpoint.hpp"
#include "ganforge/data.hpp"
#include "ganforge/losses.hpp"
#include "ganforge/metrics.hpp"
#include "ganforge/optim.hpp"

namespace ganforge {

struct TrainConfig {
  Family family = Family::DCGAN;
  /// arch.resolution is the training resolution (the final one for ProGAN).
  ArchConfig arch;
  LossConfig loss;
  OptimizerConfig optim;
  std::int64_t batch_size = 64;
  /// Epochs of training; for ProGAN, epochs per progressive phase.
  std::int64_t epochs = 60;
  int gd_rate = 3;
  std::uint64_t seed = 0;
  /// Save a checkpoint every this many steps (0: only at phase ends).
  std::int64_t checkpoint_every = 0;
  /// Write a sample grid every this many steps (0: only at phase ends).
  std::int64_t sample_every = 0;
  std::int64_t sample_count = 16;
  /// Stop after this many total steps, leaving a resumable checkpoint
  /// (0: run to completion).
  std::int64_t max_steps = 0;
};

inline TrainConfig default_train_config(Family family) {
  TrainConfig c;
  c.family = family;
  switch (family) {
    case Family::DCGAN: c.gd_rate = 3; break;
    case Family::SRResNet: c.gd_rate = 2; break;
    case Family::ProGAN:
      c.gd_rate = 1;
      c.epochs = 20;
      c.optim.learning_rate = 0.001;
      c.optim.beta1 = 0.0;
      break;
  }
  return c;
}

inline void validate(const TrainConfig& c) {
  if (c.gd_rate < 1) throw Error("gd_rate must be >= 1, got " + std::to_string(c.gd_rate));
  if (c.batch_size < 2) throw Error("batch size must be >= 2, got " + std::to_string(c.batch_size));
  if (c.epochs < 1) throw Error("epochs must be >= 1, got " + std::to_string(c.epochs));
  if (c.arch.width_divisor < 1) throw Error("width_divisor must be >= 1");
  if (!is_power_of_two(c.arch.resolution)) throw Error("resolution must be a power of two");
  if (c.optim.learning_rate < 0) throw Error("learning rate must be >= 0");
  if (c.optim.beta1 < 0 || c.optim.beta1 >= 1 || c.optim.beta2 < 0 || c.optim.beta2 >= 1) {
    throw Error("adam betas must lie in [0, 1)");
  }
  if (c.loss.penalty.lambda < 0) throw Error("lambda must be >= 0");
  if (c.loss.real_label_target <= 0 || c.loss.real_label_target > 1) {
    throw Error("label target must lie in (0, 1]");
  }
  if (c.sample_count < 1) throw Error("sample_count must be >= 1");
}

/// Flat JSON form, the same keys the command-line flags use.
inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", to_string(c.family)},
          {"loss", to_string(c.loss.kind)},
          {"lambda", c.loss.penalty.lambda},
          {"noise_scale", c.loss.penalty.noise_scale},
          {"label_smooth", c.loss.real_label_target},
          {"lr", c.optim.learning_rate},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"adam_epsilon", c.optim.epsilon},
          {"resolution", c.arch.resolution},
          {"width_divisor", c.arch.width_divisor},
          {"minibatch_stddev", c.arch.minibatch_stddev},
          {"generator_batchnorm", c.arch.generator_batchnorm},
          {"batch", c.batch_size},
          {"epochs", c.epochs},
          {"gd_rate", c.gd_rate},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"sample_every", c.sample_every},
          {"sample_count", c.sample_count},
          {"max_steps", c.max_steps}};
}

/// Reads the keys present in `j` over `base`; unknown keys are an error.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
  if (!j.is_object()) throw Error("config must be a flat JSON object");
  static const std::vector<std::string> known = {
      "model", "loss", "lambda", "noise_scale", "label_smooth", "lr", "beta1", "beta2", "adam_epsilon",
      "resolution", "width_divisor", "minibatch_stddev", "generator_batchnorm", "batch", "epochs", "gd_rate",
      "seed", "checkpoint_every", "sample_every", "sample_count", "max_steps"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw Error("unknown config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("model")) base.family = parse_family(j.at("model").get<std::string>());
    if (j.contains("loss")) base.loss.kind = parse_loss(j.at("loss").get<std::string>());
    get("lambda", base.loss.penalty.lambda);
    get("noise_scale", base.loss.penalty.noise_scale);
    get("label_smooth", base.loss.real_label_target);
    get("lr", base.optim.learning_rate);
    get("beta1", base.optim.beta1);
    get("beta2", base.optim.beta2);
    get("adam_epsilon", base.optim.epsilon);
    get("resolution", base.arch.resolution);
    get("width_divisor", base.arch.width_divisor);
    get("minibatch_stddev", base.arch.minibatch_stddev);
    get("generator_batchnorm", base.arch.generator_batchnorm);
    get("batch", base.batch_size);
    get("epochs", base.epochs);
    get("gd_rate", base.gd_rate);
    get("seed", base.seed);
    get("checkpoint_every", base.checkpoint_every);
    get("sample_every", base.sample_every);
    get("sample_count", base.sample_count);
    get("max_steps", base.max_steps);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad config value: ") + e.what());
  }
  return base;
}

struct PhaseSpan {
  ProgressiveStage stage;
  std::int64_t epochs = 0;
};

/// Stabilize at 4, then a fade-in and a stabilize phase per doubling up to
/// `max_resolution`.
inline std::vector<PhaseSpan> progressive_schedule(std::int64_t epochs_per_phase, int max_resolution = 256) {
  if (epochs_per_phase < 1) throw Error("progressive phase length must be >= 1");
  if (max_resolution < 4 || !is_power_of_two(max_resolution)) {
    throw Error("progressive max resolution must be a power of two >= 4");
  }
  std::vector<PhaseSpan> out{{{4, Phase::Stabilize, 1.0}, epochs_per_phase}};
  for (int r = 8; r <= max_resolution; r *= 2) {
    out.push_back({{r, Phase::FadeIn, 0.0}, epochs_per_phase});
    out.push_back({{r, Phase::Stabilize, 1.0}, epochs_per_phase});
  }
  return out;
}

/// The phases a run goes through: the progressive schedule for ProGAN, one
/// phase at full resolution otherwise.
inline std::vector<PhaseSpan> training_phases(const TrainConfig& c) {
  if (c.family == Family::ProGAN) return progressive_schedule(c.epochs, c.arch.resolution);
  return {{{c.arch.resolution, Phase::Stabilize, 1.0}, c.epochs}};
}

/// Blend factor after step `i` (zero-based) of a fade-in lasting `total`
/// steps: rises linearly and reaches 1 on the last step.
inline double fade_alpha(std::int64_t i, std::int64_t total) {
  return std::min(1.0, static_cast<double>(i + 1) / static_cast<double>(std::max<std::int64_t>(total, 1)));
}

// Independent random streams derived from the run seed.
inline constexpr std::uint64_t kGeneratorInitStream = 1;
inline constexpr std::uint64_t kDiscriminatorInitStream = 2;
inline constexpr std::uint64_t kLoaderStream = 3;
inline constexpr std::uint64_t kTrainStream = 4;
inline constexpr std::uint64_t kSampleStream = 5;
inline constexpr std::uint64_t kGrowStream = 1000;

template <class T>
struct TrainState {
  TrainConfig config;
  std::vector<PhaseSpan> phases;
  Network<T> generator;
  Network<T> discriminator;
  Adam<T> g_opt;
  Adam<T> d_opt;
  Rng rng;
  std::int64_t step = 0;
  std::size_t phase_index = 0;
  std::int64_t phase_step = 0;
  /// Latent batches drawn so far (1 per discriminator update, 1 per
  /// generator update).
  std::int64_t latent_batches = 0;

  const ProgressiveStage& stage() const { return phases.at(phase_index).stage; }
};

namespace detail {

inline std::optional<ProgressiveStage> model_stage(const TrainConfig& c, const ProgressiveStage& s) {
  if (c.family != Family::ProGAN) return std::nullopt;
  return s;
}

}  // namespace detail

template <class T>
TrainState<T> init_train_state(const TrainConfig& config) {
  validate(config);
  TrainState<T> st;
  st.config = config;
  st.phases = training_phases(config);
  ModelPair pair = build_models(config.family, config.arch, detail::model_stage(config, st.phases[0].stage));
  Rng g_init(derive_seed(config.seed, kGeneratorInitStream));
  Rng d_init(derive_seed(config.seed, kDiscriminatorInitStream));
  st.generator = Network<T>(std::move(pair.generator), g_init);
  st.discriminator = Network<T>(std::move(pair.discriminator), d_init);
  st.g_opt = Adam<T>(config.optim);
  st.d_opt = Adam<T>(config.optim);
  st.rng = Rng(derive_seed(config.seed, kTrainStream));
  return st;
}

/// Switches both networks to phase `index`, creating the layers it adds.
template <class T>
void enter_phase(TrainState<T>& st, std::size_t index) {
  st.phase_index = index;
  st.phase_step = 0;
  if (st.config.family != Family::ProGAN) return;
  ModelPair pair = build_progan(st.phases.at(index).stage, st.config.arch);
  Rng g_init(derive_seed(st.config.seed, kGrowStream + 2 * index));
  Rng d_init(derive_seed(st.config.seed, kGrowStream + 2 * index + 1));
  st.generator.grow(std::move(pair.generator), g_init);
  st.discriminator.grow(std::move(pair.discriminator), d_init);
}

struct StepMetrics {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double alpha = 1.0;
  int resolution = 0;
  double d_grad_norm = 0.0;
  double g_grad_norm = 0.0;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class T>
std::vector<std::string> trainable_names(const Network<T>& net) {
  return active_parameters(net.spec());
}

template <class T>
double apply_gradients(Network<T>& net, Adam<T>& opt, const Var<T>& loss) {
  const auto names = trainable_names(net);
  std::vector<Var<T>> vars;
  for (const auto& n : names) vars.push_back(net.params().at(n));
  std::vector<Var<T>> grads = grad(loss, vars);
  std::vector<Tensor<T>> values;
  double sq = 0;
  for (auto& g : grads) {
    for (T v : g.value().data()) sq += static_cast<double>(v) * v;
    values.push_back(g.value());
  }
  NoGrad guard;
  opt.step(net.params(), names, values);
  return std::sqrt(sq);
}

template <class T>
double checked_item(const Var<T>& loss, const char* what, std::int64_t step) {
  const double v = static_cast<double>(loss.value().item());
  if (!std::isfinite(v)) throw TrainingDiverged(std::string("non-finite ") + what + " at step " + std::to_string(step));
  return v;
}

}  // namespace detail

/// One discriminator update on `real`, then gd_rate generator updates, each
/// on a fresh latent batch.
template <class T>
StepMetrics train_step(TrainState<T>& st, const Tensor<T>& real) {
  const std::int64_t n = real.dim(0);
  const int res = static_cast<int>(real.dim(2));
  if (res != st.generator.spec().output_resolution) {
    throw Error("train_step: batch resolution " + std::to_string(res) + " does not match model resolution " +
                std::to_string(st.generator.spec().output_resolution));
  }
  ForwardContext<T> ctx;
  Critic<T> critic = [&](const Var<T>& x) { return st.discriminator.forward(x, ctx); };
  StepMetrics m;
  m.step = st.step + 1;
  m.resolution = res;
  m.alpha = st.generator.spec().stage ? st.generator.spec().stage->alpha : 1.0;

  Tensor<T> z = sample_latents<T>(st.generator.spec(), n, st.rng);
  ++st.latent_batches;
  Tensor<T> fake;
  {
    NoGrad guard;
    fake = st.generator.forward(Var<T>(z), ctx).value();
  }
  Var<T> d_loss = discriminator_loss(st.config.loss, critic, Var<T>(real), Var<T>(std::move(fake)), st.rng);
  m.d_loss = detail::checked_item(d_loss, "discriminator loss", m.step);
  m.d_grad_norm = detail::apply_gradients(st.discriminator, st.d_opt, d_loss);

  double g_sum = 0, g_norm = 0;
  for (int k = 0; k < st.config.gd_rate; ++k) {
    Tensor<T> zg = sample_latents<T>(st.generator.spec(), n, st.rng);
    ++st.latent_batches;
    Var<T> fake_g = st.generator.forward(Var<T>(std::move(zg)), ctx);
    Var<T> g_loss = generator_loss(st.config.loss, st.discriminator.forward(fake_g, ctx));
    g_sum += detail::checked_item(g_loss, "generator loss", m.step);
    g_norm = detail::apply_gradients(st.generator, st.g_opt, g_loss);
  }
  m.g_loss = g_sum / st.config.gd_rate;
  m.g_grad_norm = g_norm;
  return m;
}

inline nlohmann::json to_json(const StepMetrics& m) {
  return {{"step", m.step},
          {"L_D", m.d_loss},
          {"L_G", m.g_loss},
          {"alpha", m.alpha},
          {"resolution", m.resolution},
          {"grad_norm_D", m.d_grad_norm},
          {"grad_norm_G", m.g_grad_norm}};
}

inline nlohmann::json to_json(const ProgressiveStage& s) {
  return {{"resolution", s.resolution}, {"phase", to_string(s.phase)}, {"alpha", s.alpha}};
}

inline ProgressiveStage stage_from_json(const nlohmann::json& j) {
  return {j.at("resolution").get<int>(), parse_phase(j.at("phase").get<std::string>()), j.at("alpha").get<double>()};
}

// ---------------------------------------------------------------------------
// Checkpoints

template <class T>
void save_train_checkpoint(const std::filesystem::path& path, const TrainState<T>& st, const LoaderState& loader) {
  nlohmann::json meta;
  meta["format"] = "ganforge-checkpoint";
  meta["version"] = 1;
  meta["step"] = st.step;
  meta["phase_index"] = st.phase_index;
  meta["phase_step"] = st.phase_step;
  meta["latent_batches"] = st.latent_batches;
  meta["config"] = to_json(st.config);
  if (st.generator.spec().stage) {
    meta["stage"] = to_json(*st.generator.spec().stage);
  } else {
    meta["stage"] = nullptr;
  }
  meta["rng"] = st.rng.serialize();
  meta["loader"] = {{"epoch", loader.epoch}, {"cursor", loader.cursor}, {"order", loader.order}, {"rng", loader.rng}};

  std::vector<NamedTensor> tensors;
  nlohmann::json adam_steps = nlohmann::json::object();
  auto add_net = [&](const char* prefix, const Network<T>& net, const Adam<T>& opt) {
    for (const auto& e : net.params().entries()) {
      tensors.push_back({std::string(prefix) + "/" + e.name, e.var.value().template cast<float>()});
    }
    nlohmann::json steps = nlohmann::json::object();
    for (const auto& [name, slot] : opt.slots()) {
      tensors.push_back({std::string("adam/") + prefix + "/" + name + "/m", slot.m.template cast<float>()});
      tensors.push_back({std::string("adam/") + prefix + "/" + name + "/v", slot.v.template cast<float>()});
      steps[name] = slot.steps;
    }
    adam_steps[prefix] = std::move(steps);
  };
  add_net("generator", st.generator, st.g_opt);
  add_net("discriminator", st.discriminator, st.d_opt);
  meta["adam_steps"] = std::move(adam_steps);
  write_checkpoint(path, std::move(meta), tensors);
}

namespace detail {

inline std::string describe_manifest(const CheckpointData& ck, const std::string& prefix) {
  std::ostringstream os;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind(prefix + "/", 0) == 0) os << "  " << t.name.substr(prefix.size() + 1) << ' ' << to_string(t.value.shape()) << '\n';
  }
  return os.str();
}

template <class T>
std::string describe_params(const ParameterStore<T>& p) {
  std::ostringstream os;
  for (const auto& e : p.entries()) os << "  " << e.name << ' ' << to_string(e.var.shape()) << '\n';
  return os.str();
}

/// Copies the `prefix/` tensors of `ck` into `net`, requiring the names and
/// shapes to match exactly.
template <class T>
void load_network(Network<T>& net, const CheckpointData& ck, const std::string& prefix) {
  std::size_t found = 0;
  bool ok = true;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind(prefix + "/", 0) != 0) continue;
    ++found;
    const std::string name = t.name.substr(prefix.size() + 1);
    if (!net.params().contains(name) || net.params().at(name).shape() != t.value.shape()) {
      ok = false;
      break;
    }
  }
  if (!ok || found != net.params().size()) {
    throw Error("checkpoint/architecture mismatch for the " + prefix + "\ncheckpoint holds:\n" +
                describe_manifest(ck, prefix) + "architecture expects:\n" + describe_params(net.params()));
  }
  for (const auto& t : ck.tensors) {
    if (t.name.rfind(prefix + "/", 0) == 0) {
      net.params().assign(t.name.substr(prefix.size() + 1), t.value.template cast<T>());
    }
  }
}

template <class T>
void load_adam(Adam<T>& opt, const CheckpointData& ck, const std::string& prefix) {
  opt.slots().clear();
  for (const auto& [name, steps] : ck.meta.at("adam_steps").at(prefix).items()) {
    auto& slot = opt.slots()[name];
    const std::string base = "adam/" + prefix + "/" + name;
    slot.m = ck.tensor(base + "/m").template cast<T>();
    slot.v = ck.tensor(base + "/v").template cast<T>();
    slot.steps = steps.template get<std::int64_t>();
  }
}

}  // namespace detail

inline TrainConfig checkpoint_config(const CheckpointData& ck) {
  return train_config_from_json(ck.meta.at("config"), TrainConfig{});
}

inline std::optional<ProgressiveStage> checkpoint_stage(const CheckpointData& ck) {
  if (!ck.meta.contains("stage") || ck.meta.at("stage").is_null()) return std::nullopt;
  return stage_from_json(ck.meta.at("stage"));
}

/// Rebuilds the generator stored in a checkpoint (at its saved stage).
template <class T>
Network<T> load_generator(const CheckpointData& ck) {
  const TrainConfig cfg = checkpoint_config(ck);
  ModelPair pair = build_models(cfg.family, cfg.arch, checkpoint_stage(ck));
  Rng unused(0);
  Network<T> g(std::move(pair.generator), unused);
  detail::load_network(g, ck, "generator");
  return g;
}

/// Restores a full training state; `config` must describe the same run
/// (run-length fields such as epochs and max_steps may differ).
template <class T>
TrainState<T> restore_train_state(const CheckpointData& ck, const TrainConfig& config, LoaderState& loader) {
  const TrainConfig saved = checkpoint_config(ck);
  nlohmann::json a = to_json(saved), b = to_json(config);
  for (const char* key : {"max_steps", "checkpoint_every", "sample_every", "epochs"}) {
    a.erase(key);
    b.erase(key);
  }
  if (config.family == Family::ProGAN && saved.epochs != config.epochs) {
    throw Error("resume: progressive phase length differs from the checkpoint");
  }
  if (a != b) throw Error("resume: configuration differs from the checkpoint's\ncheckpoint: " + a.dump() + "\nrequested: " + b.dump());

  TrainState<T> st;
  st.config = config;
  st.phases = training_phases(config);
  st.step = ck.meta.at("step").get<std::int64_t>();
  st.phase_index = ck.meta.at("phase_index").get<std::size_t>();
  st.phase_step = ck.meta.at("phase_step").get<std::int64_t>();
  st.latent_batches = ck.meta.at("latent_batches").get<std::int64_t>();
  if (st.phase_index >= st.phases.size()) throw Error("resume: checkpoint phase beyond the schedule");
  ModelPair pair = build_models(config.family, config.arch, checkpoint_stage(ck));
  Rng unused(0);
  st.generator = Network<T>(std::move(pair.generator), unused);
  st.discriminator = Network<T>(std::move(pair.discriminator), unused);
  detail::load_network(st.generator, ck, "generator");
  detail::load_network(st.discriminator, ck, "discriminator");
  st.g_opt = Adam<T>(config.optim);
  st.d_opt = Adam<T>(config.optim);
  detail::load_adam(st.g_opt, ck, "generator");
  detail::load_adam(st.d_opt, ck, "discriminator");
  st.rng = Rng::deserialize(ck.meta.at("rng").get<std::string>());
  const auto& l = ck.meta.at("loader");
  loader = {l.at("epoch").get<std::int64_t>(), l.at("cursor").get<std::int64_t>(),
            l.at("order").get<std::vector<std::int64_t>>(), l.at("rng").get<std::string>()};
  return st;
}

// ---------------------------------------------------------------------------
// Training loop

struct RunOptions {
  std::filesystem::path out_dir;
  /// Continue from the newest checkpoint in out_dir if there is one.
  bool resume = false;
  /// Receives one structured event per log line.
  std::function<void(const nlohmann::json&)> log;
};

struct RunResult {
  std::int64_t steps = 0;
  bool completed = false;
  std::filesystem::path last_checkpoint;
  std::optional<StepMetrics> last_metrics;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
  return dir / ("checkpoint-" + std::to_string(step) + ".ckpt");
}

/// Newest checkpoint-<step>.ckpt in `dir`, if any.
inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
  static const std::regex pattern(R"(checkpoint-(\d+)\.ckpt)");
  std::optional<std::filesystem::path> best;
  std::int64_t best_step = -1;
  if (!std::filesystem::exists(dir)) return best;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pattern)) {
      const std::int64_t s = std::stoll(m[1].str());
      if (s > best_step) best_step = s, best = e.path();
    }
  }
  return best;
}

namespace detail {

/// Keeps only the metrics lines of steps <= `step`.
inline void truncate_metrics_log(const std::filesystem::path& file, std::int64_t step) {
  std::vector<std::string> kept;
  {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("step").get<std::int64_t>() <= step) kept.push_back(line);
    }
  }
  std::ofstream out(file, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace detail

template <class T>
Tensor<T> sample_latents_for_grid(const TrainState<T>& st) {
  Rng rng(derive_seed(st.config.seed, kSampleStream));
  return sample_latents<T>(st.generator.spec(), st.config.sample_count, rng);
}

template <class T>
void write_sample_grid(const std::filesystem::path& path, TrainState<T>& st) {
  Tensor<T> images = generate(st.generator, sample_latents_for_grid(st));
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(images.dim(0)))));
  write_png_gray8(path, make_grid(images, cols));
}

/// Full training run over `data`. Every phase trains for its epochs of
/// full batches at the phase's resolution; the metrics log gets one line per
/// step.
template <class T = float>
RunResult run_training(const TrainConfig& config, const ImageSet& data, const RunOptions& opts) {
  validate(config);
  namespace fs = std::filesystem;
  if (data.resolution < config.arch.resolution) {
    throw Error("dataset resolution " + std::to_string(data.resolution) + " is below the model resolution " +
                std::to_string(config.arch.resolution));
  }
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw Error("cannot create output directory " + opts.out_dir.string() + ": " + ec.message());
  auto log = [&](nlohmann::json j) {
    if (opts.log) opts.log(j);
  };

  DataLoader<T> loader(data, config.batch_size, config.arch.resolution, derive_seed(config.seed, kLoaderStream));
  TrainState<T> st;
  RunResult result;
  const fs::path metrics_file = opts.out_dir / "metrics.jsonl";
  std::optional<fs::path> resume_from = opts.resume ? latest_checkpoint(opts.out_dir) : std::nullopt;
  if (resume_from) {
    LoaderState ls;
    st = restore_train_state<T>(read_checkpoint(*resume_from), config, ls);
    loader.restore(ls);
    detail::truncate_metrics_log(metrics_file, st.step);
    result.last_checkpoint = *resume_from;
    log({{"event", "resume"}, {"checkpoint", resume_from->string()}, {"step", st.step}});
  } else {
    st = init_train_state<T>(config);
    std::ofstream(metrics_file, std::ios::trunc);
  }
  std::ofstream metrics(metrics_file, std::ios::app);
  if (!metrics) throw Error("cannot open " + metrics_file.string());

  auto save = [&] {
    metrics.flush();
    const fs::path p = checkpoint_path(opts.out_dir, st.step);
    save_train_checkpoint(p, st, loader.state());
    result.last_checkpoint = p;
    log({{"event", "checkpoint"}, {"path", p.string()}, {"step", st.step}});
  };
  auto samples = [&] {
    const fs::path p = opts.out_dir / ("samples-" + std::to_string(st.step) + ".png");
    write_sample_grid(p, st);
  };

  for (std::size_t phase = st.phase_index; phase < st.phases.size(); ++phase) {
    if (phase != st.phase_index) enter_phase(st, phase);
    const PhaseSpan& span = st.phases[phase];
    loader.set_resolution(span.stage.resolution);
    const std::int64_t phase_steps = span.epochs * loader.batches_per_epoch();
    log({{"event", "phase"}, {"index", phase}, {"stage", to_json(span.stage)}, {"steps", phase_steps}});
    while (st.phase_step < phase_steps) {
      if (config.max_steps > 0 && st.step >= config.max_steps) {
        save();
        result.steps = st.step;
        return result;
      }
      if (span.stage.phase == Phase::FadeIn) {
        const double a = fade_alpha(st.phase_step, phase_steps);
        st.generator.set_alpha(a);
        st.discriminator.set_alpha(a);
      }
      Tensor<T> real = loader.next_batch();
      StepMetrics m;
      try {
        m = train_step(st, real);
      } catch (const TrainingDiverged& e) {
        const std::string last = result.last_checkpoint.empty() ? "none" : result.last_checkpoint.string();
        throw TrainingDiverged(std::string(e.what()) + "; last good checkpoint: " + last);
      }
      ++st.step;
      ++st.phase_step;
      metrics << to_json(m).dump() << '\n';
      result.last_metrics = m;
      if (config.checkpoint_every > 0 && st.step % config.checkpoint_every == 0) save();
      if (config.sample_every > 0 && st.step % config.sample_every == 0) samples();
    }
    metrics.flush();
    log({{"event", "phase_done"},
         {"index", phase},
         {"step", st.step},
         {"L_D", result.last_metrics ? result.last_metrics->d_loss : 0.0},
         {"L_G", result.last_metrics ? result.last_metrics->g_loss : 0.0}});
    if (phase + 1 < st.phases.size()) {
      if (config.checkpoint_every == 0) save();
      if (config.sample_every == 0) samples();
    }
  }
  if (result.last_checkpoint != checkpoint_path(opts.out_dir, st.step)) save();
  if (config.sample_every == 0 || st.step % config.sample_every != 0) samples();
  result.steps = st.step;
  result.completed = true;
  return result;
}

}  // namespace ganforge
