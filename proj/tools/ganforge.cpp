// ganforge: command-line front end for dataset generation, training and
// evaluation.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ganforge/checkpoint.hpp"
#include "ganforge/data.hpp"
#include "ganforge/metrics.hpp"
#include "ganforge/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ganforge;

namespace {

struct UsageError : Error {
  using Error::Error;
};

void log_line(json j) {
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  j["ts"] = std::chrono::duration<double>(now).count();
  std::cerr << j.dump() << std::endl;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& config = {}) {
  if (flag) return *flag;
  if (config.contains("seed")) return config.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("GANFORGE_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("GANFORGE_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

struct TrainFlags {
  std::optional<std::string> config_file, model, loss, data, out;
  std::optional<int> resolution, gd_rate, width_divisor;
  std::optional<std::int64_t> epochs, batch, checkpoint_every, sample_every, sample_count, max_steps;
  std::optional<double> lr, beta1, beta2, lambda, label_smooth, noise_scale;
  std::optional<std::uint64_t> seed;
  bool no_minibatch_stddev = false, no_generator_batchnorm = false, resume = false;
};

void add_train(CLI::App& app, TrainFlags& f) {
  auto* cmd = app.add_subcommand("train", "Train a generator/discriminator pair");
  cmd->add_option("--config", f.config_file, "Flat JSON config; flags override its values");
  cmd->add_option("--model", f.model, "dcgan | srresnet | progan")
      ->check(CLI::IsMember({"dcgan", "srresnet", "progan"}));
  cmd->add_option("--loss", f.loss, "gan | lsgan | wgan | wgan_gp | dragan")
      ->check(CLI::IsMember({"gan", "lsgan", "wgan", "wgan_gp", "dragan"}));
  cmd->add_option("--data", f.data, "Dataset directory (PNG files + manifest.json)");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--resolution", f.resolution, "Training (final) resolution")->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", f.epochs, "Epochs (ProGAN: per progressive phase)")->check(CLI::PositiveNumber);
  cmd->add_option("--batch", f.batch, "Batch size")->check(CLI::Range(2, 1 << 20));
  cmd->add_option("--lr", f.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  cmd->add_option("--beta1", f.beta1, "Adam beta1")->check(CLI::Range(0.0, 0.999999));
  cmd->add_option("--beta2", f.beta2, "Adam beta2")->check(CLI::Range(0.0, 0.999999));
  cmd->add_option("--gd-rate", f.gd_rate, "Generator updates per discriminator update")->check(CLI::PositiveNumber);
  cmd->add_option("--lambda", f.lambda, "Gradient penalty weight")->check(CLI::NonNegativeNumber);
  cmd->add_option("--label-smooth", f.label_smooth, "Real-label target (1 disables smoothing)")
      ->check(CLI::Range(1e-6, 1.0));
  cmd->add_option("--noise-scale", f.noise_scale, "DRAGAN noise bound in units of the batch stddev")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--width-divisor", f.width_divisor, "Divide every channel width by this")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--no-minibatch-stddev", f.no_minibatch_stddev, "DCGAN: drop the minibatch-stddev channel");
  cmd->add_flag("--no-generator-batchnorm", f.no_generator_batchnorm, "SRResNet: no batch norm in the generator");
  cmd->add_option("--checkpoint-every", f.checkpoint_every, "Checkpoint interval in steps")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--sample-every", f.sample_every, "Sample-grid interval in steps")->check(CLI::NonNegativeNumber);
  cmd->add_option("--sample-count", f.sample_count, "Images per sample grid")->check(CLI::PositiveNumber);
  cmd->add_option("--max-steps", f.max_steps, "Stop after this many steps")->check(CLI::NonNegativeNumber);
  cmd->add_option("--seed", f.seed, "Run seed (falls back to GANFORGE_SEED)");
  cmd->add_flag("--resume", f.resume, "Continue from the newest checkpoint in --out");
}

int run_train(const TrainFlags& f) {
  json file = f.config_file ? read_json_file(*f.config_file) : json::object();
  if (!file.is_object()) throw UsageError("config file must hold a flat JSON object");
  auto take_string = [&](const std::optional<std::string>& flag, const char* key) -> std::optional<std::string> {
    if (flag) return flag;
    if (file.contains(key)) return file.at(key).get<std::string>();
    return std::nullopt;
  };
  const auto data = take_string(f.data, "data");
  const auto out = take_string(f.out, "out");
  if (!data) throw UsageError("train: --data is required");
  if (!out) throw UsageError("train: --out is required");
  file.erase("data");
  file.erase("out");

  const Family family = parse_family(take_string(f.model, "model").value_or("dcgan"));
  TrainConfig cfg;
  try {
    cfg = train_config_from_json(file, default_train_config(family));
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  cfg.family = family;

  const DatasetManifest manifest = read_manifest(*data);
  if (!f.resolution && !file.contains("resolution")) cfg.arch.resolution = std::min(manifest.resolution, 256);
  if (f.loss) cfg.loss.kind = parse_loss(*f.loss);
  if (f.resolution) cfg.arch.resolution = *f.resolution;
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.batch) cfg.batch_size = *f.batch;
  if (f.lr) cfg.optim.learning_rate = *f.lr;
  if (f.beta1) cfg.optim.beta1 = *f.beta1;
  if (f.beta2) cfg.optim.beta2 = *f.beta2;
  if (f.gd_rate) cfg.gd_rate = *f.gd_rate;
  if (f.lambda) cfg.loss.penalty.lambda = *f.lambda;
  if (f.label_smooth) cfg.loss.real_label_target = *f.label_smooth;
  if (f.noise_scale) cfg.loss.penalty.noise_scale = *f.noise_scale;
  if (f.width_divisor) cfg.arch.width_divisor = *f.width_divisor;
  if (f.no_minibatch_stddev) cfg.arch.minibatch_stddev = false;
  if (f.no_generator_batchnorm) cfg.arch.generator_batchnorm = false;
  if (f.checkpoint_every) cfg.checkpoint_every = *f.checkpoint_every;
  if (f.sample_every) cfg.sample_every = *f.sample_every;
  if (f.sample_count) cfg.sample_count = *f.sample_count;
  if (f.max_steps) cfg.max_steps = *f.max_steps;
  cfg.seed = resolve_seed(f.seed, file);
  try {
    validate(cfg);
    build_models(cfg.family, cfg.arch);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  fs::create_directories(*out);
  json resolved = to_json(cfg);
  resolved["data"] = *data;
  resolved["out"] = *out;
  std::ofstream(fs::path(*out) / "config.json") << resolved.dump(2) << '\n';
  log_line({{"level", "info"}, {"event", "config"}, {"config", resolved}});

  const ImageSet images = load_images(manifest);
  RunOptions opts;
  opts.out_dir = *out;
  opts.resume = f.resume;
  opts.log = [](const json& j) {
    json line = j;
    line["level"] = "info";
    log_line(std::move(line));
  };
  const RunResult r = run_training<float>(cfg, images, opts);
  std::cout << (r.completed ? "training complete" : "training stopped") << ": " << r.steps << " steps";
  if (r.last_metrics) std::cout << ", L_D " << r.last_metrics->d_loss << ", L_G " << r.last_metrics->g_loss;
  std::cout << "\ncheckpoint: " << r.last_checkpoint.string() << '\n';
  return 0;
}

std::string frame_name(const char* prefix, std::int64_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_%05lld.png", prefix, static_cast<long long>(i));
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN training and evaluation toolkit"};
  app.require_subcommand(1);

  std::string phantom_out;
  std::int64_t phantom_count = 2000;
  int phantom_res = 32;
  std::optional<std::uint64_t> phantom_seed;
  auto* phantom = app.add_subcommand("make-phantom", "Write a synthetic head-phantom dataset");
  phantom->add_option("--out", phantom_out, "Dataset directory")->required();
  phantom->add_option("--count", phantom_count, "Number of images")->check(CLI::PositiveNumber);
  phantom->add_option("--resolution", phantom_res, "Image size (power of two)")->check(CLI::PositiveNumber);
  phantom->add_option("--seed", phantom_seed, "Seed (falls back to GANFORGE_SEED)");

  TrainFlags train_flags;
  add_train(app, train_flags);

  std::string gen_ckpt, gen_out;
  std::int64_t gen_count = 16;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("generate", "Write generated images as PNG files");
  gen->add_option("--checkpoint", gen_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  gen->add_option("--count", gen_count, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Latent seed (falls back to GANFORGE_SEED)");
  gen->add_option("--out", gen_out, "Output directory")->required();

  std::string eval_ckpt, eval_data, eval_out;
  std::optional<std::int64_t> eval_samples;
  std::optional<std::uint64_t> eval_seed;
  auto* eval = app.add_subcommand("evaluate", "Realism and diversity of generated samples");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Reference dataset directory")->required();
  eval->add_option("--samples", eval_samples, "Generated samples (default: dataset size)")
      ->check(CLI::Range(17, 1 << 30));
  eval->add_option("--seed", eval_seed, "Latent seed (falls back to GANFORGE_SEED)");
  eval->add_option("--out", eval_out, "Report JSON path")->required();

  std::string interp_ckpt, interp_out;
  int interp_steps = 9;
  std::optional<std::uint64_t> interp_seed;
  auto* interp = app.add_subcommand("interpolate", "Render a latent-space interpolation strip");
  interp->add_option("--checkpoint", interp_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  interp->add_option("--steps", interp_steps, "Frames including both endpoints")->check(CLI::Range(2, 4096));
  interp->add_option("--seed", interp_seed, "Latent seed (falls back to GANFORGE_SEED)");
  interp->add_option("--out", interp_out, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"level", "error"}, {"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  try {
    if (*phantom) {
      const std::uint64_t seed = resolve_seed(phantom_seed);
      DatasetManifest m = make_phantom_dataset(phantom_out, phantom_count, phantom_res, seed);
      log_line({{"level", "info"}, {"event", "phantom"}, {"out", phantom_out}, {"count", m.image_count}});
      std::cout << "wrote " << m.image_count << " phantom images (" << m.resolution << "x" << m.resolution
                << ") to " << phantom_out << '\n';
    } else if (app.got_subcommand("train")) {
      return run_train(train_flags);
    } else if (*gen) {
      const CheckpointData ck = read_checkpoint(gen_ckpt);
      Network<float> g = load_generator<float>(ck);
      Rng rng(resolve_seed(gen_seed));
      Tensor<float> images = generate(g, sample_latents<float>(g.spec(), gen_count, rng));
      fs::create_directories(gen_out);
      for (std::int64_t i = 0; i < gen_count; ++i) {
        write_png_gray8(fs::path(gen_out) / frame_name("sample", i), to_gray_image(images, i));
      }
      log_line({{"level", "info"}, {"event", "generate"}, {"count", gen_count}, {"out", gen_out}});
      std::cout << "wrote " << gen_count << " images to " << gen_out << '\n';
    } else if (*eval) {
      const CheckpointData ck = read_checkpoint(eval_ckpt);
      Network<float> g = load_generator<float>(ck);
      const int res = g.spec().output_resolution;
      const ImageSet data = load_images(read_manifest(eval_data));
      std::vector<std::int64_t> all(static_cast<std::size_t>(data.count()));
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
      const ImageMatrix reference = to_matrix(make_batch<float>(data, all, res));
      const std::int64_t n = eval_samples.value_or(data.count());
      Rng rng(resolve_seed(eval_seed));
      const ImageMatrix generated = to_matrix(generate(g, sample_latents<float>(g.spec(), n, rng)));
      const MetricsReport report = evaluate_sets(reference, generated);
      std::ofstream(eval_out) << report.to_json().dump(2) << '\n';
      if (report.zero_norm_images > 0) {
        log_line({{"level", "warning"}, {"event", "zero_norm_images"}, {"count", report.zero_norm_images}});
      }
      log_line({{"level", "info"}, {"event", "evaluate"}, {"report", report.to_json()}});
      std::cout << "rho " << report.rho << "  sigma " << report.sigma << "  delta " << report.delta
                << "  (explained " << report.explained_fraction << ", " << report.sample_count << " samples)\n";
    } else if (*interp) {
      const CheckpointData ck = read_checkpoint(interp_ckpt);
      Network<float> g = load_generator<float>(ck);
      Rng rng(resolve_seed(interp_seed));
      Tensor<float> z = sample_latents<float>(g.spec(), 2, rng);
      const std::int64_t dim = z.dim(1);
      Tensor<float> za(Shape{dim}, std::vector<float>(z.ptr(), z.ptr() + dim));
      Tensor<float> zb(Shape{dim}, std::vector<float>(z.ptr() + dim, z.ptr() + 2 * dim));
      Tensor<float> frames = interpolate(g, za, zb, interp_steps);
      write_png_gray8(interp_out, make_grid(frames, interp_steps));
      log_line({{"level", "info"}, {"event", "interpolate"}, {"steps", interp_steps}, {"out", interp_out}});
      std::cout << "wrote " << interp_steps << "-frame interpolation to " << interp_out << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << json{{"level", "error"}, {"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"level", "error"}, {"error", "fatal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
