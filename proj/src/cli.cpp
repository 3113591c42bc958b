#include "priorlens/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "priorlens/blur_synth.hpp"
#include "priorlens/error.hpp"
#include "priorlens/evalkit.hpp"
#include "priorlens/rng.hpp"
#include "priorlens/scenes.hpp"
#include "priorlens/teacher.hpp"
#include "priorlens/trainkit.hpp"

namespace priorlens::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

// {out}/{timestamp}-{name}, suffixed if a run with the same second exists.
fs::path make_run_dir(const fs::path& out, const std::string& name) {
  const auto base = timestamp() + "-" + name;
  auto dir = out / base;
  for (int i = 1; fs::exists(dir); ++i) dir = out / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ValidationError(std::string(what) + " not found: " + path.string());
}

struct TrainOverrides {
  std::string config_path;
  std::string ablation;
  std::optional<int> steps;
  std::optional<int> batch_size;
  std::optional<int> crop;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr_start;
  std::optional<double> lr_end;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> log_every;
  std::optional<int> checkpoint_every;
  std::string hcl_mode;
  bool deterministic = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Flat JSON training config; flags below override its values");
    app->add_option("--ablation", ablation, "Ablation row (Net0, Net0*, Net1..Net6)");
    app->add_option("--steps", steps, "Total optimization steps");
    app->add_option("--batch-size", batch_size, "Batch size");
    app->add_option("--crop", crop, "Random crop size (multiple of 8)");
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--lr-start", lr_start, "Initial learning rate");
    app->add_option("--lr-end", lr_end, "Final learning rate");
    app->add_option("--alpha", alpha, "Perceptual loss weight");
    app->add_option("--beta", beta, "Prior loss weight");
    app->add_option("--log-every", log_every, "Logging interval in steps");
    app->add_option("--checkpoint-every", checkpoint_every, "Checkpoint interval in steps (0: final only)");
    app->add_option("--hcl-mode", hcl_mode, "Distance inside the context loss: norm or mse");
    app->add_flag("--deterministic", deterministic, "Force deterministic single-threaded mode");
  }

  trainkit::TrainConfig resolve() const {
    auto cfg = config_path.empty() ? trainkit::TrainConfig{} : trainkit::TrainConfig::from_json(read_json(config_path));
    if (!ablation.empty()) cfg.ablation = trainkit::ablation_by_name(ablation);
    if (steps) cfg.total_steps = *steps;
    if (batch_size) cfg.batch_size = *batch_size;
    if (crop) cfg.crop = *crop;
    if (seed) cfg.seed = *seed;
    if (lr_start) cfg.lr_start = *lr_start;
    if (lr_end) cfg.lr_end = *lr_end;
    if (alpha) cfg.weights.alpha = *alpha;
    if (beta) cfg.weights.beta = *beta;
    if (log_every) cfg.log_every = *log_every;
    if (checkpoint_every) cfg.checkpoint_every = *checkpoint_every;
    if (hcl_mode == "norm") cfg.hcl_mode = spl::DistanceMode::kNorm;
    else if (hcl_mode == "mse") cfg.hcl_mode = spl::DistanceMode::kMse;
    else if (!hcl_mode.empty()) throw ValidationError("hcl_mode: expected norm or mse, got " + hcl_mode);
    if (deterministic || trainkit::deterministic_from_env()) cfg.deterministic = true;
    cfg.validate();
    return cfg;
  }
};

std::string run_name(const trainkit::TrainConfig& cfg) {
  for (const auto& row : trainkit::ablation_ladder())
    if (row.config == cfg.ablation) {
      std::string name = row.name;
      if (name.back() == '*') name.replace(name.size() - 1, 1, "star");
      return name;
    }
  return "custom";
}

int synth_data(const std::string& sharp_dir, const std::string& out, int pairs, std::uint64_t seed,
               const std::string& preset_name, int scenes, int scene_size, std::optional<double> sigma) {
  if (pairs < 1) throw ValidationError("pairs: must be >= 1");
  if (scenes > 0 && !sharp_dir.empty()) throw ValidationError("sharp-dir: cannot combine with --procedural-scenes");
  if (scenes <= 0 && sharp_dir.empty()) throw ValidationError("sharp-dir: required unless --procedural-scenes is set");
  if (scenes > 0 && (scene_size < 32 || scene_size % 8)) throw ValidationError("scene-size: must be >= 32 and divisible by 8");

  std::vector<Image> sharp;
  std::vector<std::string> names;
  int min_dim = scene_size;
  if (scenes > 0) {
    for (int i = 0; i < scenes; ++i) {
      sharp.push_back(scenes::render_scene(scene_size, scene_size, mix_seed(seed, static_cast<std::uint64_t>(i))));
      std::ostringstream os;
      os << "scene_" << std::setw(4) << std::setfill('0') << i;
      names.push_back(os.str());
    }
  } else {
    if (!fs::is_directory(sharp_dir)) throw ValidationError("sharp-dir: not a directory: " + sharp_dir);
    min_dim = 0;
    for (const auto& e : fs::directory_iterator(sharp_dir))
      if (e.path().extension() == ".png") {
        const auto img = read_png(e.path());
        const int d = std::min(img.height(), img.width());
        min_dim = min_dim == 0 ? d : std::min(min_dim, d);
      }
    if (min_dim == 0) throw ValidationError("sharp-dir: contains no PNG images");
  }

  auto cfg = blur_synth::preset(preset_name, min_dim);
  cfg.seed = seed;
  if (sigma) cfg.noise.sigma = *sigma;
  cfg.validate();

  fs::create_directories(out);
  write_json(fs::path(out) / "synth_config.json",
             {{"dataset", cfg.to_json()}, {"pairs", pairs}, {"preset", preset_name},
              {"source", scenes > 0 ? json("procedural") : json(sharp_dir)}});
  const auto manifest = scenes > 0 ? blur_synth::build_dataset(sharp, names, out, pairs, cfg)
                                   : blur_synth::build_dataset(sharp_dir, out, pairs, cfg);
  std::cout << "wrote " << manifest.pairs.size() << " pairs to " << out << "\n";
  return kExitOk;
}

int train_teacher_cmd(const std::string& out, const std::string& name, int samples, int heldout, int size,
                      teacher::TeacherTrainConfig cfg) {
  if (samples < 2 || heldout < 1) throw ValidationError("samples: need >= 2 training and >= 1 held-out samples");
  if (size < 8 || size % 8) throw ValidationError("size: must be a positive multiple of 8");
  if (cfg.steps < 1) throw ValidationError("steps: must be >= 1");
  if (cfg.batch_size < 1) throw ValidationError("batch_size: must be >= 1");
  const auto dir = make_run_dir(out, name);
  write_json(dir / "config.json", {{"samples", samples}, {"heldout", heldout}, {"size", size}, {"steps", cfg.steps},
                                   {"batch_size", cfg.batch_size}, {"learning_rate", cfg.learning_rate},
                                   {"weight_decay", cfg.weight_decay}, {"seed", cfg.seed}});
  const auto train = scenes::make_shape_classification_set(samples, size, mix_seed(cfg.seed, 100));
  const auto held = scenes::make_shape_classification_set(heldout, size, mix_seed(cfg.seed, 200));
  cfg.log_path = dir / "teacher_log.csv";
  const auto result = teacher::train_teacher(train, held, cfg);
  result.model.save(dir / "teacher.plck");
  write_json(dir / "summary.json", json{{"heldout_accuracy", result.heldout_accuracy},
                                    {"checksum", result.model.checksum()},
                                    {"arch_descriptor", result.model.arch_descriptor()}});
  std::cout << "teacher held-out top-1 " << result.heldout_accuracy << "\n" << (dir / "teacher.plck").string() << "\n";
  return kExitOk;
}

int train_cmd(const TrainOverrides& o, const std::string& manifest_path, const std::string& teacher_path,
              const std::string& out, const std::string& resume) {
  const auto cfg = o.resolve();
  require_file(manifest_path, "manifest");
  require_file(teacher_path, "teacher checkpoint");
  if (!resume.empty()) require_file(resume, "resume checkpoint");
  auto teacher = teacher::TeacherModel::load(teacher_path);
  auto pairs = trainkit::load_pairs(blur_synth::Manifest::load(manifest_path));

  const auto dir = make_run_dir(out, run_name(cfg));
  write_json(dir / "config.json", cfg.to_json());
  trainkit::Trainer trainer(cfg, std::move(teacher), std::move(pairs));
  trainkit::RunOptions options;
  options.out_dir = dir;
  if (!resume.empty()) options.resume_from = resume;
  options.on_log = [](const trainkit::StepLosses& s) {
    std::cout << "step " << s.step << " total " << s.total << " l1 " << s.l1 << "\n";
  };
  const auto result = trainkit::train(trainer, options);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  if (result.final_checkpoint) std::cout << result.final_checkpoint->string() << "\n";
  return kExitOk;
}

int ablate_cmd(const TrainOverrides& o, const std::string& manifest_path, const std::string& eval_manifest,
               const std::string& teacher_path, const std::string& out, const std::vector<std::string>& only) {
  const auto cfg = o.resolve();
  require_file(manifest_path, "manifest");
  require_file(teacher_path, "teacher checkpoint");
  trainkit::AblationOptions options;
  for (const auto& n : only) options.names.push_back(trainkit::canonical_ablation_name(n));
  const auto teacher = teacher::TeacherModel::load(teacher_path);
  const auto train_pairs = trainkit::load_pairs(blur_synth::Manifest::load(manifest_path));
  const auto eval_pairs = eval_manifest.empty() ? train_pairs
                                                : trainkit::load_pairs(blur_synth::Manifest::load(eval_manifest));

  const auto dir = make_run_dir(out, "ablation");
  write_json(dir / "config.json", cfg.to_json());
  options.out_dir = dir;
  options.on_row = [](const trainkit::AblationRow& r) {
    std::cout << r.name << " " << r.status;
    if (r.psnr) std::cout << " psnr " << *r.psnr;
    std::cout << "\n";
  };
  const auto rows = trainkit::run_ablation(train_pairs, eval_pairs, teacher, cfg, options);
  trainkit::write_ablation_csv(dir / "ablation.csv", rows);
  std::cout << (dir / "ablation.csv").string() << "\n";
  return kExitOk;
}

int eval_cmd(const std::string& checkpoint, const std::string& manifest, const std::string& out, bool save_png) {
  require_file(checkpoint, "checkpoint");
  require_file(manifest, "manifest");
  const auto dir = make_run_dir(out, "eval");
  write_json(dir / "config.json", {{"checkpoint", checkpoint}, {"manifest", manifest}, {"save_png", save_png}});
  const auto report = evalkit::evaluate_checkpoint(
      checkpoint, manifest, save_png ? std::optional<fs::path>(dir / "deblurred") : std::nullopt);
  report.save(dir / "report.json");
  std::cout << "mean psnr " << report.mean_psnr << " mean ssim " << report.mean_ssim << "\n"
            << (dir / "report.json").string() << "\n";
  return kExitOk;
}

int deblur_cmd(const std::string& checkpoint, const std::string& input, const std::string& output) {
  require_file(checkpoint, "checkpoint");
  require_file(input, "input image");
  auto model = trainkit::PriorDeblurModel::from_checkpoint(checkpoint);
  const auto blurry = read_png(input);
  const fs::path out_path(output);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_png(out_path, model.restore(blurry));
  return kExitOk;
}

int viz_cmd(const std::string& checkpoint, const std::string& input, const std::string& out, std::string id,
            int upscale) {
  require_file(checkpoint, "checkpoint");
  require_file(input, "input image");
  if (upscale < 1) throw ValidationError("upscale: must be >= 1");
  auto model = trainkit::PriorDeblurModel::from_checkpoint(checkpoint);
  if (id.empty()) id = fs::path(input).stem().string();
  const auto files = evalkit::visualize_priors(model, read_png(input), out, id, upscale, &std::cerr);
  for (const auto& f : files) std::cout << f.string() << "\n";
  return kExitOk;
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"priorlens: semantic-prior guided deblurring toolkit"};
  app.require_subcommand(1);
  app.footer(
      "Training flags override values read from --config. "
      "PRIORLENS_DETERMINISTIC=1 forces deterministic mode for every subcommand.");

  std::string sharp_dir, out, preset = "moderate";
  int pairs = 8;
  std::uint64_t seed = 0;
  int scenes = 0;
  int scene_size = 64;
  std::optional<double> sigma;
  auto* synth = app.add_subcommand("synth-data", "Synthesize blurry/sharp pairs and a manifest");
  synth->add_option("--sharp-dir", sharp_dir, "Directory of sharp PNG images");
  synth->add_option("--out", out, "Output dataset directory")->required();
  synth->add_option("--pairs", pairs, "Number of pairs");
  synth->add_option("--seed", seed, "Dataset seed");
  synth->add_option("--preset", preset, "Blur preset: mild, moderate, severe");
  synth->add_option("--procedural-scenes", scenes, "Render this many procedural sharp scenes instead of --sharp-dir");
  synth->add_option("--scene-size", scene_size, "Procedural scene size in pixels");
  synth->add_option("--sigma", sigma, "Noise standard deviation");

  std::string name = "teacher";
  int samples = 2000, heldout = 500, size = 32;
  teacher::TeacherTrainConfig tcfg;
  auto* tt = app.add_subcommand("train-teacher", "Train and freeze the classification teacher");
  tt->add_option("--out", out, "Run root directory")->required();
  tt->add_option("--name", name, "Run name");
  tt->add_option("--samples", samples, "Training samples");
  tt->add_option("--heldout", heldout, "Held-out samples");
  tt->add_option("--size", size, "Sample size in pixels");
  tt->add_option("--steps", tcfg.steps, "Optimization steps");
  tt->add_option("--batch-size", tcfg.batch_size, "Batch size");
  tt->add_option("--lr", tcfg.learning_rate, "Learning rate");
  tt->add_option("--seed", tcfg.seed, "Seed");

  TrainOverrides train_over;
  std::string manifest, teacher_path, resume;
  auto* train = app.add_subcommand("train", "Train a deblurring model");
  train_over.attach(train);
  train->add_option("--manifest", manifest, "Training manifest")->required();
  train->add_option("--teacher", teacher_path, "Frozen teacher checkpoint")->required();
  train->add_option("--out", out, "Run root directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  TrainOverrides ablate_over;
  std::string eval_manifest;
  std::vector<std::string> only;
  auto* ablate = app.add_subcommand("ablate", "Train and score every ablation row");
  ablate_over.attach(ablate);
  ablate->add_option("--manifest", manifest, "Training manifest")->required();
  ablate->add_option("--eval-manifest", eval_manifest, "Evaluation manifest (default: training manifest)");
  ablate->add_option("--teacher", teacher_path, "Frozen teacher checkpoint")->required();
  ablate->add_option("--out", out, "Run root directory")->required();
  ablate->add_option("--only", only, "Subset of rows");

  std::string checkpoint;
  bool save_png = false;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint, "Deblur checkpoint")->required();
  eval->add_option("--manifest", manifest, "Test manifest")->required();
  eval->add_option("--out", out, "Run root directory")->required();
  eval->add_flag("--save-png", save_png, "Also write deblurred images");

  std::string input, output;
  auto* deblur = app.add_subcommand("deblur", "Deblur a single image");
  deblur->add_option("--checkpoint", checkpoint, "Deblur checkpoint")->required();
  deblur->add_option("--input", input, "Blurry PNG")->required();
  deblur->add_option("--output", output, "Output PNG")->required();

  std::string image_id;
  int upscale = 1;
  auto* viz = app.add_subcommand("viz-priors", "Write colormapped prior maps per level");
  viz->add_option("--checkpoint", checkpoint, "Deblur checkpoint with a prior branch")->required();
  viz->add_option("--input", input, "Blurry PNG")->required();
  viz->add_option("--out", out, "Output directory")->required();
  viz->add_option("--id", image_id, "Image id used in file names (default: input stem)");
  viz->add_option("--upscale", upscale, "Integer upscale factor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() == 0) return kExitOk;
    std::cerr << app.help();
    return kExitValidation;
  }

  try {
    if (trainkit::deterministic_from_env()) trainkit::set_deterministic(true);
    if (*synth) return synth_data(sharp_dir, out, pairs, seed, preset, scenes, scene_size, sigma);
    if (*tt) return train_teacher_cmd(out, name, samples, heldout, size, tcfg);
    if (*train) return train_cmd(train_over, manifest, teacher_path, out, resume);
    if (*ablate) return ablate_cmd(ablate_over, manifest, eval_manifest, teacher_path, out, only);
    if (*eval) return eval_cmd(checkpoint, manifest, out, save_png);
    if (*deblur) return deblur_cmd(checkpoint, input, output);
    if (*viz) return viz_cmd(checkpoint, input, out, image_id, upscale);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  std::cerr << app.help();
  return kExitValidation;
}

}  // namespace priorlens::cli
