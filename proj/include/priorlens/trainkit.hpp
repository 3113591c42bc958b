#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "priorlens/ablation.hpp"
#include "priorlens/blur_synth.hpp"
#include "priorlens/checkpoint.hpp"
#include "priorlens/ide.hpp"
#include "priorlens/image.hpp"
#include "priorlens/losses.hpp"
#include "priorlens/spl.hpp"
#include "priorlens/teacher.hpp"

namespace priorlens::trainkit {

struct TrainConfig {
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  int batch_size = 4;
  int crop = 64;
  int total_steps = 2000;
  std::uint64_t seed = 0;
  AblationConfig ablation = ablation_by_name("Net6");
  losses::LossWeights weights{};
  spl::DistanceMode hcl_mode = spl::DistanceMode::kNorm;
  bool hflip = true;
  int log_every = 10;
  int checkpoint_every = 0;  // 0: final checkpoint only
  bool deterministic = true;

  // Throws ValidationError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

// lr_end + (lr_start - lr_end) (1 + cos(pi step / total_steps)) / 2.
double cosine_lr(int step, const TrainConfig& config);

// Single-threaded, deterministic kernels. Also forced by PRIORLENS_DETERMINISTIC=1.
void set_deterministic(bool on);
bool deterministic_from_env();

struct TrainingPair {
  std::string id;
  Image blurry;
  Image sharp;
};

std::vector<TrainingPair> load_pairs(const blur_synth::Manifest& manifest);

// Student + cross-level fusion + deblurring UNet, assembled per ablation row.
// Construction is seeded; the UNet is built first so all ablations share its
// initial weights.
class PriorDeblurModel {
 public:
  PriorDeblurModel(const AblationConfig& ablation, std::uint64_t seed, PyramidSpec spec = {});

  struct Output {
    torch::Tensor restored;               // unclamped
    std::optional<FeaturePyramid> m;      // raw student pyramid
    std::optional<FeaturePyramid> f_pri;  // fused priors (== m without CLC)
  };
  Output forward(const torch::Tensor& blurry);

  // Fused prior pyramid; requires a student.
  FeaturePyramid priors(const torch::Tensor& blurry);

  // Inference on arbitrary-size images: reflect-pads to a multiple of 8, clamps.
  Image restore(const Image& blurry);

  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  std::vector<torch::Tensor> parameters() const;

  const AblationConfig& ablation() const { return ablation_; }
  const PyramidSpec& spec() const { return spec_; }
  bool has_student() const { return static_cast<bool>(student_); }
  std::string arch_descriptor() const;

  spl::StudentNet& student() { return student_; }
  spl::Clc& clc() { return clc_; }
  ide::DeblurNet& deblur() { return deblur_; }

  void export_to(checkpoint::Container& c) const;
  void import_from(const checkpoint::Container& c);
  static PriorDeblurModel from_checkpoint(const std::filesystem::path& path);

 private:
  AblationConfig ablation_;
  PyramidSpec spec_;
  ide::DeblurNet deblur_{nullptr};
  spl::StudentNet student_{nullptr};
  spl::Clc clc_{nullptr};
};

struct StepLosses {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
  std::optional<double> prior;
};

// Optimizes student, fusion and deblurring branch jointly under the total
// loss with AdamW and per-step cosine annealing. The teacher stays frozen.
class Trainer {
 public:
  Trainer(TrainConfig config, teacher::TeacherModel teacher, std::vector<TrainingPair> data);

  // One optimization step at the current step index; returns the losses
  // evaluated before the update.
  StepLosses step();
  int current_step() const { return step_; }
  bool finished() const { return step_ >= config_.total_steps; }

  // Losses of the current model on the fixed full-image batch of the first
  // `count` pairs, without updating anything.
  StepLosses evaluate_losses(std::size_t count);

  void save_checkpoint(const std::filesystem::path& path) const;
  // Restores model weights, optimizer moments and the step counter.
  void resume(const std::filesystem::path& path);

  PriorDeblurModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  const teacher::TeacherModel& teacher() const { return teacher_; }

  // Set when a step produced a non-finite parameter; the diagnostic dump goes here.
  std::optional<std::filesystem::path> dump_dir;

 private:
  struct Batch {
    torch::Tensor blurry;
    torch::Tensor sharp;
  };
  Batch sample_batch(int step) const;
  losses::LossBreakdown compute_losses(const torch::Tensor& blurry, const torch::Tensor& sharp);
  void check_parameters_finite(const losses::LossBreakdown& losses) const;

  TrainConfig config_;
  teacher::TeacherModel teacher_;
  std::vector<TrainingPair> data_;
  PriorDeblurModel model_;
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  int step_ = 0;
};

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.csv, train.log, checkpoints
  std::optional<int> stop_at_step;               // pause early (resume tests)
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const StepLosses&)> on_log;
};

struct TrainResult {
  std::vector<StepLosses> log;  // logged steps
  std::vector<std::string> warnings;
  std::optional<std::filesystem::path> final_checkpoint;
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
};

// Runs the loop to completion (or stop_at_step), logging every log_every
// steps and at the final step. Net0*-style configs train with a warning.
TrainResult train(Trainer& trainer, const RunOptions& options = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLosses>& log);

struct AblationRow {
  std::string name;
  AblationConfig config;
  std::string status;  // "ok", "unstable", or "failed: <reason>"
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> total;
  std::optional<double> l1;
  std::optional<double> perceptual;
  std::optional<double> prior;
};

struct AblationOptions {
  std::vector<std::string> names;  // empty: all eight rows
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const AblationRow&)> on_row;
};

// Trains every configuration with identical seed and budget, then scores
// each on `eval_pairs`. Failures are recorded per row; the sweep continues.
std::vector<AblationRow> run_ablation(const std::vector<TrainingPair>& train_pairs,
                                      const std::vector<TrainingPair>& eval_pairs,
                                      const teacher::TeacherModel& teacher, const TrainConfig& base,
                                      const AblationOptions& options = {});

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

}  // namespace priorlens::trainkit
