#include "priorlens/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "priorlens/checkpoint.hpp"
#include "priorlens/error.hpp"
#include "priorlens/evalkit.hpp"
#include "priorlens/rng.hpp"

namespace priorlens::trainkit {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError("config field '" + field + "': " + why);
  };
  if (!(lr_start > 0.0)) fail("lr_start", "must be > 0");
  if (!(lr_end >= 0.0)) fail("lr_end", "must be >= 0");
  if (lr_end > lr_start) fail("lr_end", "must not exceed lr_start");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (crop < kStrideMultiple || crop % kStrideMultiple != 0) fail("crop", "must be a positive multiple of 8");
  if (total_steps < 1) fail("total_steps", "must be >= 1");
  if (log_every < 1) fail("log_every", "must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  if (!(weights.alpha >= 0.0)) fail("alpha", "must be >= 0");
  if (!(weights.beta >= 0.0)) fail("beta", "must be >= 0");
  try {
    ablation.validate();
  } catch (const ValidationError& e) {
    fail("ablation", e.what());
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr_start", lr_start},
          {"lr_end", lr_end},
          {"beta1", beta1},
          {"beta2", beta2},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"crop", crop},
          {"total_steps", total_steps},
          {"seed", seed},
          {"ablation", ablation.to_json()},
          {"alpha", weights.alpha},
          {"beta", weights.beta},
          {"hcl_mode", hcl_mode == spl::DistanceMode::kNorm ? "norm" : "mse"},
          {"hflip", hflip},
          {"log_every", log_every},
          {"checkpoint_every", checkpoint_every},
          {"deterministic", deterministic}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  static const std::set<std::string> known = {"lr_start", "lr_end", "beta1", "beta2", "weight_decay", "batch_size",
                                              "crop", "total_steps", "seed", "ablation", "alpha", "beta",
                                              "hcl_mode", "hflip", "log_every", "checkpoint_every", "deterministic"};
  for (const auto& item : j.items())
    if (!known.contains(item.key())) throw ValidationError("config field '" + item.key() + "': unknown field");

  TrainConfig c;
  auto read = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(std::string("config field '") + key + "': wrong type");
    }
  };
  read("lr_start", c.lr_start);
  read("lr_end", c.lr_end);
  read("beta1", c.beta1);
  read("beta2", c.beta2);
  read("weight_decay", c.weight_decay);
  read("batch_size", c.batch_size);
  read("crop", c.crop);
  read("total_steps", c.total_steps);
  read("seed", c.seed);
  read("alpha", c.weights.alpha);
  read("beta", c.weights.beta);
  read("hflip", c.hflip);
  read("log_every", c.log_every);
  read("checkpoint_every", c.checkpoint_every);
  read("deterministic", c.deterministic);
  if (j.contains("hcl_mode")) {
    const auto mode = j.at("hcl_mode").get<std::string>();
    if (mode == "norm") c.hcl_mode = spl::DistanceMode::kNorm;
    else if (mode == "mse") c.hcl_mode = spl::DistanceMode::kMse;
    else throw ValidationError("config field 'hcl_mode': expected norm or mse");
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    try {
      c.ablation = a.is_string() ? ablation_by_name(a.get<std::string>()) : AblationConfig::from_json(a);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("config field 'ablation': ") + e.what());
    }
  }
  c.validate();
  return c;
}

double cosine_lr(int step, const TrainConfig& config) {
  if (step < 0 || step > config.total_steps)
    throw ValidationError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(config.total_steps) + "]");
  const double progress = static_cast<double>(step) / config.total_steps;
  return config.lr_end + 0.5 * (config.lr_start - config.lr_end) * (1.0 + std::cos(std::numbers::pi * progress));
}

void set_deterministic(bool on) {
  if (on) torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(on, /*warn_only=*/false);
}

bool deterministic_from_env() {
  const char* v = std::getenv("PRIORLENS_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

std::vector<TrainingPair> load_pairs(const blur_synth::Manifest& manifest) {
  std::vector<TrainingPair> pairs;
  for (const auto& p : manifest.pairs) {
    TrainingPair tp{p.id, read_png(manifest.blurry_path(p)), read_png(manifest.sharp_path(p))};
    if (tp.blurry.height() != tp.sharp.height() || tp.blurry.width() != tp.sharp.width())
      throw ValidationError("pair " + p.id + ": blurry and sharp sizes differ");
    pairs.push_back(std::move(tp));
  }
  if (pairs.empty()) throw ValidationError("manifest lists no pairs");
  return pairs;
}

// ---------------------------------------------------------------------------
// PriorDeblurModel

PriorDeblurModel::PriorDeblurModel(const AblationConfig& ablation, std::uint64_t seed, PyramidSpec spec)
    : ablation_(ablation), spec_(spec) {
  ablation_.validate();
  torch::manual_seed(seed);
  ide::DeblurNetOptions opts;
  opts.widths = spec;
  opts.prior_spec = spec;
  opts.mode = ablation.embedding;
  opts.use_mla = ablation.use_mla;
  deblur_ = ide::DeblurNet(opts);
  if (ablation.needs_student()) {
    torch::manual_seed(mix_seed(seed, 1));
    student_ = spl::StudentNet(spec);
    if (ablation.use_clc) {
      torch::manual_seed(mix_seed(seed, 2));
      clc_ = spl::Clc(spec);
    }
  }
}

PriorDeblurModel::Output PriorDeblurModel::forward(const torch::Tensor& blurry) {
  Output out;
  if (student_) {
    out.m = student_->forward(blurry);
    out.f_pri = clc_ ? clc_->forward(*out.m) : *out.m;
  }
  out.restored = deblur_->forward(blurry, ablation_.uses_priors() ? &*out.f_pri : nullptr);
  return out;
}

FeaturePyramid PriorDeblurModel::priors(const torch::Tensor& blurry) {
  if (!student_) throw ValidationError("this model has no prior branch");
  auto m = student_->forward(blurry);
  return clc_ ? clc_->forward(m) : m;
}

Image PriorDeblurModel::restore(const Image& blurry) {
  torch::NoGradGuard guard;
  auto x = to_tensor(blurry).unsqueeze(0);
  const auto h = x.size(2);
  const auto w = x.size(3);
  const auto pad_h = (kStrideMultiple - h % kStrideMultiple) % kStrideMultiple;
  const auto pad_w = (kStrideMultiple - w % kStrideMultiple) % kStrideMultiple;
  if (pad_h || pad_w) {
    namespace F = torch::nn::functional;
    x = F::pad(x, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReflect));
  }
  auto y = forward(x).restored.clamp(0.0, 1.0);
  y = y.index({0, torch::indexing::Slice(), torch::indexing::Slice(0, h), torch::indexing::Slice(0, w)});
  return from_tensor(y);
}

std::vector<std::pair<std::string, torch::Tensor>> PriorDeblurModel::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto append = [&](const torch::nn::Module& m, const std::string& prefix) {
    for (const auto& item : m.named_parameters(true)) out.emplace_back(prefix + item.key(), item.value());
  };
  append(*deblur_, "deblur.");
  if (student_) append(*student_, "student.");
  if (clc_) append(*clc_, "clc.");
  return out;
}

std::vector<torch::Tensor> PriorDeblurModel::parameters() const {
  std::vector<torch::Tensor> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::string PriorDeblurModel::arch_descriptor() const {
  std::ostringstream s;
  s << "prior-deblur/unet(c=" << spec_[0] << "," << spec_[1] << "," << spec_[2] << ")"
    << ";embedding=" << to_string(ablation_.embedding) << ";mla=" << ablation_.use_mla
    << ";student=" << has_student() << ";clc=" << static_cast<bool>(clc_);
  return s.str();
}

void PriorDeblurModel::export_to(checkpoint::Container& c) const {
  c.header["arch_descriptor"] = arch_descriptor();
  c.header["ablation"] = ablation_.to_json();
  c.header["embedding_mode"] = to_string(ablation_.embedding);
  c.header["channels"] = spec_.channels;
  checkpoint::export_module(c, *deblur_, "model.deblur.");
  if (student_) checkpoint::export_module(c, *student_, "model.student.");
  if (clc_) checkpoint::export_module(c, *clc_, "model.clc.");
}

void PriorDeblurModel::import_from(const checkpoint::Container& c) {
  if (c.header.value("arch_descriptor", std::string()) != arch_descriptor())
    throw ValidationError("checkpoint architecture '" + c.header.value("arch_descriptor", std::string()) +
                          "' does not match model '" + arch_descriptor() + "'");
  checkpoint::import_module(c, *deblur_, "model.deblur.");
  if (student_) checkpoint::import_module(c, *student_, "model.student.");
  if (clc_) checkpoint::import_module(c, *clc_, "model.clc.");
}

PriorDeblurModel PriorDeblurModel::from_checkpoint(const fs::path& path) {
  const auto c = checkpoint::Container::load(path);
  if (c.header.value("kind", std::string()) != "deblur") throw ValidationError("not a deblur checkpoint: " + path.string());
  PyramidSpec spec;
  spec.channels = c.header.at("channels").get<std::array<std::int64_t, kLevels>>();
  PriorDeblurModel model(AblationConfig::from_json(c.header.at("ablation")), 0, spec);
  model.import_from(c);
  return model;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig config, teacher::TeacherModel teacher, std::vector<TrainingPair> data)
    : config_(std::move(config)), teacher_(std::move(teacher)), data_(std::move(data)),
      model_(config_.ablation, config_.seed) {
  config_.validate();
  if (!teacher_.frozen()) throw ValidationError("training requires a frozen teacher");
  if (data_.empty()) throw ValidationError("training set is empty");
  for (const auto& p : data_)
    if (p.sharp.height() < config_.crop || p.sharp.width() < config_.crop)
      throw ValidationError("pair " + p.id + " is smaller than the crop size");
  if (config_.deterministic || deterministic_from_env()) set_deterministic(true);

  optimizer_ = std::make_unique<torch::optim::AdamW>(
      model_.parameters(), torch::optim::AdamWOptions(config_.lr_start)
                               .betas({config_.beta1, config_.beta2})
                               .weight_decay(config_.weight_decay));
}

Trainer::Batch Trainer::sample_batch(int step) const {
  Rng rng(mix_seed(config_.seed ^ 0x7472616eULL, static_cast<std::uint64_t>(step)));
  std::vector<Image> blurry;
  std::vector<Image> sharp;
  for (int b = 0; b < config_.batch_size; ++b) {
    const auto& pair = data_[rng.below(data_.size())];
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(pair.sharp.height() - config_.crop + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(pair.sharp.width() - config_.crop + 1)));
    const bool flip = config_.hflip && rng.uniform() < 0.5;
    auto bc = pair.blurry.crop(y0, x0, config_.crop, config_.crop);
    auto sc = pair.sharp.crop(y0, x0, config_.crop, config_.crop);
    blurry.push_back(flip ? bc.flipped_horizontal() : std::move(bc));
    sharp.push_back(flip ? sc.flipped_horizontal() : std::move(sc));
  }
  return {to_batch(blurry), to_batch(sharp)};
}

losses::LossBreakdown Trainer::compute_losses(const torch::Tensor& blurry, const torch::Tensor& sharp) {
  auto out = model_.forward(blurry);
  std::optional<FeaturePyramid> f_gt;
  torch::Tensor phi_gt;
  {
    torch::NoGradGuard guard;
    if (config_.ablation.use_hcl) {
      f_gt = teacher_.forward(sharp);
      phi_gt = (*f_gt)[1];
    } else {
      phi_gt = teacher_.perceptual_features(sharp);
    }
  }
  const losses::FeatureFn phi = [this](const torch::Tensor& x) { return teacher_.perceptual_features(x); };
  losses::TotalLossInputs in{out.restored, sharp, out.f_pri ? &*out.f_pri : nullptr, f_gt ? &*f_gt : nullptr, &phi_gt};
  return losses::total_loss(in, phi, config_.weights, config_.ablation, spl::HclOptions{config_.hcl_mode, false});
}

namespace {

StepLosses to_step_losses(int step, double lr, const losses::LossBreakdown& l) {
  StepLosses s;
  s.step = step;
  s.lr = lr;
  s.total = l.total.item<double>();
  s.l1 = l.l1.item<double>();
  s.perceptual = l.perceptual.item<double>();
  if (l.prior) s.prior = l.prior->item<double>();
  return s;
}

}  // namespace

void Trainer::check_parameters_finite(const losses::LossBreakdown& l) const {
  std::vector<std::string> bad;
  for (const auto& [name, p] : model_.named_parameters())
    if (!torch::isfinite(p).all().item<bool>()) bad.push_back(name);
  if (bad.empty()) return;

  nlohmann::json dump = {{"step", step_},
                         {"lr", cosine_lr(std::min(step_, config_.total_steps), config_)},
                         {"non_finite_parameters", bad},
                         {"loss_total", l.total.item<double>()},
                         {"loss_l1", l.l1.item<double>()},
                         {"loss_perceptual", l.perceptual.item<double>()}};
  std::string where;
  if (dump_dir) {
    const auto path = *dump_dir / "nonfinite_dump.json";
    std::ofstream(path) << dump.dump(2) << "\n";
    where = " (diagnostics in " + path.string() + ")";
  }
  throw RuntimeFailure("non-finite parameters after step " + std::to_string(step_) + ": " + bad.front() + where);
}

StepLosses Trainer::step() {
  if (finished()) throw ValidationError("training already reached total_steps");
  const double lr = cosine_lr(step_, config_);
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

  const auto batch = sample_batch(step_);
  auto l = compute_losses(batch.blurry, batch.sharp);
  optimizer_->zero_grad();
  l.total.backward();
  optimizer_->step();
  const auto record = to_step_losses(step_, lr, l);
  ++step_;
  check_parameters_finite(l);
  return record;
}

StepLosses Trainer::evaluate_losses(std::size_t count) {
  torch::NoGradGuard guard;
  count = std::min(count, data_.size());
  std::vector<Image> blurry;
  std::vector<Image> sharp;
  for (std::size_t i = 0; i < count; ++i) {
    blurry.push_back(data_[i].blurry);
    sharp.push_back(data_[i].sharp);
  }
  const auto l = compute_losses(to_batch(blurry), to_batch(sharp));
  return to_step_losses(step_, cosine_lr(std::min(step_, config_.total_steps), config_), l);
}

void Trainer::save_checkpoint(const fs::path& path) const {
  checkpoint::Container c;
  c.header["kind"] = "deblur";
  c.header["step"] = step_;
  c.header["train_config"] = config_.to_json();
  c.header["teacher_arch"] = teacher_.arch_descriptor();
  model_.export_to(c);
  const auto& state = optimizer_->state();
  for (const auto& [name, p] : model_.named_parameters()) {
    auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamWParamState&>(*it->second);
    c.add("optim." + name + ".exp_avg", s.exp_avg());
    c.add("optim." + name + ".exp_avg_sq", s.exp_avg_sq());
    c.add("optim." + name + ".step", torch::tensor(s.step(), torch::kInt64));
  }
  c.save(path);
}

void Trainer::resume(const fs::path& path) {
  const auto c = checkpoint::Container::load(path);
  if (c.header.value("kind", std::string()) != "deblur") throw ValidationError("not a deblur checkpoint: " + path.string());
  const auto saved = TrainConfig::from_json(c.header.at("train_config"));
  if (!(saved.ablation == config_.ablation)) throw ValidationError("resume: checkpoint ablation differs from config");
  model_.import_from(c);
  auto& state = optimizer_->state();
  state.clear();
  for (const auto& [name, p] : model_.named_parameters()) {
    const auto key = "optim." + name + ".exp_avg";
    if (!c.has(key)) continue;
    auto s = std::make_unique<torch::optim::AdamWParamState>();
    s->exp_avg(c.get(key).clone());
    s->exp_avg_sq(c.get("optim." + name + ".exp_avg_sq").clone());
    s->step(c.get("optim." + name + ".step").item<std::int64_t>());
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
  step_ = c.header.at("step").get<int>();
}

// ---------------------------------------------------------------------------
// Loop and sweep

void write_metrics_csv(const fs::path& path, const std::vector<StepLosses>& log) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write metrics log: " + path.string());
  out << "step,lr,total,l1,perceptual,prior\n" << std::setprecision(10);
  for (const auto& r : log) {
    out << r.step << "," << r.lr << "," << r.total << "," << r.l1 << "," << r.perceptual << ",";
    if (r.prior) out << *r.prior;
    out << "\n";
  }
}

TrainResult train(Trainer& trainer, const RunOptions& options) {
  TrainResult result;
  const auto& cfg = trainer.config();
  std::ofstream text_log;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    trainer.dump_dir = *options.out_dir;
    text_log.open(*options.out_dir / "train.log", std::ios::app);
  }
  auto note = [&](const std::string& line) {
    result.warnings.push_back(line);
    if (text_log.is_open()) text_log << line << "\n";
  };
  if (cfg.ablation.unstable())
    note("warning: priors are consumed without the distillation loss; training is known to be unstable (Net0* row)");
  if (options.resume_from) trainer.resume(*options.resume_from);

  result.teacher_checksum_before = trainer.teacher().checksum();
  const int stop = std::min(cfg.total_steps, options.stop_at_step.value_or(cfg.total_steps));
  while (trainer.current_step() < stop) {
    const auto s = trainer.step();
    if (s.step % cfg.log_every == 0 || trainer.current_step() == cfg.total_steps) {
      result.log.push_back(s);
      if (options.on_log) options.on_log(s);
    }
    if (options.out_dir && cfg.checkpoint_every > 0 && trainer.current_step() % cfg.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.plck", trainer.current_step());
      trainer.save_checkpoint(*options.out_dir / name);
    }
  }
  result.teacher_checksum_after = trainer.teacher().checksum();
  if (result.teacher_checksum_before != result.teacher_checksum_after)
    throw RuntimeFailure("teacher parameters changed during training");

  if (options.out_dir) {
    write_metrics_csv(*options.out_dir / "metrics.csv", result.log);
    const auto final_path = *options.out_dir / (trainer.finished() ? "final.plck" : "paused.plck");
    trainer.save_checkpoint(final_path);
    result.final_checkpoint = final_path;
    if (text_log.is_open()) text_log << "saved " << final_path.string() << " at step " << trainer.current_step() << "\n";
  }
  return result;
}

std::vector<AblationRow> run_ablation(const std::vector<TrainingPair>& train_pairs,
                                      const std::vector<TrainingPair>& eval_pairs,
                                      const teacher::TeacherModel& teacher, const TrainConfig& base,
                                      const AblationOptions& options) {
  std::vector<std::string> names = options.names;
  if (names.empty())
    for (const auto& row : ablation_ladder()) names.emplace_back(row.name);

  std::vector<AblationRow> rows;
  for (const auto& requested : names) {
    AblationRow row;
    try {
      row.name = canonical_ablation_name(requested);
      row.config = ablation_by_name(row.name);
      TrainConfig cfg = base;
      cfg.ablation = row.config;
      Trainer trainer(cfg, teacher, train_pairs);
      RunOptions run;
      if (options.out_dir) {
        std::string dir = row.name;
        if (dir == "Net0*") dir = "Net0star";
        run.out_dir = *options.out_dir / dir;
      }
      const auto result = train(trainer, run);
      const auto& last = result.log.back();
      row.total = last.total;
      row.l1 = last.l1;
      row.perceptual = last.perceptual;
      row.prior = last.prior;

      std::vector<double> psnrs;
      std::vector<double> ssims;
      for (const auto& pair : eval_pairs) {
        const auto restored = quantize8(trainer.model().restore(pair.blurry));
        psnrs.push_back(evalkit::psnr(restored, pair.sharp));
        ssims.push_back(evalkit::ssim(restored, pair.sharp));
      }
      double ps = 0.0;
      double ss = 0.0;
      for (std::size_t i = 0; i < psnrs.size(); ++i) {
        ps += psnrs[i];
        ss += ssims[i];
      }
      if (!psnrs.empty()) {
        row.psnr = ps / psnrs.size();
        row.ssim = ss / ssims.size();
      }
      row.status = row.config.unstable() ? "unstable" : "ok";
    } catch (const std::exception& e) {
      if (row.name.empty()) row.name = requested;
      row.status = std::string("failed: ") + e.what();
    }
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write ablation table: " + path.string());
  out << "model,hcl,clc,mla,embedding,psnr,ssim,total,l1,perceptual,prior,status\n" << std::setprecision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : rows) {
    out << r.name << "," << r.config.use_hcl << "," << r.config.use_clc << "," << r.config.use_mla << ","
        << to_string(r.config.embedding) << ",";
    opt(r.psnr);
    out << ",";
    opt(r.ssim);
    out << ",";
    opt(r.total);
    out << ",";
    opt(r.l1);
    out << ",";
    opt(r.perceptual);
    out << ",";
    opt(r.prior);
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    out << "," << status << "\n";
  }
}

}  // namespace priorlens::trainkit
