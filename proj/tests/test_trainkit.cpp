#include "doctest_torch.hpp"

#include <fstream>

#include "priorlens/error.hpp"
#include "priorlens/scenes.hpp"
#include "priorlens/trainkit.hpp"
#include "support.hpp"

using namespace priorlens;
using namespace priorlens::trainkit;
namespace ts = testing_support;

namespace {

teacher::TeacherModel frozen_teacher() {
  teacher::TeacherModel t(10, {}, {}, 1);
  t.freeze();
  return t;
}

std::vector<TrainingPair> toy_pairs(int n, int size) {
  std::vector<TrainingPair> out;
  for (int i = 0; i < n; ++i) {
    const auto sharp = scenes::render_scene(size, size, 500 + i);
    blur_synth::TrajectoryParams p;
    p.seed = 900 + i;
    p.max_extent = 5;
    const auto blurry = blur_synth::apply_degradation(sharp, blur_synth::synthesize_kernel(p, 7), {0.01}, i);
    out.push_back({"p" + std::to_string(i), quantize8(blurry), quantize8(sharp)});
  }
  return out;
}

TrainConfig small_config(const char* ablation, int steps) {
  TrainConfig c;
  c.ablation = ablation_by_name(ablation);
  c.total_steps = steps;
  c.batch_size = 2;
  c.crop = 32;
  c.log_every = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  TrainConfig c;
  c.total_steps = 2000;
  CHECK(cosine_lr(0, c) == 2e-4);
  CHECK(std::abs(cosine_lr(2000, c) - 1e-6) < 1e-12);
  CHECK(std::abs(cosine_lr(1000, c) - 1.005e-4) < 1e-12);
  CHECK_THROWS_AS(cosine_lr(-1, c), ValidationError);
  CHECK_THROWS_AS(cosine_lr(2001, c), ValidationError);
}

TEST_CASE("property: cosine schedule is non-increasing") {
  for (int total : {1, 7, 100, 2001}) {
    TrainConfig c;
    c.total_steps = total;
    for (int s = 1; s <= total; ++s) REQUIRE(cosine_lr(s, c) <= cosine_lr(s - 1, c));
  }
}

TEST_CASE("config validation names the offending field") {
  auto expect_field = [](TrainConfig c, const std::string& field) {
    try {
      c.validate();
      FAIL("expected a validation error for " << field);
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  TrainConfig c;
  c.crop = 60;
  expect_field(c, "crop");
  c = {};
  c.lr_end = 1e-3;
  expect_field(c, "lr_end");
  c = {};
  c.weight_decay = -1;
  expect_field(c, "weight_decay");
  c = {};
  c.batch_size = 0;
  expect_field(c, "batch_size");
  c = {};
  c.total_steps = 0;
  expect_field(c, "total_steps");
}

TEST_CASE("config json round trip and strictness") {
  TrainConfig c;
  c.total_steps = 77;
  c.ablation = ablation_by_name("net0*");
  c.weights.beta = 0.5;
  c.hcl_mode = spl::DistanceMode::kMse;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(TrainConfig::from_json({{"ablation", "Net3"}}).ablation == ablation_by_name("Net3"));
  CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", 1e-3}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"crop", 30}}), ValidationError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"ablation", "Net9"}}), ValidationError);
}

TEST_CASE("ablation ladder rows carry the expected flags") {
  const auto& rows = ablation_ladder();
  REQUIRE(rows.size() == 8);
  const std::vector<std::tuple<std::string, bool, bool, bool, EmbeddingMode>> expected = {
      {"Net0", false, false, false, EmbeddingMode::kNone}, {"Net0*", false, true, true, EmbeddingMode::kSat},
      {"Net1", true, false, false, EmbeddingMode::kAdd},   {"Net2", true, false, false, EmbeddingMode::kConcat},
      {"Net3", true, false, false, EmbeddingMode::kSat},   {"Net4", true, true, false, EmbeddingMode::kSat},
      {"Net5", true, false, true, EmbeddingMode::kSat},    {"Net6", true, true, true, EmbeddingMode::kSat}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [name, hcl, clc, mla, emb] = expected[i];
    CHECK(rows[i].name == name);
    CHECK(rows[i].config.use_hcl == hcl);
    CHECK(rows[i].config.use_clc == clc);
    CHECK(rows[i].config.use_mla == mla);
    CHECK(rows[i].config.embedding == emb);
  }
  CHECK(ablation_by_name("NET0STAR") == rows[1].config);
  CHECK(rows[1].config.unstable());
  CHECK_FALSE(rows[7].config.unstable());
}

TEST_CASE("model assembly follows the ablation row") {
  CHECK_FALSE(PriorDeblurModel(ablation_by_name("Net0"), 0).has_student());
  PriorDeblurModel net6(ablation_by_name("Net6"), 0);
  CHECK(net6.has_student());
  const auto out = net6.forward(torch::rand({1, 3, 32, 32}));
  REQUIRE(out.m.has_value());
  CHECK(torch::equal((*out.f_pri)[2], (*out.m)[2]));

  // Identical seeds give identical deblurring weights across rows.
  PriorDeblurModel net0(ablation_by_name("Net0"), 5);
  PriorDeblurModel net3(ablation_by_name("Net3"), 5);
  CHECK(torch::equal(net0.deblur()->named_parameters()["head.weight"], net3.deblur()->named_parameters()["head.weight"]));

  // Arbitrary sizes are padded for inference and cropped back.
  const auto restored = net6.restore(ts::random_image(37, 45, 2));
  CHECK(restored.height() == 37);
  CHECK(restored.width() == 45);
}

TEST_CASE("trainer rejects an unfrozen teacher and oversized crops") {
  CHECK_THROWS_AS(Trainer(small_config("Net0", 2), teacher::TeacherModel(10), toy_pairs(1, 32)), ValidationError);
  auto cfg = small_config("Net0", 2);
  cfg.crop = 64;
  CHECK_THROWS_AS(Trainer(cfg, frozen_teacher(), toy_pairs(1, 32)), ValidationError);
}

TEST_CASE("training leaves the teacher untouched and logs every term") {
  ts::TempDir tmp("train");
  Trainer trainer(small_config("Net6", 6), frozen_teacher(), toy_pairs(3, 32));
  const auto before = trainer.teacher().checksum();
  RunOptions opt;
  opt.out_dir = tmp.path();
  const auto result = train(trainer, opt);
  CHECK(trainer.teacher().checksum() == before);
  CHECK(result.teacher_checksum_after == result.teacher_checksum_before);
  REQUIRE(result.log.size() == 6);
  for (const auto& s : result.log) {
    CHECK(s.prior.has_value());
    CHECK(std::isfinite(s.total));
  }
  CHECK(std::filesystem::exists(tmp.path() / "final.plck"));
  std::ifstream csv(tmp.path() / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "step,lr,total,l1,perceptual,prior");
  for (const auto& p : trainer.teacher().net()->parameters()) CHECK_FALSE(p.grad().defined());
}

TEST_CASE("same seed reproduces the loss curve exactly") {
  auto run = [] {
    Trainer t(small_config("Net6", 4), frozen_teacher(), toy_pairs(2, 32));
    return train(t).log;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].total == b[i].total);
}

TEST_CASE("resuming mid-run matches an uninterrupted run") {
  ts::TempDir tmp("resume");
  const auto cfg = small_config("Net4", 6);
  Trainer full(cfg, frozen_teacher(), toy_pairs(2, 32));
  const auto straight = train(full);

  Trainer first(cfg, frozen_teacher(), toy_pairs(2, 32));
  RunOptions pause;
  pause.out_dir = tmp.path() / "a";
  pause.stop_at_step = 3;
  const auto r1 = train(first, pause);
  REQUIRE(r1.final_checkpoint.has_value());
  CHECK(r1.final_checkpoint->filename() == "paused.plck");

  Trainer second(cfg, frozen_teacher(), toy_pairs(2, 32));
  RunOptions resume;
  resume.resume_from = *r1.final_checkpoint;
  const auto r2 = train(second, resume);
  REQUIRE_FALSE(r2.log.empty());
  CHECK(std::abs(r2.log.back().total - straight.log.back().total) < 1e-5);
  CHECK(second.current_step() == 6);
}

TEST_CASE("unstable row trains with a warning") {
  Trainer t(small_config("Net0*", 2), frozen_teacher(), toy_pairs(2, 32));
  const auto r = train(t);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("known to be unstable") != std::string::npos);
}

TEST_CASE("non-finite parameters abort with a diagnostic dump") {
  ts::TempDir tmp("nan");
  auto cfg = small_config("Net0", 3);
  cfg.lr_start = 1e30;
  cfg.lr_end = 1e30;
  Trainer t(cfg, frozen_teacher(), toy_pairs(2, 32));
  RunOptions opt;
  opt.out_dir = tmp.path();
  {
    torch::NoGradGuard guard;
    t.model().deblur()->named_parameters()["tail.bias"].fill_(std::numeric_limits<float>::quiet_NaN());
  }
  CHECK_THROWS_AS(train(t, opt), RuntimeFailure);
  CHECK(std::filesystem::exists(tmp.path() / "nonfinite_dump.json"));
}

TEST_CASE("checkpoint round trip restores the model") {
  ts::TempDir tmp("model_ckpt");
  Trainer t(small_config("Net2", 2), frozen_teacher(), toy_pairs(2, 32));
  train(t);
  t.save_checkpoint(tmp.path() / "m.plck");
  auto loaded = PriorDeblurModel::from_checkpoint(tmp.path() / "m.plck");
  CHECK(loaded.ablation() == ablation_by_name("Net2"));
  const auto img = ts::random_image(32, 32, 4);
  CHECK(loaded.restore(img) == t.model().restore(img));
}

TEST_CASE("ablation sweep records all rows and continues after failures") {
  ts::TempDir tmp("ablate");
  AblationOptions opt;
  opt.out_dir = tmp.path();
  opt.names = {"Net0", "Net9", "Net6"};
  const auto pairs = toy_pairs(2, 32);
  const auto rows = run_ablation(pairs, pairs, frozen_teacher(), small_config("Net6", 2), opt);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].status == "ok");
  CHECK_FALSE(rows[0].prior.has_value());
  CHECK(rows[1].status.rfind("failed", 0) == 0);
  CHECK(rows[2].status == "ok");
  CHECK(rows[2].prior.has_value());
  CHECK(rows[2].psnr.has_value());
  write_ablation_csv(tmp.path() / "t.csv", rows);
  std::ifstream in(tmp.path() / "t.csv");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 4);
}
