#include "priorlens/teacher.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "priorlens/checkpoint.hpp"
#include "priorlens/error.hpp"
#include "priorlens/rng.hpp"

namespace priorlens::teacher {

Normalization Normalization::from_images(const std::vector<Image>& images) {
  if (images.empty()) throw ValidationError("cannot compute normalization from no images");
  Normalization n;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    double sq = 0.0;
    std::size_t count = 0;
    for (const auto& img : images)
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
          const double v = img.at(c, y, x);
          sum += v;
          sq += v * v;
          ++count;
        }
    const double mean = sum / count;
    n.mean[c] = static_cast<float>(mean);
    n.stddev[c] = static_cast<float>(std::sqrt(std::max(sq / count - mean * mean, 1e-6)));
  }
  return n;
}

TeacherNetImpl::TeacherNetImpl(PyramidSpec spec, int num_classes) {
  encoder_ = register_module("encoder", PyramidEncoder(spec, /*relu_outputs=*/true));
  head_ = register_module("head", torch::nn::Linear(spec[kLevels - 1], num_classes));
}

FeaturePyramid TeacherNetImpl::features(const torch::Tensor& normalized) { return encoder_->forward(normalized); }

torch::Tensor TeacherNetImpl::classify(const FeaturePyramid& features) {
  return head_->forward(features[kLevels - 1].mean({2, 3}));
}

TeacherModel::TeacherModel(int num_classes, PyramidSpec spec, Normalization norm, std::uint64_t seed)
    : num_classes_(num_classes), spec_(spec), norm_(norm), net_(nullptr) {
  if (num_classes < 2) throw ValidationError("teacher needs at least 2 classes");
  torch::manual_seed(seed);
  net_ = TeacherNet(spec, num_classes);
  net_->eval();
}

torch::Tensor TeacherModel::normalize(const torch::Tensor& images) const {
  const auto mean = torch::tensor({norm_.mean[0], norm_.mean[1], norm_.mean[2]}).to(images.scalar_type()).view({1, 3, 1, 1});
  const auto sd = torch::tensor({norm_.stddev[0], norm_.stddev[1], norm_.stddev[2]}).to(images.scalar_type()).view({1, 3, 1, 1});
  return (images - mean) / sd;
}

FeaturePyramid TeacherModel::forward(const torch::Tensor& images) const {
  if (!frozen_) throw ValidationError("teacher must be frozen before extracting features");
  check_network_input(images);
  return net_->features(normalize(images));
}

torch::Tensor TeacherModel::perceptual_features(const torch::Tensor& images) const {
  return forward(images)[1];
}

torch::Tensor TeacherModel::logits(const torch::Tensor& images) const {
  check_network_input(images);
  return net_->classify(net_->features(normalize(images)));
}

torch::Tensor TeacherModel::training_loss(const torch::Tensor& images, const torch::Tensor& labels) {
  if (frozen_) throw ValidationError("teacher is frozen; parameter updates are not allowed");
  return torch::nn::functional::cross_entropy(logits(images), labels);
}

std::vector<torch::Tensor> TeacherModel::trainable_parameters() {
  if (frozen_) throw ValidationError("teacher is frozen; parameter updates are not allowed");
  return net_->parameters();
}

void TeacherModel::freeze() {
  for (auto& p : net_->parameters()) {
    p.set_requires_grad(false);
    p.mutable_grad() = torch::Tensor();
  }
  net_->eval();
  frozen_ = true;
}

std::uint64_t TeacherModel::checksum() const { return checkpoint::parameter_checksum(*net_); }

std::string TeacherModel::arch_descriptor() const {
  return "teacher/pyramid-encoder(c=" + std::to_string(spec_[0]) + "," + std::to_string(spec_[1]) + "," +
         std::to_string(spec_[2]) + ";strides=2,4,8)+gap+linear(" + std::to_string(num_classes_) + ")";
}

void TeacherModel::to(torch::ScalarType dtype) { net_->to(dtype); }

void TeacherModel::save(const std::filesystem::path& path) const {
  checkpoint::Container c;
  c.header["kind"] = "teacher";
  c.header["arch_descriptor"] = arch_descriptor();
  c.header["num_classes"] = num_classes_;
  c.header["channels"] = spec_.channels;
  c.header["normalization"] = {{"mean", norm_.mean}, {"std", norm_.stddev}};
  c.header["frozen"] = frozen_;
  checkpoint::export_module(c, *net_, "teacher.");
  c.save(path);
}

TeacherModel TeacherModel::load(const std::filesystem::path& path) {
  const auto c = checkpoint::Container::load(path);
  if (c.header.value("kind", std::string()) != "teacher") throw ValidationError("not a teacher checkpoint: " + path.string());
  PyramidSpec spec;
  spec.channels = c.header.at("channels").get<std::array<std::int64_t, kLevels>>();
  Normalization norm;
  norm.mean = c.header.at("normalization").at("mean").get<std::array<float, 3>>();
  norm.stddev = c.header.at("normalization").at("std").get<std::array<float, 3>>();
  TeacherModel m(c.header.at("num_classes").get<int>(), spec, norm);
  if (c.header.at("arch_descriptor").get<std::string>() != m.arch_descriptor())
    throw ValidationError("teacher checkpoint architecture mismatch");
  checkpoint::import_module(c, *m.net_, "teacher.");
  if (c.header.value("frozen", true)) m.freeze();
  return m;
}

double top1_accuracy(const TeacherModel& model, const scenes::ClassificationSet& set) {
  torch::NoGradGuard guard;
  constexpr std::size_t kChunk = 128;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.images.size(); start += kChunk) {
    const std::size_t end = std::min(set.images.size(), start + kChunk);
    auto batch = to_batch(std::span<const Image>(set.images).subspan(start, end - start));
    auto pred = model.logits(batch).argmax(1);
    for (std::size_t i = start; i < end; ++i) correct += pred[i - start].item<std::int64_t>() == set.labels[i];
  }
  return set.images.empty() ? 0.0 : static_cast<double>(correct) / set.images.size();
}

TeacherTrainResult train_teacher(const scenes::ClassificationSet& train, const scenes::ClassificationSet& heldout,
                                 const TeacherTrainConfig& config) {
  const std::set<int> classes(train.labels.begin(), train.labels.end());
  if (classes.size() < 2) throw ValidationError("teacher training needs at least 2 classes");
  if (train.images.size() != train.labels.size()) throw ValidationError("image/label count mismatch");
  if (config.steps < 1 || config.batch_size < 1) throw ValidationError("teacher steps and batch_size must be >= 1");

  TeacherModel model(train.num_classes, config.spec, Normalization::from_images(train.images), config.seed);
  model.net_->train();
  torch::optim::AdamW opt(model.trainable_parameters(),
                          torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));

  std::ofstream log;
  if (config.log_path) {
    log.open(*config.log_path);
    if (!log) throw RuntimeFailure("cannot write teacher log: " + config.log_path->string());
    log << "step,loss,batch_accuracy\n";
  }

  const auto all_images = to_batch(train.images);
  const auto all_labels = torch::tensor(std::vector<std::int64_t>(train.labels.begin(), train.labels.end()));
  const auto n = static_cast<std::int64_t>(train.images.size());
  for (int step = 0; step < config.steps; ++step) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(step)));
    std::vector<std::int64_t> idx(config.batch_size);
    for (auto& i : idx) i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    const auto sel = torch::tensor(idx);
    auto images = all_images.index_select(0, sel);
    if (rng.uniform() < 0.5) images = images.flip({3});
    const auto labels = all_labels.index_select(0, sel);

    opt.zero_grad();
    auto logits = model.net_->classify(model.net_->features(model.normalize(images)));
    auto loss = torch::nn::functional::cross_entropy(logits, labels);
    loss.backward();
    opt.step();

    if (log.is_open() && (step % config.log_every == 0 || step + 1 == config.steps)) {
      const double acc = logits.argmax(1).eq(labels).to(torch::kFloat64).mean().item<double>();
      log << step << "," << loss.item<double>() << "," << acc << "\n";
    }
  }
  model.freeze();
  const double acc = top1_accuracy(model, heldout);
  if (log.is_open()) log << "# heldout_top1," << acc << "\n";
  return {std::move(model), acc};
}

}  // namespace priorlens::teacher
