#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "priorlens/pyramid.hpp"
#include "priorlens/scenes.hpp"

namespace priorlens::teacher {

struct Normalization {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};

  static Normalization from_images(const std::vector<Image>& images);
};

class TeacherNetImpl : public torch::nn::Module {
 public:
  TeacherNetImpl(PyramidSpec spec, int num_classes);
  FeaturePyramid features(const torch::Tensor& normalized);
  torch::Tensor classify(const FeaturePyramid& features);

 private:
  PyramidEncoder encoder_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(TeacherNet);

struct TeacherTrainConfig;
struct TeacherTrainResult;

// High-level vision model whose pyramid on sharp images supplies the
// distillation targets. Trainable until freeze(); afterwards its parameters
// are immutable and only the feature extraction paths are available.
class TeacherModel {
 public:
  TeacherModel(int num_classes, PyramidSpec spec = {}, Normalization norm = {}, std::uint64_t seed = 0);

  // Features at strides 2, 4, 8 of raw [N,3,H,W] images in [0,1].
  // Requires a frozen teacher and H, W divisible by 8.
  FeaturePyramid forward(const torch::Tensor& images) const;

  // Level-2 features, the phi of the perceptual loss. Gradients flow to the
  // input images but never to teacher parameters.
  torch::Tensor perceptual_features(const torch::Tensor& images) const;

  // Class logits; usable before and after freezing.
  torch::Tensor logits(const torch::Tensor& images) const;

  // Cross-entropy with autograd into the parameters. Throws once frozen.
  torch::Tensor training_loss(const torch::Tensor& images, const torch::Tensor& labels);
  std::vector<torch::Tensor> trainable_parameters();

  void freeze();
  bool frozen() const { return frozen_; }

  std::uint64_t checksum() const;
  std::string arch_descriptor() const;
  int num_classes() const { return num_classes_; }
  const PyramidSpec& spec() const { return spec_; }
  const Normalization& normalization() const { return norm_; }

  // Converts parameters in place (float64 for gradient checks).
  void to(torch::ScalarType dtype);
  const TeacherNet& net() const { return net_; }

  void save(const std::filesystem::path& path) const;
  static TeacherModel load(const std::filesystem::path& path);

 private:
  friend TeacherTrainResult train_teacher(const scenes::ClassificationSet&, const scenes::ClassificationSet&,
                                          const TeacherTrainConfig&);
  torch::Tensor normalize(const torch::Tensor& images) const;

  int num_classes_;
  PyramidSpec spec_;
  Normalization norm_;
  mutable TeacherNet net_;  // forward passes are logically const
  bool frozen_ = false;
};

struct TeacherTrainConfig {
  int steps = 600;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  int log_every = 25;
  PyramidSpec spec{};
  std::optional<std::filesystem::path> log_path;  // CSV {step, loss, batch_accuracy}
};

struct TeacherTrainResult {
  TeacherModel model;
  double heldout_accuracy = 0.0;
};

// Trains on `train`, measures top-1 accuracy on `heldout`, returns a frozen
// teacher. Throws ValidationError for single-class data.
TeacherTrainResult train_teacher(const scenes::ClassificationSet& train, const scenes::ClassificationSet& heldout,
                                 const TeacherTrainConfig& config);

double top1_accuracy(const TeacherModel& model, const scenes::ClassificationSet& set);

}  // namespace priorlens::teacher
