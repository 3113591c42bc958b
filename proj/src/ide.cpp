#include "priorlens/ide.hpp"

#include <string>
#include <vector>

#include "priorlens/error.hpp"

namespace priorlens::ide {

MlaImpl::MlaImpl(PyramidSpec spec, int level_index) : level_(level_index) {
  if (level_index < 0 || level_index >= kLevels) throw ValidationError("mla: level index out of range");
  gate_ = register_module("gate", conv1x1(spec.total_channels(), spec[level_index]));
}

torch::Tensor MlaImpl::forward(const FeaturePyramid& f_pri) {
  const auto& own = f_pri[level_];
  std::vector<torch::Tensor> parts{own};
  for (int t = 0; t < kLevels; ++t)
    if (t != level_) parts.push_back(resize_like(f_pri[t], own));
  const auto g = gate_->forward(torch::cat(parts, 1));
  return g * own + own;
}

SatImpl::SatImpl(std::int64_t prior_channels, std::int64_t feature_channels) {
  scale_ = register_module("scale", conv3x3(prior_channels, feature_channels));
  shift_ = register_module("shift", conv3x3(prior_channels, feature_channels));
  torch::NoGradGuard guard;
  scale_->weight.mul_(0.01);
  scale_->bias.fill_(1.0);
  shift_->weight.mul_(0.01);
  shift_->bias.zero_();
}

SpeOutput SatImpl::forward(const torch::Tensor& prior, const torch::Tensor& f_en, const torch::Tensor& f_de) {
  if (f_en.sizes() != f_de.sizes()) throw ValidationError("sat: encoder and decoder features differ in shape");
  const auto m = resize_like(prior, f_de);
  SpeOutput out;
  out.scale = scale_->forward(m);
  out.shift = shift_->forward(m);
  out.modulated = out.scale * (f_de + f_en) + out.shift;
  return out;
}

DeblurNetImpl::DeblurNetImpl(DeblurNetOptions options) : options_(options) {
  const auto& w = options_.widths;
  const bool priors = options_.mode != EmbeddingMode::kNone;
  if (options_.use_mla && !priors) throw ValidationError("deblur: MLA requires a prior-consuming embedding mode");

  head_ = register_module("head", conv3x3(3, options_.head_width));
  std::int64_t in = options_.head_width;
  for (int i = 0; i < kLevels; ++i) {
    const auto tag = std::to_string(i + 1);
    enc_down_[i] = register_module("enc_down" + tag, conv3x3(in, w[i], 2));
    enc_refine_[i] = register_module("enc_refine" + tag, conv3x3(w[i], w[i]));
    in = w[i];
  }
  bottleneck_[0] = register_module("bottleneck1", conv3x3(w[2], w[2]));
  bottleneck_[1] = register_module("bottleneck2", conv3x3(w[2], w[2]));
  for (int i = 0; i < kLevels; ++i) {
    const auto tag = std::to_string(i + 1);
    dec_refine_[i] = register_module("dec_refine" + tag, conv3x3(w[i], w[i]));
    dec_up_[i] = register_module("dec_up" + tag, conv3x3(w[i], i == 0 ? options_.head_width : w[i - 1]));
  }
  full_refine_ = register_module("full_refine", conv3x3(options_.head_width, options_.head_width));
  tail_ = register_module("tail", conv3x3(options_.head_width, 3));
  {
    // Start close to the identity map so early steps refine instead of undoing noise.
    torch::NoGradGuard guard;
    tail_->weight.mul_(0.1);
    tail_->bias.zero_();
  }

  for (int i = 0; i < kLevels; ++i) {
    const auto tag = std::to_string(i + 1);
    const auto prior_ch = options_.prior_spec[i];
    if (options_.use_mla) mla_[i] = register_module("mla" + tag, Mla(options_.prior_spec, i));
    switch (options_.mode) {
      case EmbeddingMode::kSat: sat_[i] = register_module("sat" + tag, Sat(prior_ch, w[i])); break;
      case EmbeddingMode::kConcat: concat_[i] = register_module("concat" + tag, conv1x1(w[i] + prior_ch, w[i])); break;
      case EmbeddingMode::kAdd:
        if (prior_ch != w[i]) throw ValidationError("deblur: add embedding needs prior channels equal to decoder width");
        break;
      case EmbeddingMode::kNone: break;
    }
  }
}

torch::Tensor DeblurNetImpl::aggregated_prior(const FeaturePyramid& priors, int level_index) {
  return options_.use_mla ? mla_[level_index]->forward(priors) : priors[level_index];
}

torch::Tensor DeblurNetImpl::fuse(int i, const torch::Tensor& f_en, const torch::Tensor& f_de, const FeaturePyramid* priors) {
  switch (options_.mode) {
    case EmbeddingMode::kNone: return f_de + f_en;
    case EmbeddingMode::kAdd: return f_de + f_en + resize_like(aggregated_prior(*priors, i), f_de);
    case EmbeddingMode::kConcat:
      return concat_[i]->forward(torch::cat({f_de + f_en, resize_like(aggregated_prior(*priors, i), f_de)}, 1));
    case EmbeddingMode::kSat: return sat_[i]->forward(aggregated_prior(*priors, i), f_en, f_de).modulated;
  }
  return f_de + f_en;
}

torch::Tensor DeblurNetImpl::forward(const torch::Tensor& blurry, const FeaturePyramid* priors) {
  check_network_input(blurry);
  if (options_.mode != EmbeddingMode::kNone) {
    if (priors == nullptr) throw ValidationError("deblur: embedding mode " + to_string(options_.mode) + " requires priors");
    priors->validate(&options_.prior_spec, /*check_finite=*/false);
    if (priors->levels[0].size(2) * 2 != blurry.size(2) || priors->levels[0].size(3) * 2 != blurry.size(3))
      throw ValidationError("deblur: prior pyramid does not match the input resolution");
  }

  const auto head = torch::relu(head_->forward(blurry));
  std::array<torch::Tensor, kLevels> f_en;
  torch::Tensor h = head;
  for (int i = 0; i < kLevels; ++i) {
    h = torch::relu(enc_down_[i]->forward(h));
    h = torch::relu(enc_refine_[i]->forward(h));
    f_en[i] = h;
  }
  torch::Tensor f_de = torch::relu(bottleneck_[0]->forward(f_en[2]));
  f_de = torch::relu(bottleneck_[1]->forward(f_de));
  for (int i = kLevels - 1; i >= 0; --i) {
    auto g = fuse(i, f_en[i], f_de, priors);
    g = torch::relu(dec_refine_[i]->forward(g));
    const auto up = resize_like(g, i == 0 ? head : f_en[i - 1]);
    f_de = torch::relu(dec_up_[i]->forward(up));
  }
  return blurry + tail_->forward(torch::relu(full_refine_->forward(f_de + head)));
}

std::vector<torch::Tensor> DeblurNetImpl::embedding_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters(true)) {
    const auto& k = item.key();
    if (k.rfind("mla", 0) == 0 || k.rfind("sat", 0) == 0 || k.rfind("concat", 0) == 0) out.push_back(item.value());
  }
  return out;
}

torch::Tensor deblur_forward(DeblurNet& net, const torch::Tensor& blurry, const FeaturePyramid* priors) {
  return net->forward(blurry, priors).clamp(0.0, 1.0);
}

}  // namespace priorlens::ide
