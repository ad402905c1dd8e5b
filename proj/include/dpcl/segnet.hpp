#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "dpcl/checkpoint.hpp"
#include "dpcl/protobank.hpp"

namespace dpcl {

struct SegModelConfig {
  int num_classes = 8;
  int feature_dim = 64;  // D
  int base_width = 32;
};

struct SegOutput {
  torch::Tensor features;  // [B, D, H/4, W/4], input to the classifier
  torch::Tensor logits;    // [B, K, H/4, W/4]
};

// Feature extractor U: four conv blocks (strides 1, 2, 2, 1) with batch
// norm; the last block has no ReLU so features can take either sign.
// Classifier H: a 1x1 convolution.
class SegModelImpl : public torch::nn::Module {
 public:
  explicit SegModelImpl(const SegModelConfig& cfg = {});

  SegOutput forward(const torch::Tensor& x);

  const SegModelConfig& config() const { return cfg_; }
  static constexpr int kStride = 4;

  void save_to(Checkpoint& ckpt) const;
  void load_from(const Checkpoint& ckpt);

 private:
  SegModelConfig cfg_;
  torch::nn::Sequential extractor_{nullptr};
  torch::nn::Conv2d classifier_{nullptr};
};
TORCH_MODULE(SegModel);

// Mean per-pixel cross entropy over non-ignore positions.
torch::Tensor task_loss(const torch::Tensor& logits, const torch::Tensor& masks);

struct FusedPrediction {
  torch::Tensor probs;   // [B, K, h, w]
  torch::Tensor labels;  // [B, h, w], lowest class id on ties
  bool used_prototypes = true;
};

// w * classifier + (1 - w) * prototype probabilities.
torch::Tensor fuse_probabilities(const torch::Tensor& classifier_probs, const torch::Tensor& prototype_probs,
                                 double classifier_weight = 0.5);
// Per-pixel argmax over dim 1 with lowest-index tie breaking.
torch::Tensor argmax_lowest(const torch::Tensor& probs);

// Differentiable in x (no gradient guard); the caller chooses the mode.
FusedPrediction fused_prediction(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x,
                                 double classifier_weight = 0.5);
FusedPrediction fuse_outputs(const SegOutput& out, const PrototypeBank& bank, double classifier_weight = 0.5);

// Nearest-neighbor resampling of label maps [B, H, W] (cell centers).
torch::Tensor resize_labels(const torch::Tensor& labels, std::int64_t height, std::int64_t width);

}  // namespace dpcl
