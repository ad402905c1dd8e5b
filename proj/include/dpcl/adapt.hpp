#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "dpcl/protobank.hpp"
#include "dpcl/segnet.hpp"
#include "dpcl/ssdp.hpp"

namespace dpcl {

enum class TtaMode { kNone, kC, kE, kCE };

std::string to_string(TtaMode mode);
TtaMode parse_tta_mode(const std::string& name);

struct TtaConfig {
  TtaMode mode = TtaMode::kC;
  int n_iters = 1;
  double step_size = 5.0;  // raw-gradient step on [0,1] images, picked on source val
  int n_per_class = 1000;
  double tau = 0.1;
  std::uint64_t seed = 0;
  double fusion_weight = 0.5;

  void validate() const;
};

// Fused argmax labels at feature resolution [B, h, w].
torch::Tensor pseudo_label(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x_proj,
                           double fusion_weight = 0.5);

// Mean over pixels of -sum_k p_k log p_k for probs [B, K, h, w].
torch::Tensor entropy_loss(const torch::Tensor& probs);

struct TtaObjective {
  torch::Tensor loss;  // scalar, differentiable in x
  int sampled_pixels = 0;
  bool contrastive_skipped = false;
};

// The TTA loss of the current image given fixed pseudo-labels. The model is
// run in eval mode; x must require grad for a gradient to exist.
TtaObjective tta_objective(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x,
                           const torch::Tensor& pseudo_labels, const TtaConfig& cfg, std::uint64_t sample_seed);

// d objective / d x with pseudo-labels recomputed from x; parameters get no .grad.
torch::Tensor tta_input_gradient(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x,
                                 const TtaConfig& cfg, std::uint64_t sample_seed);

struct TtaResult {
  torch::Tensor labels;     // [B, h, w] fused labels of the final image
  torch::Tensor x_refined;  // [B, 3, H, W] in [0, 1]
};

// Refines an already projected image.
TtaResult tta_refine_projected(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x_proj,
                               const TtaConfig& cfg);

// x0 = project(x_t), then tta_refine_projected. Nothing passed in is mutated.
TtaResult tta_refine(SegModel& model, const PrototypeBank& bank, SsdpNet& ssdp, const StyleCenters& centers,
                     const torch::Tensor& x_t, const TtaConfig& cfg);

}  // namespace dpcl
