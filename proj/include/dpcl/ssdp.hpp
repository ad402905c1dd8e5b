#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "dpcl/checkpoint.hpp"
#include "dpcl/common.hpp"

namespace dpcl {

// Channel-wise statistics of a feature map. Shapes are [C] for a single map
// or [B, C] for a batch. sigma already includes the epsilon guard.
struct StyleStats {
  torch::Tensor mu;
  torch::Tensor sigma;
};

struct StyleCenters {
  torch::Tensor mu_centers;     // [q, C]
  torch::Tensor sigma_centers;  // [q, C]

  std::int64_t q() const { return mu_centers.defined() ? mu_centers.size(0) : 0; }
  std::int64_t channels() const { return mu_centers.size(1); }
  void validate() const;
  void save_to(Checkpoint& ckpt) const;
  static StyleCenters load_from(const Checkpoint& ckpt);
};

struct NormalizedFeatures {
  torch::Tensor normalized;
  StyleStats stats;
};

// (f - mu) / (sigma + eps) per channel over spatial positions, population
// std. Accepts [C, H, W] or [B, C, H, W].
NormalizedFeatures instance_normalize(const torch::Tensor& features, double eps = kStyleEps);

// sigma * f_hat + mu, channelwise.
torch::Tensor adain_renormalize(const torch::Tensor& normalized, const StyleStats& style);

struct SsdpConfig {
  int channels = 64;  // C_f
  int base_width = 16;
  int downsamples = 1;  // stride-2 stages in the encoder
};

// Encoder: a stride-1 conv, `downsamples` stride-2 convs, then a conv to C_f
// channels with no activation. The decoder mirrors it with nearest
// upsampling and ends in a sigmoid.
class SsdpNetImpl : public torch::nn::Module {
 public:
  explicit SsdpNetImpl(const SsdpConfig& cfg = {});

  torch::Tensor encode(const torch::Tensor& x);
  torch::Tensor decode(const torch::Tensor& f);

  const SsdpConfig& config() const { return cfg_; }
  std::int64_t trained_steps() const { return trained_steps_; }
  void add_trained_steps(std::int64_t n) { trained_steps_ += n; }

  void save_to(Checkpoint& ckpt) const;
  void load_from(const Checkpoint& ckpt);

 private:
  SsdpConfig cfg_;
  std::int64_t trained_steps_ = 0;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(SsdpNet);

struct SsdpOutput {
  torch::Tensor reconstruction;
  torch::Tensor loss;  // mean absolute error against the clean image
};

// x_tilde = D(AdaIN(IN(E(x_a)), stats(E(x)))), loss = mean |x - x_tilde|.
// Images are [3, H, W] or [B, 3, H, W].
SsdpOutput ssdp_forward(SsdpNet& net, const torch::Tensor& x, const torch::Tensor& x_aug);

// Style statistics of the encoder features of each image in a batch.
std::vector<StyleStats> encoder_style_stats(SsdpNet& net, const torch::Tensor& images);

// k-means on the mu vectors and, independently, on the sigma vectors.
StyleCenters fit_style_centers(const std::vector<StyleStats>& stats, int q, std::uint64_t seed);

// Independent nearest mu and nearest sigma center (L2, lowest index on ties).
// Accepts [C] or [B, C] stats.
StyleStats nearest_center(const StyleStats& stats, const StyleCenters& centers);

// D(AdaIN(IN(E(x_t)), nearest_center(stats))) clamped to [0, 1]. Runs
// without gradient tracking; [3, H, W] or [B, 3, H, W].
torch::Tensor project(SsdpNet& net, const StyleCenters& centers, const torch::Tensor& x_t);

}  // namespace dpcl
