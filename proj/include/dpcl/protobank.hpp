#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include <torch/torch.h>

#include "dpcl/checkpoint.hpp"

namespace dpcl {

// A loss value plus the bookkeeping the spec'd edge cases need: rows or
// positions that were skipped, and whether the value is a degenerate zero.
struct LossValue {
  torch::Tensor value;
  int skipped = 0;
  bool degenerate = false;
};

struct PrototypeBank {
  torch::Tensor prototypes;  // [K, D], unit rows where initialized
  std::vector<bool> initialized;
  double gamma = 0.999;
  double tau = 0.1;

  static PrototypeBank empty(int num_classes, int dim, double gamma = 0.999, double tau = 0.1,
                             torch::Dtype dtype = torch::kFloat32);
  int num_classes() const { return static_cast<int>(initialized.size()); }
  int initialized_count() const;
  bool fully_initialized() const { return initialized_count() == num_classes(); }
  PrototypeBank clone() const;

  void save_to(Checkpoint& ckpt) const;
  static PrototypeBank load_from(const Checkpoint& ckpt);
};

using BatchPrototypes = std::map<int, torch::Tensor>;

// Masked average of features per class, then L2-normalized. features are
// [B, D, h, w], masks [B, h, w] at feature resolution (255 = ignore).
// Classes whose raw mean has zero norm are dropped.
BatchPrototypes class_prototypes_from_batch(const torch::Tensor& features, const torch::Tensor& masks);

// gamma * P + (1 - gamma) * p, re-normalized; uninitialized rows take p.
// Differentiable in the batch prototypes.
torch::Tensor ema_blend(const PrototypeBank& bank, const BatchPrototypes& batch);
PrototypeBank ema_update(const PrototypeBank& bank, const BatchPrototypes& batch);

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  std::size_t count() const;
  bool at(int y, int x) const { return data[static_cast<std::size_t>(y * width + x)] != 0; }
};

// 4-connected components, in raster order of their first pixel.
std::vector<BinaryMask> connected_regions(const BinaryMask& mask);

struct InstancePrototype {
  torch::Tensor vector;  // [D], unit norm
  int class_id = 0;
  int region_size = 0;
};

// One prototype per connected region per class of a single image.
// features [D, h, w], mask [h, w].
std::vector<InstancePrototype> instance_prototypes(const torch::Tensor& features, const torch::Tensor& mask,
                                                   int min_region_px = 2);

// Mean positive cosine between distinct initialized prototypes.
LossValue divergence_loss(const torch::Tensor& prototypes, const std::vector<bool>& initialized);
LossValue divergence_loss(const PrototypeBank& bank);

// softmax_k(z . P^k / tau) with z unit-normalized; returns [B, K, h, w].
torch::Tensor prototype_predict(const torch::Tensor& features, const PrototypeBank& bank);

torch::Tensor l2_normalize(const torch::Tensor& x, std::int64_t dim);

}  // namespace dpcl
