#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpcl/dataset.hpp"
#include "dpcl/mlcl.hpp"
#include "dpcl/protobank.hpp"
#include "dpcl/segnet.hpp"
#include "dpcl/ssdp.hpp"

namespace dpcl {

enum class SsdpAugMode { kNone, kImage, kImageGeometric };

struct SsdpTrainConfig {
  SsdpConfig net;
  int iters = 2000;
  int batch_size = 8;
  double lr = 1e-3;  // Adam
  int q = 10;
  SsdpAugMode aug_mode = SsdpAugMode::kImage;

  void validate() const;
};

struct TrainConfig {
  double lr0 = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 8;
  int max_iters = 3000;
  double poly_power = 0.9;
  int warmup_epochs = 10;
  double lambda = 5.0;
  double xi = 0.5;
  double tau = 0.1;
  double gamma = 0.999;
  int n_per_class = 30;
  double grad_clip = 10.0;
  double fusion_weight = 0.5;

  // Component toggles; the baseline has everything off.
  bool use_ssdp = true;
  bool use_pp = true;
  bool use_pc = true;
  bool use_ic = true;
  bool use_div = true;
  PixelMetric pp_metric = PixelMetric::kJS;
  bool pp_diagonal = true;
  InstanceLossKind ic_kind = InstanceLossKind::kTriplet;

  int log_every = 10;
  int eval_every = 500;
  int checkpoint_every = 0;  // 0 disables intermediate checkpoints
  SegModelConfig model;

  bool any_mlcl() const { return use_pp || use_pc || use_ic; }
  void validate() const;
};

// lr0 * (1 - iter / max_iters)^power, clamped to 0 past the end.
double poly_lr(int iter, const TrainConfig& cfg);

struct SsdpTrainResult {
  SsdpNet net{nullptr};
  StyleCenters centers;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;  // mean loss per pass over the training set
};

// Stage 1: reconstruct x from A(x) through the AdaIN bottleneck, then cluster
// the encoder style statistics of the clean training images into q centers.
SsdpTrainResult train_ssdp(const Domain& train, const SsdpTrainConfig& cfg, const AugConfig& aug, std::uint64_t seed);

struct StepLog {
  int iter = 0;
  double lr = 0.0;
  bool warmup = true;
  double task = 0.0;
  double pp = 0.0;
  double pc = 0.0;
  double ic = 0.0;
  double mlcl = 0.0;
  double div = 0.0;
  double total = 0.0;
  std::optional<double> val_miou;
};

struct SegTrainResult {
  SegModel model{nullptr};
  PrototypeBank bank;
  std::vector<StepLog> log;
};

// Stage 2. With use_ssdp the inputs are project(augment(x)) through the
// frozen SSDP; otherwise augment(x). Warm-up optimizes the task loss only.
SegTrainResult train_segmentation(const Domain& train, const Domain* val, SsdpNet ssdp, const StyleCenters* centers,
                                  const TrainConfig& cfg, const AugConfig& aug, std::uint64_t seed,
                                  const std::optional<std::filesystem::path>& run_dir = std::nullopt);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log);

int warmup_iterations(const TrainConfig& cfg, std::size_t train_size);

}  // namespace dpcl
