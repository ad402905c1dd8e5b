#pragma once

#include <optional>
#include <vector>

#include "dpcl/dataset.hpp"
#include "dpcl/metrics.hpp"
#include "dpcl/protobank.hpp"
#include "dpcl/segnet.hpp"
#include "dpcl/ssdp.hpp"
#include "dpcl/train.hpp"

namespace dpcl {

struct TtaConfig;

// Everything needed to turn an image into a label map.
struct Predictor {
  SegModel model{nullptr};
  PrototypeBank bank;
  SsdpNet ssdp{nullptr};
  std::optional<StyleCenters> centers;
  bool use_ssdp = true;
  bool use_prototypes = true;
  double fusion_weight = 0.5;

  // Projects when use_ssdp is set; returns [B, 3, H, W].
  torch::Tensor prepare(const torch::Tensor& images);
  // Labels at feature resolution [B, h, w] for already-prepared inputs.
  torch::Tensor predict_prepared(const torch::Tensor& prepared);
  // Labels at image resolution [B, H, W].
  torch::Tensor predict(const torch::Tensor& images);
};

// Inference settings that match how the model was trained.
Predictor make_predictor(const SegModel& model, const PrototypeBank& bank, const SsdpNet& ssdp,
                         const StyleCenters* centers, const TrainConfig& cfg);

struct DomainScore {
  std::string name;
  ConfusionMatrix cm;
  double miou = 0.0;
};

// Scores a domain at label resolution; with tta set, each image is refined
// before prediction.
DomainScore evaluate_domain(Predictor& predictor, const Domain& domain, const TtaConfig* tta = nullptr,
                            int batch_size = 20);

double mean_miou(const std::vector<DomainScore>& scores);

}  // namespace dpcl
