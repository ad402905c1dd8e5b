#include "dpcl/evaluate.hpp"

#include "dpcl/adapt.hpp"
#include "dpcl/common.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

torch::Tensor Predictor::prepare(const torch::Tensor& images) {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  if (!use_ssdp) return x;
  if (ssdp.is_empty() || !centers) throw StateError("predictor: SSDP enabled but not loaded");
  ssdp->eval();
  return project(ssdp, *centers, x);
}

torch::Tensor Predictor::predict_prepared(const torch::Tensor& prepared) {
  if (model.is_empty()) throw StateError("predictor: no segmentation model");
  torch::NoGradGuard no_grad;
  model->eval();
  auto out = model->forward(prepared);
  if (!use_prototypes) return argmax_lowest(torch::softmax(out.logits, 1));
  return fuse_outputs(out, bank, fusion_weight).labels;
}

torch::Tensor Predictor::predict(const torch::Tensor& images) {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  return resize_labels(predict_prepared(prepare(x)), x.size(2), x.size(3));
}

Predictor make_predictor(const SegModel& model, const PrototypeBank& bank, const SsdpNet& ssdp,
                         const StyleCenters* centers, const TrainConfig& cfg) {
  Predictor p;
  p.model = model;
  p.bank = bank;
  p.ssdp = ssdp;
  if (centers != nullptr) p.centers = *centers;
  p.use_ssdp = cfg.use_ssdp;
  p.use_prototypes = cfg.any_mlcl() || cfg.use_div;
  p.fusion_weight = cfg.fusion_weight;
  return p;
}

DomainScore evaluate_domain(Predictor& predictor, const Domain& domain, const TtaConfig* tta, int batch_size) {
  if (domain.items.empty()) throw ConfigError("evaluate_domain: empty domain '" + domain.name + "'");
  if (batch_size < 1) throw ConfigError("evaluate_domain: batch_size must be >= 1");
  DomainScore score{domain.name, ConfusionMatrix(predictor.model->config().num_classes), 0.0};
  const auto n = static_cast<std::int64_t>(domain.items.size());
  for (std::int64_t start = 0; start < n; start += batch_size) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    auto images = domain.images(idx);
    auto masks = domain.masks(idx);
    auto prepared = predictor.prepare(images);
    torch::Tensor labels;
    if (tta != nullptr && tta->mode != TtaMode::kNone) {
      std::vector<torch::Tensor> per_image;
      for (std::int64_t b = 0; b < prepared.size(0); ++b) {
        TtaConfig cfg = *tta;
        cfg.seed = derive_seed(tta->seed, static_cast<std::uint64_t>(idx[static_cast<std::size_t>(b)]));
        cfg.fusion_weight = predictor.fusion_weight;
        auto refined = tta_refine_projected(predictor.model, predictor.bank, prepared[b], cfg).x_refined;
        per_image.push_back(predictor.predict_prepared(refined));
      }
      labels = torch::cat(per_image, 0);
    } else {
      labels = predictor.predict_prepared(prepared);
    }
    score.cm.update(resize_labels(labels, masks.size(1), masks.size(2)), masks);
  }
  score.miou = miou(score.cm).mean;
  return score;
}

double mean_miou(const std::vector<DomainScore>& scores) {
  if (scores.empty()) throw ConfigError("mean_miou: no domains");
  double s = 0.0;
  for (const auto& d : scores) s += d.miou;
  return s / static_cast<double>(scores.size());
}

}  // namespace dpcl
