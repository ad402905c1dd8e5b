#include "dpcl/segnet.hpp"

#include "dpcl/common.hpp"

namespace dpcl {

namespace nn = torch::nn;

SegModelImpl::SegModelImpl(const SegModelConfig& cfg) : cfg_(cfg) {
  if (cfg.num_classes < 2 || cfg.feature_dim < 1 || cfg.base_width < 1) throw ConfigError("SegModel: invalid config");
  nn::Sequential layers;
  auto block = [&layers](int in, int out, int stride, bool relu) {
    layers->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
    layers->push_back(nn::BatchNorm2d(out));
    if (relu) layers->push_back(nn::ReLU());
  };
  const int w = cfg.base_width;
  block(3, w, 1, true);
  block(w, 2 * w, 2, true);
  block(2 * w, 2 * w, 2, true);
  block(2 * w, cfg.feature_dim, 1, false);
  extractor_ = register_module("extractor", layers);
  classifier_ = register_module("classifier", nn::Conv2d(nn::Conv2dOptions(cfg.feature_dim, cfg.num_classes, 1)));
}

SegOutput SegModelImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("SegModel: expected [B, 3, H, W] input");
  if (x.size(2) % kStride != 0 || x.size(3) % kStride != 0) throw ShapeError("SegModel: H and W must be multiples of 4");
  auto features = extractor_->forward(x);
  return {features, classifier_->forward(features)};
}

void SegModelImpl::save_to(Checkpoint& ckpt) const {
  ckpt.put_module("seg", *this);
  ckpt.header()["seg"] = {{"num_classes", cfg_.num_classes}, {"feature_dim", cfg_.feature_dim}, {"base_width", cfg_.base_width}};
}

void SegModelImpl::load_from(const Checkpoint& ckpt) {
  const auto& h = ckpt.header();
  if (!h.contains("seg")) throw StateError("checkpoint has no seg section");
  if (h["seg"]["num_classes"].get<int>() != cfg_.num_classes || h["seg"]["feature_dim"].get<int>() != cfg_.feature_dim ||
      h["seg"]["base_width"].get<int>() != cfg_.base_width)
    throw ShapeError("seg checkpoint does not match the configured model");
  ckpt.load_module("seg", *this);
}

torch::Tensor task_loss(const torch::Tensor& logits, const torch::Tensor& masks) {
  if (logits.dim() != 4 || masks.dim() != 3 || logits.size(0) != masks.size(0) || logits.size(2) != masks.size(1) ||
      logits.size(3) != masks.size(2))
    throw ShapeError("task_loss: logits [B,K,h,w] and masks [B,h,w] must agree");
  if ((masks != kIgnoreLabel).sum().item<std::int64_t>() == 0) throw StateError("task_loss: all pixels ignored");
  namespace F = torch::nn::functional;
  return F::cross_entropy(logits, masks, F::CrossEntropyFuncOptions().ignore_index(kIgnoreLabel));
}

torch::Tensor fuse_probabilities(const torch::Tensor& classifier_probs, const torch::Tensor& prototype_probs,
                                 double classifier_weight) {
  if (!(classifier_weight >= 0.0 && classifier_weight <= 1.0)) throw ConfigError("fusion weight must be in [0, 1]");
  return classifier_weight * classifier_probs + (1.0 - classifier_weight) * prototype_probs;
}

torch::Tensor argmax_lowest(const torch::Tensor& probs) {
  // torch::argmax already returns the first maximal index; kept explicit so
  // the tie rule is part of this function's contract.
  auto best = probs.select(1, 0).clone();
  auto idx = torch::zeros_like(best, torch::kInt64);
  for (std::int64_t k = 1; k < probs.size(1); ++k) {
    auto pk = probs.select(1, k);
    auto better = pk > best;
    best = torch::where(better, pk, best);
    idx = torch::where(better, torch::full_like(idx, k), idx);
  }
  return idx;
}

FusedPrediction fuse_outputs(const SegOutput& out, const PrototypeBank& bank, double classifier_weight) {
  auto cls = torch::softmax(out.logits, 1);
  if (!bank.fully_initialized()) {
    warn("fused_prediction: prototype bank not fully initialized; using classifier only");
    auto labels = argmax_lowest(cls.detach());
    return {cls, labels, false};
  }
  auto probs = fuse_probabilities(cls, prototype_predict(out.features, bank), classifier_weight);
  return {probs, argmax_lowest(probs.detach()), true};
}

FusedPrediction fused_prediction(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x,
                                 double classifier_weight) {
  return fuse_outputs(model->forward(x), bank, classifier_weight);
}

torch::Tensor resize_labels(const torch::Tensor& labels, std::int64_t height, std::int64_t width) {
  if (labels.dim() != 3) throw ShapeError("resize_labels: expected [B, H, W]");
  const auto h = labels.size(1), w = labels.size(2);
  std::vector<std::int64_t> rows, cols;
  for (std::int64_t i = 0; i < height; ++i) rows.push_back(std::min(h - 1, (2 * i + 1) * h / (2 * height)));
  for (std::int64_t j = 0; j < width; ++j) cols.push_back(std::min(w - 1, (2 * j + 1) * w / (2 * width)));
  return labels.index_select(1, torch::tensor(rows, torch::kInt64)).index_select(2, torch::tensor(cols, torch::kInt64));
}

}  // namespace dpcl
