#include "dpcl/adapt.hpp"

#include <cmath>

#include "dpcl/common.hpp"
#include "dpcl/mlcl.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

std::string to_string(TtaMode mode) {
  switch (mode) {
    case TtaMode::kNone: return "none";
    case TtaMode::kC: return "C";
    case TtaMode::kE: return "E";
    case TtaMode::kCE: return "C+E";
  }
  return "?";
}

TtaMode parse_tta_mode(const std::string& name) {
  if (name == "none") return TtaMode::kNone;
  if (name == "C" || name == "c") return TtaMode::kC;
  if (name == "E" || name == "e") return TtaMode::kE;
  if (name == "C+E" || name == "CE" || name == "c+e" || name == "ce") return TtaMode::kCE;
  throw ConfigError("unknown TTA mode '" + name + "' (expected none, C, E or C+E)");
}

void TtaConfig::validate() const {
  if (n_iters < 1) throw ConfigError("tta: n_iters must be >= 1");
  if (!(step_size >= 0.0)) throw ConfigError("tta: step_size must be >= 0");
  if (n_per_class < 1) throw ConfigError("tta: n_per_class must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("tta: tau must be > 0");
  if (!(fusion_weight >= 0.0 && fusion_weight <= 1.0)) throw ConfigError("tta: fusion_weight must be in [0, 1]");
}

torch::Tensor pseudo_label(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x_proj,
                           double fusion_weight) {
  torch::NoGradGuard no_grad;
  model->eval();
  auto x = x_proj.dim() == 3 ? x_proj.unsqueeze(0) : x_proj;
  return fused_prediction(model, bank, x, fusion_weight).labels;
}

torch::Tensor entropy_loss(const torch::Tensor& probs) {
  if (probs.dim() != 4) throw ShapeError("entropy_loss: expected [B, K, h, w]");
  {
    torch::NoGradGuard no_grad;
    const double min_p = probs.min().item<double>();
    const double max_dev = (probs.sum(1) - 1.0).abs().max().item<double>();
    if (min_p < -1e-12 || max_dev > 1e-6) throw NumericError("entropy_loss: input is not a stochastic map");
  }
  auto safe = torch::where(probs > 0, probs, torch::ones_like(probs));
  return -(probs * safe.log()).sum(1).mean();
}

namespace {

// Pixels of pseudo-classes with fewer than two members are marked ignore.
torch::Tensor drop_singletons(const torch::Tensor& labels, int num_classes) {
  auto counts = torch::bincount(labels.reshape({-1}), {}, num_classes);
  auto small = (counts < 2).index_select(0, labels.reshape({-1})).reshape(labels.sizes());
  return labels.masked_fill(small, kIgnoreLabel);
}

}  // namespace

TtaObjective tta_objective(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x,
                           const torch::Tensor& pseudo_labels, const TtaConfig& cfg, std::uint64_t sample_seed) {
  model->eval();
  auto out = model->forward(x);
  TtaObjective obj;
  obj.loss = torch::zeros({}, x.options());
  const bool contrastive = cfg.mode == TtaMode::kC || cfg.mode == TtaMode::kCE;
  const bool entropy = cfg.mode == TtaMode::kE || cfg.mode == TtaMode::kCE;
  if (entropy) obj.loss = obj.loss + entropy_loss(fuse_outputs(out, bank, cfg.fusion_weight).probs);
  if (contrastive) {
    auto usable = drop_singletons(pseudo_labels, static_cast<int>(out.logits.size(1)));
    if ((usable != kIgnoreLabel).sum().item<std::int64_t>() == 0) {
      obj.contrastive_skipped = true;
      if (cfg.mode == TtaMode::kC) warn("tta: every pseudo-class has fewer than 2 pixels; skipping update");
    } else {
      // Predictions equal labels, so the sampler draws from pseudo-labels only.
      auto set = sample_pixels(out.features, usable, usable, cfg.n_per_class, sample_seed);
      obj.sampled_pixels = static_cast<int>(set.size());
      obj.loss = obj.loss + pixel_to_pixel_loss(set, cfg.tau, PixelMetric::kJS, /*include_diagonal=*/true).value;
    }
  }
  return obj;
}

torch::Tensor tta_input_gradient(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x,
                                 const TtaConfig& cfg, std::uint64_t sample_seed) {
  auto labels = pseudo_label(model, bank, x, cfg.fusion_weight);
  auto xi = x.detach().clone().set_requires_grad(true);
  auto obj = tta_objective(model, bank, xi, labels, cfg, sample_seed);
  if (!obj.loss.requires_grad()) return torch::zeros_like(xi);
  return torch::autograd::grad({obj.loss}, {xi})[0];
}

TtaResult tta_refine_projected(SegModel& model, const PrototypeBank& bank, const torch::Tensor& x_proj,
                               const TtaConfig& cfg) {
  cfg.validate();
  auto x = (x_proj.dim() == 3 ? x_proj.unsqueeze(0) : x_proj).detach().clone();
  if (cfg.mode != TtaMode::kNone) {
    for (int i = 0; i < cfg.n_iters; ++i) {
      auto grad = tta_input_gradient(model, bank, x, cfg, derive_seed(cfg.seed, 0x77A, static_cast<std::uint64_t>(i)));
      x = (x - cfg.step_size * grad).clamp(0.0, 1.0).detach();
    }
  }
  return {pseudo_label(model, bank, x, cfg.fusion_weight), x};
}

TtaResult tta_refine(SegModel& model, const PrototypeBank& bank, SsdpNet& ssdp, const StyleCenters& centers,
                     const torch::Tensor& x_t, const TtaConfig& cfg) {
  return tta_refine_projected(model, bank, project(ssdp, centers, x_t), cfg);
}

}  // namespace dpcl
