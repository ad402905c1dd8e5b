#include "dpcl/protobank.hpp"

#include <algorithm>
#include <deque>

#include "dpcl/common.hpp"

namespace dpcl {

namespace {
constexpr double kZeroNorm = 1e-12;
}

torch::Tensor l2_normalize(const torch::Tensor& x, std::int64_t dim) {
  return x / x.norm(2, {dim}, /*keepdim=*/true).clamp_min(kZeroNorm);
}

PrototypeBank PrototypeBank::empty(int num_classes, int dim, double gamma, double tau, torch::Dtype dtype) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("PrototypeBank: gamma must be in (0, 1)");
  if (!(tau > 0.0)) throw ConfigError("PrototypeBank: tau must be > 0");
  PrototypeBank bank;
  bank.prototypes = torch::zeros({num_classes, dim}, dtype);
  bank.initialized.assign(static_cast<std::size_t>(num_classes), false);
  bank.gamma = gamma;
  bank.tau = tau;
  return bank;
}

int PrototypeBank::initialized_count() const {
  int n = 0;
  for (bool b : initialized) n += b ? 1 : 0;
  return n;
}

PrototypeBank PrototypeBank::clone() const {
  PrototypeBank b = *this;
  b.prototypes = prototypes.clone();
  return b;
}

void PrototypeBank::save_to(Checkpoint& ckpt) const {
  ckpt.put("protobank/prototypes", prototypes);
  std::vector<float> flags;
  for (bool b : initialized) flags.push_back(b ? 1.0F : 0.0F);
  ckpt.put("protobank/initialized", torch::tensor(flags));
  ckpt.header()["protobank"] = {{"num_classes", num_classes()}, {"dim", prototypes.size(1)}, {"gamma", gamma}, {"tau", tau}};
}

PrototypeBank PrototypeBank::load_from(const Checkpoint& ckpt) {
  const auto& h = ckpt.header().at("protobank");
  PrototypeBank bank;
  bank.prototypes = ckpt.get("protobank/prototypes");
  auto flags = ckpt.get("protobank/initialized");
  for (std::int64_t k = 0; k < flags.size(0); ++k) bank.initialized.push_back(flags[k].item<float>() > 0.5F);
  bank.gamma = h.at("gamma").get<double>();
  bank.tau = h.at("tau").get<double>();
  if (bank.prototypes.size(0) != static_cast<std::int64_t>(bank.initialized.size()))
    throw ShapeError("protobank: prototype/flag count mismatch");
  return bank;
}

BatchPrototypes class_prototypes_from_batch(const torch::Tensor& features, const torch::Tensor& masks) {
  if (features.dim() != 4 || masks.dim() != 3 || features.size(0) != masks.size(0) || features.size(2) != masks.size(1) ||
      features.size(3) != masks.size(2))
    throw ShapeError("class_prototypes_from_batch: features [B,D,h,w] and masks [B,h,w] must agree");
  const auto dim = features.size(1);
  auto z = features.permute({0, 2, 3, 1}).reshape({-1, dim});
  auto labels = masks.reshape({-1});
  BatchPrototypes out;
  auto present = std::get<0>(at::_unique(labels.masked_select(labels != kIgnoreLabel)));
  auto present_acc = present.contiguous();
  for (std::int64_t i = 0; i < present_acc.numel(); ++i) {
    const auto k = present_acc[i].item<std::int64_t>();
    auto sel = (labels == k).to(z.dtype()).unsqueeze(1);
    auto mean = (z * sel).sum(0) / sel.sum();
    if (mean.detach().norm().item<double>() <= kZeroNorm) continue;
    out.emplace(static_cast<int>(k), l2_normalize(mean, 0));
  }
  return out;
}

torch::Tensor ema_blend(const PrototypeBank& bank, const BatchPrototypes& batch) {
  std::vector<torch::Tensor> rows;
  for (int k = 0; k < bank.num_classes(); ++k) {
    auto prev = bank.prototypes[k];
    auto it = batch.find(k);
    if (it == batch.end()) {
      rows.push_back(prev);
    } else if (!bank.initialized[static_cast<std::size_t>(k)]) {
      rows.push_back(it->second.to(prev.dtype()));
    } else {
      auto blended = bank.gamma * prev + (1.0 - bank.gamma) * it->second.to(prev.dtype());
      rows.push_back(l2_normalize(blended, 0));
    }
  }
  return torch::stack(rows);
}

PrototypeBank ema_update(const PrototypeBank& bank, const BatchPrototypes& batch) {
  PrototypeBank out = bank.clone();
  out.prototypes = ema_blend(bank, batch).detach();
  for (const auto& [k, _] : batch)
    if (k >= 0 && k < out.num_classes()) out.initialized[static_cast<std::size_t>(k)] = true;
  return out;
}

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto v : data) n += v ? 1 : 0;
  return n;
}

std::vector<BinaryMask> connected_regions(const BinaryMask& mask) {
  const int h = mask.height, w = mask.width;
  std::vector<int> label(static_cast<std::size_t>(h * w), -1);
  std::vector<BinaryMask> regions;
  std::deque<int> queue;
  for (int start = 0; start < h * w; ++start) {
    if (!mask.data[static_cast<std::size_t>(start)] || label[static_cast<std::size_t>(start)] >= 0) continue;
    BinaryMask region{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)};
    const int id = static_cast<int>(regions.size());
    label[static_cast<std::size_t>(start)] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      region.data[static_cast<std::size_t>(p)] = 1;
      const int y = p / w, x = p % w;
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int n = 0; n < 4; ++n) {
        if (ny[n] < 0 || ny[n] >= h || nx[n] < 0 || nx[n] >= w) continue;
        const int q = ny[n] * w + nx[n];
        if (mask.data[static_cast<std::size_t>(q)] && label[static_cast<std::size_t>(q)] < 0) {
          label[static_cast<std::size_t>(q)] = id;
          queue.push_back(q);
        }
      }
    }
    regions.push_back(std::move(region));
  }
  return regions;
}

std::vector<InstancePrototype> instance_prototypes(const torch::Tensor& features, const torch::Tensor& mask,
                                                   int min_region_px) {
  if (features.dim() != 3 || mask.dim() != 2 || features.size(1) != mask.size(0) || features.size(2) != mask.size(1))
    throw ShapeError("instance_prototypes: features [D,h,w] and mask [h,w] must agree");
  const int h = static_cast<int>(mask.size(0)), w = static_cast<int>(mask.size(1));
  const auto dim = features.size(0);
  auto z = features.reshape({dim, -1});
  auto m = mask.to(torch::kCPU).contiguous();
  const auto* labels = m.data_ptr<std::int64_t>();
  std::vector<std::int64_t> classes;
  for (int i = 0; i < h * w; ++i)
    if (labels[i] != kIgnoreLabel && std::find(classes.begin(), classes.end(), labels[i]) == classes.end())
      classes.push_back(labels[i]);
  std::sort(classes.begin(), classes.end());

  std::vector<InstancePrototype> out;
  for (auto k : classes) {
    BinaryMask cls{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w), 0)};
    for (int i = 0; i < h * w; ++i) cls.data[static_cast<std::size_t>(i)] = labels[i] == k ? 1 : 0;
    for (const auto& region : connected_regions(cls)) {
      const auto size = static_cast<int>(region.count());
      if (size < min_region_px) continue;
      std::vector<std::int64_t> idx;
      for (int i = 0; i < h * w; ++i)
        if (region.data[static_cast<std::size_t>(i)]) idx.push_back(i);
      auto mean = z.index_select(1, torch::tensor(idx, torch::kInt64)).mean(1);
      if (mean.detach().norm().item<double>() <= kZeroNorm) continue;
      out.push_back({l2_normalize(mean, 0), static_cast<int>(k), size});
    }
  }
  return out;
}

LossValue divergence_loss(const torch::Tensor& prototypes, const std::vector<bool>& initialized) {
  std::vector<std::int64_t> idx;
  for (std::size_t k = 0; k < initialized.size(); ++k)
    if (initialized[k]) idx.push_back(static_cast<std::int64_t>(k));
  if (idx.size() < 2) {
    warn("divergence_loss: fewer than 2 initialized prototypes");
    return {torch::zeros({}, prototypes.options()), 0, true};
  }
  const auto k = static_cast<double>(idx.size());
  auto p = prototypes.index_select(0, torch::tensor(idx, torch::kInt64));
  auto sim = torch::relu(p.matmul(p.t()));
  auto off_diag = sim.sum() - sim.diagonal().sum();
  return {off_diag / (k * (k - 1.0)), 0, false};
}

LossValue divergence_loss(const PrototypeBank& bank) { return divergence_loss(bank.prototypes, bank.initialized); }

torch::Tensor prototype_predict(const torch::Tensor& features, const PrototypeBank& bank) {
  if (!bank.fully_initialized()) throw StateError("prototype_predict: bank has uninitialized classes");
  if (features.dim() != 4 || features.size(1) != bank.prototypes.size(1))
    throw ShapeError("prototype_predict: features must be [B, D, h, w] with D matching the bank");
  auto z = l2_normalize(features, 1);
  auto logits = torch::einsum("bdhw,kd->bkhw", {z, bank.prototypes.to(z.dtype())}) / bank.tau;
  return torch::softmax(logits, 1);
}

}  // namespace dpcl
