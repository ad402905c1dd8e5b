#include "dpcl/metrics.hpp"

#include <limits>

#include "dpcl/common.hpp"

namespace dpcl {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ConfigError("ConfusionMatrix: num_classes must be >= 1");
}

void ConfusionMatrix::update(const torch::Tensor& pred, const torch::Tensor& truth) {
  if (pred.sizes() != truth.sizes()) throw ShapeError("confusion_update: shape mismatch");
  auto p = pred.to(torch::kCPU, torch::kInt64).contiguous();
  auto t = truth.to(torch::kCPU, torch::kInt64).contiguous();
  const auto* pd = p.data_ptr<std::int64_t>();
  const auto* td = t.data_ptr<std::int64_t>();
  // Validate before touching the counts so a bad call leaves them unchanged.
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    if (td[i] == kIgnoreLabel) continue;
    if (td[i] < 0 || td[i] >= k_ || pd[i] < 0 || pd[i] >= k_) throw ShapeError("confusion_update: label out of range");
  }
  for (std::int64_t i = 0; i < p.numel(); ++i)
    if (td[i] != kIgnoreLabel) ++at(static_cast<int>(td[i]), static_cast<int>(pd[i]));
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("ConfusionMatrix::merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

MiouResult miou(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  MiouResult r;
  r.per_class.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
  r.included.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const auto tp = cm.at(c, c);
    const auto denom = row + col - tp;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[static_cast<std::size_t>(c)] = iou;
    r.included[static_cast<std::size_t>(c)] = true;
    sum += iou;
    ++n;
  }
  if (n == 0) throw StateError("miou: empty confusion matrix");
  r.mean = sum / n;
  return r;
}

}  // namespace dpcl
