#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

namespace dpcl {

// Rows are ground truth, columns are predictions. Ignore pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  // pred and truth: integer tensors of equal shape.
  void update(const torch::Tensor& pred, const torch::Tensor& truth);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return k_; }
  std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  std::int64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  std::int64_t total() const;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

struct MiouResult {
  std::vector<double> per_class;  // NaN for classes excluded from the mean
  std::vector<bool> included;
  double mean = 0.0;
};

// IoU_k = tp / (row + col - tp); classes with a zero denominator are excluded.
MiouResult miou(const ConfusionMatrix& cm);

}  // namespace dpcl
