#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dpcl/protobank.hpp"

namespace dpcl {

struct SampledPixelSet {
  torch::Tensor z;                    // [N, D] rows (unit norm when built by sample_pixels)
  std::vector<std::int64_t> labels;   // N class ids
  std::vector<std::int64_t> flat_indices;  // positions in the flattened [B*h*w] grid
  std::map<int, int> per_class_counts;
  std::map<int, int> correct_counts;
  std::map<int, int> incorrect_counts;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

// Wraps explicit rows (normalized here) and labels into a sample set.
SampledPixelSet make_pixel_set(const torch::Tensor& rows, std::vector<std::int64_t> labels);

// Per class present: up to n/2 mispredicted and n - n/2 correctly predicted
// positions, uniformly without replacement; a short pool is topped up from
// the other one. features [B, D, h, w]; labels, predictions [B, h, w].
SampledPixelSet sample_pixels(const torch::Tensor& features, const torch::Tensor& labels,
                              const torch::Tensor& predictions, int n_per_class, std::uint64_t seed);

struct TransitionMatrices {
  torch::Tensor w;            // exp(z_i . z_j / tau), diagonal zeroed when masked
  torch::Tensor l;            // 1 where labels agree, diagonal zeroed when masked
  torch::Tensor w_tilde;      // row-normalized w
  torch::Tensor log_w_tilde;  // log of w_tilde computed stably (-inf on masked entries)
  torch::Tensor l_tilde;      // row-normalized l (zero rows stay zero)
  std::vector<bool> row_valid;  // false for all-zero label rows
  int excluded_rows = 0;
};

TransitionMatrices build_transition_matrices(const SampledPixelSet& set, double tau, bool include_diagonal);

enum class PixelMetric { kJS, kCE };

// Natural-log Jensen-Shannon divergence of two distributions.
double js_divergence(std::span<const double> p, std::span<const double> q);
// Row-wise JS divergence of [N, M] distributions; differentiable in both.
torch::Tensor js_divergence_rows(const torch::Tensor& p, const torch::Tensor& q);

// Mean over retained rows of M(w_tilde_i, l_tilde_i).
LossValue pixel_to_pixel_loss(const SampledPixelSet& set, double tau, PixelMetric metric, bool include_diagonal);

// Supervised contrastive loss (sum over anchors with at least one positive).
LossValue supervised_contrastive_loss(const SampledPixelSet& set, double tau);

// Mean over non-ignore positions of -log softmax_k(z . P^k / tau) at the
// true class. Only initialized prototypes enter the softmax; positions whose
// class is uninitialized are skipped and counted.
LossValue pixel_to_class_loss(const torch::Tensor& features, const torch::Tensor& masks, const PrototypeBank& bank,
                              double tau);

enum class InstanceLossKind { kTriplet, kInfoNce };

// Margin triplet over (instance of k) x (instance of another class) pairs,
// averaged per class and then over classes with at least one pair. The
// InfoNCE variant classifies each instance against the class prototypes.
LossValue instance_to_class_loss(const std::vector<InstancePrototype>& instances, const PrototypeBank& bank, double xi,
                                 InstanceLossKind kind = InstanceLossKind::kTriplet, double tau = 0.1);

struct MlclTerms {
  torch::Tensor total;
  torch::Tensor pixel_to_pixel;
  torch::Tensor pixel_to_class;
  torch::Tensor instance_to_class;
};

MlclTerms mlcl_loss(const torch::Tensor& pixel_to_pixel, const torch::Tensor& pixel_to_class,
                    const torch::Tensor& instance_to_class, double lambda);

struct LandscapeSummary {
  double l_star = 0.0;
  double argmin_s_plus = 0.0;
  double argmin_s_minus = 0.0;
  std::int64_t sublevel_count = 0;
  std::int64_t sublevel_high_positive = 0;
  double ratio = 0.0;
};

struct LandscapeReport {
  double tau = 0.1;
  double delta_d = 1.0;
  int grid_n = 512;
  double positive_threshold = 0.8;
  std::vector<double> axis;   // grid coordinates, shared by s+ and s-
  std::vector<double> l_sup;  // row-major [s+][s-]
  std::vector<double> l_ppce;
  LandscapeSummary sup;
  LandscapeSummary ppce;

  void write_csv(const std::filesystem::path& path) const;
  std::string summary_json() const;
};

// Three-sample anchor/positive/negative losses on an (s+, s-) grid over
// [-1, 1]^2 and their near-optimal sublevel sets.
LandscapeReport loss_landscape(double tau = 0.1, double delta_d = 1.0, int grid_n = 512);

double landscape_l_sup(double s_plus, double s_minus, double tau);
double landscape_l_ppce(double s_plus, double s_minus, double tau);

}  // namespace dpcl
