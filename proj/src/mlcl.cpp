#include "dpcl/mlcl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "dpcl/common.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

namespace {

torch::Tensor safe_xlogx_ratio(const torch::Tensor& a, const torch::Tensor& m) {
  // a * (log a - log m) with 0 * log 0 = 0.
  auto a_safe = torch::where(a > 0, a, torch::ones_like(a));
  auto m_safe = torch::where(m > 0, m, torch::ones_like(m));
  return a * (a_safe.log() - m_safe.log());
}

torch::Tensor pair_distance(const torch::Tensor& a, const torch::Tensor& b) {
  return (a - b).pow(2).sum(-1).clamp_min(1e-24).sqrt();
}

double log_sum_exp(std::initializer_list<double> xs) {
  const double m = std::max(xs);
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

SampledPixelSet make_pixel_set(const torch::Tensor& rows, std::vector<std::int64_t> labels) {
  if (rows.dim() != 2 || rows.size(0) != static_cast<std::int64_t>(labels.size()))
    throw ShapeError("make_pixel_set: rows [N, D] must match labels");
  SampledPixelSet set;
  set.z = l2_normalize(rows, 1);
  set.labels = std::move(labels);
  for (auto y : set.labels) ++set.per_class_counts[static_cast<int>(y)];
  return set;
}

SampledPixelSet sample_pixels(const torch::Tensor& features, const torch::Tensor& labels,
                              const torch::Tensor& predictions, int n_per_class, std::uint64_t seed) {
  if (features.dim() != 4 || labels.dim() != 3 || predictions.sizes() != labels.sizes() ||
      features.size(0) != labels.size(0) || features.size(2) != labels.size(1) || features.size(3) != labels.size(2))
    throw ShapeError("sample_pixels: features [B,D,h,w], labels and predictions [B,h,w] must agree");
  if (n_per_class < 1) throw ConfigError("sample_pixels: n_per_class must be >= 1");
  const auto dim = features.size(1);
  auto flat = features.permute({0, 2, 3, 1}).reshape({-1, dim});
  auto y = labels.reshape({-1}).to(torch::kCPU).contiguous();
  auto p = predictions.reshape({-1}).to(torch::kCPU).contiguous();
  const auto* yd = y.data_ptr<std::int64_t>();
  const auto* pd = p.data_ptr<std::int64_t>();

  std::map<std::int64_t, std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> pools;  // (correct, incorrect)
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    if (yd[i] == kIgnoreLabel) continue;
    auto& pool = pools[yd[i]];
    (pd[i] == yd[i] ? pool.first : pool.second).push_back(i);
  }
  if (pools.empty()) throw StateError("sample_pixels: no labeled pixels in batch");

  Rng rng(seed, /*stream=*/11);
  SampledPixelSet set;
  const std::int64_t half = n_per_class / 2;
  for (const auto& [k, pool] : pools) {
    const auto& [correct, incorrect] = pool;
    const auto n_c = static_cast<std::int64_t>(correct.size());
    const auto n_i = static_cast<std::int64_t>(incorrect.size());
    std::int64_t take_i = std::min(n_i, half);
    const std::int64_t take_c = std::min(n_c, n_per_class - take_i);
    take_i = std::min(n_i, n_per_class - take_c);
    for (auto j : rng.sample_without_replacement(n_i, take_i)) {
      set.flat_indices.push_back(incorrect[static_cast<std::size_t>(j)]);
      set.labels.push_back(k);
    }
    for (auto j : rng.sample_without_replacement(n_c, take_c)) {
      set.flat_indices.push_back(correct[static_cast<std::size_t>(j)]);
      set.labels.push_back(k);
    }
    set.per_class_counts[static_cast<int>(k)] = static_cast<int>(take_i + take_c);
    set.correct_counts[static_cast<int>(k)] = static_cast<int>(take_c);
    set.incorrect_counts[static_cast<int>(k)] = static_cast<int>(take_i);
  }
  set.z = l2_normalize(flat.index_select(0, torch::tensor(set.flat_indices, torch::kInt64).to(flat.device())), 1);
  return set;
}

TransitionMatrices build_transition_matrices(const SampledPixelSet& set, double tau, bool include_diagonal) {
  if (!(tau > 0.0)) throw ConfigError("build_transition_matrices: tau must be > 0");
  const auto n = set.size();
  // BLAS does not promise a bitwise symmetric z z^T.
  auto gram = set.z.matmul(set.z.t());
  auto logits = 0.5 * (gram + gram.t()) / tau;
  auto y = torch::tensor(set.labels, torch::kInt64);
  auto l = (y.unsqueeze(1) == y.unsqueeze(0)).to(set.z.dtype());
  if (!include_diagonal) {
    auto eye = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
    logits = logits.masked_fill(eye, -std::numeric_limits<double>::infinity());
    l = l.masked_fill(eye, 0.0);
  }
  TransitionMatrices t;
  t.w = logits.exp();
  t.l = l;
  t.log_w_tilde = torch::log_softmax(logits, 1);
  t.w_tilde = t.log_w_tilde.exp();
  auto row_sum = l.sum(1, true);
  t.l_tilde = l / row_sum.clamp_min(1.0);
  auto rs = row_sum.squeeze(1).to(torch::kCPU).to(torch::kFloat64).contiguous();
  for (std::int64_t i = 0; i < n; ++i) {
    const bool valid = rs[i].item<double>() > 0.0;
    t.row_valid.push_back(valid);
    if (!valid) ++t.excluded_rows;
  }
  return t;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw ShapeError("js_divergence: size mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw NumericError("js_divergence: negative probability");
    sp += p[i];
    sq += q[i];
  }
  if (std::fabs(sp - 1.0) > 1e-6 || std::fabs(sq - 1.0) > 1e-6) throw NumericError("js_divergence: inputs not normalized");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    const double tp = p[i] > 0.0 ? p[i] * std::log(p[i] / m) : 0.0;
    const double tq = q[i] > 0.0 ? q[i] * std::log(q[i] / m) : 0.0;
    js += 0.5 * (tp + tq);  // one sum per component keeps js(p,q) == js(q,p) bitwise
  }
  return js;
}

torch::Tensor js_divergence_rows(const torch::Tensor& p, const torch::Tensor& q) {
  auto m = 0.5 * (p + q);
  return 0.5 * safe_xlogx_ratio(p, m).sum(-1) + 0.5 * safe_xlogx_ratio(q, m).sum(-1);
}

LossValue pixel_to_pixel_loss(const SampledPixelSet& set, double tau, PixelMetric metric, bool include_diagonal) {
  if (set.size() < 1) throw StateError("pixel_to_pixel_loss: empty sample set");
  auto t = build_transition_matrices(set, tau, include_diagonal);
  std::vector<std::int64_t> keep;
  for (std::size_t i = 0; i < t.row_valid.size(); ++i)
    if (t.row_valid[i]) keep.push_back(static_cast<std::int64_t>(i));
  if (keep.empty()) return {torch::zeros({}, set.z.options()), t.excluded_rows, true};
  auto idx = torch::tensor(keep, torch::kInt64);
  auto lt = t.l_tilde.index_select(0, idx);
  torch::Tensor per_row;
  if (metric == PixelMetric::kJS) {
    per_row = js_divergence_rows(t.w_tilde.index_select(0, idx), lt);
  } else {
    auto logw = t.log_w_tilde.index_select(0, idx);
    per_row = -torch::where(lt > 0, lt * logw, torch::zeros_like(logw)).sum(1);
  }
  return {per_row.mean(), t.excluded_rows, false};
}

LossValue supervised_contrastive_loss(const SampledPixelSet& set, double tau) {
  const auto n = set.size();
  auto eye = torch::eye(n, torch::TensorOptions().dtype(torch::kBool));
  auto logits = (set.z.matmul(set.z.t()) / tau).masked_fill(eye, -std::numeric_limits<double>::infinity());
  auto log_prob = torch::log_softmax(logits, 1);
  auto y = torch::tensor(set.labels, torch::kInt64);
  auto positive = (y.unsqueeze(1) == y.unsqueeze(0)).logical_and(eye.logical_not());
  auto n_pos = positive.sum(1);
  auto anchors = n_pos > 0;
  const int excluded = static_cast<int>(n - anchors.sum().item<std::int64_t>());
  if (excluded == n) return {torch::zeros({}, set.z.options()), excluded, true};
  auto pos_sum = torch::where(positive, log_prob, torch::zeros_like(log_prob)).sum(1);
  auto per_anchor = -pos_sum.masked_select(anchors) / n_pos.masked_select(anchors).to(set.z.dtype());
  return {per_anchor.sum(), excluded, false};
}

LossValue pixel_to_class_loss(const torch::Tensor& features, const torch::Tensor& masks, const PrototypeBank& bank,
                              double tau) {
  if (features.dim() != 4 || masks.dim() != 3 || features.size(0) != masks.size(0) ||
      features.size(2) != masks.size(1) || features.size(3) != masks.size(2))
    throw ShapeError("pixel_to_class_loss: features [B,D,h,w] and masks [B,h,w] must agree");
  const auto dim = features.size(1);
  std::vector<std::int64_t> init_ids;
  std::vector<std::int64_t> column(static_cast<std::size_t>(bank.num_classes()), -1);
  for (int k = 0; k < bank.num_classes(); ++k)
    if (bank.initialized[static_cast<std::size_t>(k)]) {
      column[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(init_ids.size());
      init_ids.push_back(k);
    }
  auto y = masks.reshape({-1}).to(torch::kCPU).contiguous();
  const auto* yd = y.data_ptr<std::int64_t>();
  std::vector<std::int64_t> rows, targets;
  int skipped = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    if (yd[i] == kIgnoreLabel) continue;
    if (yd[i] < 0 || yd[i] >= bank.num_classes()) throw ShapeError("pixel_to_class_loss: label out of range");
    const auto col = column[static_cast<std::size_t>(yd[i])];
    if (col < 0) {
      ++skipped;
      continue;
    }
    rows.push_back(i);
    targets.push_back(col);
  }
  if (rows.empty()) return {torch::zeros({}, features.options()), skipped, true};
  auto z = l2_normalize(features.permute({0, 2, 3, 1}).reshape({-1, dim}), 1)
               .index_select(0, torch::tensor(rows, torch::kInt64));
  auto protos = bank.prototypes.index_select(0, torch::tensor(init_ids, torch::kInt64)).to(z.dtype());
  auto log_prob = torch::log_softmax(z.matmul(protos.t()) / tau, 1);
  auto picked = log_prob.gather(1, torch::tensor(targets, torch::kInt64).unsqueeze(1)).squeeze(1);
  return {-picked.mean(), skipped, false};
}

LossValue instance_to_class_loss(const std::vector<InstancePrototype>& instances, const PrototypeBank& bank, double xi,
                                 InstanceLossKind kind, double tau) {
  if (kind == InstanceLossKind::kInfoNce) {
    std::vector<std::int64_t> init_ids, column(static_cast<std::size_t>(bank.num_classes()), -1);
    for (int k = 0; k < bank.num_classes(); ++k)
      if (bank.initialized[static_cast<std::size_t>(k)]) {
        column[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(init_ids.size());
        init_ids.push_back(k);
      }
    std::vector<torch::Tensor> rows;
    std::vector<std::int64_t> targets;
    for (const auto& inst : instances) {
      const auto col = column[static_cast<std::size_t>(inst.class_id)];
      if (col < 0) continue;
      rows.push_back(inst.vector);
      targets.push_back(col);
    }
    if (rows.empty()) {
      warn("instance_to_class_loss: no instances with initialized prototypes");
      return {torch::zeros({}, bank.prototypes.options()), 0, true};
    }
    auto z = torch::stack(rows);
    auto protos = bank.prototypes.index_select(0, torch::tensor(init_ids, torch::kInt64)).to(z.dtype());
    auto log_prob = torch::log_softmax(z.matmul(protos.t()) / tau, 1);
    return {-log_prob.gather(1, torch::tensor(targets, torch::kInt64).unsqueeze(1)).mean(), 0, false};
  }

  std::vector<torch::Tensor> per_class;
  for (int k = 0; k < bank.num_classes(); ++k) {
    if (!bank.initialized[static_cast<std::size_t>(k)]) continue;
    std::vector<torch::Tensor> pos, neg;
    for (const auto& inst : instances) (inst.class_id == k ? pos : neg).push_back(inst.vector);
    if (pos.empty() || neg.empty()) continue;
    auto center = bank.prototypes[k];
    auto d_pos = pair_distance(torch::stack(pos), center.to(pos.front().dtype()));
    auto d_neg = pair_distance(torch::stack(neg), center.to(neg.front().dtype()));
    per_class.push_back(torch::relu(d_pos.unsqueeze(1) + xi - d_neg.unsqueeze(0)).mean());
  }
  if (per_class.empty()) {
    warn("instance_to_class_loss: no valid instance pairs");
    return {torch::zeros({}, bank.prototypes.options()), 0, true};
  }
  return {torch::stack(per_class).mean(), 0, false};
}

MlclTerms mlcl_loss(const torch::Tensor& pixel_to_pixel, const torch::Tensor& pixel_to_class,
                    const torch::Tensor& instance_to_class, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("mlcl_loss: lambda must be >= 0");
  return {lambda * pixel_to_pixel + pixel_to_class + instance_to_class, pixel_to_pixel, pixel_to_class,
          instance_to_class};
}

double landscape_l_sup(double s_plus, double s_minus, double tau) {
  return -(s_plus / tau - log_sum_exp({s_plus / tau, s_minus / tau}));
}

double landscape_l_ppce(double s_plus, double s_minus, double tau) {
  const double lse = log_sum_exp({1.0 / tau, s_plus / tau, s_minus / tau});
  return -0.5 * ((1.0 / tau - lse) + (s_plus / tau - lse));
}

namespace {

LandscapeSummary summarize(const std::vector<double>& values, const std::vector<double>& axis, double delta_d,
                           double threshold) {
  const auto n = axis.size();
  LandscapeSummary s;
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] < values[best]) best = i;
  s.l_star = values[best];
  s.argmin_s_plus = axis[best / n];
  s.argmin_s_minus = axis[best % n];
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > s.l_star + delta_d) continue;
    ++s.sublevel_count;
    if (axis[i / n] > threshold) ++s.sublevel_high_positive;
  }
  s.ratio = static_cast<double>(s.sublevel_high_positive) / static_cast<double>(s.sublevel_count);
  return s;
}

nlohmann::json to_json(const LandscapeSummary& s) {
  return {{"l_star", s.l_star},
          {"argmin", {{"s_plus", s.argmin_s_plus}, {"s_minus", s.argmin_s_minus}}},
          {"sublevel_count", s.sublevel_count},
          {"sublevel_high_positive", s.sublevel_high_positive},
          {"ratio", s.ratio}};
}

}  // namespace

LandscapeReport loss_landscape(double tau, double delta_d, int grid_n) {
  if (grid_n < 16) throw ConfigError("loss_landscape: grid_n must be >= 16");
  if (!(tau > 0.0)) throw ConfigError("loss_landscape: tau must be > 0");
  LandscapeReport r;
  r.tau = tau;
  r.delta_d = delta_d;
  r.grid_n = grid_n;
  for (int i = 0; i < grid_n; ++i) r.axis.push_back(-1.0 + 2.0 * i / (grid_n - 1));
  r.l_sup.reserve(static_cast<std::size_t>(grid_n * grid_n));
  r.l_ppce.reserve(static_cast<std::size_t>(grid_n * grid_n));
  for (double sp : r.axis)
    for (double sm : r.axis) {
      r.l_sup.push_back(landscape_l_sup(sp, sm, tau));
      r.l_ppce.push_back(landscape_l_ppce(sp, sm, tau));
    }
  r.sup = summarize(r.l_sup, r.axis, delta_d, r.positive_threshold);
  r.ppce = summarize(r.l_ppce, r.axis, delta_d, r.positive_threshold);
  return r;
}

void LandscapeReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "s_plus,s_minus,l_sup,l_ppce\n";
  os.precision(10);
  const auto n = axis.size();
  for (std::size_t i = 0; i < l_sup.size(); ++i)
    os << axis[i / n] << ',' << axis[i % n] << ',' << l_sup[i] << ',' << l_ppce[i] << '\n';
}

std::string LandscapeReport::summary_json() const {
  nlohmann::json j = {{"tau", tau},           {"delta_d", delta_d}, {"grid_n", grid_n},
                      {"positive_threshold", positive_threshold}, {"l_sup", to_json(sup)},
                      {"l_ppce", to_json(ppce)}};
  return j.dump(2);
}

}  // namespace dpcl
