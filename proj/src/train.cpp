#include "dpcl/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dpcl/common.hpp"
#include "dpcl/evaluate.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

namespace {

std::vector<std::vector<std::int64_t>> epoch_batches(std::size_t n, int batch_size, std::uint64_t seed) {
  Rng rng(seed, /*stream=*/21);
  auto perm = rng.sample_without_replacement(static_cast<std::int64_t>(n), static_cast<std::int64_t>(n));
  std::vector<std::vector<std::int64_t>> batches;
  for (std::size_t start = 0; start + static_cast<std::size_t>(batch_size) <= n; start += static_cast<std::size_t>(batch_size))
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(start + static_cast<std::size_t>(batch_size)));
  if (batches.empty()) batches.push_back(perm);
  return batches;
}

// Deterministic batch order: a fresh permutation per epoch.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n, int batch_size, std::uint64_t seed) : n_(n), batch_size_(batch_size), seed_(seed) {}

  const std::vector<std::int64_t>& next() {
    if (pos_ >= current_.size()) {
      current_ = epoch_batches(n_, batch_size_, derive_seed(seed_, epoch_++));
      pos_ = 0;
    }
    return current_[pos_++];
  }
  std::size_t batches_per_epoch() const { return std::max<std::size_t>(1, n_ / static_cast<std::size_t>(batch_size_)); }

 private:
  std::size_t n_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::vector<std::int64_t>> current_;
};

bool grads_finite(const torch::nn::Module& m) {
  for (const auto& p : m.parameters())
    if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>()) return false;
  return true;
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

}  // namespace

void SsdpTrainConfig::validate() const {
  if (iters < 1 || batch_size < 1 || !(lr > 0.0) || q < 1 || net.channels < 1 || net.base_width < 1)
    throw ConfigError("ssdp config: iters, batch_size, lr, q, channels and base_width must be positive");
}

void TrainConfig::validate() const {
  std::ostringstream err;
  if (!(lr0 > 0.0)) err << "lr0 > 0; ";
  if (!(momentum >= 0.0)) err << "momentum >= 0; ";
  if (!(weight_decay >= 0.0)) err << "weight_decay >= 0; ";
  if (batch_size < 1) err << "batch_size >= 1; ";
  if (max_iters < 1) err << "max_iters >= 1; ";
  if (!(poly_power > 0.0)) err << "poly_power > 0; ";
  if (warmup_epochs < 0) err << "warmup_epochs >= 0; ";
  if (!(lambda >= 0.0)) err << "lambda >= 0; ";
  if (!(xi > 0.0)) err << "xi > 0; ";
  if (!(tau > 0.0)) err << "tau > 0; ";
  if (!(gamma > 0.0 && gamma < 1.0)) err << "gamma in (0,1); ";
  if (n_per_class < 1) err << "n_per_class >= 1; ";
  if (!(grad_clip > 0.0)) err << "grad_clip > 0; ";
  if (!(fusion_weight >= 0.0 && fusion_weight <= 1.0)) err << "fusion_weight in [0,1]; ";
  if (log_every < 1 || eval_every < 0 || checkpoint_every < 0) err << "log/eval/checkpoint intervals; ";
  const auto msg = err.str();
  if (!msg.empty()) throw ConfigError("train config requires: " + msg);
}

double poly_lr(int iter, const TrainConfig& cfg) {
  if (iter >= cfg.max_iters) return 0.0;
  const double frac = 1.0 - static_cast<double>(std::max(iter, 0)) / static_cast<double>(cfg.max_iters);
  return cfg.lr0 * std::pow(frac, cfg.poly_power);
}

int warmup_iterations(const TrainConfig& cfg, std::size_t train_size) {
  const auto per_epoch = std::max<std::size_t>(1, train_size / static_cast<std::size_t>(cfg.batch_size));
  return cfg.warmup_epochs * static_cast<int>(per_epoch);
}

SsdpTrainResult train_ssdp(const Domain& train, const SsdpTrainConfig& cfg, const AugConfig& aug, std::uint64_t seed) {
  cfg.validate();
  if (train.items.empty()) throw ConfigError("train_ssdp: empty training set");
  torch::manual_seed(derive_seed(seed, 0x55D9));
  SsdpTrainResult result;
  result.net = SsdpNet(cfg.net);
  auto& net = result.net;
  net->train();
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.lr));
  BatchSchedule schedule(train.items.size(), cfg.batch_size, derive_seed(seed, 0xBA7C));
  const auto per_epoch = schedule.batches_per_epoch();
  const AugConfig ia = aug.ia_only();
  const AugConfig ga = aug.ga_only();

  double epoch_sum = 0.0;
  std::size_t epoch_count = 0;
  for (int it = 0; it < cfg.iters; ++it) {
    const auto& idx = schedule.next();
    std::vector<torch::Tensor> clean, shifted;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& item = train.items[static_cast<std::size_t>(idx[b])];
      const auto s = derive_seed(seed, static_cast<std::uint64_t>(it), b);
      switch (cfg.aug_mode) {
        case SsdpAugMode::kNone:
          clean.push_back(item.image);
          shifted.push_back(item.image);
          break;
        case SsdpAugMode::kImage:
          clean.push_back(item.image);
          shifted.push_back(augment(item, ia, s).image);
          break;
        case SsdpAugMode::kImageGeometric: {
          auto geo = augment(item, ga, s);
          clean.push_back(geo.image);
          shifted.push_back(augment(geo, ia, derive_seed(s, 1)).image);
          break;
        }
      }
    }
    opt.zero_grad();
    auto out = ssdp_forward(net, torch::stack(clean), torch::stack(shifted));
    const double loss = out.loss.item<double>();
    if (!std::isfinite(loss)) throw NumericError("train_ssdp: non-finite reconstruction loss at iteration " + std::to_string(it));
    out.loss.backward();
    if (!grads_finite(*net)) throw NumericError("train_ssdp: non-finite gradient at iteration " + std::to_string(it));
    opt.step();
    net->add_trained_steps(1);
    result.step_losses.push_back(loss);
    epoch_sum += loss;
    if (++epoch_count == per_epoch) {
      result.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_count));
      epoch_sum = 0.0;
      epoch_count = 0;
    }
  }
  if (epoch_count > 0) result.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_count));

  net->eval();
  std::vector<StyleStats> stats;
  const auto n = static_cast<std::int64_t>(train.items.size());
  for (std::int64_t start = 0; start < n; start += 50) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < std::min(n, start + 50); ++i) idx.push_back(i);
    for (auto& s : encoder_style_stats(net, train.images(idx))) stats.push_back(std::move(s));
  }
  result.centers = fit_style_centers(stats, std::min<int>(cfg.q, static_cast<int>(stats.size())), derive_seed(seed, 0xC1u));
  return result;
}

SegTrainResult train_segmentation(const Domain& train, const Domain* val, SsdpNet ssdp, const StyleCenters* centers,
                                  const TrainConfig& cfg, const AugConfig& aug, std::uint64_t seed,
                                  const std::optional<std::filesystem::path>& run_dir) {
  cfg.validate();
  if (train.items.empty()) throw ConfigError("train_segmentation: empty training set");
  if (cfg.use_ssdp && (ssdp.is_empty() || centers == nullptr)) throw StateError("train_segmentation: SSDP required but missing");
  if (cfg.use_ssdp) ssdp->eval();

  torch::manual_seed(derive_seed(seed, 0x5E6));
  SegTrainResult result;
  result.model = SegModel(cfg.model);
  auto& model = result.model;
  const int k = cfg.model.num_classes;
  result.bank = PrototypeBank::empty(k, cfg.model.feature_dim, cfg.gamma, cfg.tau);
  auto& bank = result.bank;

  torch::optim::SGD opt(model->parameters(),
                        torch::optim::SGDOptions(cfg.lr0).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
  BatchSchedule schedule(train.items.size(), cfg.batch_size, derive_seed(seed, 0xBA7D));
  const int warmup = warmup_iterations(cfg, train.items.size());
  const AugConfig stage2_aug = aug;

  auto evaluate_val = [&]() -> std::optional<double> {
    if (val == nullptr) return std::nullopt;
    auto predictor = make_predictor(model, bank, ssdp, centers, cfg);
    auto score = evaluate_domain(predictor, *val);
    model->train();
    return score.miou;
  };

  model->train();
  for (int it = 0; it < cfg.max_iters; ++it) {
    const double lr = poly_lr(it, cfg);
    set_lr(opt, lr);
    const auto& idx = schedule.next();
    std::vector<torch::Tensor> imgs, masks;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto a = augment(train.items[static_cast<std::size_t>(idx[b])], stage2_aug, derive_seed(seed, static_cast<std::uint64_t>(it), b));
      imgs.push_back(a.image);
      masks.push_back(a.mask);
    }
    auto x = torch::stack(imgs);
    if (cfg.use_ssdp) x = project(ssdp, *centers, x);
    auto full_masks = torch::stack(masks);

    auto out = model->forward(x);
    auto labels = resize_labels(full_masks, out.features.size(2), out.features.size(3));
    auto task = task_loss(out.logits, labels).to(torch::kFloat64);

    StepLog log;
    log.iter = it;
    log.lr = lr;
    log.warmup = it < warmup;
    auto batch_protos = class_prototypes_from_batch(out.features, labels);
    torch::Tensor total = task;
    if (log.warmup) {
      bank = ema_update(bank, batch_protos);
    } else {
      auto zero = torch::zeros({}, torch::kFloat64);
      torch::Tensor pp = zero, pc = zero, ic = zero, div = zero;
      if (cfg.use_pp) {
        auto preds = out.logits.detach().argmax(1);
        auto set = sample_pixels(out.features, labels, preds, cfg.n_per_class, derive_seed(seed, 0x5A3, static_cast<std::uint64_t>(it)));
        pp = pixel_to_pixel_loss(set, cfg.tau, cfg.pp_metric, cfg.pp_diagonal).value.to(torch::kFloat64);
      }
      if (cfg.use_pc) pc = pixel_to_class_loss(out.features, labels, bank, cfg.tau).value.to(torch::kFloat64);
      if (cfg.use_ic) {
        std::vector<InstancePrototype> instances;
        for (std::int64_t b = 0; b < out.features.size(0); ++b)
          for (auto& inst : instance_prototypes(out.features[b], labels[b])) instances.push_back(std::move(inst));
        ic = instance_to_class_loss(instances, bank, cfg.xi, cfg.ic_kind, cfg.tau).value.to(torch::kFloat64);
      }
      // The bank used above is the pre-update state; L_div sees the update.
      auto blended = ema_blend(bank, batch_protos);
      bank = ema_update(bank, batch_protos);
      if (cfg.use_div) div = divergence_loss(blended, bank.initialized).value.to(torch::kFloat64);
      auto mlcl = mlcl_loss(pp, pc, ic, cfg.lambda);
      total = task + mlcl.total + div;
      log.pp = pp.item<double>();
      log.pc = pc.item<double>();
      log.ic = ic.item<double>();
      log.mlcl = mlcl.total.item<double>();
      log.div = div.item<double>();
    }
    log.task = task.item<double>();
    log.total = total.item<double>();
    if (!std::isfinite(log.total))
      throw NumericError("train_segmentation: non-finite loss at iteration " + std::to_string(it) +
                         " (task=" + std::to_string(log.task) + ", mlcl=" + std::to_string(log.mlcl) +
                         ", div=" + std::to_string(log.div) + ")");
    opt.zero_grad();
    total.backward();
    torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.grad_clip);
    opt.step();

    const bool last = it + 1 == cfg.max_iters;
    if (cfg.eval_every > 0 && ((it + 1) % cfg.eval_every == 0 || last)) log.val_miou = evaluate_val();
    if (it % cfg.log_every == 0 || last || log.val_miou) result.log.push_back(log);
    if (run_dir && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && !last) {
      Checkpoint ckpt;
      model->save_to(ckpt);
      bank.save_to(ckpt);
      ckpt.header()["iteration"] = it + 1;
      ckpt.save(*run_dir / ("seg_iter" + std::to_string(it + 1) + ".ckpt"));
    }
  }
  model->eval();
  if (run_dir) write_metrics_csv(*run_dir / "metrics.csv", result.log);
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "iter,lr,warmup,task,pp,pc,ic,mlcl,div,total,val_miou\n";
  os << std::setprecision(17);
  for (const auto& s : log) {
    os << s.iter << ',' << s.lr << ',' << (s.warmup ? 1 : 0) << ',' << s.task << ',' << s.pp << ',' << s.pc << ','
       << s.ic << ',' << s.mlcl << ',' << s.div << ',' << s.total << ',';
    if (s.val_miou) os << *s.val_miou;
    os << '\n';
  }
}

}  // namespace dpcl
