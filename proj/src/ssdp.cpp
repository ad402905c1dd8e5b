#include "dpcl/ssdp.hpp"

#include "dpcl/kmeans.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

namespace nn = torch::nn;

namespace {

torch::Tensor channel_view(const torch::Tensor& v) { return v.unsqueeze(-1).unsqueeze(-1); }

std::vector<Point> rows_of(const std::vector<torch::Tensor>& rows) {
  std::vector<Point> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    auto c = r.detach().to(torch::kCPU, torch::kFloat64).contiguous();
    out.emplace_back(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
  }
  return out;
}

torch::Tensor to_tensor(const std::vector<Point>& rows) {
  auto t = torch::empty({static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(rows.front().size())}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) a[static_cast<std::int64_t>(i)][static_cast<std::int64_t>(j)] = rows[i][j];
  return t;
}

torch::Tensor nearest_rows(const torch::Tensor& queries, const torch::Tensor& centers) {
  // queries [B, C], centers [q, C]. Explicit scan keeps the lowest-index tie rule.
  auto qd = queries.detach().to(torch::kFloat64).contiguous();
  auto cd = centers.detach().to(torch::kFloat64).contiguous();
  std::vector<Point> cs;
  for (std::int64_t c = 0; c < cd.size(0); ++c) cs.emplace_back(cd[c].data_ptr<double>(), cd[c].data_ptr<double>() + cd.size(1));
  std::vector<std::int64_t> idx;
  for (std::int64_t b = 0; b < qd.size(0); ++b) {
    Point p(qd[b].data_ptr<double>(), qd[b].data_ptr<double>() + qd.size(1));
    idx.push_back(nearest_index(p, cs));
  }
  return centers.index_select(0, torch::tensor(idx, torch::kInt64)).to(queries.dtype());
}

}  // namespace

void StyleCenters::validate() const {
  if (!mu_centers.defined() || !sigma_centers.defined() || q() < 1) throw StateError("StyleCenters: empty centers");
  if (mu_centers.sizes() != sigma_centers.sizes()) throw ShapeError("StyleCenters: mu/sigma shape mismatch");
  if (!torch::isfinite(mu_centers).all().item<bool>() || !torch::isfinite(sigma_centers).all().item<bool>())
    throw NumericError("StyleCenters: non-finite center");
  if ((sigma_centers < kStyleEps * (1.0 - 1e-6)).any().item<bool>()) throw NumericError("StyleCenters: sigma below eps");
}

void StyleCenters::save_to(Checkpoint& ckpt) const {
  ckpt.put("style_centers/mu", mu_centers);
  ckpt.put("style_centers/sigma", sigma_centers);
  ckpt.header()["style_centers"] = {{"q", q()}, {"channels", channels()}};
}

StyleCenters StyleCenters::load_from(const Checkpoint& ckpt) {
  StyleCenters c{ckpt.get("style_centers/mu").to(torch::kFloat64), ckpt.get("style_centers/sigma").to(torch::kFloat64)};
  c.validate();
  return c;
}

NormalizedFeatures instance_normalize(const torch::Tensor& features, double eps) {
  if (features.dim() != 3 && features.dim() != 4) throw ShapeError("instance_normalize: expected [C,H,W] or [B,C,H,W]");
  if (features.size(-1) * features.size(-2) < 2) throw ShapeError("instance_normalize: need at least 2 spatial positions");
  const std::vector<std::int64_t> spatial{-2, -1};
  auto mu = features.mean(spatial);
  auto centered = features - channel_view(mu);
  // The tiny floor keeps the sqrt gradient finite for constant channels.
  auto std = (centered.pow(2).mean(spatial) + 1e-24).sqrt();
  auto sigma = std + eps;
  return {centered / channel_view(sigma), {mu, sigma}};
}

torch::Tensor adain_renormalize(const torch::Tensor& normalized, const StyleStats& style) {
  const auto channels = normalized.size(-3);
  if (style.mu.size(-1) != channels || style.sigma.size(-1) != channels)
    throw ShapeError("adain_renormalize: channel count mismatch");
  return channel_view(style.sigma.to(normalized.dtype())) * normalized + channel_view(style.mu.to(normalized.dtype()));
}

SsdpNetImpl::SsdpNetImpl(const SsdpConfig& cfg) : cfg_(cfg) {
  if (cfg.channels < 1 || cfg.base_width < 1 || cfg.downsamples < 0 || cfg.downsamples > 3)
    throw ConfigError("SsdpNet: invalid config");
  const int w = cfg.base_width;
  auto conv = [](int in, int out, int stride) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
  };
  nn::Sequential enc, dec;
  enc->push_back(conv(3, w, 1));
  int width = w;
  for (int i = 0; i < cfg.downsamples; ++i) {
    enc->push_back(nn::ReLU());
    enc->push_back(conv(width, 2 * w, 2));
    width = 2 * w;
  }
  enc->push_back(nn::ReLU());
  enc->push_back(conv(width, cfg.channels, 1));
  encoder_ = register_module("encoder", enc);

  dec->push_back(conv(cfg.channels, width, 1));
  dec->push_back(nn::ReLU());
  for (int i = 0; i < cfg.downsamples; ++i) {
    dec->push_back(nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    dec->push_back(conv(width, w, 1));
    dec->push_back(nn::ReLU());
    width = w;
  }
  dec->push_back(conv(width, 3, 1));
  dec->push_back(nn::Sigmoid());
  decoder_ = register_module("decoder", dec);
}

torch::Tensor SsdpNetImpl::encode(const torch::Tensor& x) { return encoder_->forward(x); }

torch::Tensor SsdpNetImpl::decode(const torch::Tensor& f) { return decoder_->forward(f); }

void SsdpNetImpl::save_to(Checkpoint& ckpt) const {
  ckpt.put_module("ssdp", *this);
  ckpt.header()["ssdp"] = {{"channels", cfg_.channels},
                            {"base_width", cfg_.base_width},
                            {"downsamples", cfg_.downsamples},
                            {"trained_steps", trained_steps_}};
}

void SsdpNetImpl::load_from(const Checkpoint& ckpt) {
  const auto& h = ckpt.header();
  if (!h.contains("ssdp")) throw StateError("checkpoint has no ssdp section");
  if (h["ssdp"]["channels"].get<int>() != cfg_.channels || h["ssdp"]["base_width"].get<int>() != cfg_.base_width ||
      h["ssdp"].value("downsamples", 2) != cfg_.downsamples)
    throw ShapeError("ssdp checkpoint does not match the configured network");
  ckpt.load_module("ssdp", *this);
  trained_steps_ = h["ssdp"]["trained_steps"].get<std::int64_t>();
}

SsdpOutput ssdp_forward(SsdpNet& net, const torch::Tensor& x, const torch::Tensor& x_aug) {
  if (x.sizes() != x_aug.sizes()) throw ShapeError("ssdp_forward: x and x_aug shapes differ");
  const bool single = x.dim() == 3;
  auto xb = single ? x.unsqueeze(0) : x;
  auto xab = single ? x_aug.unsqueeze(0) : x_aug;
  auto style = instance_normalize(net->encode(xb)).stats;
  auto content = instance_normalize(net->encode(xab)).normalized;
  auto recon = net->decode(adain_renormalize(content, style));
  if (recon.sizes() != xb.sizes()) throw ShapeError("ssdp_forward: decoder output shape differs from input");
  auto loss = (xb - recon).abs().mean();
  return {single ? recon.squeeze(0) : recon, loss};
}

std::vector<StyleStats> encoder_style_stats(SsdpNet& net, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
  auto stats = instance_normalize(net->encode(batch)).stats;
  std::vector<StyleStats> out;
  for (std::int64_t b = 0; b < batch.size(0); ++b) out.push_back({stats.mu[b].clone(), stats.sigma[b].clone()});
  return out;
}

StyleCenters fit_style_centers(const std::vector<StyleStats>& stats, int q, std::uint64_t seed) {
  if (q < 1) throw ConfigError("fit_style_centers: q must be >= 1");
  if (stats.size() < static_cast<std::size_t>(q)) throw ConfigError("fit_style_centers: q exceeds number of stats");
  std::vector<torch::Tensor> mus, sigmas;
  for (const auto& s : stats) {
    mus.push_back(s.mu);
    sigmas.push_back(s.sigma);
  }
  auto mu_fit = lloyd_kmeans(rows_of(mus), q, derive_seed(seed, 1));
  auto sigma_fit = lloyd_kmeans(rows_of(sigmas), q, derive_seed(seed, 2));
  StyleCenters c{to_tensor(mu_fit.centers), to_tensor(sigma_fit.centers).clamp_min(kStyleEps)};
  c.validate();
  return c;
}

StyleStats nearest_center(const StyleStats& stats, const StyleCenters& centers) {
  if (!centers.mu_centers.defined() || centers.q() < 1) throw StateError("nearest_center: empty centers");
  if (stats.mu.size(-1) != centers.channels() || stats.sigma.size(-1) != centers.channels())
    throw ShapeError("nearest_center: dimension mismatch");
  const bool single = stats.mu.dim() == 1;
  auto mu = single ? stats.mu.unsqueeze(0) : stats.mu;
  auto sigma = single ? stats.sigma.unsqueeze(0) : stats.sigma;
  auto mu_hat = nearest_rows(mu, centers.mu_centers);
  auto sigma_hat = nearest_rows(sigma, centers.sigma_centers);
  if (single) return {mu_hat.squeeze(0), sigma_hat.squeeze(0)};
  return {mu_hat, sigma_hat};
}

torch::Tensor project(SsdpNet& net, const StyleCenters& centers, const torch::Tensor& x_t) {
  if (net->trained_steps() == 0) throw StateError("project: SSDP network is untrained");
  centers.validate();
  if (centers.channels() != net->config().channels) throw ShapeError("project: centers do not match the network channels");
  torch::NoGradGuard no_grad;
  const bool single = x_t.dim() == 3;
  auto x = single ? x_t.unsqueeze(0) : x_t;
  auto normalized = instance_normalize(net->encode(x));
  auto style = nearest_center(normalized.stats, centers);
  auto out = net->decode(adain_renormalize(normalized.normalized, style)).clamp(0.0, 1.0);
  return single ? out.squeeze(0) : out;
}

}  // namespace dpcl
