#include "dpcl/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "dpcl/common.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

namespace {

using Rgb = std::array<double, 3>;

const std::vector<Rgb>& base_palette() {
  static const std::vector<Rgb> palette = {
      {0.45, 0.45, 0.48}, {0.25, 0.60, 0.20}, {0.45, 0.65, 0.90}, {0.70, 0.25, 0.20},
      {0.90, 0.80, 0.20}, {0.55, 0.30, 0.65}, {0.90, 0.50, 0.15}, {0.20, 0.60, 0.60},
  };
  return palette;
}

const std::vector<ClassTexture>& base_textures() {
  constexpr double pi = std::numbers::pi;
  static const std::vector<ClassTexture> textures = {
      {0.0, 0.0, 0.0, 0.0, 0.0, 0.03},            // flat, faint grain
      {0.0, 0.0, 0.0, 0.0, 0.0, 0.12},            // grainy
      {0.0, 0.0, 0.0, 0.0, 0.0, 0.0},             // smooth
      {4.0, pi / 2, 0.35, 0.0, 0.0, 0.02},        // horizontal stripes
      {0.0, 0.0, 0.0, 6.0, 0.15, 0.02},           // coarse checker
      {6.0, pi / 4, 0.35, 0.0, 0.0, 0.02},        // diagonal stripes
      {5.0, 0.0, 0.35, 0.0, 0.0, 0.02},           // vertical stripes
      {0.0, 0.0, 0.0, 4.0, 0.15, 0.02},           // fine checker
  };
  return textures;
}

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  Rgb rgb{};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

enum class ShapeKind { kRect, kEllipse, kTriangle };

struct Shape {
  ShapeKind kind;
  int cls;
  double cx, cy, rx, ry;
  double phase;
};

bool inside(const Shape& s, double x, double y) {
  const double dx = (x - s.cx) / s.rx;
  const double dy = (y - s.cy) / s.ry;
  switch (s.kind) {
    case ShapeKind::kRect:
      return std::fabs(dx) <= 1.0 && std::fabs(dy) <= 1.0;
    case ShapeKind::kEllipse:
      return dx * dx + dy * dy <= 1.0;
    case ShapeKind::kTriangle:
      // Apex up, base at dy = 1.
      return dy <= 1.0 && dy >= -1.0 && std::fabs(dx) <= (dy + 1.0) / 2.0;
  }
  return false;
}

double texture_value(const ClassTexture& t, double x, double y, double phase) {
  double v = 1.0;
  if (t.stripe_period > 0.0) {
    const double u = x * std::cos(t.stripe_angle) + y * std::sin(t.stripe_angle);
    v += t.stripe_amp * std::sin(2.0 * std::numbers::pi * u / t.stripe_period + phase);
  }
  return v;
}

double checker_value(const ClassTexture& t, int x, int y, int offset) {
  if (t.checker_period <= 0.0) return 0.0;
  const int p = static_cast<int>(t.checker_period);
  const int cx = (x + offset) / p;
  const int cy = (y + offset) / p;
  return ((cx + cy) % 2 == 0) ? t.checker_amp : -t.checker_amp;
}

}  // namespace

SceneSpec SceneSpec::desk(int num_classes, int height, int width) {
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.num_classes = num_classes;
  const auto& pal = base_palette();
  const auto& tex = base_textures();
  for (int k = 0; k < num_classes; ++k) {
    if (k < static_cast<int>(pal.size())) {
      spec.palette.push_back(pal[static_cast<std::size_t>(k)]);
      spec.textures.push_back(tex[static_cast<std::size_t>(k)]);
    } else {
      // Extra classes: golden-angle hue walk with cycling textures.
      const double h = std::fmod(0.13 + 0.618033988749895 * k, 1.0);
      spec.palette.push_back(hsv_to_rgb(h, 0.6, 0.8));
      spec.textures.push_back(tex[static_cast<std::size_t>(k) % tex.size()]);
    }
  }
  return spec;
}

void SceneSpec::validate() const {
  std::ostringstream err;
  if (height < 32 || width < 32) err << "scene height/width must be >= 32; ";
  if (num_classes < 3 || num_classes > 16) err << "num_classes must be in [3, 16]; ";
  if (min_shapes < 0 || max_shapes < min_shapes) err << "invalid shape count range; ";
  if (min_shape_size < 2 || max_shape_size < min_shape_size) err << "invalid shape size range; ";
  if (static_cast<int>(palette.size()) != num_classes) err << "palette must have num_classes entries; ";
  if (static_cast<int>(textures.size()) != num_classes) err << "textures must have num_classes entries; ";
  const auto msg = err.str();
  if (!msg.empty()) throw ConfigError("SceneSpec: " + msg);
}

bool DomainStyle::is_identity() const {
  return brightness_shift == 0.0 && contrast_gain == 1.0 && hue_rotation == 0.0 &&
         saturation_gain == 1.0 && noise_std == 0.0 && tint == std::array<double, 3>{1.0, 1.0, 1.0};
}

void DomainStyle::validate() const {
  if (!(noise_std >= 0.0)) throw ConfigError("DomainStyle: noise_std must be >= 0");
  if (!(contrast_gain >= 0.0) || !(saturation_gain >= 0.0))
    throw ConfigError("DomainStyle: gains must be >= 0");
  for (double t : tint)
    if (!(t >= 0.0)) throw ConfigError("DomainStyle: tint gains must be >= 0");
}

void LabeledImage::validate(int num_classes) const {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("LabeledImage: image must be [3, H, W]");
  if (mask.dim() != 2 || mask.size(0) != image.size(1) || mask.size(1) != image.size(2))
    throw ShapeError("LabeledImage: mask shape must match image");
  const auto bad = ((mask >= num_classes) & (mask != kIgnoreLabel)) | (mask < 0);
  if (bad.any().item<bool>()) throw ShapeError("LabeledImage: label out of range");
}

AugConfig AugConfig::ia_only() const {
  AugConfig c = *this;
  c.crop = c.scale = c.flip = false;
  return c;
}

AugConfig AugConfig::ga_only() const {
  AugConfig c = *this;
  c.brightness = c.contrast = c.hue = c.saturation = c.gaussian_noise = false;
  return c;
}

AugConfig AugConfig::image_default() {
  AugConfig c;
  c.brightness = c.contrast = c.hue = c.saturation = c.gaussian_noise = true;
  return c;
}

AugConfig AugConfig::geometric_default() {
  AugConfig c;
  c.crop = c.scale = c.flip = true;
  return c;
}

LabeledImage generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed, /*stream=*/1);
  const int h = spec.height;
  const int w = spec.width;
  const int k = spec.num_classes;

  std::vector<Shape> shapes;
  const int bg = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  const int n_shapes = spec.min_shapes + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1)));
  auto random_shape = [&](int cls) {
    Shape s;
    s.kind = static_cast<ShapeKind>(rng.below(3));
    s.cls = cls;
    s.rx = rng.uniform(spec.min_shape_size, spec.max_shape_size) / 2.0;
    s.ry = rng.uniform(spec.min_shape_size, spec.max_shape_size) / 2.0;
    s.cx = rng.uniform(0.0, w);
    s.cy = rng.uniform(0.0, h);
    s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    return s;
  };
  for (int i = 0; i < n_shapes; ++i) shapes.push_back(random_shape(static_cast<int>(rng.below(static_cast<std::uint64_t>(k)))));

  std::vector<int> owner(static_cast<std::size_t>(h * w), -1);
  auto rasterize = [&] {
    std::fill(owner.begin(), owner.end(), -1);
    for (int si = 0; si < static_cast<int>(shapes.size()); ++si)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (inside(shapes[static_cast<std::size_t>(si)], x + 0.5, y + 0.5)) owner[static_cast<std::size_t>(y * w + x)] = si;
  };
  rasterize();
  auto class_at = [&](std::size_t i) { return owner[i] < 0 ? bg : shapes[static_cast<std::size_t>(owner[i])].cls; };
  auto distinct_classes = [&] {
    std::set<int> cls;
    for (std::size_t i = 0; i < owner.size(); ++i) cls.insert(class_at(i));
    return cls.size();
  };
  // At least two classes: add a centered shape of a non-background class on top.
  while (distinct_classes() < 2) {
    const int cls = (bg + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)))) % k;
    Shape s = random_shape(cls);
    s.kind = ShapeKind::kRect;
    s.cx = rng.uniform(w * 0.25, w * 0.75);
    s.cy = rng.uniform(h * 0.25, h * 0.75);
    shapes.push_back(s);
    rasterize();
  }

  auto image = torch::empty({3, h, w}, torch::kFloat32);
  auto mask = torch::empty({h, w}, torch::kInt64);
  auto img = image.accessor<float, 3>();
  auto msk = mask.accessor<std::int64_t, 2>();
  const double bg_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int bg_offset = static_cast<int>(rng.below(8));
  std::vector<int> offsets;
  for (std::size_t i = 0; i < shapes.size(); ++i) offsets.push_back(static_cast<int>(rng.below(8)));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto idx = static_cast<std::size_t>(y * w + x);
      const int cls = class_at(idx);
      const double phase = owner[idx] < 0 ? bg_phase : shapes[static_cast<std::size_t>(owner[idx])].phase;
      const int offset = owner[idx] < 0 ? bg_offset : offsets[static_cast<std::size_t>(owner[idx])];
      const auto& tex = spec.textures[static_cast<std::size_t>(cls)];
      const auto& col = spec.palette[static_cast<std::size_t>(cls)];
      const double mod = texture_value(tex, x, y, phase);
      const double chk = checker_value(tex, x, y, offset);
      const double grain = tex.noise_amp > 0.0 ? tex.noise_amp * rng.normal() : 0.0;
      for (int c = 0; c < 3; ++c)
        img[c][y][x] = static_cast<float>(std::clamp(col[static_cast<std::size_t>(c)] * mod + chk + grain, 0.0, 1.0));
      msk[y][x] = cls;
    }
  }
  return {image, mask};
}

torch::Tensor apply_color_pipeline(const torch::Tensor& image, const DomainStyle& style, std::uint64_t noise_seed) {
  if (style.is_identity()) return image.clone();
  auto x = image.to(torch::kFloat64);
  if (style.contrast_gain != 1.0) x = (x - 0.5) * style.contrast_gain + 0.5;
  if (style.brightness_shift != 0.0) x = x + style.brightness_shift;
  if (style.saturation_gain != 1.0) {
    auto gray = 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2];
    x = gray.unsqueeze(0) + style.saturation_gain * (x - gray.unsqueeze(0));
  }
  if (style.hue_rotation != 0.0) {
    // Rodrigues rotation about the (1,1,1)/sqrt(3) gray axis.
    const double c = std::cos(style.hue_rotation);
    const double s = std::sin(style.hue_rotation);
    const double a = (1.0 - c) / 3.0;
    const double b = s / std::sqrt(3.0);
    auto rot = torch::tensor({c + a, a - b, a + b, a + b, c + a, a - b, a - b, a + b, c + a},
                             torch::kFloat64).view({3, 3});
    x = torch::einsum("ij,jhw->ihw", {rot, x});
  }
  if (style.tint != std::array<double, 3>{1.0, 1.0, 1.0})
    x = x * torch::tensor({style.tint[0], style.tint[1], style.tint[2]}, torch::kFloat64).view({3, 1, 1});
  if (style.noise_std > 0.0) {
    Rng rng(noise_seed, /*stream=*/2);
    auto noise = torch::empty_like(x);
    auto n = noise.accessor<double, 3>();
    for (int c = 0; c < n.size(0); ++c)
      for (int y = 0; y < n.size(1); ++y)
        for (int xx = 0; xx < n.size(2); ++xx) n[c][y][xx] = style.noise_std * rng.normal();
    x = x + noise;
  }
  return x.clamp(0.0, 1.0).to(torch::kFloat32);
}

LabeledImage apply_domain_style(const LabeledImage& x, const DomainStyle& style, std::uint64_t seed) {
  style.validate();
  return {apply_color_pipeline(x.image, style, seed), x.mask.clone()};
}

LabeledImage hflip(const LabeledImage& x) { return {x.image.flip({2}), x.mask.flip({1})}; }

namespace {

namespace F = torch::nn::functional;

LabeledImage resize(const LabeledImage& x, std::int64_t h, std::int64_t w) {
  auto img = F::interpolate(x.image.unsqueeze(0),
                            F::InterpolateFuncOptions().size(std::vector<std::int64_t>{h, w}).mode(torch::kBilinear).align_corners(false))
                 .squeeze(0);
  auto msk = F::interpolate(x.mask.unsqueeze(0).unsqueeze(0).to(torch::kFloat32),
                            F::InterpolateFuncOptions().size(std::vector<std::int64_t>{h, w}).mode(torch::kNearest))
                 .squeeze(0)
                 .squeeze(0)
                 .to(torch::kInt64);
  return {img.clamp(0.0, 1.0), msk};
}

LabeledImage window(const LabeledImage& x, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) {
  // Out-of-range regions are filled with black pixels and ignore labels.
  auto img = torch::zeros({3, h, w}, torch::kFloat32);
  auto msk = torch::full({h, w}, kIgnoreLabel, torch::kInt64);
  const auto y0 = std::max<std::int64_t>(top, 0), x0 = std::max<std::int64_t>(left, 0);
  const auto y1 = std::min<std::int64_t>(top + h, x.height()), x1 = std::min<std::int64_t>(left + w, x.width());
  if (y1 > y0 && x1 > x0) {
    using torch::indexing::Slice;
    img.index_put_({Slice(), Slice(y0 - top, y1 - top), Slice(x0 - left, x1 - left)},
                   x.image.index({Slice(), Slice(y0, y1), Slice(x0, x1)}));
    msk.index_put_({Slice(y0 - top, y1 - top), Slice(x0 - left, x1 - left)}, x.mask.index({Slice(y0, y1), Slice(x0, x1)}));
  }
  return {img, msk};
}

}  // namespace

LabeledImage augment(const LabeledImage& x, const AugConfig& cfg, std::uint64_t seed) {
  const auto h = x.height();
  const auto w = x.width();
  if (cfg.crop && (cfg.crop_height > h || cfg.crop_width > w || cfg.crop_height < 1 || cfg.crop_width < 1))
    throw ConfigError("augment: crop larger than image");
  if (cfg.scale && (cfg.scale_min <= 0.0 || cfg.scale_max < cfg.scale_min))
    throw ConfigError("augment: invalid scale range");
  Rng rng(seed, /*stream=*/3);
  LabeledImage out{x.image.clone(), x.mask.clone()};

  if (cfg.scale) {
    const double s = rng.uniform(cfg.scale_min, cfg.scale_max);
    const auto sh = std::max<std::int64_t>(1, std::llround(s * static_cast<double>(h)));
    const auto sw = std::max<std::int64_t>(1, std::llround(s * static_cast<double>(w)));
    out = resize(out, sh, sw);
    const auto top = sh >= h ? static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(sh - h + 1))) : -(h - sh) / 2;
    const auto left = sw >= w ? static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(sw - w + 1))) : -(w - sw) / 2;
    out = window(out, top, left, h, w);
  }
  if (cfg.crop) {
    const auto top = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - cfg.crop_height + 1)));
    const auto left = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - cfg.crop_width + 1)));
    out = resize(window(out, top, left, cfg.crop_height, cfg.crop_width), h, w);
  }
  if (cfg.flip && rng.uniform() < cfg.flip_prob) out = hflip(out);

  if (cfg.any_ia()) {
    DomainStyle jitter;
    // Draws happen unconditionally so enabling one jitter does not reshuffle the others.
    const double b = rng.uniform(-cfg.brightness_max, cfg.brightness_max);
    const double c = rng.uniform(cfg.contrast_min, cfg.contrast_max);
    const double hue = rng.uniform(-cfg.hue_max, cfg.hue_max);
    const double sat = rng.uniform(cfg.saturation_min, cfg.saturation_max);
    if (cfg.brightness) jitter.brightness_shift = b;
    if (cfg.contrast) jitter.contrast_gain = c;
    if (cfg.hue) jitter.hue_rotation = hue;
    if (cfg.saturation) jitter.saturation_gain = sat;
    if (cfg.gaussian_noise) jitter.noise_std = cfg.noise_std;
    out.image = apply_color_pipeline(out.image, jitter, rng.next_u64());
  }
  return out;
}

}  // namespace dpcl
