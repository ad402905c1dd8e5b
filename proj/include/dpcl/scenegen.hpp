#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dpcl {

// Per-class surface pattern. Classes are separable by texture as well as by
// color, so a color shift alone does not make the task unsolvable.
struct ClassTexture {
  double stripe_period = 0.0;  // px; 0 disables stripes
  double stripe_angle = 0.0;   // radians
  double stripe_amp = 0.0;     // relative modulation of the base color
  double checker_period = 0.0; // px; 0 disables the checkerboard
  double checker_amp = 0.0;
  double noise_amp = 0.0;      // per-pixel gaussian grain
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 8;
  int min_shapes = 3;
  int max_shapes = 7;
  int min_shape_size = 10;
  int max_shape_size = 30;
  std::vector<std::array<double, 3>> palette;
  std::vector<ClassTexture> textures;

  // Desk-scale defaults: palette and textures for the first k classes.
  static SceneSpec desk(int num_classes = 8, int height = 64, int width = 64);
  void validate() const;
};

struct DomainStyle {
  double brightness_shift = 0.0;
  double contrast_gain = 1.0;
  double hue_rotation = 0.0;  // radians around the gray axis
  double saturation_gain = 1.0;
  double noise_std = 0.0;
  std::array<double, 3> tint{1.0, 1.0, 1.0};  // per-channel gain

  static DomainStyle identity() { return {}; }
  bool is_identity() const;
  void validate() const;
};

// image: float32 [3, H, W] in [0, 1]; mask: int64 [H, W] in [0, K) or 255.
struct LabeledImage {
  torch::Tensor image;
  torch::Tensor mask;

  std::int64_t height() const { return image.size(1); }
  std::int64_t width() const { return image.size(2); }
  void validate(int num_classes) const;
};

struct AugConfig {
  // Image-level (IA): photometric, mask preserving.
  bool brightness = false;
  bool contrast = false;
  bool hue = false;
  bool saturation = false;
  bool gaussian_noise = false;
  double brightness_max = 0.12;
  double contrast_min = 0.75, contrast_max = 1.25;
  double hue_max = 0.2;
  double saturation_min = 0.75, saturation_max = 1.25;
  double noise_std = 0.02;
  // Geometric (GA): applied jointly to image and mask.
  bool crop = false;
  bool scale = false;
  bool flip = false;
  int crop_height = 48, crop_width = 48;
  double scale_min = 1.0, scale_max = 1.5;
  double flip_prob = 0.5;

  bool any_ia() const { return brightness || contrast || hue || saturation || gaussian_noise; }
  bool any_ga() const { return crop || scale || flip; }
  AugConfig ia_only() const;
  AugConfig ga_only() const;

  static AugConfig none() { return {}; }
  static AugConfig image_default();
  static AugConfig geometric_default();
};

LabeledImage generate_scene(const SceneSpec& spec, std::uint64_t seed);

LabeledImage apply_domain_style(const LabeledImage& x, const DomainStyle& style, std::uint64_t seed);

// GA first (scale, crop, flip), then IA.
LabeledImage augment(const LabeledImage& x, const AugConfig& cfg, std::uint64_t seed);

LabeledImage hflip(const LabeledImage& x);

// Photometric pipeline shared by styles and IA: contrast, brightness,
// saturation, hue, tint, then additive noise and clamping to [0, 1].
torch::Tensor apply_color_pipeline(const torch::Tensor& image, const DomainStyle& style, std::uint64_t noise_seed);

}  // namespace dpcl
