#include "dpcl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dpcl/common.hpp"
#include "dpcl/config.hpp"
#include "dpcl/png_io.hpp"
#include "dpcl/rng.hpp"

namespace dpcl {

namespace fs = std::filesystem;

std::vector<TargetDomainSpec> BenchmarkConfig::default_targets() {
  TargetDomainSpec dusk{"dusk", {}};
  dusk.style.brightness_shift = -0.2;
  dusk.style.contrast_gain = 0.6;
  dusk.style.hue_rotation = 0.45;
  dusk.style.saturation_gain = 0.55;
  dusk.style.noise_std = 0.03;
  dusk.style.tint = {0.85, 0.9, 1.2};
  TargetDomainSpec glare{"glare", {}};
  glare.style.brightness_shift = 0.18;
  glare.style.contrast_gain = 1.45;
  glare.style.hue_rotation = -0.45;
  glare.style.saturation_gain = 1.5;
  glare.style.noise_std = 0.03;
  glare.style.tint = {1.15, 1.05, 0.85};
  return {dusk, glare};
}

void BenchmarkConfig::validate() const {
  scene.validate();
  if (n_train < 1 || n_val < 1 || n_target < 1) throw ConfigError("benchmark: split sizes must be >= 1");
  if (targets.empty()) throw ConfigError("benchmark: need at least one target domain");
  for (const auto& t : targets) t.style.validate();
}

torch::Tensor stack_images(const std::vector<LabeledImage>& items) {
  std::vector<torch::Tensor> v;
  for (const auto& it : items) v.push_back(it.image);
  return torch::stack(v);
}

torch::Tensor Domain::images(const std::vector<std::int64_t>& idx) const {
  std::vector<torch::Tensor> v;
  for (auto i : idx) v.push_back(items.at(static_cast<std::size_t>(i)).image);
  return torch::stack(v);
}

torch::Tensor Domain::masks(const std::vector<std::int64_t>& idx) const {
  std::vector<torch::Tensor> v;
  for (auto i : idx) v.push_back(items.at(static_cast<std::size_t>(i)).mask);
  return torch::stack(v);
}

torch::Tensor Domain::all_images() const {
  std::vector<std::int64_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
  return images(idx);
}

torch::Tensor Domain::all_masks() const {
  std::vector<std::int64_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
  return masks(idx);
}

namespace {

Domain make_domain(const std::string& name, const DomainStyle& style, const SceneSpec& scene, std::uint64_t seed,
                   std::uint64_t tag, int count) {
  Domain d;
  d.name = name;
  d.style = style;
  for (int i = 0; i < count; ++i) {
    const auto scene_seed = derive_seed(seed, tag, static_cast<std::uint64_t>(i));
    d.scene_seeds.push_back(scene_seed);
    auto item = generate_scene(scene, scene_seed);
    if (!style.is_identity()) item = apply_domain_style(item, style, derive_seed(scene_seed, 0x57713ULL));
    d.items.push_back(std::move(item));
  }
  return d;
}

std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu.png", i);
  return buf;
}

}  // namespace

Benchmark build_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Benchmark b;
  b.scene = cfg.scene;
  b.seed = seed;
  b.source_train = make_domain("source_train", DomainStyle::identity(), cfg.scene, seed, 0, cfg.n_train);
  b.source_val = make_domain("source_val", DomainStyle::identity(), cfg.scene, seed, 1, cfg.n_val);
  for (std::size_t t = 0; t < cfg.targets.size(); ++t)
    b.targets.push_back(make_domain("target_" + cfg.targets[t].name, cfg.targets[t].style, cfg.scene, seed, 2 + t, cfg.n_target));
  return b;
}

void write_domain(const fs::path& dir, const Domain& domain, const SceneSpec& scene, std::uint64_t root_seed) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (std::size_t i = 0; i < domain.items.size(); ++i) {
    const auto& it = domain.items[i];
    const int h = static_cast<int>(it.height()), w = static_cast<int>(it.width());
    Raster8 rgb{h, w, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w * 3))};
    auto img = it.image.accessor<float, 3>();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          rgb.data[static_cast<std::size_t>((y * w + x) * 3 + c)] =
              static_cast<std::uint8_t>(std::lround(std::clamp(img[c][y][x], 0.0F, 1.0F) * 255.0F));
    write_png(dir / "images" / index_name(i), rgb);
    Raster8 gray{h, w, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(h * w))};
    auto m = it.mask.accessor<std::int64_t, 2>();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) gray.data[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint8_t>(m[y][x]);
    write_png(dir / "masks" / index_name(i), gray);
  }
  nlohmann::json manifest = {{"name", domain.name},
                             {"count", domain.items.size()},
                             {"root_seed", root_seed},
                             {"scene", scene},
                             {"style", domain.style},
                             {"scene_seeds", domain.scene_seeds}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Domain read_domain(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw ConfigError("dataset: missing manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(is);
  Domain d;
  d.name = manifest.at("name").get<std::string>();
  d.style = manifest.at("style").get<DomainStyle>();
  d.scene_seeds = manifest.at("scene_seeds").get<std::vector<std::uint64_t>>();
  const auto count = manifest.at("count").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    const auto rgb = read_png(dir / "images" / index_name(i));
    const auto gray = read_png(dir / "masks" / index_name(i));
    if (rgb.channels != 3 || gray.channels != 1 || rgb.height != gray.height || rgb.width != gray.width)
      throw ShapeError("dataset: inconsistent image/mask pair " + std::to_string(i) + " in " + dir.string());
    auto image = torch::empty({3, rgb.height, rgb.width}, torch::kFloat32);
    auto mask = torch::empty({gray.height, gray.width}, torch::kInt64);
    auto ia = image.accessor<float, 3>();
    auto ma = mask.accessor<std::int64_t, 2>();
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x) {
        for (int c = 0; c < 3; ++c) ia[c][y][x] = rgb.data[static_cast<std::size_t>((y * rgb.width + x) * 3 + c)] / 255.0F;
        ma[y][x] = gray.data[static_cast<std::size_t>(y * gray.width + x)];
      }
    d.items.push_back({image, mask});
  }
  return d;
}

void write_benchmark(const fs::path& root, const Benchmark& bench) {
  write_domain(root / bench.source_train.name, bench.source_train, bench.scene, bench.seed);
  write_domain(root / bench.source_val.name, bench.source_val, bench.scene, bench.seed);
  std::vector<std::string> names;
  for (const auto& t : bench.targets) {
    write_domain(root / t.name, t, bench.scene, bench.seed);
    names.push_back(t.name);
  }
  nlohmann::json index = {{"seed", bench.seed}, {"scene", bench.scene}, {"targets", names}};
  std::ofstream(root / "benchmark.json") << index.dump(2) << '\n';
}

Benchmark read_benchmark(const fs::path& root) {
  std::ifstream is(root / "benchmark.json");
  if (!is) throw ConfigError("dataset: no benchmark.json under " + root.string());
  const auto index = nlohmann::json::parse(is);
  Benchmark b;
  b.seed = index.at("seed").get<std::uint64_t>();
  b.scene = index.at("scene").get<SceneSpec>();
  b.source_train = read_domain(root / "source_train");
  b.source_val = read_domain(root / "source_val");
  for (const auto& name : index.at("targets")) b.targets.push_back(read_domain(root / name.get<std::string>()));
  return b;
}

}  // namespace dpcl
