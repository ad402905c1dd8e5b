#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpcl/scenegen.hpp"

namespace dpcl {

struct TargetDomainSpec {
  std::string name;
  DomainStyle style;
};

struct BenchmarkConfig {
  SceneSpec scene = SceneSpec::desk();
  int n_train = 400;
  int n_val = 100;
  int n_target = 100;
  std::vector<TargetDomainSpec> targets = default_targets();

  // Two unseen styles whose parameters lie outside the IA jitter ranges.
  static std::vector<TargetDomainSpec> default_targets();
  void validate() const;
};

struct Domain {
  std::string name;
  DomainStyle style;
  std::vector<std::uint64_t> scene_seeds;
  std::vector<LabeledImage> items;

  // [N, 3, H, W] and [N, H, W] views of a subset of items.
  torch::Tensor images(const std::vector<std::int64_t>& idx) const;
  torch::Tensor masks(const std::vector<std::int64_t>& idx) const;
  torch::Tensor all_images() const;
  torch::Tensor all_masks() const;
};

struct Benchmark {
  SceneSpec scene;
  std::uint64_t seed = 0;
  Domain source_train;
  Domain source_val;
  std::vector<Domain> targets;
};

Benchmark build_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed);

// One directory per domain: images/NNNN.png (RGB), masks/NNNN.png (gray,
// 255 = ignore) and manifest.json with the spec, style and seeds.
void write_domain(const std::filesystem::path& dir, const Domain& domain, const SceneSpec& scene, std::uint64_t root_seed);
Domain read_domain(const std::filesystem::path& dir);

void write_benchmark(const std::filesystem::path& root, const Benchmark& bench);
Benchmark read_benchmark(const std::filesystem::path& root);

torch::Tensor stack_images(const std::vector<LabeledImage>& items);

}  // namespace dpcl
