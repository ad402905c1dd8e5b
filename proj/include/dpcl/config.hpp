#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpcl/adapt.hpp"
#include "dpcl/dataset.hpp"
#include "dpcl/scenegen.hpp"
#include "dpcl/train.hpp"

namespace dpcl {

// JSON converters. Readers start from the defaults, so partial objects are
// fine, but any key the struct does not know is a ConfigError.
void to_json(nlohmann::json& j, const ClassTexture& v);
void from_json(const nlohmann::json& j, ClassTexture& v);
void to_json(nlohmann::json& j, const SceneSpec& v);
void from_json(const nlohmann::json& j, SceneSpec& v);
void to_json(nlohmann::json& j, const DomainStyle& v);
void from_json(const nlohmann::json& j, DomainStyle& v);
void to_json(nlohmann::json& j, const TargetDomainSpec& v);
void from_json(const nlohmann::json& j, TargetDomainSpec& v);
void to_json(nlohmann::json& j, const BenchmarkConfig& v);
void from_json(const nlohmann::json& j, BenchmarkConfig& v);
void to_json(nlohmann::json& j, const AugConfig& v);
void from_json(const nlohmann::json& j, AugConfig& v);
void to_json(nlohmann::json& j, const SsdpConfig& v);
void from_json(const nlohmann::json& j, SsdpConfig& v);
void to_json(nlohmann::json& j, const SsdpTrainConfig& v);
void from_json(const nlohmann::json& j, SsdpTrainConfig& v);
void to_json(nlohmann::json& j, const SegModelConfig& v);
void from_json(const nlohmann::json& j, SegModelConfig& v);
void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);
void to_json(nlohmann::json& j, const TtaConfig& v);
void from_json(const nlohmann::json& j, TtaConfig& v);

struct RunConfig {
  std::string experiment = "desk";
  std::filesystem::path output_dir = "runs";
  std::uint64_t seed = 0;
  BenchmarkConfig data;
  AugConfig aug = AugConfig::image_default();
  SsdpTrainConfig ssdp;
  TrainConfig train;
  TtaConfig tta;

  // output_dir / experiment, with DPCL_OUTPUT_ROOT replacing output_dir.
  std::filesystem::path run_dir() const;
};

void to_json(nlohmann::json& j, const RunConfig& v);
void from_json(const nlohmann::json& j, RunConfig& v);

// Applies "a.b.c=value" to a JSON document; value parses as JSON when it
// can and is taken as a string otherwise. The path must already exist.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Defaults, then the file (if any), then overrides; validated.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});
void save_run_config(const std::filesystem::path& file, const RunConfig& cfg);

}  // namespace dpcl
