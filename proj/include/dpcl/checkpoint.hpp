#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace dpcl {

// Versioned binary container shared by every persisted artifact.
//
// Layout (all integers little-endian):
//   magic        8 bytes  "DPCLCKPT"
//   version      u32      kCheckpointVersion
//   header_len   u32      followed by UTF-8 JSON header
//   n_sections   u32
//   per section: u32 name_len, name bytes, u32 ndim, u64 dims[ndim],
//                float32 data (row-major, little-endian)
//
// The header carries format_version, layer shapes and any config echo.
class Checkpoint {
 public:
  static constexpr std::uint32_t kCheckpointVersion = 2;

  nlohmann::json& header() { return header_; }
  const nlohmann::json& header() const { return header_; }

  void put(const std::string& name, const torch::Tensor& tensor);
  bool has(const std::string& name) const { return sections_.count(name) != 0; }
  torch::Tensor get(const std::string& name) const;
  const std::map<std::string, torch::Tensor>& sections() const { return sections_; }

  // Stores every parameter and buffer of `module` under "<prefix>/<name>"
  // and records the layer shapes in header()["layers"][prefix].
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  // Loads parameters/buffers saved by put_module; shapes must match.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  nlohmann::json header_ = nlohmann::json::object();
  std::map<std::string, torch::Tensor> sections_;
};

// Order-independent digest of all parameters and buffers; used to assert
// that frozen models are never modified.
std::uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace dpcl
