#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpcl/config.hpp"

namespace dpcl {

// One table row: a label plus dotted-key overrides applied to the base
// config, e.g. {"train.lambda": 3}.
struct SweepRow {
  std::string label;
  nlohmann::json overrides = nlohmann::json::object();
};

struct SweepSpec {
  std::string name = "sweep";
  std::vector<SweepRow> rows;
  std::vector<std::uint64_t> seeds{0};
};

// Accepts {"preset": name}, {"key": k, "values": [...]} or {"rows": [...]},
// each optionally with "name" and "seeds". An empty object is a single
// base-config row.
SweepSpec parse_sweep(const nlohmann::json& j);
SweepSpec preset_sweep(const std::string& name);
std::vector<std::string> preset_names();

// Every override key must name an existing config entry; throws otherwise.
void validate_sweep(const SweepSpec& spec, const RunConfig& base);

struct CellResult {
  std::uint64_t seed = 0;
  double source_val_miou = 0.0;
  std::map<std::string, double> target_miou;
  double mean_target_miou = 0.0;
};

struct RowResult {
  std::string label;
  std::vector<CellResult> cells;
  double mean = 0.0;  // mean over seeds of the mean-over-targets mIoU
  double stddev = 0.0;
  double source_val_mean = 0.0;
};

struct AblationReport {
  std::string name;
  std::vector<std::string> targets;
  std::vector<RowResult> rows;

  void write_csv(const std::filesystem::path& path) const;
  std::string text_table() const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Trains and evaluates every (row, seed) cell. Benchmarks and SSDP models
// are shared between rows whose data/SSDP settings and seed coincide.
AblationReport run_ablation(const RunConfig& base, const SweepSpec& spec, const ProgressFn& progress = {});

// Resolves one row's config from the base.
RunConfig apply_row(const RunConfig& base, const SweepRow& row);

}  // namespace dpcl
