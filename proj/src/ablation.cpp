#include "dpcl/ablation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dpcl/common.hpp"
#include "dpcl/evaluate.hpp"

namespace dpcl {

using nlohmann::json;

namespace {

SweepRow row(std::string label, json overrides) { return {std::move(label), std::move(overrides)}; }

SweepSpec grid(const std::string& name, const std::string& key, const std::vector<json>& values) {
  SweepSpec s;
  s.name = name;
  for (const auto& v : values) s.rows.push_back(row(key + "=" + v.dump(), {{key, v}}));
  return s;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"table2", "table4", "lambda", "xi", "tau", "q", "mlcl_components", "ssdp_aug", "ic_kind"};
}

SweepSpec preset_sweep(const std::string& name) {
  const json off = {{"train.use_ssdp", false}, {"train.use_pp", false}, {"train.use_pc", false},
                    {"train.use_ic", false},   {"train.use_div", false}};
  if (name == "table2") {
    SweepSpec s;
    s.name = name;
    json ssdp = off;
    ssdp["train.use_ssdp"] = true;
    json mlcl = ssdp;
    mlcl["train.use_pp"] = mlcl["train.use_pc"] = mlcl["train.use_ic"] = true;
    json full = mlcl;
    full["train.use_div"] = true;
    s.rows = {row("baseline", off), row("+SSDP", ssdp), row("+SSDP+MLCL", mlcl), row("+SSDP+MLCL+div", full)};
    return s;
  }
  if (name == "table4") {
    SweepSpec s;
    s.name = name;
    s.rows = {row("Scl-CE", {{"train.pp_metric", "CE"}, {"train.pp_diagonal", false}}),
              row("Scl-JS", {{"train.pp_metric", "JS"}, {"train.pp_diagonal", false}}),
              row("Ours-CE", {{"train.pp_metric", "CE"}, {"train.pp_diagonal", true}}),
              row("Ours-JS", {{"train.pp_metric", "JS"}, {"train.pp_diagonal", true}})};
    return s;
  }
  if (name == "lambda") return grid(name, "train.lambda", {3, 4, 5, 6, 7});
  if (name == "xi") return grid(name, "train.xi", {0.3, 0.4, 0.5, 0.6, 0.7});
  if (name == "tau") return grid(name, "train.tau", {0.05, 0.1, 0.2, 0.5});
  if (name == "q") return grid(name, "ssdp.q", {1, 5, 10, 20});
  if (name == "mlcl_components") {
    SweepSpec s;
    s.name = name;
    auto combo = [](bool pp, bool pc, bool ic) {
      return json{{"train.use_pp", pp}, {"train.use_pc", pc}, {"train.use_ic", ic}};
    };
    s.rows = {row("none", combo(false, false, false)), row("pp", combo(true, false, false)),
              row("pc", combo(false, true, false)),    row("ic", combo(false, false, true)),
              row("pp+pc", combo(true, true, false)),  row("pp+pc+ic", combo(true, true, true))};
    return s;
  }
  if (name == "ssdp_aug") {
    SweepSpec s;
    s.name = name;
    s.rows = {row("IA", {{"ssdp.aug_mode", "IA"}}), row("IA+GA", {{"ssdp.aug_mode", "IA+GA"}})};
    return s;
  }
  if (name == "ic_kind") {
    SweepSpec s;
    s.name = name;
    s.rows = {row("triplet", {{"train.ic_kind", "triplet"}}), row("InfoNCE", {{"train.ic_kind", "infonce"}})};
    return s;
  }
  throw ConfigError("unknown sweep preset '" + name + "'");
}

SweepSpec parse_sweep(const json& j) {
  if (!j.is_object()) throw ConfigError("sweep spec must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (k != "name" && k != "preset" && k != "key" && k != "values" && k != "rows" && k != "seeds")
      throw ConfigError("unknown sweep key '" + k + "'");
  const int forms = static_cast<int>(j.contains("preset")) + static_cast<int>(j.contains("key")) +
                    static_cast<int>(j.contains("rows"));
  if (forms > 1) throw ConfigError("sweep spec: use only one of preset, key/values, rows");
  SweepSpec s;
  if (j.contains("preset")) {
    s = preset_sweep(j.at("preset").get<std::string>());
  } else if (j.contains("key")) {
    if (!j.contains("values") || !j.at("values").is_array() || j.at("values").empty())
      throw ConfigError("sweep spec: key needs a non-empty values list");
    s = grid("sweep", j.at("key").get<std::string>(), j.at("values").get<std::vector<json>>());
  } else if (j.contains("rows")) {
    for (const auto& r : j.at("rows")) {
      if (!r.contains("label") || !r.contains("set") || !r.at("set").is_object())
        throw ConfigError("sweep spec: each row needs label and set");
      s.rows.push_back(row(r.at("label").get<std::string>(), r.at("set")));
    }
  }
  if (s.rows.empty()) s.rows.push_back(row("base", json::object()));
  if (j.contains("name")) s.name = j.at("name").get<std::string>();
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (s.seeds.empty()) throw ConfigError("sweep spec: seeds must not be empty");
  return s;
}

RunConfig apply_row(const RunConfig& base, const SweepRow& r) {
  json doc = base;
  for (const auto& [key, value] : r.overrides.items()) apply_override(doc, key + "=" + value.dump());
  auto cfg = doc.get<RunConfig>();
  cfg.data.validate();
  cfg.ssdp.validate();
  cfg.train.validate();
  cfg.tta.validate();
  return cfg;
}

void validate_sweep(const SweepSpec& spec, const RunConfig& base) {
  for (const auto& r : spec.rows) {
    try {
      (void)apply_row(base, r);
    } catch (const std::exception& e) {
      throw ConfigError("sweep row '" + r.label + "': " + e.what());
    }
  }
}

AblationReport run_ablation(const RunConfig& base, const SweepSpec& spec, const ProgressFn& progress) {
  validate_sweep(spec, base);
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  AblationReport report;
  report.name = spec.name;
  std::map<std::string, Benchmark> benchmarks;
  std::map<std::string, SsdpTrainResult> ssdp_cache;

  for (const auto& r : spec.rows) {
    const auto cfg = apply_row(base, r);
    RowResult rr;
    rr.label = r.label;
    for (auto seed : spec.seeds) {
      const auto data_key = json(cfg.data).dump() + "#" + std::to_string(seed);
      if (!benchmarks.count(data_key)) benchmarks.emplace(data_key, build_benchmark(cfg.data, seed));
      const auto& bench = benchmarks.at(data_key);
      if (report.targets.empty())
        for (const auto& t : bench.targets) report.targets.push_back(t.name);

      SsdpNet ssdp{nullptr};
      const StyleCenters* centers = nullptr;
      if (cfg.train.use_ssdp) {
        const auto ssdp_key = data_key + json(cfg.ssdp).dump() + json(cfg.aug).dump();
        if (!ssdp_cache.count(ssdp_key)) {
          say("[" + spec.name + "] seed " + std::to_string(seed) + ": training SSDP");
          ssdp_cache.emplace(ssdp_key, train_ssdp(bench.source_train, cfg.ssdp, cfg.aug, seed));
        }
        ssdp = ssdp_cache.at(ssdp_key).net;
        centers = &ssdp_cache.at(ssdp_key).centers;
      }
      say("[" + spec.name + "] " + r.label + " seed " + std::to_string(seed) + ": training segmentation");
      auto train_cfg = cfg.train;
      train_cfg.eval_every = 0;
      auto seg = train_segmentation(bench.source_train, nullptr, ssdp, centers, train_cfg, cfg.aug, seed);
      auto predictor = make_predictor(seg.model, seg.bank, ssdp, centers, cfg.train);
      CellResult cell;
      cell.seed = seed;
      cell.source_val_miou = evaluate_domain(predictor, bench.source_val).miou;
      std::vector<DomainScore> scores;
      for (const auto& t : bench.targets) {
        scores.push_back(evaluate_domain(predictor, t));
        cell.target_miou[t.name] = scores.back().miou;
      }
      cell.mean_target_miou = mean_miou(scores);
      std::ostringstream msg;
      msg << std::fixed << std::setprecision(4) << "[" << spec.name << "] " << r.label << " seed " << seed
          << ": val " << cell.source_val_miou << ", targets " << cell.mean_target_miou;
      say(msg.str());
      rr.cells.push_back(cell);
    }
    double s = 0.0, sv = 0.0;
    for (const auto& c : rr.cells) {
      s += c.mean_target_miou;
      sv += c.source_val_miou;
    }
    const auto n = static_cast<double>(rr.cells.size());
    rr.mean = s / n;
    rr.source_val_mean = sv / n;
    double var = 0.0;
    for (const auto& c : rr.cells) var += (c.mean_target_miou - rr.mean) * (c.mean_target_miou - rr.mean);
    rr.stddev = rr.cells.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    report.rows.push_back(std::move(rr));
  }
  return report;
}

void AblationReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << "row,seed,source_val";
  for (const auto& t : targets) os << ',' << t;
  os << ",mean_target\n" << std::setprecision(17);
  for (const auto& r : rows)
    for (const auto& c : r.cells) {
      os << r.label << ',' << c.seed << ',' << c.source_val_miou;
      for (const auto& t : targets) os << ',' << c.target_miou.at(t);
      os << ',' << c.mean_target_miou << '\n';
    }
}

std::string AblationReport::text_table() const {
  std::size_t width = 4;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  // Target columns are at least as wide as their names.
  std::vector<int> cols;
  for (const auto& t : targets) cols.push_back(std::max(10, static_cast<int>(t.size()) + 2));
  std::ostringstream os;
  os << name << '\n' << std::left << std::setw(static_cast<int>(width) + 2) << "row" << std::right;
  for (std::size_t i = 0; i < targets.size(); ++i) os << std::setw(cols[i]) << targets[i];
  os << std::setw(10) << "mean" << std::setw(9) << "std" << std::setw(10) << "src-val" << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << r.label << std::right;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      double s = 0.0;
      for (const auto& c : r.cells) s += c.target_miou.at(targets[i]);
      os << std::setw(cols[i]) << 100.0 * s / static_cast<double>(r.cells.size());
    }
    os << std::setw(10) << 100.0 * r.mean << std::setw(9) << 100.0 * r.stddev << std::setw(10)
       << 100.0 * r.source_val_mean << '\n';
  }
  return os.str();
}

}  // namespace dpcl
