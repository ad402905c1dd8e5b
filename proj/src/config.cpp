#include "dpcl/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "dpcl/common.hpp"

namespace dpcl {

using nlohmann::json;

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void opt(const char* key, T& value) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      value = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename E>
E enum_from(const json& j, std::initializer_list<std::pair<const char*, E>> table, const char* what) {
  const auto s = j.get<std::string>();
  for (const auto& [name, e] : table)
    if (s == name) return e;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

const char* pixel_metric_name(PixelMetric m) { return m == PixelMetric::kJS ? "JS" : "CE"; }
const char* ic_kind_name(InstanceLossKind k) { return k == InstanceLossKind::kTriplet ? "triplet" : "infonce"; }
const char* ssdp_aug_name(SsdpAugMode m) {
  switch (m) {
    case SsdpAugMode::kNone: return "none";
    case SsdpAugMode::kImage: return "IA";
    case SsdpAugMode::kImageGeometric: return "IA+GA";
  }
  return "?";
}


}  // namespace

void to_json(json& j, const ClassTexture& v) {
  j = {{"stripe_period", v.stripe_period}, {"stripe_angle", v.stripe_angle}, {"stripe_amp", v.stripe_amp},
       {"checker_period", v.checker_period}, {"checker_amp", v.checker_amp}, {"noise_amp", v.noise_amp}};
}
void from_json(const json& j, ClassTexture& v) {
  ObjectReader r(j, "texture");
  r.opt("stripe_period", v.stripe_period);
  r.opt("stripe_angle", v.stripe_angle);
  r.opt("stripe_amp", v.stripe_amp);
  r.opt("checker_period", v.checker_period);
  r.opt("checker_amp", v.checker_amp);
  r.opt("noise_amp", v.noise_amp);
  r.finish();
}

void to_json(json& j, const SceneSpec& v) {
  j = {{"height", v.height},
       {"width", v.width},
       {"num_classes", v.num_classes},
       {"min_shapes", v.min_shapes},
       {"max_shapes", v.max_shapes},
       {"min_shape_size", v.min_shape_size},
       {"max_shape_size", v.max_shape_size},
       {"palette", v.palette},
       {"textures", v.textures}};
}
void from_json(const json& j, SceneSpec& v) {
  // Palette and textures default to the desk set for the requested size.
  int k = j.contains("num_classes") ? j.at("num_classes").get<int>() : v.num_classes;
  int h = j.contains("height") ? j.at("height").get<int>() : v.height;
  int w = j.contains("width") ? j.at("width").get<int>() : v.width;
  if (k != v.num_classes || h != v.height || w != v.width) {
    auto desk = SceneSpec::desk(std::clamp(k, 3, 16), h, w);
    desk.num_classes = k;
    desk.min_shapes = v.min_shapes;
    desk.max_shapes = v.max_shapes;
    desk.min_shape_size = v.min_shape_size;
    desk.max_shape_size = v.max_shape_size;
    v = desk;
  }
  ObjectReader r(j, "scene");
  r.opt("height", v.height);
  r.opt("width", v.width);
  r.opt("num_classes", v.num_classes);
  r.opt("min_shapes", v.min_shapes);
  r.opt("max_shapes", v.max_shapes);
  r.opt("min_shape_size", v.min_shape_size);
  r.opt("max_shape_size", v.max_shape_size);
  r.opt("palette", v.palette);
  r.opt("textures", v.textures);
  r.finish();
}

void to_json(json& j, const DomainStyle& v) {
  j = {{"brightness_shift", v.brightness_shift}, {"contrast_gain", v.contrast_gain},
       {"hue_rotation", v.hue_rotation},         {"saturation_gain", v.saturation_gain},
       {"noise_std", v.noise_std},               {"tint", v.tint}};
}
void from_json(const json& j, DomainStyle& v) {
  ObjectReader r(j, "style");
  r.opt("brightness_shift", v.brightness_shift);
  r.opt("contrast_gain", v.contrast_gain);
  r.opt("hue_rotation", v.hue_rotation);
  r.opt("saturation_gain", v.saturation_gain);
  r.opt("noise_std", v.noise_std);
  r.opt("tint", v.tint);
  r.finish();
}

void to_json(json& j, const TargetDomainSpec& v) { j = {{"name", v.name}, {"style", v.style}}; }
void from_json(const json& j, TargetDomainSpec& v) {
  ObjectReader r(j, "target");
  r.opt("name", v.name);
  r.opt("style", v.style);
  r.finish();
}

void to_json(json& j, const BenchmarkConfig& v) {
  j = {{"scene", v.scene}, {"n_train", v.n_train}, {"n_val", v.n_val}, {"n_target", v.n_target}, {"targets", v.targets}};
}
void from_json(const json& j, BenchmarkConfig& v) {
  ObjectReader r(j, "data");
  r.opt("scene", v.scene);
  r.opt("n_train", v.n_train);
  r.opt("n_val", v.n_val);
  r.opt("n_target", v.n_target);
  r.opt("targets", v.targets);
  r.finish();
}

void to_json(json& j, const AugConfig& v) {
  j = {{"brightness", v.brightness},
       {"contrast", v.contrast},
       {"hue", v.hue},
       {"saturation", v.saturation},
       {"gaussian_noise", v.gaussian_noise},
       {"brightness_max", v.brightness_max},
       {"contrast_min", v.contrast_min},
       {"contrast_max", v.contrast_max},
       {"hue_max", v.hue_max},
       {"saturation_min", v.saturation_min},
       {"saturation_max", v.saturation_max},
       {"noise_std", v.noise_std},
       {"crop", v.crop},
       {"scale", v.scale},
       {"flip", v.flip},
       {"crop_height", v.crop_height},
       {"crop_width", v.crop_width},
       {"scale_min", v.scale_min},
       {"scale_max", v.scale_max},
       {"flip_prob", v.flip_prob}};
}
void from_json(const json& j, AugConfig& v) {
  ObjectReader r(j, "aug");
  r.opt("brightness", v.brightness);
  r.opt("contrast", v.contrast);
  r.opt("hue", v.hue);
  r.opt("saturation", v.saturation);
  r.opt("gaussian_noise", v.gaussian_noise);
  r.opt("brightness_max", v.brightness_max);
  r.opt("contrast_min", v.contrast_min);
  r.opt("contrast_max", v.contrast_max);
  r.opt("hue_max", v.hue_max);
  r.opt("saturation_min", v.saturation_min);
  r.opt("saturation_max", v.saturation_max);
  r.opt("noise_std", v.noise_std);
  r.opt("crop", v.crop);
  r.opt("scale", v.scale);
  r.opt("flip", v.flip);
  r.opt("crop_height", v.crop_height);
  r.opt("crop_width", v.crop_width);
  r.opt("scale_min", v.scale_min);
  r.opt("scale_max", v.scale_max);
  r.opt("flip_prob", v.flip_prob);
  r.finish();
}

void to_json(json& j, const SsdpConfig& v) {
  j = {{"channels", v.channels}, {"base_width", v.base_width}, {"downsamples", v.downsamples}};
}
void from_json(const json& j, SsdpConfig& v) {
  ObjectReader r(j, "ssdp.net");
  r.opt("channels", v.channels);
  r.opt("base_width", v.base_width);
  r.opt("downsamples", v.downsamples);
  r.finish();
}

void to_json(json& j, const SsdpTrainConfig& v) {
  j = {{"net", v.net}, {"iters", v.iters}, {"batch_size", v.batch_size},
       {"lr", v.lr},   {"q", v.q},         {"aug_mode", ssdp_aug_name(v.aug_mode)}};
}
void from_json(const json& j, SsdpTrainConfig& v) {
  ObjectReader r(j, "ssdp");
  r.opt("net", v.net);
  r.opt("iters", v.iters);
  r.opt("batch_size", v.batch_size);
  r.opt("lr", v.lr);
  r.opt("q", v.q);
  std::string mode = ssdp_aug_name(v.aug_mode);
  r.opt("aug_mode", mode);
  v.aug_mode = enum_from<SsdpAugMode>(
      json(mode), {{"none", SsdpAugMode::kNone}, {"IA", SsdpAugMode::kImage}, {"IA+GA", SsdpAugMode::kImageGeometric}},
      "ssdp.aug_mode");
  r.finish();
}

void to_json(json& j, const SegModelConfig& v) {
  j = {{"num_classes", v.num_classes}, {"feature_dim", v.feature_dim}, {"base_width", v.base_width}};
}
void from_json(const json& j, SegModelConfig& v) {
  ObjectReader r(j, "train.model");
  r.opt("num_classes", v.num_classes);
  r.opt("feature_dim", v.feature_dim);
  r.opt("base_width", v.base_width);
  r.finish();
}

void to_json(json& j, const TrainConfig& v) {
  j = {{"lr0", v.lr0},
       {"momentum", v.momentum},
       {"weight_decay", v.weight_decay},
       {"batch_size", v.batch_size},
       {"max_iters", v.max_iters},
       {"poly_power", v.poly_power},
       {"warmup_epochs", v.warmup_epochs},
       {"lambda", v.lambda},
       {"xi", v.xi},
       {"tau", v.tau},
       {"gamma", v.gamma},
       {"n_per_class", v.n_per_class},
       {"grad_clip", v.grad_clip},
       {"fusion_weight", v.fusion_weight},
       {"use_ssdp", v.use_ssdp},
       {"use_pp", v.use_pp},
       {"use_pc", v.use_pc},
       {"use_ic", v.use_ic},
       {"use_div", v.use_div},
       {"pp_metric", pixel_metric_name(v.pp_metric)},
       {"pp_diagonal", v.pp_diagonal},
       {"ic_kind", ic_kind_name(v.ic_kind)},
       {"log_every", v.log_every},
       {"eval_every", v.eval_every},
       {"checkpoint_every", v.checkpoint_every},
       {"model", v.model}};
}
void from_json(const json& j, TrainConfig& v) {
  ObjectReader r(j, "train");
  r.opt("lr0", v.lr0);
  r.opt("momentum", v.momentum);
  r.opt("weight_decay", v.weight_decay);
  r.opt("batch_size", v.batch_size);
  r.opt("max_iters", v.max_iters);
  r.opt("poly_power", v.poly_power);
  r.opt("warmup_epochs", v.warmup_epochs);
  r.opt("lambda", v.lambda);
  r.opt("xi", v.xi);
  r.opt("tau", v.tau);
  r.opt("gamma", v.gamma);
  r.opt("n_per_class", v.n_per_class);
  r.opt("grad_clip", v.grad_clip);
  r.opt("fusion_weight", v.fusion_weight);
  r.opt("use_ssdp", v.use_ssdp);
  r.opt("use_pp", v.use_pp);
  r.opt("use_pc", v.use_pc);
  r.opt("use_ic", v.use_ic);
  r.opt("use_div", v.use_div);
  std::string metric = pixel_metric_name(v.pp_metric);
  r.opt("pp_metric", metric);
  v.pp_metric = enum_from<PixelMetric>(json(metric), {{"JS", PixelMetric::kJS}, {"CE", PixelMetric::kCE}}, "pp_metric");
  r.opt("pp_diagonal", v.pp_diagonal);
  std::string kind = ic_kind_name(v.ic_kind);
  r.opt("ic_kind", kind);
  v.ic_kind = enum_from<InstanceLossKind>(
      json(kind), {{"triplet", InstanceLossKind::kTriplet}, {"infonce", InstanceLossKind::kInfoNce}}, "ic_kind");
  r.opt("log_every", v.log_every);
  r.opt("eval_every", v.eval_every);
  r.opt("checkpoint_every", v.checkpoint_every);
  r.opt("model", v.model);
  r.finish();
}

void to_json(json& j, const TtaConfig& v) {
  j = {{"mode", to_string(v.mode)}, {"n_iters", v.n_iters},         {"step_size", v.step_size},
       {"n_per_class", v.n_per_class}, {"tau", v.tau}, {"seed", v.seed}, {"fusion_weight", v.fusion_weight}};
}
void from_json(const json& j, TtaConfig& v) {
  ObjectReader r(j, "tta");
  std::string mode = to_string(v.mode);
  r.opt("mode", mode);
  v.mode = parse_tta_mode(mode);
  r.opt("n_iters", v.n_iters);
  r.opt("step_size", v.step_size);
  r.opt("n_per_class", v.n_per_class);
  r.opt("tau", v.tau);
  r.opt("seed", v.seed);
  r.opt("fusion_weight", v.fusion_weight);
  r.finish();
}

std::filesystem::path RunConfig::run_dir() const {
  std::filesystem::path root = output_dir;
  if (const char* env = std::getenv("DPCL_OUTPUT_ROOT"); env != nullptr && *env != '\0') root = env;
  return root / experiment;
}

void to_json(json& j, const RunConfig& v) {
  j = {{"experiment", v.experiment}, {"output_dir", v.output_dir.string()}, {"seed", v.seed}, {"data", v.data},
       {"aug", v.aug}, {"ssdp", v.ssdp}, {"train", v.train}, {"tta", v.tta}};
}
void from_json(const json& j, RunConfig& v) {
  ObjectReader r(j, "config");
  r.opt("experiment", v.experiment);
  std::string out = v.output_dir.string();
  r.opt("output_dir", out);
  v.output_dir = out;
  r.opt("seed", v.seed);
  r.opt("data", v.data);
  r.opt("aug", v.aug);
  r.opt("ssdp", v.ssdp);
  r.opt("train", v.train);
  r.opt("tta", v.tta);
  r.finish();
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const auto path = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json* node = &doc;
  std::stringstream parts(path);
  std::string key;
  while (std::getline(parts, key, '.')) {
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[key];
  }
  auto parsed = json::parse(text, nullptr, /*allow_exceptions=*/false);
  *node = parsed.is_discarded() ? json(text) : parsed;
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json doc = RunConfig{};
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot read config file " + file.string());
    json user;
    try {
      user = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + file.string() + ": " + e.what());
    }
    // Validate keys against the schema before merging.
    RunConfig probe = user.get<RunConfig>();
    (void)probe;
    doc.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  auto cfg = doc.get<RunConfig>();
  cfg.data.validate();
  cfg.ssdp.validate();
  cfg.train.validate();
  cfg.tta.validate();
  if (cfg.train.model.num_classes != cfg.data.scene.num_classes)
    throw ConfigError("train.model.num_classes must equal data.scene.num_classes");
  return cfg;
}

void save_run_config(const std::filesystem::path& file, const RunConfig& cfg) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw ConfigError("cannot write " + file.string());
  os << json(cfg).dump(2) << '\n';
}

}  // namespace dpcl
