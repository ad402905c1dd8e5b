#include "dpcl/artifacts.hpp"

#include "dpcl/common.hpp"
#include "dpcl/config.hpp"

namespace dpcl {

namespace fs = std::filesystem;

namespace {

Checkpoint open_checkpoint(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " checkpoint not found: " + path.string());
  return Checkpoint::load(path);
}

}  // namespace

void save_ssdp(const fs::path& path, const SsdpNet& net, const StyleCenters& centers) {
  Checkpoint ckpt;
  net->save_to(ckpt);
  centers.save_to(ckpt);
  ckpt.header()["kind"] = "ssdp";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ckpt.save(path);
}

SsdpArtifact load_ssdp(const fs::path& path) {
  const auto ckpt = open_checkpoint(path, "SSDP");
  if (!ckpt.header().contains("ssdp")) throw StateError(path.string() + " is not an SSDP checkpoint");
  SsdpArtifact a;
  SsdpConfig cfg;
  cfg.channels = ckpt.header()["ssdp"].at("channels").get<int>();
  cfg.base_width = ckpt.header()["ssdp"].at("base_width").get<int>();
  cfg.downsamples = ckpt.header()["ssdp"].value("downsamples", 2);
  a.net = SsdpNet(cfg);
  a.net->load_from(ckpt);
  a.net->eval();
  a.centers = StyleCenters::load_from(ckpt);
  return a;
}

void save_segmentation(const fs::path& path, const SegModel& model, const PrototypeBank& bank, const TrainConfig& cfg) {
  Checkpoint ckpt;
  model->save_to(ckpt);
  bank.save_to(ckpt);
  ckpt.header()["kind"] = "segmentation";
  ckpt.header()["train"] = cfg;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ckpt.save(path);
}

SegArtifact load_segmentation(const fs::path& path) {
  const auto ckpt = open_checkpoint(path, "segmentation");
  if (!ckpt.header().contains("seg") || !ckpt.header().contains("train"))
    throw StateError(path.string() + " is not a segmentation checkpoint");
  SegArtifact a;
  a.train = ckpt.header()["train"].get<TrainConfig>();
  a.model = SegModel(a.train.model);
  a.model->load_from(ckpt);
  a.model->eval();
  a.bank = PrototypeBank::load_from(ckpt);
  return a;
}

}  // namespace dpcl
