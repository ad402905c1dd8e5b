#pragma once

#include <filesystem>

#include "dpcl/protobank.hpp"
#include "dpcl/segnet.hpp"
#include "dpcl/ssdp.hpp"
#include "dpcl/train.hpp"

namespace dpcl {

struct SsdpArtifact {
  SsdpNet net{nullptr};
  StyleCenters centers;
};

void save_ssdp(const std::filesystem::path& path, const SsdpNet& net, const StyleCenters& centers);
SsdpArtifact load_ssdp(const std::filesystem::path& path);

struct SegArtifact {
  SegModel model{nullptr};
  PrototypeBank bank;
  TrainConfig train;  // echo of the config the model was trained with
};

void save_segmentation(const std::filesystem::path& path, const SegModel& model, const PrototypeBank& bank,
                       const TrainConfig& cfg);
SegArtifact load_segmentation(const std::filesystem::path& path);

}  // namespace dpcl
