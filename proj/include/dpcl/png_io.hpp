#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dpcl {

struct Raster8 {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> data;  // row-major, interleaved
};

void write_png(const std::filesystem::path& path, const Raster8& raster);
Raster8 read_png(const std::filesystem::path& path);

}  // namespace dpcl
