#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmnet {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<uint8_t> pixels;  // row-major, interleaved
};

void write_png(const std::string& path, const Image8& img);
/// Reads a PNG converted to `channels` (1 or 3).
Image8 read_png(const std::string& path, int channels);

}  // namespace mmnet
