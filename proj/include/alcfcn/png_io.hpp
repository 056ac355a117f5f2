#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace alcfcn {

// Decoded PNG: palette and low-bit-depth images are expanded, alpha is
// stripped; 16-bit samples keep their full range.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 (gray) or 3 (RGB)
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

PngImage read_png(const std::filesystem::path& path);

// samples are 8-bit values for bit_depth 8, 16-bit values for bit_depth 16.
void write_png(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
               const std::vector<std::uint16_t>& samples);

}  // namespace alcfcn
