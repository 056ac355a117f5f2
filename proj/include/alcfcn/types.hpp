#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "alcfcn/errors.hpp"

namespace alcfcn {

struct Point {
  int row = 0;
  int col = 0;
  int instance_id = 0;  // 0 when the point is not tied to a mask instance

  friend bool operator==(const Point& a, const Point& b) { return a.row == b.row && a.col == b.col; }
};

// One click per object at image resolution.
struct PointAnnotations {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  // Throws ContractError on out-of-bounds or duplicate coordinates.
  void validate(int height, int width) const {
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(height) * width, 0);
    for (const auto& p : points) {
      if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) {
        throw ContractError("point (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") out of bounds");
      }
      auto& s = seen[static_cast<std::size_t>(p.row) * width + p.col];
      if (s) throw ContractError("duplicate point (" + std::to_string(p.row) + "," + std::to_string(p.col) + ")");
      s = 1;
    }
  }
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // 0 or 1, row-major

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
  }
};

// Instance ids per pixel; 0 is background.
struct InstanceMask {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;

  InstanceMask() = default;
  InstanceMask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::int32_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  std::int32_t max_id() const {
    std::int32_t m = 0;
    for (auto v : data) m = v > m ? v : m;
    return m;
  }
  BinaryMask foreground() const {
    BinaryMask fg(height, width);
    for (std::size_t i = 0; i < data.size(); ++i) fg.data[i] = data[i] > 0;
    return fg;
  }
};

}  // namespace alcfcn
