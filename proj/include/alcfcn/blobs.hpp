#pragma once

// Connected components of foreground masks and seeded watershed splitting of
// a single blob. Blobs use 8-connectivity; watershed flooding and boundary
// adjacency use 4-connectivity.

#include <span>
#include <vector>

#include "alcfcn/types.hpp"

namespace alcfcn {

struct BlobLabeling {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // 0 background, 1..count in row-major first-encounter order
  int count = 0;

  int at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
  // Pixel indices of every blob; entry 0 is unused.
  std::vector<std::vector<int>> members() const;
};

BlobLabeling label_blobs(const BinaryMask& foreground);

struct WatershedResult {
  int height = 0;
  int width = 0;
  std::vector<int> region;    // 1..k seed region, 0 outside the blob or on the boundary
  std::vector<int> boundary;  // ascending pixel indices claimed by no seed
};

// Priority-flood region growing from `seeds` over `surface` (lower floods
// first; equal heights pop in insertion order, seeds in the given order).
// A pixel that touches two or more regions when it is popped becomes
// boundary and does not propagate. Blob pixels never reached from a seed are
// also boundary, so every region is 4-connected and holds exactly one seed.
WatershedResult watershed_split(const BinaryMask& blob, std::span<const Point> seeds,
                                std::span<const double> surface);

// Blob centroids, rounded to the nearest pixel, indexed by blob id - 1.
std::vector<Point> blob_centroids(const BlobLabeling& blobs);

}  // namespace alcfcn
