#include "alcfcn/blobs.hpp"

#include <cmath>
#include <cstdint>
#include <queue>
#include <tuple>

namespace alcfcn {
namespace {

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

void unite(std::vector<int>& parent, int a, int b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  if (a < b) {
    parent[b] = a;
  } else {
    parent[a] = b;
  }
}

constexpr int kDy4[4] = {-1, 0, 0, 1};
constexpr int kDx4[4] = {0, -1, 1, 0};

}  // namespace

std::vector<std::vector<int>> BlobLabeling::members() const {
  std::vector<std::vector<int>> out(count + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0) out[labels[i]].push_back(static_cast<int>(i));
  }
  return out;
}

BlobLabeling label_blobs(const BinaryMask& foreground) {
  const int h = foreground.height, w = foreground.width;
  BlobLabeling out{h, w, std::vector<int>(static_cast<std::size_t>(h) * w, 0), 0};

  // First pass: provisional labels, merging through the already-visited
  // half of the 8-neighbourhood (W, NW, N, NE).
  std::vector<int> parent{0};
  std::vector<int>& lab = out.labels;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!foreground.at(r, c)) continue;
      int current = 0;
      const int nbr[4][2] = {{r, c - 1}, {r - 1, c - 1}, {r - 1, c}, {r - 1, c + 1}};
      for (auto [nr, nc] : nbr) {
        if (nr < 0 || nc < 0 || nc >= w) continue;
        const int l = lab[static_cast<std::size_t>(nr) * w + nc];
        if (!l) continue;
        if (!current) {
          current = l;
        } else {
          unite(parent, current, l);
        }
      }
      if (!current) {
        current = static_cast<int>(parent.size());
        parent.push_back(current);
      }
      lab[static_cast<std::size_t>(r) * w + c] = current;
    }
  }

  // Second pass: final ids in row-major first-encounter order.
  std::vector<int> final_id(parent.size(), 0);
  for (auto& l : lab) {
    if (!l) continue;
    const int root = find_root(parent, l);
    if (!final_id[root]) final_id[root] = ++out.count;
    l = final_id[root];
  }
  return out;
}

WatershedResult watershed_split(const BinaryMask& blob, std::span<const Point> seeds,
                                std::span<const double> surface) {
  const int h = blob.height, w = blob.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (surface.size() != n) throw DimensionError("watershed_split: surface size does not match blob mask");
  if (seeds.empty()) throw ContractError("watershed_split: at least one seed is required");
  for (const auto& s : seeds) {
    if (s.row < 0 || s.row >= h || s.col < 0 || s.col >= w || !blob.at(s.row, s.col)) {
      throw ContractError("watershed_split: seed (" + std::to_string(s.row) + "," + std::to_string(s.col) +
                          ") lies outside the blob");
    }
  }

  WatershedResult result{h, w, std::vector<int>(n, 0), {}};
  if (seeds.size() == 1) {
    for (std::size_t i = 0; i < n; ++i) result.region[i] = blob.data[i] ? 1 : 0;
    return result;
  }

  constexpr int kBoundary = -1;
  std::vector<std::uint8_t> queued(n, 0);
  // (height, insertion order, pixel); min-heap.
  using Entry = std::tuple<double, std::uint64_t, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  std::uint64_t counter = 0;

  auto push_neighbours = [&](int p) {
    const int r = p / w, c = p % w;
    for (int k = 0; k < 4; ++k) {
      const int nr = r + kDy4[k], nc = c + kDx4[k];
      if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
      const int q = nr * w + nc;
      if (!blob.data[q] || queued[q] || result.region[q] != 0) continue;
      queued[q] = 1;
      open.emplace(surface[q], counter++, q);
    }
  };

  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const int p = seeds[s].row * w + seeds[s].col;
    if (result.region[p] != 0) throw ContractError("watershed_split: duplicate seed");
    result.region[p] = static_cast<int>(s) + 1;
    queued[p] = 1;
  }
  for (const auto& s : seeds) push_neighbours(s.row * w + s.col);

  while (!open.empty()) {
    const int p = std::get<2>(open.top());
    open.pop();
    const int r = p / w, c = p % w;
    int label = 0;
    bool conflict = false;
    for (int k = 0; k < 4; ++k) {
      const int nr = r + kDy4[k], nc = c + kDx4[k];
      if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
      const int l = result.region[nr * w + nc];
      if (l <= 0) continue;
      if (label == 0) {
        label = l;
      } else if (l != label) {
        conflict = true;
      }
    }
    if (conflict) {
      result.region[p] = kBoundary;
      continue;
    }
    result.region[p] = label;
    push_neighbours(p);
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!blob.data[i]) continue;
    if (result.region[i] <= 0) {
      result.region[i] = 0;
      result.boundary.push_back(static_cast<int>(i));
    }
  }
  return result;
}

std::vector<Point> blob_centroids(const BlobLabeling& blobs) {
  std::vector<double> sr(blobs.count + 1, 0.0), sc(blobs.count + 1, 0.0), cnt(blobs.count + 1, 0.0);
  for (int r = 0; r < blobs.height; ++r) {
    for (int c = 0; c < blobs.width; ++c) {
      const int l = blobs.at(r, c);
      if (!l) continue;
      sr[l] += r;
      sc[l] += c;
      cnt[l] += 1.0;
    }
  }
  std::vector<Point> out;
  out.reserve(blobs.count);
  for (int l = 1; l <= blobs.count; ++l) {
    out.push_back({static_cast<int>(std::lround(sr[l] / cnt[l])), static_cast<int>(std::lround(sc[l] / cnt[l])), l});
  }
  return out;
}

}  // namespace alcfcn
