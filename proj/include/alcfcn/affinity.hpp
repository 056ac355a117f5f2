#pragma once

// Pairwise pixel affinities on a feature grid, their row-stochastic
// transition matrix, and random-walk refinement of activation maps.
//
//   W_ij = exp(-||f_i - f_j||_1)            for pairs within `radius`
//   T    = D^-1 W^beta,  D_ii = sum_j W_ij^beta   (self weight W_ii = 1)
//   refined = T^t * act  (per class channel)
//
// All three steps are differentiable; gradients reach the affinity features.

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "alcfcn/errors.hpp"
#include "alcfcn/ops.hpp"
#include "alcfcn/tensor.hpp"

namespace alcfcn {

struct NeighborhoodSpec {
  int radius = 5;
  bool include_self = true;
};

// Grid offsets (dy, dx) in the forward half plane with dy^2 + dx^2 <= r^2.
// Adding one to a pixel index yields a strictly larger row-major index, so
// each unordered pair is enumerated once.
inline std::vector<std::pair<int, int>> forward_offsets(int radius) {
  if (radius < 0) throw ContractError("neighborhood radius must be >= 0");
  std::vector<std::pair<int, int>> offsets;
  for (int dy = 0; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy == 0 && dx <= 0) continue;
      if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
    }
  }
  return offsets;
}

// Unordered pixel pairs (first < second), sorted by first then second.
struct PairList {
  int height = 0;
  int width = 0;
  std::vector<int> first;
  std::vector<int> second;
  std::size_t size() const { return first.size(); }
};

inline std::shared_ptr<const PairList> neighbor_pairs(int height, int width, int radius) {
  auto offsets = forward_offsets(radius);
  auto pairs = std::make_shared<PairList>();
  pairs->height = height;
  pairs->width = width;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (auto [dy, dx] : offsets) {
        const int ny = y + dy, nx = x + dx;
        if (ny >= height || nx < 0 || nx >= width) continue;
        pairs->first.push_back(y * width + x);
        pairs->second.push_back(ny * width + nx);
      }
    }
  }
  return pairs;
}

template <typename T>
struct SparseAffinity {
  std::shared_ptr<const PairList> pairs;
  Tensor<T> weights;  // [pair count], W_ij in (0, 1]
  bool include_self = true;

  int pixel_count() const { return pairs->height * pairs->width; }
};

template <typename T>
struct TransitionMatrix {
  std::shared_ptr<const SparsePattern> pattern;
  Tensor<T> values;  // [nnz]
  double beta = 1.0;

  int size() const { return pattern->rows; }

  std::vector<double> row_sums() const {
    std::vector<double> sums(pattern->rows, 0.0);
    for (int r = 0; r < pattern->rows; ++r) {
      for (int e = pattern->row_ptr[r]; e < pattern->row_ptr[r + 1]; ++e) sums[r] += values[e];
    }
    return sums;
  }

  // Row-major dense copy; for tests and small grids only.
  std::vector<double> to_dense() const {
    const int n = pattern->rows;
    std::vector<double> dense(static_cast<std::size_t>(n) * pattern->cols, 0.0);
    for (int r = 0; r < n; ++r) {
      for (int e = pattern->row_ptr[r]; e < pattern->row_ptr[r + 1]; ++e) {
        dense[static_cast<std::size_t>(r) * pattern->cols + pattern->col_idx[e]] = values[e];
      }
    }
    return dense;
  }
};

template <typename T>
SparseAffinity<T> affinity_weights(const Tensor<T>& features, const NeighborhoodSpec& spec) {
  if (features.rank() != 3) throw DimensionError("affinity_weights: features must be [C,h,w]");
  if (spec.radius < 0) throw ContractError("affinity_weights: negative radius");
  const int c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (h * w < 1) throw DimensionError("affinity_weights: empty feature grid");
  auto pairs = neighbor_pairs(h, w, spec.radius);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  // Pixel-major copy so each pair reads two contiguous vectors.
  auto f = features.data();
  auto pixel_major = std::make_shared<std::vector<T>>(plane * c);
  for (int k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < plane; ++i) (*pixel_major)[i * c + k] = f[k * plane + i];
  }
  const T* fp = pixel_major->data();

  std::vector<T> weights(pairs->size());
  for (std::size_t p = 0; p < pairs->size(); ++p) {
    const T* a = fp + static_cast<std::size_t>(pairs->first[p]) * c;
    const T* b = fp + static_cast<std::size_t>(pairs->second[p]) * c;
    T dist = T(0);
    for (int k = 0; k < c; ++k) dist += std::abs(a[k] - b[k]);
    weights[p] = std::exp(-dist);
  }

  auto result = make_result<T>(
      "affinity_weights", {static_cast<int>(pairs->size())}, std::move(weights), {features},
      [pairs, c, plane, pixel_major](TensorNode<T>& self) {
        auto* gf = parent_grad(self, 0);
        if (!gf) return;
        const T* fp = pixel_major->data();
        std::vector<T> gp(plane * c, T(0));
        for (std::size_t p = 0; p < pairs->size(); ++p) {
          // dW/df_i = -W * sign(f_i - f_j)
          const T g = self.grad[p] * self.data[p];
          if (g == T(0)) continue;
          const std::size_t i = static_cast<std::size_t>(pairs->first[p]) * c;
          const std::size_t j = static_cast<std::size_t>(pairs->second[p]) * c;
          T* gi = gp.data() + i;
          T* gj = gp.data() + j;
          for (int k = 0; k < c; ++k) {
            const T d = fp[i + k] - fp[j + k];
            const T s = static_cast<T>((d > T(0)) - (d < T(0))) * g;
            gi[k] -= s;
            gj[k] += s;
          }
        }
        for (int k = 0; k < c; ++k) {
          for (std::size_t q = 0; q < plane; ++q) (*gf)[k * plane + q] += gp[q * c + k];
        }
      });
  return {pairs, result, spec.include_self};
}

template <typename T>
TransitionMatrix<T> transition_matrix(const SparseAffinity<T>& affinity, double beta) {
  if (beta < 1.0) throw ContractError("transition_matrix: beta must be >= 1");
  const auto& pairs = *affinity.pairs;
  const int n = affinity.pixel_count();

  // Per row: entries in ascending column order. `source` maps each entry to
  // its pair index, or -1 for the unit self weight.
  std::vector<std::vector<std::pair<int, int>>> rows(n);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    rows[pairs.second[p]].emplace_back(pairs.first[p], static_cast<int>(p));
  }
  auto pattern = std::make_shared<SparsePattern>();
  pattern->rows = pattern->cols = n;
  pattern->row_ptr.assign(1, 0);
  std::vector<int> source;
  std::vector<std::vector<std::pair<int, int>>> upper(n);
  for (std::size_t p = 0; p < pairs.size(); ++p) upper[pairs.first[p]].emplace_back(pairs.second[p], static_cast<int>(p));
  for (int r = 0; r < n; ++r) {
    // rows[r] holds lower neighbours (first < r) already in ascending order.
    for (auto [col, p] : rows[r]) {
      pattern->col_idx.push_back(col);
      source.push_back(p);
    }
    if (affinity.include_self) {
      pattern->col_idx.push_back(r);
      source.push_back(-1);
    }
    for (auto [col, p] : upper[r]) {
      pattern->col_idx.push_back(col);
      source.push_back(p);
    }
    if (pattern->row_ptr.back() == static_cast<int>(pattern->col_idx.size())) {
      throw ContractError("transition_matrix: pixel without neighbours or self weight");
    }
    pattern->row_ptr.push_back(static_cast<int>(pattern->col_idx.size()));
  }

  auto w = affinity.weights.data();
  std::vector<T> values(source.size());
  std::vector<T> row_norm(n);
  for (int r = 0; r < n; ++r) {
    T d = T(0);
    for (int e = pattern->row_ptr[r]; e < pattern->row_ptr[r + 1]; ++e) {
      values[e] = source[e] < 0 ? T(1) : static_cast<T>(std::pow(w[source[e]], static_cast<T>(beta)));
      d += values[e];
    }
    row_norm[r] = d;
    for (int e = pattern->row_ptr[r]; e < pattern->row_ptr[r + 1]; ++e) values[e] /= d;
  }

  std::shared_ptr<const SparsePattern> shared_pattern = pattern;
  auto result = make_result<T>(
      "transition_matrix", {static_cast<int>(source.size())}, std::move(values), {affinity.weights},
      [shared_pattern, source = std::move(source), row_norm = std::move(row_norm), beta](TensorNode<T>& self) {
        auto* gw = parent_grad(self, 0);
        if (!gw) return;
        const auto& pat = *shared_pattern;
        const auto& wv = self.parents[0]->data;
        for (int r = 0; r < pat.rows; ++r) {
          // T_e = r_e / D  =>  dL/dr_e = (g_e - sum_k g_k T_k) / D
          T dot = T(0);
          for (int e = pat.row_ptr[r]; e < pat.row_ptr[r + 1]; ++e) dot += self.grad[e] * self.data[e];
          for (int e = pat.row_ptr[r]; e < pat.row_ptr[r + 1]; ++e) {
            const int p = source[e];
            if (p < 0) continue;
            const T g_raw = (self.grad[e] - dot) / row_norm[r];
            const T wp = wv[p];
            if (wp <= T(0)) continue;
            (*gw)[p] += g_raw * static_cast<T>(beta) * static_cast<T>(std::pow(wp, static_cast<T>(beta - 1.0)));
          }
        }
      });
  return {shared_pattern, result, beta};
}

// Multiplies every flattened class channel of act [K,h,w] by T, `steps` times.
template <typename T>
Tensor<T> random_walk_refine(const Tensor<T>& act, const TransitionMatrix<T>& transition, int steps) {
  if (steps < 0) throw ContractError("random_walk_refine: negative step count");
  if (act.rank() != 3 || act.dim(1) * act.dim(2) != transition.size()) {
    throw DimensionError("random_walk_refine: activation grid " + shape_string(act.shape()) +
                         " does not match transition size " + std::to_string(transition.size()));
  }
  Tensor<T> out = act;
  for (int s = 0; s < steps; ++s) out = sparse_matmul(transition.pattern, transition.values, out);
  return out;
}

}  // namespace alcfcn
