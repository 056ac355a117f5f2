#pragma once

// Losses for mask supervision (weighted cross-entropy + weighted IoU with
// boundary-emphasis weights) and the point-level PL-FCN baseline.

#include <cstddef>
#include <vector>

#include "alcfcn/ops.hpp"
#include "alcfcn/types.hpp"

namespace alcfcn {

struct BoundaryWeightOptions {
  int window = 15;      // odd side length of the local mean window
  double factor = 5.0;  // w = 1 + factor * |local mean - mask|
};

// Local mean over the in-bounds part of a window x window neighbourhood.
inline std::vector<double> boundary_weights(const BinaryMask& mask, const BoundaryWeightOptions& options = {}) {
  if (options.window < 1 || options.window % 2 == 0) throw ContractError("boundary weight window must be odd");
  const int h = mask.height, w = mask.width, r = options.window / 2;
  std::vector<double> integral(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
  auto at = [&](int y, int x) -> double& { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) at(y + 1, x + 1) = mask.at(y, x) + at(y, x + 1) + at(y + 1, x) - at(y, x);
  }
  std::vector<double> weights(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
      const double total = at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
      const double mean = total / ((y1 - y0) * (x1 - x0));
      weights[static_cast<std::size_t>(y) * w + x] = 1.0 + options.factor * std::abs(mean - mask.at(y, x));
    }
  }
  return weights;
}

namespace detail {
template <typename T>
void require_mask_match(const Tensor<T>& s, const BinaryMask& mask, const std::vector<double>& weights) {
  if (s.rank() != 3 || s.dim(0) != 2 || s.dim(1) != mask.height || s.dim(2) != mask.width) {
    throw DimensionError("mask loss: S " + shape_string(s.shape()) + " does not match mask " +
                         std::to_string(mask.height) + "x" + std::to_string(mask.width));
  }
  if (weights.size() != mask.data.size()) throw DimensionError("mask loss: weight map size mismatch");
}
}  // namespace detail

// sum_p w_p * -log S_{mask(p)}(p) / sum_p w_p
template <typename T>
Tensor<T> weighted_ce_loss(const Tensor<T>& s, const BinaryMask& mask, const std::vector<double>& weights) {
  detail::require_mask_match(s, mask, weights);
  const std::size_t plane = mask.data.size();
  std::vector<std::size_t> idx(plane);
  double total_weight = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    idx[p] = (mask.data[p] ? plane : 0) + p;
    total_weight += weights[p];
  }
  std::vector<T> coeffs(plane);
  for (std::size_t p = 0; p < plane; ++p) coeffs[p] = static_cast<T>(-weights[p] / total_weight);
  return weighted_sum(log_clamped(gather(s, std::move(idx))), std::move(coeffs));
}

template <typename T>
Tensor<T> weighted_ce_loss(const Tensor<T>& s, const BinaryMask& mask, const BoundaryWeightOptions& options = {}) {
  return weighted_ce_loss(s, mask, boundary_weights(mask, options));
}

// 1 - (I + 1) / (U + 1) with I = sum w S_fg m and U = sum w (S_fg + m) - I.
template <typename T>
Tensor<T> weighted_iou_loss(const Tensor<T>& s, const BinaryMask& mask, const std::vector<double>& weights) {
  detail::require_mask_match(s, mask, weights);
  const std::size_t plane = mask.data.size();
  auto fg = select_channel(s, 1);
  std::vector<T> w_mask(plane), w_all(plane);
  double mask_mass = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    w_all[p] = static_cast<T>(weights[p]);
    w_mask[p] = mask.data[p] ? static_cast<T>(weights[p]) : T(0);
    mask_mass += mask.data[p] ? weights[p] : 0.0;
  }
  auto inter = weighted_sum(fg, std::move(w_mask));
  auto pred_mass = weighted_sum(fg, std::move(w_all));
  auto uni = sub(add_scalar(pred_mass, mask_mass), inter);
  auto ratio = div(add_scalar(inter, 1.0), add_scalar(uni, 1.0));
  return add_scalar(neg(ratio), 1.0);
}

template <typename T>
Tensor<T> weighted_iou_loss(const Tensor<T>& s, const BinaryMask& mask, const BoundaryWeightOptions& options = {}) {
  return weighted_iou_loss(s, mask, boundary_weights(mask, options));
}

template <typename T>
Tensor<T> fs_loss(const Tensor<T>& s, const BinaryMask& mask, const BoundaryWeightOptions& options = {}) {
  auto weights = boundary_weights(mask, options);
  return add(weighted_ce_loss(s, mask, weights), weighted_iou_loss(s, mask, weights));
}

// -sum_{p in points} log S_fg(p), plus -sum_all log S_bg for images without points.
template <typename T>
Tensor<T> pl_fcn_loss(const Tensor<T>& s, const PointAnnotations& pts) {
  if (s.rank() != 3 || s.dim(0) != 2) throw DimensionError("pl_fcn_loss expects S of shape [2,H,W]");
  const int h = s.dim(1), w = s.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  pts.validate(h, w);
  if (pts.empty()) {
    std::vector<std::size_t> idx(plane);
    for (std::size_t p = 0; p < plane; ++p) idx[p] = p;
    return neg(sum(log_clamped(gather(s, std::move(idx)))));
  }
  std::vector<std::size_t> idx;
  for (const auto& p : pts.points) idx.push_back(plane + static_cast<std::size_t>(p.row) * w + p.col);
  return neg(sum(log_clamped(gather(s, std::move(idx)))));
}

// Per-pixel argmax of a 2-channel score map; ties go to background.
template <typename T>
BinaryMask argmax_mask(const Tensor<T>& scores) {
  if (scores.rank() != 3 || scores.dim(0) != 2) throw DimensionError("argmax_mask expects [2,H,W]");
  const int h = scores.dim(1), w = scores.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  BinaryMask out(h, w);
  for (std::size_t p = 0; p < plane; ++p) out.data[p] = scores[plane + p] > scores[p];
  return out;
}

}  // namespace alcfcn
