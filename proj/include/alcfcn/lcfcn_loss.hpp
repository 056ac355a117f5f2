#pragma once

// Point-supervised counting/segmentation loss on a 2-channel probability map
// S (channel 0 background, channel 1 foreground):
//
//   image-level     -log max_p S_fg(p)        if the image has points
//                   -log (1 - max_p S_fg(p))  otherwise
//   point-level     -sum_{p in points} log S_fg(p)
//   split-level     for every predicted blob holding k >= 2 points, the
//                   watershed boundary between its points (surface -S_fg)
//                   contributes k * sum_b -log S_bg(b)
//   false-positive  every pixel of a blob without points contributes -log S_bg
//
// The discrete structure (argmax pixel, blobs, boundaries) is computed from
// the current forward values and receives no gradient.

#include <cstddef>
#include <vector>

#include "alcfcn/blobs.hpp"
#include "alcfcn/ops.hpp"
#include "alcfcn/types.hpp"

namespace alcfcn {

struct LcfcnOptions {
  // Weight split boundaries by the number of points in the blob (otherwise 1).
  bool split_weight_by_points = true;
};

template <typename T>
struct LcfcnTerms {
  Tensor<T> image_level;
  Tensor<T> point_level;
  Tensor<T> split_level;
  Tensor<T> false_positive;
  Tensor<T> total;
};

namespace detail {

template <typename T>
void require_probability_map(const Tensor<T>& s) {
  if (s.rank() != 3 || s.dim(0) != 2) throw DimensionError("LCFCN losses expect S of shape [2,H,W]");
}

// Argmax foreground, ties to background.
template <typename T>
BinaryMask foreground_of(const Tensor<T>& s) {
  const int h = s.dim(1), w = s.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  BinaryMask fg(h, w);
  auto v = s.data();
  for (std::size_t i = 0; i < plane; ++i) fg.data[i] = v[plane + i] > v[i];
  return fg;
}

// -sum_i w_i log S[c, idx_i]; zero constant when there are no indices.
template <typename T>
Tensor<T> neg_log_sum(const Tensor<T>& s, int channel, const std::vector<std::size_t>& pixels,
                      std::vector<T> weights) {
  if (pixels.empty()) return Tensor<T>::scalar(T(0));
  const std::size_t plane = static_cast<std::size_t>(s.dim(1)) * s.dim(2);
  std::vector<std::size_t> idx(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) idx[i] = channel * plane + pixels[i];
  auto logs = log_clamped(gather(s, std::move(idx)));
  for (auto& w : weights) w = -w;
  return weighted_sum(logs, std::move(weights));
}

inline std::vector<std::size_t> point_pixels(const PointAnnotations& pts, int width) {
  std::vector<std::size_t> out;
  out.reserve(pts.size());
  for (const auto& p : pts.points) out.push_back(static_cast<std::size_t>(p.row) * width + p.col);
  return out;
}

// Points falling in each blob, in annotation order; entry 0 collects background.
inline std::vector<std::vector<Point>> points_per_blob(const BlobLabeling& blobs, const PointAnnotations& pts) {
  std::vector<std::vector<Point>> out(blobs.count + 1);
  for (const auto& p : pts.points) out[blobs.at(p.row, p.col)].push_back(p);
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> loss_image_level(const Tensor<T>& s, const PointAnnotations& pts) {
  detail::require_probability_map(s);
  auto peak = max_all(select_channel(s, 1));
  if (!pts.empty()) return neg(log_clamped(peak));
  return neg(log_clamped(add_scalar(neg(peak), 1.0)));
}

template <typename T>
Tensor<T> loss_point_level(const Tensor<T>& s, const PointAnnotations& pts) {
  detail::require_probability_map(s);
  pts.validate(s.dim(1), s.dim(2));
  auto pixels = detail::point_pixels(pts, s.dim(2));
  return detail::neg_log_sum(s, 1, pixels, std::vector<T>(pixels.size(), T(1)));
}

template <typename T>
Tensor<T> loss_split_level(const Tensor<T>& s, const PointAnnotations& pts, const LcfcnOptions& options = {}) {
  detail::require_probability_map(s);
  const int h = s.dim(1), w = s.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  pts.validate(h, w);
  auto blobs = label_blobs(detail::foreground_of(s));
  auto per_blob = detail::points_per_blob(blobs, pts);

  std::vector<double> surface(plane);
  auto v = s.data();
  for (std::size_t i = 0; i < plane; ++i) surface[i] = -static_cast<double>(v[plane + i]);

  std::vector<std::size_t> pixels;
  std::vector<T> weights;
  for (int b = 1; b <= blobs.count; ++b) {
    const auto& seeds = per_blob[b];
    if (seeds.size() < 2) continue;
    BinaryMask blob(h, w);
    for (std::size_t i = 0; i < plane; ++i) blob.data[i] = blobs.labels[i] == b;
    auto split = watershed_split(blob, seeds, surface);
    const T weight = options.split_weight_by_points ? static_cast<T>(seeds.size()) : T(1);
    for (int p : split.boundary) {
      pixels.push_back(static_cast<std::size_t>(p));
      weights.push_back(weight);
    }
  }
  return detail::neg_log_sum(s, 0, pixels, std::move(weights));
}

template <typename T>
Tensor<T> loss_false_positive(const Tensor<T>& s, const PointAnnotations& pts) {
  detail::require_probability_map(s);
  pts.validate(s.dim(1), s.dim(2));
  auto blobs = label_blobs(detail::foreground_of(s));
  auto per_blob = detail::points_per_blob(blobs, pts);
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < blobs.labels.size(); ++i) {
    const int b = blobs.labels[i];
    if (b > 0 && per_blob[b].empty()) pixels.push_back(i);
  }
  return detail::neg_log_sum(s, 0, pixels, std::vector<T>(pixels.size(), T(1)));
}

template <typename T>
LcfcnTerms<T> lcfcn_terms(const Tensor<T>& s, const PointAnnotations& pts, const LcfcnOptions& options = {}) {
  LcfcnTerms<T> terms;
  terms.image_level = loss_image_level(s, pts);
  terms.point_level = loss_point_level(s, pts);
  terms.split_level = loss_split_level(s, pts, options);
  terms.false_positive = loss_false_positive(s, pts);
  terms.total = add(add(terms.image_level, terms.point_level), add(terms.split_level, terms.false_positive));
  return terms;
}

template <typename T>
Tensor<T> lcfcn_loss(const Tensor<T>& s, const PointAnnotations& pts, const LcfcnOptions& options = {}) {
  return lcfcn_terms(s, pts, options).total;
}

}  // namespace alcfcn
