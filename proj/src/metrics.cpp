#include "alcfcn/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace alcfcn {

void ConfusionCounts::accumulate(const BinaryMask& prediction, const BinaryMask& truth) {
  if (prediction.height != truth.height || prediction.width != truth.width) {
    throw DimensionError("confusion counts: prediction and truth differ in size");
  }
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    const bool p = prediction.data[i] != 0, t = truth.data[i] != 0;
    if (p && t) {
      ++tp;
    } else if (p) {
      ++fp;
    } else if (t) {
      ++fn;
    } else {
      ++tn;
    }
  }
}

double iou(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t uni = tp + fp + fn;
  return uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
}

double foreground_iou(const ConfusionCounts& c) { return iou(c.tp, c.fp, c.fn); }

// Background as the positive class: its TP are TN, and FP/FN swap.
double background_iou(const ConfusionCounts& c) { return iou(c.tn, c.fn, c.fp); }

double miou(double fg_iou, double bg_iou) { return 0.5 * (fg_iou + bg_iou); }

int count_blobs(const BinaryMask& foreground) { return label_blobs(foreground).count; }

double mae(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size()) throw DimensionError("mae: count vectors differ in length");
  if (predicted.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) total += std::abs(predicted[i] - truth[i]);
  return total / static_cast<double>(predicted.size());
}

int game_cell(int row, int col, int height, int width, int level) {
  const int cells = 1 << level;
  const int ch = std::max(1, height >> level), cw = std::max(1, width >> level);
  const int i = std::min(row / ch, cells - 1), j = std::min(col / cw, cells - 1);
  return i * cells + j;
}

double game(const std::vector<std::vector<Point>>& predicted, const std::vector<std::vector<Point>>& truth,
            int height, int width, int level) {
  if (level < 0) throw ContractError("game: level must be >= 0");
  if (predicted.size() != truth.size()) throw DimensionError("game: image counts differ");
  if (truth.empty()) return 0.0;
  const std::size_t cells = static_cast<std::size_t>(1) << (2 * level);
  double total = 0.0;
  std::vector<long> diff(cells);
  for (std::size_t n = 0; n < truth.size(); ++n) {
    std::fill(diff.begin(), diff.end(), 0L);
    for (const auto& p : predicted[n]) ++diff[game_cell(p.row, p.col, height, width, level)];
    for (const auto& p : truth[n]) --diff[game_cell(p.row, p.col, height, width, level)];
    long image_error = 0;
    for (long d : diff) image_error += std::labs(d);
    total += static_cast<double>(image_error);
  }
  return total / static_cast<double>(truth.size());
}

AlwaysMedian::AlwaysMedian(std::vector<int> train_counts) {
  if (train_counts.empty()) return;
  std::sort(train_counts.begin(), train_counts.end());
  median_ = train_counts[(train_counts.size() - 1) / 2];
}

}  // namespace alcfcn
