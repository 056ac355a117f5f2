#pragma once

// Segmentation and counting metrics: per-class IoU, mIoU, count MAE,
// GAME(L) and the always-median baseline.

#include <cstdint>
#include <map>
#include <vector>

#include "alcfcn/blobs.hpp"
#include "alcfcn/types.hpp"

namespace alcfcn {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  void accumulate(const BinaryMask& prediction, const BinaryMask& truth);
  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

// TP / (TP + FP + FN); an empty union counts as perfect agreement.
double iou(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);
double foreground_iou(const ConfusionCounts& c);
double background_iou(const ConfusionCounts& c);
double miou(double fg_iou, double bg_iou);
inline double miou(const ConfusionCounts& c) { return miou(foreground_iou(c), background_iou(c)); }

int count_blobs(const BinaryMask& foreground);

double mae(const std::vector<double>& predicted, const std::vector<double>& truth);

// GAME(L) over N images. Cell (i, j) of the 2^L x 2^L grid covers rows
// [i*ch, (i+1)*ch) with ch = max(1, H >> L); the last row/column of cells
// absorbs the remainder.
double game(const std::vector<std::vector<Point>>& predicted, const std::vector<std::vector<Point>>& truth,
            int height, int width, int level);

// Index of the GAME cell containing (row, col).
int game_cell(int row, int col, int height, int width, int level);

// Lower median of the training counts (an attainable count).
class AlwaysMedian {
 public:
  explicit AlwaysMedian(std::vector<int> train_counts);
  int predict() const { return median_; }

 private:
  int median_ = 0;
};

}  // namespace alcfcn
