#pragma once

// End-to-end operations behind the command-line tool: data generation, weak
// and full training (one trainer, pluggable loss), learning-rate / walk-length
// grids, evaluation, pseudo-mask export and prediction.
//
// Every operation takes an explicit output directory and writes JSON reports
// whose contents depend only on the configuration and the inputs (wall-clock
// fields live in the training log only).

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alcfcn/checkpoint.hpp"
#include "alcfcn/config.hpp"
#include "alcfcn/data.hpp"
#include "alcfcn/metrics.hpp"
#include "alcfcn/model.hpp"

namespace alcfcn {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_miou = 0.0;
  double val_fg_iou = 0.0;
  double val_mae = 0.0;
  double wall_seconds = 0.0;
  bool best = false;
};

struct TrainLog {
  std::string plug;
  double lr = 0.0;
  int walk_steps = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_miou = -1.0;
  bool early_stopped = false;
  long steps = 0;

  // Without timing the log is a pure function of seed, data and config.
  nlohmann::json to_json(bool include_timing = true) const;
};

struct TrainResult {
  TrainLog log;
  std::filesystem::path checkpoint;
  std::filesystem::path log_path;
};

// A trained model of either kind, loaded from a checkpoint.
class Predictor {
 public:
  static Predictor load(const std::filesystem::path& checkpoint);
  static Predictor from_model(const AlcfcnModel<float>& model);
  static Predictor from_model(const FsModel<float>& model);

  // Gradient recording is disabled inside; safe to call concurrently.
  ModelOutput<float> forward(const RgbImage& image) const;
  BinaryMask predict(const RgbImage& image) const;

  const std::string& kind() const { return kind_; }
  const std::string& digest() const { return digest_; }
  const nlohmann::json& metadata() const { return metadata_; }

 private:
  std::string kind_;
  std::string digest_;
  nlohmann::json metadata_;
  std::optional<AlcfcnModel<float>> weak_;
  std::optional<FsModel<float>> full_;
};

// Runs `predictor` over `images` on `threads` workers; output order matches input.
std::vector<BinaryMask> predict_masks(const Predictor& predictor, const std::vector<const RgbImage*>& images,
                                      int threads);

struct SplitMetrics {
  int images = 0;
  ConfusionCounts confusion;
  double fg_iou = 0.0;
  double bg_iou = 0.0;
  double miou = 0.0;
  double mae = 0.0;
  std::vector<double> game;  // GAME(0..4)
  std::vector<int> predicted_counts;

  nlohmann::json to_json() const;
};

// Segmentation against the samples' instance masks and counting/localisation
// against their points. Predicted locations default to blob centroids.
SplitMetrics compute_split_metrics(const std::vector<BinaryMask>& predictions, const std::vector<Sample>& samples,
                                   const std::vector<std::vector<Point>>* predicted_points = nullptr);

DatasetManifest generate_data(const RunConfig& cfg);

TrainResult train_weak(const RunConfig& cfg, const std::filesystem::path& out_dir);
TrainResult train_full(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Trains once per (t, lr) pair, evaluates every run on cfg.eval_split and
// selects the run with the highest val mIoU. Writes grid.json, grid.txt and
// best.ckpt under out_dir.
nlohmann::json run_grid(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Writes metrics.json, metrics.txt and overlays/ under out_dir.
nlohmann::json evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::filesystem::path& out_dir);

// Writes <split>/<id>.png (0/255) for each configured split plus provenance.json.
nlohmann::json export_pseudo(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& out_dir);

// Masks, overlays and predictions.json for arbitrary RGB PNGs.
nlohmann::json predict_images(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                              const std::vector<std::filesystem::path>& images, const std::filesystem::path& out_dir);

// Text table mirroring the metrics report.
std::string format_metrics_table(const nlohmann::json& report);
std::string format_grid_table(const nlohmann::json& report);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace alcfcn
