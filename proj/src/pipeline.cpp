#include "alcfcn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "alcfcn/blobs.hpp"
#include "alcfcn/lcfcn_loss.hpp"
#include "alcfcn/supervised_loss.hpp"

namespace alcfcn {
namespace fs = std::filesystem;

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string lr_tag(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0e", lr);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<const RgbImage*> image_refs(const std::vector<Sample>& samples) {
  std::vector<const RgbImage*> out;
  for (const auto& s : samples) out.push_back(&s.image);
  return out;
}

DatasetManifest load_manifest(const RunConfig& cfg) { return DatasetManifest::load(cfg.data_root); }

std::vector<Sample> require_masks(std::vector<Sample> samples, const std::string& split) {
  for (const auto& s : samples) {
    if (!s.instance_mask) throw ValidationError("sample " + split + "/" + s.id + " has no mask; masks are required");
  }
  return samples;
}

nlohmann::json model_metadata(const std::string& kind, const nlohmann::json& model, const RunConfig& cfg,
                              LossPlug plug, int epoch, double val_miou) {
  return {{"kind", kind},
          {"model", model},
          {"loss", loss_plug_name(plug)},
          {"lr", cfg.train.lr},
          {"seed", cfg.seed},
          {"epoch", epoch},
          {"val_miou", val_miou},
          {"dataset_root", cfg.data_root.string()}};
}

// Shared trainer: batch size 1, Adam, per-epoch validation by val mIoU,
// early stopping, best-checkpoint retention.
template <typename Model>
TrainLog run_training(Model& model, const RunConfig& cfg, LossPlug plug, const std::vector<Sample>& train,
                      const std::vector<Sample>& val,
                      const std::function<Tensor<float>(const ModelOutput<float>&, std::size_t)>& loss_fn,
                      const std::function<void(const Model&, int, double)>& save_best) {
  if (train.empty()) throw ContractError("training split is empty");
  if (val.empty()) throw ContractError("validation split is empty");
  TrainLog log;
  log.plug = loss_plug_name(plug);
  log.lr = cfg.train.lr;

  std::vector<Tensor<float>> inputs;
  for (const auto& s : train) inputs.push_back(normalize_image<float>(s.image));

  Adam<float> optimizer(model.params(), AdamOptions{cfg.train.lr});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto val_images = image_refs(val);

  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      ++log.steps;
      model.params().zero_grad();
      const auto& s = train[idx];
      auto out = model.forward(inputs[idx], s.image.height, s.image.width);
      auto loss = loss_fn(out, idx);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at step " + std::to_string(log.steps) + " (epoch " +
                               std::to_string(epoch) + ", sample " + s.id + ")",
                           log.steps);
      }
      loss.backward();
      double sq_norm = 0.0;
      for (const auto& [name, p] : model.params().entries()) {
        if (!p.has_grad()) continue;
        for (float g : p.grad()) {
          if (!std::isfinite(g)) {
            throw NumericError("non-finite gradient in " + name + " at step " + std::to_string(log.steps), log.steps);
          }
          sq_norm += static_cast<double>(g) * g;
        }
      }
      if (cfg.train.clip_norm > 0.0 && sq_norm > cfg.train.clip_norm * cfg.train.clip_norm) {
        const double factor = cfg.train.clip_norm / std::sqrt(sq_norm);
        for (auto& entry : model.params().entries()) {
          if (entry.second.has_grad()) entry.second.scale_grad(static_cast<float>(factor));
        }
      }
      optimizer.step(model.params());
      total += value;
    }

    const auto predictor = Predictor::from_model(model);
    const auto masks = predict_masks(predictor, val_images, cfg.worker_count());
    const auto metrics = compute_split_metrics(masks, val);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(train.size());
    rec.val_miou = metrics.miou;
    rec.val_fg_iou = metrics.fg_iou;
    rec.val_mae = metrics.mae;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (rec.val_miou > log.best_val_miou) {
      rec.best = true;
      log.best_val_miou = rec.val_miou;
      log.best_epoch = epoch;
      save_best(model, epoch, rec.val_miou);
    }
    log.epochs.push_back(rec);
    std::cerr << "[" << log.plug << " lr=" << lr_tag(log.lr) << "] epoch " << epoch << " loss " << fixed(rec.train_loss)
              << " val mIoU " << fixed(rec.val_miou) << " fg IoU " << fixed(rec.val_fg_iou) << " MAE "
              << fixed(rec.val_mae, 3) << (rec.best ? " *" : "") << " (" << fixed(rec.wall_seconds, 1) << "s)\n";
    if (epoch - log.best_epoch >= cfg.train.patience) {
      log.early_stopped = epoch < cfg.train.epochs;
      break;
    }
  }
  return log;
}

std::vector<Sample> subset(std::vector<Sample> samples, int max_images) {
  if (max_images > 0 && static_cast<std::size_t>(max_images) < samples.size()) samples.resize(max_images);
  return samples;
}

}  // namespace

// ---------------------------------------------------------------------------

nlohmann::json TrainLog::to_json(bool include_timing) const {
  nlohmann::json j;
  j["plug"] = plug;
  j["lr"] = lr;
  j["walk_steps"] = walk_steps;
  j["best_epoch"] = best_epoch;
  j["best_val_miou"] = best_val_miou;
  j["early_stopped"] = early_stopped;
  j["steps"] = steps;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json r = {{"epoch", e.epoch},         {"train_loss", e.train_loss}, {"val_miou", e.val_miou},
                        {"val_fg_iou", e.val_fg_iou}, {"val_mae", e.val_mae},       {"best", e.best}};
    if (include_timing) r["wall_seconds"] = e.wall_seconds;
    j["epochs"].push_back(r);
  }
  return j;
}

Predictor Predictor::load(const fs::path& checkpoint) {
  auto ckpt = load_checkpoint(checkpoint);
  Predictor p;
  p.metadata_ = ckpt.metadata;
  p.digest_ = file_digest(checkpoint);
  try {
    p.kind_ = ckpt.metadata.at("kind").get<std::string>();
    if (p.kind_ == "alcfcn") {
      p.weak_.emplace(model_config_from_json(ckpt.metadata.at("model")), std::move(ckpt.params));
    } else if (p.kind_ == "fs") {
      BackboneConfig bc;
      bc.level_channels = ckpt.metadata.at("model").at("backbone_channels").get<std::array<int, 3>>();
      p.full_.emplace(bc, std::move(ckpt.params));
    } else {
      throw IoError(checkpoint.string() + ": unknown model kind '" + p.kind_ + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(checkpoint.string() + ": malformed checkpoint metadata: " + e.what());
  }
  return p;
}

Predictor Predictor::from_model(const AlcfcnModel<float>& model) {
  Predictor p;
  p.kind_ = "alcfcn";
  p.weak_.emplace(model);
  return p;
}

Predictor Predictor::from_model(const FsModel<float>& model) {
  Predictor p;
  p.kind_ = "fs";
  p.full_.emplace(model);
  return p;
}

ModelOutput<float> Predictor::forward(const RgbImage& image) const {
  NoGradGuard guard;
  const auto input = normalize_image<float>(image);
  try {
    if (weak_) return weak_->forward(input, image.height, image.width);
    return full_->forward(input, image.height, image.width);
  } catch (const ContractError& e) {
    throw IoError(std::string("checkpoint does not match its recorded architecture: ") + e.what());
  }
}

BinaryMask Predictor::predict(const RgbImage& image) const { return argmax_mask(forward(image).probs); }

std::vector<BinaryMask> predict_masks(const Predictor& predictor, const std::vector<const RgbImage*>& images,
                                      int threads) {
  std::vector<BinaryMask> out(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) { out[i] = predictor.predict(*images[i]); });
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json SplitMetrics::to_json() const {
  nlohmann::json j;
  j["images"] = images;
  j["segmentation"] = {{"fg_iou", fg_iou}, {"bg_iou", bg_iou}, {"miou", miou}};
  j["confusion"] = {{"tp", confusion.tp}, {"fp", confusion.fp}, {"fn", confusion.fn}, {"tn", confusion.tn}};
  nlohmann::json counting = {{"mae", mae}};
  for (std::size_t l = 0; l < game.size(); ++l) counting["game" + std::to_string(l)] = game[l];
  j["counting"] = counting;
  std::map<std::string, int> histogram;
  for (int c : predicted_counts) ++histogram[std::to_string(c)];
  j["blob_count_histogram"] = histogram;
  j["predicted_counts"] = predicted_counts;
  return j;
}

SplitMetrics compute_split_metrics(const std::vector<BinaryMask>& predictions, const std::vector<Sample>& samples,
                                   const std::vector<std::vector<Point>>* predicted_points) {
  if (predictions.size() != samples.size()) throw DimensionError("metrics: prediction/sample count mismatch");
  if (predicted_points && predicted_points->size() != samples.size()) {
    throw DimensionError("metrics: predicted point list count mismatch");
  }
  SplitMetrics m;
  m.images = static_cast<int>(samples.size());
  std::vector<std::vector<Point>> pred_pts, true_pts;
  std::vector<double> pred_counts, true_counts;
  int height = 0, width = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!s.instance_mask) throw ValidationError("sample " + s.split + "/" + s.id + " has no mask to evaluate against");
    m.confusion.accumulate(predictions[i], s.instance_mask->foreground());
    if (predicted_points) {
      pred_pts.push_back((*predicted_points)[i]);
    } else {
      pred_pts.push_back(blob_centroids(label_blobs(predictions[i])));
    }
    true_pts.push_back(s.points.points);
    pred_counts.push_back(static_cast<double>(pred_pts.back().size()));
    true_counts.push_back(static_cast<double>(s.points.size()));
    m.predicted_counts.push_back(static_cast<int>(pred_pts.back().size()));
    if (i == 0) {
      height = s.image.height;
      width = s.image.width;
    } else if (height != s.image.height || width != s.image.width) {
      height = width = -1;
    }
  }
  m.fg_iou = foreground_iou(m.confusion);
  m.bg_iou = background_iou(m.confusion);
  m.miou = miou(m.fg_iou, m.bg_iou);
  m.mae = samples.empty() ? 0.0 : mae(pred_counts, true_counts);
  if (height > 0) {
    for (int l = 0; l <= 4; ++l) m.game.push_back(game(pred_pts, true_pts, height, width, l));
  }
  return m;
}

// ---------------------------------------------------------------------------

DatasetManifest generate_data(const RunConfig& cfg) {
  std::cerr << "generating " << cfg.synth.n_train << "/" << cfg.synth.n_val << "/" << cfg.synth.n_test
            << " samples under " << cfg.data_root << "\n";
  return synth_generate(cfg.data_root, cfg.synth);
}

TrainResult train_weak(const RunConfig& cfg, const fs::path& out_dir) {
  if (cfg.loss == LossPlug::kFs) throw ConfigError("train-weak needs loss.plug = lcfcn or pl_fcn");
  const auto manifest = load_manifest(cfg);
  const auto train = subset(load_split(manifest, "train"), cfg.train.max_images);
  const auto val = require_masks(load_split(manifest, "val"), "val");
  if (train.empty()) throw ContractError("training split is empty");

  auto model = AlcfcnModel<float>::initialize(cfg.model, cfg.seed);
  const LcfcnOptions options{cfg.split_weight_by_points};
  std::function<Tensor<float>(const ModelOutput<float>&, std::size_t)> loss_fn;
  if (cfg.loss == LossPlug::kLcfcn) {
    loss_fn = [&](const ModelOutput<float>& out, std::size_t i) { return lcfcn_loss(out.probs, train[i].points, options); };
  } else {
    loss_fn = [&](const ModelOutput<float>& out, std::size_t i) { return pl_fcn_loss(out.probs, train[i].points); };
  }

  TrainResult result;
  result.checkpoint = out_dir / "best.ckpt";
  result.log_path = out_dir / "train_log.json";
  fs::create_directories(out_dir);
  const auto model_json = to_json(cfg.model);
  result.log = run_training<AlcfcnModel<float>>(
      model, cfg, cfg.loss, train, val, loss_fn, [&](const AlcfcnModel<float>& m, int epoch, double score) {
        save_checkpoint(result.checkpoint, m.params(), model_metadata("alcfcn", model_json, cfg, cfg.loss, epoch, score));
      });
  result.log.walk_steps = cfg.model.walk_steps;
  write_json(result.log_path, result.log.to_json());
  return result;
}

TrainResult train_full(const RunConfig& cfg, const fs::path& out_dir) {
  const auto manifest = load_manifest(cfg);
  auto train = subset(load_split(manifest, "train"), cfg.train.max_images);
  const auto val = require_masks(load_split(manifest, "val"), "val");
  if (train.empty()) throw ContractError("training split is empty");

  std::vector<BinaryMask> targets;
  if (cfg.mask_source == "true") {
    for (const auto& s : require_masks(train, "train")) targets.push_back(s.instance_mask->foreground());
  } else {
    const auto dir = cfg.resolved_pseudo_dir() / "train";
    for (const auto& s : train) {
      const auto path = dir / (s.id + ".png");
      if (!fs::exists(path)) throw IoError("missing pseudo-mask " + path.string() + " (run export-pseudo first)");
      auto mask = read_binary_mask(path);
      if (mask.height != s.image.height || mask.width != s.image.width) {
        throw ValidationError(path.string() + ": pseudo-mask size differs from its image");
      }
      targets.push_back(std::move(mask));
    }
  }

  auto model = FsModel<float>::initialize(cfg.model.backbone, cfg.seed);
  const auto boundary = cfg.boundary;
  std::vector<std::vector<double>> weights;
  for (const auto& t : targets) weights.push_back(boundary_weights(t, boundary));
  auto loss_fn = [&](const ModelOutput<float>& out, std::size_t i) {
    return add(weighted_ce_loss(out.probs, targets[i], weights[i]), weighted_iou_loss(out.probs, targets[i], weights[i]));
  };

  TrainResult result;
  result.checkpoint = out_dir / "best.ckpt";
  result.log_path = out_dir / "train_log.json";
  fs::create_directories(out_dir);
  const nlohmann::json model_json = {{"backbone_channels", cfg.model.backbone.level_channels}};
  auto metadata = [&](int epoch, double score) {
    auto m = model_metadata("fs", model_json, cfg, LossPlug::kFs, epoch, score);
    m["mask_source"] = cfg.mask_source;
    if (cfg.mask_source == "pseudo") {
      const auto prov = cfg.resolved_pseudo_dir() / "provenance.json";
      if (fs::exists(prov)) {
        std::ifstream in(prov);
        try {
          m["pseudo_checkpoint_digest"] = nlohmann::json::parse(in).value("checkpoint_digest", "");
        } catch (const nlohmann::json::exception&) {
          throw ValidationError(prov.string() + ": malformed provenance record");
        }
      }
    }
    return m;
  };
  result.log = run_training<FsModel<float>>(model, cfg, LossPlug::kFs, train, val, loss_fn,
                                            [&](const FsModel<float>& m, int epoch, double score) {
                                              save_checkpoint(result.checkpoint, m.params(), metadata(epoch, score));
                                            });
  write_json(result.log_path, result.log.to_json());
  return result;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json evaluate_loaded(const RunConfig& cfg, const Predictor& predictor, const fs::path& checkpoint,
                               const fs::path& out_dir, bool write_files) {
  const auto manifest = load_manifest(cfg);
  const auto samples = require_masks(load_split(manifest, cfg.eval_split), cfg.eval_split);
  if (samples.empty()) throw ContractError("evaluation split '" + cfg.eval_split + "' is empty");
  const auto masks = predict_masks(predictor, image_refs(samples), cfg.worker_count());
  const auto metrics = compute_split_metrics(masks, samples);

  std::vector<int> train_counts;
  if (auto it = manifest.splits.find("train"); it != manifest.splits.end()) {
    for (const auto& rec : it->second) train_counts.push_back(static_cast<int>(read_points(manifest.root / rec.points).size()));
  }
  const AlwaysMedian median(train_counts);
  std::vector<double> constant(samples.size(), median.predict()), truth;
  for (const auto& s : samples) truth.push_back(static_cast<double>(s.points.size()));

  nlohmann::json report;
  report["split"] = cfg.eval_split;
  report["checkpoint"] = checkpoint.filename().string();
  report["checkpoint_digest"] = predictor.digest();
  report["model_kind"] = predictor.kind();
  report["model"] = metrics.to_json();
  report["always_median"] = {{"prediction", median.predict()}, {"mae", mae(constant, truth)}};

  if (write_files) {
    fs::create_directories(out_dir);
    write_json(out_dir / "metrics.json", report);
    write_text(out_dir / "metrics.txt", format_metrics_table(report));
    const int k = std::min<int>(cfg.overlays, static_cast<int>(samples.size()));
    for (int i = 0; i < k; ++i) {
      save_overlay(out_dir / "overlays" / (samples[i].id + ".png"), samples[i].image, masks[i], samples[i].points);
    }
  }
  return report;
}

}  // namespace

nlohmann::json evaluate(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir) {
  const auto predictor = Predictor::load(checkpoint);
  return evaluate_loaded(cfg, predictor, checkpoint, out_dir, true);
}

nlohmann::json run_grid(const RunConfig& cfg, const fs::path& out_dir) {
  if (cfg.loss == LossPlug::kFs) throw ConfigError("grid needs loss.plug = lcfcn or pl_fcn");
  std::vector<int> ts = cfg.grid_walk_steps;
  if (ts.empty()) ts.push_back(cfg.model.walk_steps);

  nlohmann::json rows = nlohmann::json::array();
  int best_row = -1;
  double best_score = -1.0;
  std::vector<fs::path> checkpoints;
  for (int t : ts) {
    for (double lr : cfg.grid_lrs) {
      RunConfig run = cfg;
      run.model.walk_steps = t;
      run.train.lr = lr;
      const auto dir = out_dir / ("t" + std::to_string(t) + "_lr" + lr_tag(lr));
      const auto result = train_weak(run, dir);
      const auto report = evaluate(run, result.checkpoint, dir / "eval");
      const auto& seg = report["model"]["segmentation"];
      nlohmann::json row = {{"t", t},
                            {"lr", lr},
                            {"run", dir.filename().string()},
                            {"best_epoch", result.log.best_epoch},
                            {"epochs_run", static_cast<int>(result.log.epochs.size())},
                            {"val_miou", result.log.best_val_miou},
                            {"final_train_loss", result.log.epochs.back().train_loss},
                            {"first_train_loss", result.log.epochs.front().train_loss},
                            {"eval_fg_iou", seg["fg_iou"]},
                            {"eval_miou", seg["miou"]},
                            {"eval_mae", report["model"]["counting"]["mae"]}};
      if (result.log.best_val_miou > best_score) {
        best_score = result.log.best_val_miou;
        best_row = static_cast<int>(rows.size());
      }
      rows.push_back(row);
      checkpoints.push_back(result.checkpoint);
    }
  }

  // Best run per walk length, for the refinement ablation.
  nlohmann::json by_t = nlohmann::json::array();
  for (int t : ts) {
    int pick = -1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i]["t"] == t && (pick < 0 || rows[i]["val_miou"].get<double>() > rows[pick]["val_miou"].get<double>())) {
        pick = static_cast<int>(i);
      }
    }
    by_t.push_back({{"t", t},
                    {"lr", rows[pick]["lr"]},
                    {"val_miou", rows[pick]["val_miou"]},
                    {"eval_fg_iou", rows[pick]["eval_fg_iou"]},
                    {"eval_miou", rows[pick]["eval_miou"]},
                    {"eval_mae", rows[pick]["eval_mae"]}});
  }

  fs::copy_file(checkpoints[best_row], out_dir / "best.ckpt", fs::copy_options::overwrite_existing);
  nlohmann::json report = {{"eval_split", cfg.eval_split},
                           {"rows", rows},
                           {"selected", best_row},
                           {"selected_run", rows[best_row]["run"]},
                           {"by_t", by_t}};
  write_json(out_dir / "grid.json", report);
  write_text(out_dir / "grid.txt", format_grid_table(report));
  return report;
}

nlohmann::json export_pseudo(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir) {
  const auto predictor = Predictor::load(checkpoint);
  const auto manifest = load_manifest(cfg);
  nlohmann::json prov;
  prov["checkpoint"] = checkpoint.filename().string();
  prov["checkpoint_digest"] = predictor.digest();
  prov["dataset_generator_seed"] = manifest.generator_seed;
  prov["encoding"] = "8-bit PNG, 0 = background, 255 = foreground";
  prov["splits"] = nlohmann::json::object();
  for (const auto& split : cfg.pseudo_splits) {
    const auto samples = load_split(manifest, split);
    const auto masks = predict_masks(predictor, image_refs(samples), cfg.worker_count());
    auto& entries = prov["splits"][split] = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto rel = split + "/" + samples[i].id + ".png";
      write_binary_mask(out_dir / rel, masks[i]);
      entries.push_back({{"id", samples[i].id},
                         {"mask", rel},
                         {"foreground_pixels", masks[i].count()},
                         {"blobs", count_blobs(masks[i])}});
    }
    std::cerr << "exported " << samples.size() << " " << split << " pseudo-masks to " << (out_dir / split) << "\n";
  }
  write_json(out_dir / "provenance.json", prov);
  return prov;
}

nlohmann::json predict_images(const RunConfig& cfg, const fs::path& checkpoint, const std::vector<fs::path>& images,
                              const fs::path& out_dir) {
  const auto predictor = Predictor::load(checkpoint);
  std::vector<RgbImage> loaded;
  for (const auto& p : images) loaded.push_back(read_rgb(p));
  std::vector<const RgbImage*> refs;
  for (const auto& im : loaded) refs.push_back(&im);
  const auto masks = predict_masks(predictor, refs, cfg.worker_count());

  nlohmann::json report;
  report["checkpoint"] = checkpoint.filename().string();
  report["checkpoint_digest"] = predictor.digest();
  report["predictions"] = nlohmann::json::array();
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto stem = images[i].stem().string();
    const auto centroids = blob_centroids(label_blobs(masks[i]));
    PointAnnotations pts;
    pts.points = centroids;
    write_binary_mask(out_dir / (stem + "_mask.png"), masks[i]);
    save_overlay(out_dir / (stem + "_overlay.png"), loaded[i], masks[i], pts);
    nlohmann::json locs = nlohmann::json::array();
    for (const auto& c : centroids) locs.push_back({{"y", c.row}, {"x", c.col}});
    report["predictions"].push_back({{"image", images[i].filename().string()},
                                     {"mask", stem + "_mask.png"},
                                     {"count", centroids.size()},
                                     {"foreground_pixels", masks[i].count()},
                                     {"blob_centroids", locs}});
  }
  write_json(out_dir / "predictions.json", report);
  return report;
}

// ---------------------------------------------------------------------------

std::string format_metrics_table(const nlohmann::json& report) {
  std::ostringstream s;
  const auto& m = report.at("model");
  s << "split: " << report.at("split").get<std::string>() << " (" << m.at("images").get<int>() << " images)\n";
  s << std::left << std::setw(16) << "method" << std::right << std::setw(9) << "mIoU" << std::setw(9) << "FG IoU"
    << std::setw(9) << "BG IoU" << std::setw(9) << "MAE" << std::setw(9) << "GAME(4)" << "\n";
  const auto& seg = m.at("segmentation");
  const auto& cnt = m.at("counting");
  s << std::left << std::setw(16) << report.at("model_kind").get<std::string>() << std::right << std::setw(9)
    << fixed(seg.at("miou").get<double>(), 3) << std::setw(9) << fixed(seg.at("fg_iou").get<double>(), 3)
    << std::setw(9) << fixed(seg.at("bg_iou").get<double>(), 3) << std::setw(9) << fixed(cnt.at("mae").get<double>(), 3)
    << std::setw(9) << (cnt.contains("game4") ? fixed(cnt.at("game4").get<double>(), 3) : std::string("-")) << "\n";
  const auto& med = report.at("always_median");
  s << std::left << std::setw(16) << "always-median" << std::right << std::setw(9) << "-" << std::setw(9) << "-"
    << std::setw(9) << "-" << std::setw(9) << fixed(med.at("mae").get<double>(), 3) << std::setw(9) << "-" << "\n";
  return s.str();
}

std::string format_grid_table(const nlohmann::json& report) {
  std::ostringstream s;
  s << std::left << std::setw(16) << "run" << std::right << std::setw(5) << "t" << std::setw(9) << "lr" << std::setw(7)
    << "best" << std::setw(9) << "val mIoU" << std::setw(9) << "FG IoU" << std::setw(9) << "mIoU" << std::setw(9)
    << "MAE" << "\n";
  const auto& rows = report.at("rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    s << std::left << std::setw(16) << r.at("run").get<std::string>() << std::right << std::setw(5)
      << r.at("t").get<int>() << std::setw(9) << lr_tag(r.at("lr").get<double>()) << std::setw(7)
      << r.at("best_epoch").get<int>() << std::setw(9) << fixed(r.at("val_miou").get<double>(), 3) << std::setw(9)
      << fixed(r.at("eval_fg_iou").get<double>(), 3) << std::setw(9) << fixed(r.at("eval_miou").get<double>(), 3)
      << std::setw(9) << fixed(r.at("eval_mae").get<double>(), 3)
      << (static_cast<int>(i) == report.at("selected").get<int>() ? "  <- selected" : "") << "\n";
  }
  s << "\nrefinement ablation (" << report.at("eval_split").get<std::string>() << " split, best lr per t)\n";
  s << std::right << std::setw(5) << "t" << std::setw(9) << "FG IoU" << std::setw(9) << "mIoU" << std::setw(9) << "MAE"
    << "\n";
  for (const auto& r : report.at("by_t")) {
    s << std::setw(5) << r.at("t").get<int>() << std::setw(9) << fixed(r.at("eval_fg_iou").get<double>(), 3)
      << std::setw(9) << fixed(r.at("eval_miou").get<double>(), 3) << std::setw(9)
      << fixed(r.at("eval_mae").get<double>(), 3) << "\n";
  }
  return s.str();
}

}  // namespace alcfcn
