#pragma once

// Run configuration. The file format is plain text, one `key = value` per
// line, `#` starts a comment, and `[section]` lines prefix the keys that
// follow with `section.`. Command-line overrides use the same dotted keys.
//
// Precedence, lowest first: built-in defaults, config file,
// ALCFCN_OUTPUT_ROOT (output.dir only), --override / --seed flags.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "alcfcn/data.hpp"
#include "alcfcn/model.hpp"
#include "alcfcn/supervised_loss.hpp"

namespace alcfcn {

inline constexpr const char* kOutputRootEnv = "ALCFCN_OUTPUT_ROOT";

enum class LossPlug { kLcfcn, kPlFcn, kFs };
LossPlug parse_loss_plug(const std::string& name);
std::string loss_plug_name(LossPlug plug);

struct TrainSettings {
  double lr = 1e-4;
  int epochs = 200;
  int patience = 10;
  // Training images used per epoch; 0 means the whole split.
  int max_images = 0;
  // Global L2 gradient-norm ceiling applied before each optimizer step; 0 disables it.
  double clip_norm = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 0;

  std::filesystem::path data_root = "data";
  SynthOptions synth;

  std::string model_preset = "toy";
  ModelConfig model;

  LossPlug loss = LossPlug::kLcfcn;
  bool split_weight_by_points = true;
  BoundaryWeightOptions boundary;

  TrainSettings train;
  std::vector<double> grid_lrs{1e-4, 1e-5, 1e-6};
  std::vector<int> grid_walk_steps;  // empty: only model.walk_steps

  std::filesystem::path output_dir = "runs";
  std::string eval_split = "test";
  int overlays = 8;
  int threads = 0;  // 0: hardware concurrency

  std::filesystem::path pseudo_dir;  // empty: <output_dir>/pseudo
  std::vector<std::string> pseudo_splits{"train"};
  std::string mask_source = "pseudo";  // "pseudo" or "true" for train-full

  std::filesystem::path resolved_pseudo_dir() const { return pseudo_dir.empty() ? output_dir / "pseudo" : pseudo_dir; }
  int worker_count() const;

  // Applies one dotted key; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  nlohmann::json to_json() const;
};

// key -> value pairs in file order.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& source = "<config>");

RunConfig load_config(const std::filesystem::path& path);

// Builds the effective configuration from an optional file and the override
// list ("key=value"), consulting the environment for the output root.
RunConfig resolve_config(const std::filesystem::path& config_path, const std::vector<std::string>& overrides);

}  // namespace alcfcn
