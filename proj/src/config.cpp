#include "alcfcn/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "alcfcn/errors.hpp"

namespace alcfcn {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long to_int(const std::string& key, const std::string& value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + value + "'");
  return v;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + value + "'");
}

int to_int32(const std::string& key, const std::string& value) {
  const long long v = to_int(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(key + ": value out of range");
  }
  return static_cast<int>(v);
}

}  // namespace

LossPlug parse_loss_plug(const std::string& name) {
  if (name == "lcfcn") return LossPlug::kLcfcn;
  if (name == "pl_fcn") return LossPlug::kPlFcn;
  if (name == "fs") return LossPlug::kFs;
  throw ConfigError("unknown loss plug: " + name);
}

std::string loss_plug_name(LossPlug plug) {
  switch (plug) {
    case LossPlug::kLcfcn:
      return "lcfcn";
    case LossPlug::kPlFcn:
      return "pl_fcn";
    case LossPlug::kFs:
      return "fs";
  }
  return "lcfcn";
}

int RunConfig::worker_count() const {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") {
    seed = static_cast<std::uint64_t>(to_int(key, value));
  } else if (key == "data.root") {
    data_root = value;
  } else if (key == "data.seed") {
    synth.seed = static_cast<std::uint64_t>(to_int(key, value));
  } else if (key == "data.n_train") {
    synth.n_train = to_int32(key, value);
  } else if (key == "data.n_val") {
    synth.n_val = to_int32(key, value);
  } else if (key == "data.n_test") {
    synth.n_test = to_int32(key, value);
  } else if (key == "data.height") {
    synth.height = to_int32(key, value);
  } else if (key == "data.width") {
    synth.width = to_int32(key, value);
  } else if (key == "data.difficulty") {
    try {
      synth.difficulty = parse_difficulty(value);
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "data.count_weights") {
    synth.count_weights.clear();
    for (const auto& item : split_list(value)) synth.count_weights.push_back(to_double(key, item));
  } else if (key == "model.preset") {
    try {
      const auto preset = alcfcn::model_preset(value);
      model.affinity_level_channels = preset.affinity_level_channels;
      model.affinity_channels = preset.affinity_channels;
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
    model_preset = value;
    if (value == "paper") train.epochs = 1000;
  } else if (key == "model.backbone_channels") {
    const auto items = split_list(value);
    if (items.size() != 3) throw ConfigError(key + ": expected three comma-separated widths");
    for (int l = 0; l < 3; ++l) model.backbone.level_channels[l] = to_int32(key, items[l]);
  } else if (key == "model.affinity_level_channels") {
    const auto items = split_list(value);
    if (items.size() != 3) throw ConfigError(key + ": expected three comma-separated widths");
    for (int l = 0; l < 3; ++l) model.affinity_level_channels[l] = to_int32(key, items[l]);
  } else if (key == "model.affinity_channels") {
    model.affinity_channels = to_int32(key, value);
  } else if (key == "model.affinity_init_gain") {
    model.affinity_init_gain = to_double(key, value);
  } else if (key == "affinity.radius") {
    model.neighborhood.radius = to_int32(key, value);
  } else if (key == "affinity.include_self") {
    model.neighborhood.include_self = to_bool(key, value);
  } else if (key == "affinity.beta") {
    model.beta = to_double(key, value);
  } else if (key == "affinity.t") {
    model.walk_steps = to_int32(key, value);
  } else if (key == "loss.plug") {
    loss = parse_loss_plug(value);
  } else if (key == "loss.split_weight") {
    if (value == "points") {
      split_weight_by_points = true;
    } else if (value == "one") {
      split_weight_by_points = false;
    } else {
      throw ConfigError(key + ": expected 'points' or 'one'");
    }
  } else if (key == "loss.boundary_window") {
    boundary.window = to_int32(key, value);
  } else if (key == "loss.boundary_factor") {
    boundary.factor = to_double(key, value);
  } else if (key == "train.lr") {
    train.lr = to_double(key, value);
  } else if (key == "train.epochs") {
    train.epochs = to_int32(key, value);
  } else if (key == "train.patience") {
    train.patience = to_int32(key, value);
  } else if (key == "train.max_images") {
    train.max_images = to_int32(key, value);
  } else if (key == "train.clip_norm") {
    train.clip_norm = to_double(key, value);
  } else if (key == "grid.lrs") {
    grid_lrs.clear();
    for (const auto& item : split_list(value)) grid_lrs.push_back(to_double(key, item));
  } else if (key == "grid.t") {
    grid_walk_steps.clear();
    for (const auto& item : split_list(value)) grid_walk_steps.push_back(to_int32(key, item));
  } else if (key == "output.dir") {
    output_dir = value;
  } else if (key == "eval.split") {
    eval_split = value;
  } else if (key == "eval.overlays") {
    overlays = to_int32(key, value);
  } else if (key == "eval.threads") {
    threads = to_int32(key, value);
  } else if (key == "pseudo.dir") {
    pseudo_dir = value;
  } else if (key == "pseudo.splits") {
    pseudo_splits = split_list(value);
  } else if (key == "full.mask_source") {
    if (value != "pseudo" && value != "true") throw ConfigError(key + ": expected 'pseudo' or 'true'");
    mask_source = value;
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(synth.n_train > 0 && synth.n_val > 0 && synth.n_test > 0, "data split sizes must be positive");
  require(synth.height > 0 && synth.width > 0, "data.height and data.width must be positive");
  require(!synth.count_weights.empty(), "data.count_weights must not be empty");
  for (double w : synth.count_weights) require(w >= 0.0, "data.count_weights must be non-negative");
  for (int c : model.backbone.level_channels) require(c > 0, "model.backbone_channels must be positive");
  for (int c : model.affinity_level_channels) require(c > 0, "model.affinity_level_channels must be positive");
  require(model.affinity_channels > 0, "model.affinity_channels must be positive");
  require(model.neighborhood.radius >= 0, "affinity.radius must be >= 0");
  require(model.beta >= 1.0, "affinity.beta must be >= 1");
  require(model.walk_steps >= 0, "affinity.t must be >= 0");
  require(model.affinity_init_gain > 0.0, "model.affinity_init_gain must be positive");
  require(boundary.window >= 1 && boundary.window % 2 == 1, "loss.boundary_window must be a positive odd number");
  require(boundary.factor >= 0.0, "loss.boundary_factor must be >= 0");
  require(train.lr > 0.0, "train.lr must be positive");
  require(train.epochs >= 1, "train.epochs must be >= 1");
  require(train.patience >= 1, "train.patience must be >= 1");
  require(train.max_images >= 0, "train.max_images must be >= 0");
  require(train.clip_norm >= 0.0, "train.clip_norm must be >= 0");
  require(!grid_lrs.empty(), "grid.lrs must not be empty");
  for (double lr : grid_lrs) require(lr > 0.0, "grid.lrs entries must be positive");
  for (int t : grid_walk_steps) require(t >= 0, "grid.t entries must be >= 0");
  require(std::find(kSplits.begin(), kSplits.end(), eval_split) != kSplits.end(), "eval.split must be train, val or test");
  require(overlays >= 0, "eval.overlays must be >= 0");
  require(threads >= 0, "eval.threads must be >= 0");
  for (const auto& s : pseudo_splits) {
    require(std::find(kSplits.begin(), kSplits.end(), s) != kSplits.end(), "pseudo.splits: unknown split " + s);
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["data"] = {{"root", data_root.string()},
               {"seed", synth.seed},
               {"n_train", synth.n_train},
               {"n_val", synth.n_val},
               {"n_test", synth.n_test},
               {"height", synth.height},
               {"width", synth.width},
               {"difficulty", difficulty_name(synth.difficulty)},
               {"count_weights", synth.count_weights}};
  j["model"] = alcfcn::to_json(model);
  j["model"]["preset"] = model_preset;
  j["loss"] = {{"plug", loss_plug_name(loss)},
               {"split_weight", split_weight_by_points ? "points" : "one"},
               {"boundary_window", boundary.window},
               {"boundary_factor", boundary.factor}};
  j["train"] = {{"lr", train.lr}, {"epochs", train.epochs}, {"patience", train.patience},
                {"max_images", train.max_images}, {"clip_norm", train.clip_norm}};
  j["grid"] = {{"lrs", grid_lrs}, {"t", grid_walk_steps}};
  j["output_dir"] = output_dir.string();
  j["eval"] = {{"split", eval_split}, {"overlays", overlays}};
  j["pseudo"] = {{"dir", resolved_pseudo_dir().string()}, {"splits", pseudo_splits}};
  j["full"] = {{"mask_source", mask_source}};
  return j;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

namespace {

void apply_entries(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& entries) {
  // A preset only fills defaults, so it goes first wherever it appears.
  for (const auto& [k, v] : entries) {
    if (k == "model.preset") cfg.set(k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "model.preset") cfg.set(k, v);
  }
}

std::vector<std::pair<std::string, std::string>> read_entries(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_entries(cfg, read_entries(path));
  cfg.validate();
  return cfg;
}

RunConfig resolve_config(const std::filesystem::path& config_path, const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> entries;
  if (!config_path.empty()) entries = read_entries(config_path);
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
    entries.emplace_back("output.dir", root);
  }
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not of the form key=value");
    entries.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  RunConfig cfg;
  apply_entries(cfg, entries);
  cfg.validate();
  return cfg;
}

}  // namespace alcfcn
