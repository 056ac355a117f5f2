#pragma once

// Toy fully-convolutional backbone with an activation branch and an affinity
// branch, combined by random-walk refinement; plus the fully-supervised
// student used for pseudo-mask distillation.
//
// Backbone (output stride 4, three feature levels on the same grid):
//   stage1: conv3x3/2 -> relu -> conv3x3/2 -> relu        => f1 [c1,H/4,W/4]
//   stage2: conv3x3   -> relu -> conv3x3   -> relu        => f2 [c2,H/4,W/4]
//   stage3: conv3x3   -> relu -> conv3x3   -> relu        => f3 [c3,H/4,W/4]
// Activation branch: conv1x1(f3) -> 2 logits.
// Affinity branch: relu(conv1x1(f_l)) per level, resized to the f3 grid,
//   concatenated, fused by conv1x1 into the affinity features.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include <json.hpp>

#include "alcfcn/affinity.hpp"
#include "alcfcn/ops.hpp"
#include "alcfcn/param_store.hpp"

namespace alcfcn {

struct BackboneConfig {
  std::array<int, 3> level_channels{16, 32, 64};
  static constexpr int kOutputStride = 4;
};

struct ModelConfig {
  BackboneConfig backbone;
  std::array<int, 3> affinity_level_channels{16, 32, 64};
  int affinity_channels = 112;
  NeighborhoodSpec neighborhood{};
  double beta = 8.0;
  int walk_steps = 8;
  // Scale of the fan-in initialisation bound of the affinity fuse layer. Small
  // values start training with nearly uniform transition rows.
  double affinity_init_gain = 0.01;
};

// "toy": quarter-width affinity branch; "paper": 64/128/256 -> 448.
inline ModelConfig model_preset(std::string_view name) {
  ModelConfig cfg;
  if (name == "toy") return cfg;
  if (name == "paper") {
    cfg.affinity_level_channels = {64, 128, 256};
    cfg.affinity_channels = 448;
    return cfg;
  }
  throw ContractError("unknown model preset: " + std::string(name));
}

inline nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"backbone_channels", cfg.backbone.level_channels},
          {"affinity_level_channels", cfg.affinity_level_channels},
          {"affinity_channels", cfg.affinity_channels},
          {"radius", cfg.neighborhood.radius},
          {"include_self", cfg.neighborhood.include_self},
          {"beta", cfg.beta},
          {"walk_steps", cfg.walk_steps},
          {"affinity_init_gain", cfg.affinity_init_gain}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.backbone.level_channels = j.at("backbone_channels").get<std::array<int, 3>>();
  cfg.affinity_level_channels = j.at("affinity_level_channels").get<std::array<int, 3>>();
  cfg.affinity_channels = j.at("affinity_channels").get<int>();
  cfg.neighborhood.radius = j.at("radius").get<int>();
  cfg.neighborhood.include_self = j.at("include_self").get<bool>();
  cfg.beta = j.at("beta").get<double>();
  cfg.walk_steps = j.at("walk_steps").get<int>();
  cfg.affinity_init_gain = j.value("affinity_init_gain", 0.01);
  return cfg;
}

// Fan-in-scaled uniform bound: gain * sqrt(6 / fan_in), i.e. a standard
// deviation of gain * sqrt(2 / fan_in).
inline double fan_in_bound(int fan_in, double gain = 1.0) { return gain * std::sqrt(6.0 / fan_in); }

template <typename T>
void add_conv_params(ParamStore<T>& params, std::mt19937_64& rng, const std::string& name, int cout, int cin,
                     int ksize, double gain = 1.0) {
  const double bound = fan_in_bound(cin * ksize * ksize, gain);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(static_cast<std::size_t>(cout) * cin * ksize * ksize);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  params.add(name + ".weight", Tensor<T>::from_data({cout, cin, ksize, ksize}, std::move(w), true));
  params.add(name + ".bias", Tensor<T>::zeros({cout}, true));
}

template <typename T>
Tensor<T> conv_layer(const ParamStore<T>& params, const std::string& name, const Tensor<T>& x, int stride,
                     int padding) {
  return add_channel_bias(conv2d(x, params.get(name + ".weight"), stride, padding), params.get(name + ".bias"));
}

template <typename T>
struct BackboneFeatures {
  Tensor<T> f1, f2, f3;
};

template <typename T>
void init_backbone_params(ParamStore<T>& params, std::mt19937_64& rng, const BackboneConfig& cfg) {
  const auto [c1, c2, c3] = cfg.level_channels;
  add_conv_params(params, rng, "backbone.stage1.conv1", c1, 3, 3);
  add_conv_params(params, rng, "backbone.stage1.conv2", c1, c1, 3);
  add_conv_params(params, rng, "backbone.stage2.conv1", c2, c1, 3);
  add_conv_params(params, rng, "backbone.stage2.conv2", c2, c2, 3);
  add_conv_params(params, rng, "backbone.stage3.conv1", c3, c2, 3);
  add_conv_params(params, rng, "backbone.stage3.conv2", c3, c3, 3);
}

template <typename T>
BackboneFeatures<T> backbone_forward(const ParamStore<T>& params, const Tensor<T>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("backbone expects an image of shape [3,H,W]");
  if (image.dim(1) % BackboneConfig::kOutputStride || image.dim(2) % BackboneConfig::kOutputStride) {
    throw DimensionError("backbone input " + shape_string(image.shape()) + " is not padded to a multiple of 4");
  }
  auto x = relu(conv_layer(params, "backbone.stage1.conv1", image, 2, 1));
  auto f1 = relu(conv_layer(params, "backbone.stage1.conv2", x, 2, 1));
  x = relu(conv_layer(params, "backbone.stage2.conv1", f1, 1, 1));
  auto f2 = relu(conv_layer(params, "backbone.stage2.conv2", x, 1, 1));
  x = relu(conv_layer(params, "backbone.stage3.conv1", f2, 1, 1));
  auto f3 = relu(conv_layer(params, "backbone.stage3.conv2", x, 1, 1));
  return {f1, f2, f3};
}

template <typename T>
struct ModelOutput {
  Tensor<T> probs;   // S [2,H,W]
  Tensor<T> logits;  // pre-softmax at image resolution
  Tensor<T> f_act;   // [2,h,w]
  Tensor<T> f_aff;   // [C_aff,h,w]; undefined when refinement is off
  Tensor<T> f_ref;   // [2,h,w]
  TransitionMatrix<T> transition;  // pattern null when refinement is off
};

template <typename T>
class AlcfcnModel {
 public:
  AlcfcnModel(ModelConfig config, ParamStore<T> params) : config_(config), params_(std::move(params)) {}

  static AlcfcnModel initialize(const ModelConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore<T> params;
    init_backbone_params(params, rng, config.backbone);
    add_conv_params(params, rng, "act", 2, config.backbone.level_channels[2], 1);
    int concat = 0;
    for (int l = 0; l < 3; ++l) {
      add_conv_params(params, rng, "aff.level" + std::to_string(l + 1), config.affinity_level_channels[l],
                      config.backbone.level_channels[l], 1);
      concat += config.affinity_level_channels[l];
    }
    add_conv_params(params, rng, "aff.fuse", config.affinity_channels, concat, 1, config.affinity_init_gain);
    return AlcfcnModel(config, std::move(params));
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  BackboneFeatures<T> backbone(const Tensor<T>& image) const { return backbone_forward(params_, image); }

  Tensor<T> activation_branch(const Tensor<T>& f3) const { return conv_layer(params_, "act", f3, 1, 0); }

  Tensor<T> affinity_branch(const BackboneFeatures<T>& f) const {
    const int h = f.f3.dim(1), w = f.f3.dim(2);
    const Tensor<T>* levels[3] = {&f.f1, &f.f2, &f.f3};
    std::vector<Tensor<T>> parts;
    for (int l = 0; l < 3; ++l) {
      auto y = relu(conv_layer(params_, "aff.level" + std::to_string(l + 1), *levels[l], 1, 0));
      parts.push_back(bilinear_upsample(y, h, w));
    }
    return conv_layer(params_, "aff.fuse", concat_channels(parts), 1, 0);
  }

  // Full pipeline on a padded image; S is cropped to out_h x out_w when given.
  ModelOutput<T> forward(const Tensor<T>& image, int out_h = 0, int out_w = 0) const {
    ModelOutput<T> out;
    auto feats = backbone(image);
    out.f_act = activation_branch(feats.f3);
    out.f_ref = out.f_act;
    if (config_.walk_steps > 0) {
      out.f_aff = affinity_branch(feats);
      auto weights = affinity_weights(out.f_aff, config_.neighborhood);
      out.transition = transition_matrix(weights, config_.beta);
      out.f_ref = random_walk_refine(out.f_act, out.transition, config_.walk_steps);
    }
    out.logits = bilinear_upsample(out.f_ref, image.dim(1), image.dim(2));
    if (out_h > 0 && out_w > 0) out.logits = crop(out.logits, out_h, out_w);
    out.probs = softmax_channels(out.logits);
    return out;
  }

 private:
  ModelConfig config_;
  ParamStore<T> params_;
};

// Fully-supervised student: shared-topology backbone and an FCN-style head
// that scores every level, sums the scores and upsamples to the image.
template <typename T>
class FsModel {
 public:
  FsModel(BackboneConfig config, ParamStore<T> params) : config_(config), params_(std::move(params)) {}

  static FsModel initialize(const BackboneConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore<T> params;
    init_backbone_params(params, rng, config);
    for (int l = 0; l < 3; ++l) {
      add_conv_params(params, rng, "head.level" + std::to_string(l + 1), 2, config.level_channels[l], 1);
    }
    return FsModel(config, std::move(params));
  }

  const BackboneConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  ModelOutput<T> forward(const Tensor<T>& image, int out_h = 0, int out_w = 0) const {
    auto f = backbone_forward(params_, image);
    auto score = conv_layer(params_, "head.level1", f.f1, 1, 0);
    score = add(score, conv_layer(params_, "head.level2", f.f2, 1, 0));
    score = add(score, conv_layer(params_, "head.level3", f.f3, 1, 0));
    ModelOutput<T> out;
    out.f_act = out.f_ref = score;
    out.logits = bilinear_upsample(score, image.dim(1), image.dim(2));
    if (out_h > 0 && out_w > 0) out.logits = crop(out.logits, out_h, out_w);
    out.probs = softmax_channels(out.logits);
    return out;
  }

 private:
  BackboneConfig config_;
  ParamStore<T> params_;
};

}  // namespace alcfcn
