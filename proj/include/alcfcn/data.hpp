#pragma once

// Samples, the on-disk dataset layout, the synthetic generator, point
// extraction from instance masks and image normalisation.
//
// Layout under a dataset root:
//   manifest.json
//   {train,val,test}/images/NNNN.png   8-bit RGB
//   {train,val,test}/masks/NNNN.png    8-bit (16-bit above 255 instances) instance ids
//   {train,val,test}/points/NNNN.json  [{"y": row, "x": col, "instance_id": k}, ...]

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alcfcn/tensor.hpp"
#include "alcfcn/types.hpp"

namespace alcfcn {

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // row-major HWC

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}
  std::uint8_t at(int r, int c, int ch) const { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  std::uint8_t& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
};

struct Sample {
  std::string id;
  std::string split;
  RgbImage image;
  std::optional<InstanceMask> instance_mask;
  PointAnnotations points;

  int count() const { return static_cast<int>(points.size()); }
};

struct SampleRecord {
  std::string id;
  std::string image;   // relative to the dataset root
  std::string mask;    // empty when the sample has no mask
  std::string points;
};

inline const std::array<std::string, 3> kSplits{"train", "val", "test"};

struct DatasetManifest {
  std::filesystem::path root;
  std::map<std::string, std::vector<SampleRecord>> splits;
  std::uint64_t generator_seed = 0;
  std::string difficulty;
  int height = 0;
  int width = 0;

  std::size_t split_size(const std::string& split) const {
    auto it = splits.find(split);
    return it == splits.end() ? 0 : it->second.size();
  }
  nlohmann::json to_json() const;
  void save() const;
  // Reads root/manifest.json and checks that referenced files exist and that
  // splits are disjoint.
  static DatasetManifest load(const std::filesystem::path& root);
};

enum class Difficulty { kTrivial, kStandard, kHard };
Difficulty parse_difficulty(const std::string& name);
std::string difficulty_name(Difficulty d);

struct SynthOptions {
  int n_train = 200;
  int n_val = 40;
  int n_test = 50;
  std::uint64_t seed = 0;
  Difficulty difficulty = Difficulty::kStandard;
  int height = 64;
  int width = 96;
  // Relative frequency of images with 0, 1, 2, ... objects.
  std::vector<double> count_weights{0.25, 0.30, 0.20, 0.15, 0.10};
};

// In-memory sample; deterministic in (options.seed, split, index).
Sample synth_sample(const SynthOptions& options, const std::string& split, int index);

// Writes a full dataset under `root` and returns its manifest.
DatasetManifest synth_generate(const std::filesystem::path& root, const SynthOptions& options);

// Squared Euclidean distance of every pixel to the nearest pixel where
// `inside` is false (two-pass separable transform). Pixels with no such
// pixel in the image get a value larger than any attainable distance.
std::vector<std::int64_t> squared_distance_transform(const std::vector<std::uint8_t>& inside, int height,
                                                     int width);

// One point per instance id: the pixel farthest from the instance's
// complement, ties to the smallest row-major index. Missing ids are skipped.
PointAnnotations points_from_mask(const InstanceMask& mask);

SampleRecord save_sample(const std::filesystem::path& root, const Sample& sample);
Sample load_sample(const std::filesystem::path& root, const SampleRecord& record, const std::string& split);
std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& split);

PointAnnotations read_points(const std::filesystem::path& path);
void write_points(const std::filesystem::path& path, const PointAnnotations& points);
RgbImage read_rgb(const std::filesystem::path& path);
InstanceMask read_instance_mask(const std::filesystem::path& path);
void write_instance_mask(const std::filesystem::path& path, const InstanceMask& mask);
void write_binary_mask(const std::filesystem::path& path, const BinaryMask& mask);  // 0 / 255
BinaryMask read_binary_mask(const std::filesystem::path& path);  // nonzero -> 1

// Image with the predicted mask tinted red and points drawn as green crosses.
void save_overlay(const std::filesystem::path& path, const RgbImage& image, const BinaryMask& prediction,
                  const PointAnnotations& points);

inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

inline int pad_to_multiple(int v, int m) { return (v + m - 1) / m * m; }

// [3, pad4(H), pad4(W)]: scaled to [0,1], standardised per channel, padded by
// edge replication.
template <typename T>
Tensor<T> normalize_image(const RgbImage& image) {
  const int h = image.height, w = image.width;
  const int ph = pad_to_multiple(h, 4), pw = pad_to_multiple(w, 4);
  std::vector<T> out(static_cast<std::size_t>(3) * ph * pw);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ph; ++y) {
      const int sy = std::min(y, h - 1);
      for (int x = 0; x < pw; ++x) {
        const int sx = std::min(x, w - 1);
        const double v = image.at(sy, sx, c) / 255.0;
        out[(static_cast<std::size_t>(c) * ph + y) * pw + x] = static_cast<T>((v - kImageNetMean[c]) / kImageNetStd[c]);
      }
    }
  }
  return Tensor<T>::from_data({3, ph, pw}, std::move(out));
}

}  // namespace alcfcn
