#include "alcfcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "alcfcn/png_io.hpp"

namespace alcfcn {
namespace fs = std::filesystem;

namespace {

std::string sample_id(int index) {
  std::ostringstream s;
  s << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

struct DifficultyParams {
  double texture_amplitude;
  double noise_sigma;
  double contrast_lo, contrast_hi;
  int gap;  // minimum Chebyshev separation between objects; negative allows overlap
};

DifficultyParams params_for(Difficulty d) {
  switch (d) {
    case Difficulty::kTrivial:
      return {0.0, 2.0, 110.0, 140.0, 4};
    case Difficulty::kStandard:
      return {24.0, 8.0, 55.0, 95.0, 2};
    case Difficulty::kHard:
      return {36.0, 14.0, 30.0, 60.0, -1};
  }
  return {};
}

int split_index(const std::string& split) {
  for (std::size_t i = 0; i < kSplits.size(); ++i) {
    if (kSplits[i] == split) return static_cast<int>(i);
  }
  throw ContractError("unknown split: " + split);
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Ellipse {
  double cy, cx, a, b, angle;
  // Squared normalised radius; <= 1 inside.
  double rho2(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = dx * std::cos(angle) + dy * std::sin(angle);
    const double v = -dx * std::sin(angle) + dy * std::cos(angle);
    return (u * u) / (a * a) + (v * v) / (b * b);
  }
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

Difficulty parse_difficulty(const std::string& name) {
  if (name == "trivial") return Difficulty::kTrivial;
  if (name == "standard") return Difficulty::kStandard;
  if (name == "hard") return Difficulty::kHard;
  throw ConfigError("unknown difficulty: " + name);
}

std::string difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::kTrivial:
      return "trivial";
    case Difficulty::kStandard:
      return "standard";
    case Difficulty::kHard:
      return "hard";
  }
  return "standard";
}

// ---------------------------------------------------------------------------
// Distance transform and point extraction

namespace {

// 1-D squared distance transform of sampled function f (lower envelope of
// parabolas). `inf` marks positions with no source.
void dt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z,
           double inf) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] >= inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = q - v[j];
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace

std::vector<std::int64_t> squared_distance_transform(const std::vector<std::uint8_t>& inside, int height, int width) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (inside.size() != n) throw DimensionError("distance transform: mask size mismatch");
  const double inf = 1e18;
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = inside[i] ? inf : 0.0;

  const int longest = std::max(height, width);
  std::vector<double> f(longest), d(longest), z(longest + 1);
  std::vector<int> v(longest);

  f.resize(height);
  d.resize(height);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[y] = grid[static_cast<std::size_t>(y) * width + x];
    dt_1d(f, d, v, z, inf);
    for (int y = 0; y < height; ++y) grid[static_cast<std::size_t>(y) * width + x] = d[y];
  }
  f.resize(width);
  d.resize(width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) f[x] = grid[static_cast<std::size_t>(y) * width + x];
    dt_1d(f, d, v, z, inf);
    for (int x = 0; x < width; ++x) grid[static_cast<std::size_t>(y) * width + x] = d[x];
  }

  std::vector<std::int64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = grid[i] >= inf ? std::numeric_limits<std::int64_t>::max() : static_cast<std::int64_t>(std::llround(grid[i]));
  }
  return out;
}

PointAnnotations points_from_mask(const InstanceMask& mask) {
  PointAnnotations pts;
  const int max_id = mask.max_id();
  const std::size_t n = mask.data.size();
  std::vector<std::uint8_t> inside(n);
  for (int id = 1; id <= max_id; ++id) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      inside[i] = mask.data[i] == id;
      any = any || inside[i];
    }
    if (!any) {
      std::cerr << "warning: instance id " << id << " has no pixels; skipped\n";
      continue;
    }
    auto dist = squared_distance_transform(inside, mask.height, mask.width);
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (inside[i] && (best == n || dist[i] > dist[best])) best = i;
    }
    pts.points.push_back({static_cast<int>(best / mask.width), static_cast<int>(best % mask.width), id});
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Synthetic generator

Sample synth_sample(const SynthOptions& options, const std::string& split, int index) {
  const int h = options.height, w = options.width;
  if (h <= 0 || w <= 0) throw ContractError("synthetic image size must be positive");
  std::seed_seq seq{static_cast<std::uint32_t>(options.seed & 0xFFFFFFFFu),
                    static_cast<std::uint32_t>(options.seed >> 32),
                    static_cast<std::uint32_t>(split_index(split)), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const DifficultyParams dp = params_for(options.difficulty);

  // Background: water tint, low-frequency waves, pixel noise.
  const double base[3] = {uniform(15, 45), uniform(65, 105), uniform(80, 120)};
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 3; ++k) {
    const double freq = uniform(0.05, 0.3), theta = uniform(0, std::numbers::pi);
    waves.push_back({freq * std::sin(theta), freq * std::cos(theta), uniform(0, 2 * std::numbers::pi),
                     dp.texture_amplitude / 3.0 * uniform(0.5, 1.5)});
  }
  std::vector<double> shade(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (const auto& wv : waves) s += wv.amp * std::sin(wv.fy * y + wv.fx * x + wv.phase);
      shade[static_cast<std::size_t>(y) * w + x] = s;
    }
  }

  // Objects.
  std::discrete_distribution<int> count_dist(options.count_weights.begin(), options.count_weights.end());
  const int wanted = count_dist(rng);
  InstanceMask mask(h, w);
  std::vector<Ellipse> placed;
  std::vector<double> contrast;
  for (int k = 0; k < wanted; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double a = uniform(6.0, 12.0);
      const double b = std::max(2.5, a / uniform(1.8, 2.8));
      Ellipse e{uniform(4.0, h - 5.0), uniform(4.0, w - 5.0), a, b, uniform(0.0, std::numbers::pi)};
      std::vector<int> pixels;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (e.rho2(y, x) <= 1.0) pixels.push_back(y * w + x);
        }
      }
      if (pixels.size() < 12) continue;
      bool clash = false;
      if (dp.gap >= 0) {
        for (int p : pixels) {
          const int py = p / w, px = p % w;
          for (int dy = -dp.gap; dy <= dp.gap && !clash; ++dy) {
            for (int dx = -dp.gap; dx <= dp.gap && !clash; ++dx) {
              const int y = py + dy, x = px + dx;
              if (y >= 0 && y < h && x >= 0 && x < w && mask.data[static_cast<std::size_t>(y) * w + x] != 0) {
                clash = true;
              }
            }
          }
          if (clash) break;
        }
      }
      if (clash) continue;
      const int id = static_cast<int>(placed.size()) + 1;
      for (int p : pixels) mask.data[p] = id;
      placed.push_back(e);
      contrast.push_back(uniform(dp.contrast_lo, dp.contrast_hi));
      break;
    }
  }

  // Occlusion can erase instances; compact the surviving ids.
  std::vector<int> remap(placed.size() + 1, 0);
  std::vector<std::size_t> area(placed.size() + 1, 0);
  for (auto v : mask.data) ++area[v];
  int next = 0;
  for (std::size_t id = 1; id <= placed.size(); ++id) {
    if (area[id] > 0) remap[id] = ++next;
  }
  for (auto& v : mask.data) v = remap[v];

  RgbImage image(h, w);
  std::normal_distribution<double> noise(0.0, dp.noise_sigma);
  const double tint[3] = {1.0, 0.9, 0.7};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double fish = 0.0;
      const int id = mask.data[i];
      if (id > 0) {
        std::size_t src = 0;
        for (std::size_t k = 1; k < remap.size(); ++k) {
          if (remap[k] == id) src = k - 1;
        }
        const double rho2 = placed[src].rho2(y, x);
        fish = contrast[src] * (0.75 + 0.25 * (1.0 - std::min(1.0, rho2)));
      }
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = to_byte(base[c] + shade[i] + fish * tint[c] + noise(rng));
    }
  }

  Sample sample;
  sample.id = sample_id(index);
  sample.split = split;
  sample.image = std::move(image);
  sample.points = points_from_mask(mask);
  sample.instance_mask = std::move(mask);
  return sample;
}

DatasetManifest synth_generate(const fs::path& root, const SynthOptions& options) {
  if (options.n_train <= 0 || options.n_val <= 0 || options.n_test <= 0) {
    throw ContractError("synth_generate: split sizes must be positive");
  }
  DatasetManifest manifest;
  manifest.root = root;
  manifest.generator_seed = options.seed;
  manifest.difficulty = difficulty_name(options.difficulty);
  manifest.height = options.height;
  manifest.width = options.width;
  const int sizes[3] = {options.n_train, options.n_val, options.n_test};
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    auto& records = manifest.splits[kSplits[s]];
    for (int i = 0; i < sizes[s]; ++i) records.push_back(save_sample(root, synth_sample(options, kSplits[s], i)));
  }
  manifest.save();
  return manifest;
}

// ---------------------------------------------------------------------------
// File IO

RgbImage read_rgb(const fs::path& path) {
  auto png = read_png(path);
  if (png.channels != 3 || png.bit_depth != 8) throw ValidationError(path.string() + ": expected an 8-bit RGB PNG");
  RgbImage image(png.height, png.width);
  std::copy(png.samples.begin(), png.samples.end(), image.data.begin());
  return image;
}

InstanceMask read_instance_mask(const fs::path& path) {
  auto png = read_png(path);
  if (png.channels != 1) throw ValidationError(path.string() + ": expected a single-channel mask PNG");
  InstanceMask mask(png.height, png.width);
  std::copy(png.samples.begin(), png.samples.end(), mask.data.begin());
  return mask;
}

void write_instance_mask(const fs::path& path, const InstanceMask& mask) {
  const int max_id = mask.max_id();
  if (max_id > 65535) throw ContractError("instance mask holds more than 65535 ids");
  std::vector<std::uint16_t> samples(mask.data.begin(), mask.data.end());
  write_png(path, mask.width, mask.height, 1, max_id > 255 ? 16 : 8, samples);
}

void write_binary_mask(const fs::path& path, const BinaryMask& mask) {
  std::vector<std::uint16_t> samples(mask.data.size());
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = mask.data[i] ? 255 : 0;
  write_png(path, mask.width, mask.height, 1, 8, samples);
}

BinaryMask read_binary_mask(const fs::path& path) {
  auto png = read_png(path);
  if (png.channels != 1) throw ValidationError(path.string() + ": expected a single-channel mask PNG");
  BinaryMask mask(png.height, png.width);
  for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = png.samples[i] != 0;
  return mask;
}

PointAnnotations read_points(const fs::path& path) {
  auto j = read_json_file(path);
  if (!j.is_array()) throw ValidationError(path.string() + ": points file must hold a JSON array");
  PointAnnotations pts;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("y") || !item.contains("x") || !item["y"].is_number_integer() ||
        !item["x"].is_number_integer()) {
      throw ValidationError(path.string() + ": every point needs integer \"y\" and \"x\"");
    }
    Point p{item["y"].get<int>(), item["x"].get<int>(), item.value("instance_id", 0)};
    pts.points.push_back(p);
  }
  return pts;
}

void write_points(const fs::path& path, const PointAnnotations& points) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : points.points) j.push_back({{"y", p.row}, {"x", p.col}, {"instance_id", p.instance_id}});
  write_text(path, j.dump(1) + "\n");
}

SampleRecord save_sample(const fs::path& root, const Sample& sample) {
  SampleRecord rec;
  rec.id = sample.id;
  rec.image = sample.split + "/images/" + sample.id + ".png";
  rec.points = sample.split + "/points/" + sample.id + ".json";
  std::vector<std::uint16_t> rgb(sample.image.data.begin(), sample.image.data.end());
  write_png(root / rec.image, sample.image.width, sample.image.height, 3, 8, rgb);
  if (sample.instance_mask) {
    rec.mask = sample.split + "/masks/" + sample.id + ".png";
    write_instance_mask(root / rec.mask, *sample.instance_mask);
  }
  write_points(root / rec.points, sample.points);
  return rec;
}

Sample load_sample(const fs::path& root, const SampleRecord& record, const std::string& split) {
  Sample s;
  s.id = record.id;
  s.split = split;
  s.image = read_rgb(root / record.image);
  const auto points_path = root / record.points;
  s.points = read_points(points_path);
  try {
    s.points.validate(s.image.height, s.image.width);
  } catch (const ContractError& e) {
    throw ValidationError(points_path.string() + ": " + e.what());
  }
  if (!record.mask.empty()) {
    const auto mask_path = root / record.mask;
    auto mask = read_instance_mask(mask_path);
    if (mask.height != s.image.height || mask.width != s.image.width) {
      throw ValidationError(mask_path.string() + ": mask size differs from its image");
    }
    std::map<int, int> per_instance;
    for (const auto& p : s.points.points) {
      const int id = mask.at(p.row, p.col);
      if (p.instance_id != 0 && id != p.instance_id) {
        throw ValidationError(points_path.string() + ": point (" + std::to_string(p.row) + "," +
                              std::to_string(p.col) + ") does not lie on instance " + std::to_string(p.instance_id));
      }
      if (id > 0) ++per_instance[id];
    }
    std::set<int> ids(mask.data.begin(), mask.data.end());
    ids.erase(0);
    for (int id : ids) {
      if (per_instance[id] != 1) {
        throw ValidationError(points_path.string() + ": instance " + std::to_string(id) + " has " +
                              std::to_string(per_instance[id]) + " points, expected exactly one");
      }
    }
    s.instance_mask = std::move(mask);
  }
  return s;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& split) {
  std::vector<Sample> out;
  auto it = manifest.splits.find(split);
  if (it == manifest.splits.end()) return out;
  for (const auto& rec : it->second) out.push_back(load_sample(manifest.root, rec, split));
  return out;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["generator_seed"] = generator_seed;
  j["difficulty"] = difficulty;
  j["height"] = height;
  j["width"] = width;
  j["splits"] = nlohmann::json::object();
  for (const auto& [split, records] : splits) {
    auto& arr = j["splits"][split] = nlohmann::json::array();
    for (const auto& r : records) {
      arr.push_back({{"id", r.id},
                     {"image", r.image},
                     {"mask", r.mask.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.mask)},
                     {"points", r.points}});
    }
  }
  return j;
}

void DatasetManifest::save() const { write_text(root / "manifest.json", to_json().dump(1) + "\n"); }

DatasetManifest DatasetManifest::load(const fs::path& root) {
  const auto path = root / "manifest.json";
  auto j = read_json_file(path);
  DatasetManifest m;
  m.root = root;
  try {
    m.generator_seed = j.value("generator_seed", std::uint64_t{0});
    m.difficulty = j.value("difficulty", std::string{});
    m.height = j.value("height", 0);
    m.width = j.value("width", 0);
    std::set<std::string> used;
    for (const auto& [split, arr] : j.at("splits").items()) {
      auto& records = m.splits[split];
      for (const auto& r : arr) {
        SampleRecord rec;
        rec.id = r.at("id").get<std::string>();
        rec.image = r.at("image").get<std::string>();
        rec.points = r.at("points").get<std::string>();
        if (r.contains("mask") && !r["mask"].is_null()) rec.mask = r["mask"].get<std::string>();
        for (const auto* file : {&rec.image, &rec.points, &rec.mask}) {
          if (file->empty()) continue;
          if (!fs::exists(root / *file)) throw ValidationError(path.string() + ": missing file " + *file);
          if (!used.insert(*file).second) {
            throw ValidationError(path.string() + ": file " + *file + " referenced twice (splits must be disjoint)");
          }
        }
        records.push_back(std::move(rec));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------

void save_overlay(const fs::path& path, const RgbImage& image, const BinaryMask& prediction,
                  const PointAnnotations& points) {
  if (prediction.height != image.height || prediction.width != image.width) {
    throw DimensionError("save_overlay: mask size differs from image");
  }
  std::vector<std::uint16_t> rgb(image.data.begin(), image.data.end());
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (!prediction.at(y, x)) continue;
      const std::size_t i = (static_cast<std::size_t>(y) * image.width + x) * 3;
      rgb[i] = static_cast<std::uint16_t>((rgb[i] + 255) / 2);
      rgb[i + 1] = static_cast<std::uint16_t>(rgb[i + 1] / 2);
      rgb[i + 2] = static_cast<std::uint16_t>(rgb[i + 2] / 2);
    }
  }
  for (const auto& p : points.points) {
    for (int d = -2; d <= 2; ++d) {
      const int cells[2][2] = {{p.row + d, p.col}, {p.row, p.col + d}};
      for (auto [y, x] : cells) {
        if (y < 0 || y >= image.height || x < 0 || x >= image.width) continue;
        const std::size_t i = (static_cast<std::size_t>(y) * image.width + x) * 3;
        rgb[i] = 0;
        rgb[i + 1] = 255;
        rgb[i + 2] = 0;
      }
    }
  }
  write_png(path, image.width, image.height, 3, 8, rgb);
}

}  // namespace alcfcn
