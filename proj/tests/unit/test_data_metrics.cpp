#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "../oracles.hpp"
#include "alcfcn/checkpoint.hpp"
#include "alcfcn/config.hpp"
#include "alcfcn/data.hpp"
#include "alcfcn/metrics.hpp"

using namespace alcfcn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("alcfcn_unit_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

InstanceMask random_instances(std::mt19937_64& rng, int h, int w, int k) {
  InstanceMask m(h, w);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int id = 1; id <= k; ++id) {
    const double cy = U(rng) * h, cx = U(rng) * w, a = 1.5 + 4 * U(rng), b = 1.5 + 4 * U(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) / (a * a) + (x - cx) * (x - cx) / (b * b) <= 1.0)
          m.data[static_cast<std::size_t>(y) * w + x] = id;
  }
  return m;
}

}  // namespace

TEST_SUITE("distance transform and points") {
  TEST_CASE("two-pass transform equals the brute-force distance exactly") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 100; ++rep) {
      const int h = 4 + rep % 13, w = 3 + rep % 17;
      auto m = rep % 3 ? oracle::random_blobs(rng, h, w, 3, 1.0, 5.0) : oracle::random_mask(rng, h, w, 0.7);
      if (m.count() == m.data.size()) m.data[0] = 0;
      auto got = squared_distance_transform(m.data, h, w);
      auto ref = oracle::brute_edt(m.data, h, w);
      CHECK(got == ref);
    }
  }

  TEST_CASE("a mask with no outside pixel reports an unattainable distance") {
    std::vector<std::uint8_t> all(12, 1);
    auto d = squared_distance_transform(all, 3, 4);
    for (auto v : d) CHECK(v > 3 * 3 + 4 * 4);
  }

  TEST_CASE("points sit on the deepest pixel of their own instance") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 100; ++rep) {
      const int h = 24, w = 32;
      auto mask = random_instances(rng, h, w, 1 + rep % 5);
      auto pts = points_from_mask(mask);
      for (const auto& p : pts.points) {
        REQUIRE(p.instance_id > 0);
        CHECK(mask.at(p.row, p.col) == p.instance_id);
        // Brute-force: depth relative to the instance complement.
        std::vector<std::uint8_t> inside(mask.data.size());
        for (std::size_t i = 0; i < inside.size(); ++i) inside[i] = mask.data[i] == p.instance_id;
        auto depth = oracle::brute_edt(inside, h, w);
        std::int64_t best = -1;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < depth.size(); ++i)
          if (inside[i] && depth[i] > best) {
            best = depth[i];
            arg = i;
          }
        CHECK(static_cast<std::size_t>(p.row * w + p.col) == arg);
      }
      std::set<int> ids;
      for (auto v : mask.data)
        if (v) ids.insert(v);
      CHECK(pts.size() == ids.size());
    }
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("confusion tallies and IoU match brute force on random scenes") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 50; ++rep) {
      auto pred = oracle::random_mask(rng, 9, 11, 0.4), truth = oracle::random_mask(rng, 9, 11, 0.3);
      ConfusionCounts c;
      c.accumulate(pred, truth);
      std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 11; ++x) {
          const bool p = pred.at(y, x), t = truth.at(y, x);
          tp += p && t;
          fp += p && !t;
          fn += !p && t;
          tn += !p && !t;
        }
      CHECK(c.tp == tp);
      CHECK(c.fp == fp);
      CHECK(c.fn == fn);
      CHECK(c.tn == tn);
      CHECK(foreground_iou(c) == doctest::Approx(static_cast<double>(tp) / (tp + fp + fn)));
      CHECK(background_iou(c) == doctest::Approx(static_cast<double>(tn) / (tn + fp + fn)));
      CHECK(miou(c) == doctest::Approx(0.5 * (foreground_iou(c) + background_iou(c))));
    }
    CHECK(iou(0, 0, 0) == 1.0);
    ConfusionCounts c;
    CHECK_THROWS_AS(c.accumulate(BinaryMask(2, 2), BinaryMask(2, 3)), DimensionError);
  }

  TEST_CASE("GAME agrees with a per-cell brute force and GAME(0) equals MAE") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> R(0, 63), C(0, 95), K(0, 6);
    for (int rep = 0; rep < 50; ++rep) {
      const int n = 1 + rep % 5;
      std::vector<std::vector<Point>> pred(n), truth(n);
      std::vector<double> pc, tc;
      for (int i = 0; i < n; ++i) {
        for (int k = K(rng); k > 0; --k) pred[i].push_back({R(rng), C(rng), 0});
        for (int k = K(rng); k > 0; --k) truth[i].push_back({R(rng), C(rng), 0});
        pc.push_back(static_cast<double>(pred[i].size()));
        tc.push_back(static_cast<double>(truth[i].size()));
      }
      CHECK(game(pred, truth, 64, 96, 0) == mae(pc, tc));
      double prev = -1.0;
      for (int level = 0; level <= 4; ++level) {
        const int cells = 1 << level, ch = 64 >> level, cw = 96 >> level;
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
          for (int a = 0; a < cells; ++a)
            for (int b = 0; b < cells; ++b) {
              int d = 0;
              for (const auto& p : pred[i]) d += p.row / ch == a && p.col / cw == b;
              for (const auto& p : truth[i]) d -= p.row / ch == a && p.col / cw == b;
              total += std::abs(d);
            }
        }
        const double g = game(pred, truth, 64, 96, level);
        CHECK(g == doctest::Approx(total / n));
        CHECK(g >= prev);
        prev = g;
      }
    }
  }

  TEST_CASE("GAME cells absorb the remainder on uneven grids") {
    CHECK(game_cell(6, 6, 7, 7, 1) == 3);
    CHECK(game_cell(2, 2, 7, 7, 1) == 0);
    CHECK(game_cell(0, 0, 3, 3, 3) == 0);
    CHECK(game_cell(2, 2, 3, 3, 3) == 2 * 8 + 2);
  }

  TEST_CASE("always-median predicts the lower median of training counts") {
    CHECK(AlwaysMedian({3, 1, 2}).predict() == 2);
    CHECK(AlwaysMedian({4, 1, 2, 3}).predict() == 2);
    CHECK(AlwaysMedian({}).predict() == 0);
    CHECK(AlwaysMedian({0, 0, 5}).predict() == 0);
  }

  TEST_CASE("MAE closed form") {
    CHECK(mae({1, 2, 3}, {1, 0, 4}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(mae({1}, {1, 2}), DimensionError);
  }
}

TEST_SUITE("data") {
  TEST_CASE("generator is deterministic per sample and consistent") {
    SynthOptions opt;
    opt.seed = 42;
    auto a = synth_sample(opt, "train", 7), b = synth_sample(opt, "train", 7), c = synth_sample(opt, "val", 7);
    CHECK(a.image.data == b.image.data);
    CHECK(a.instance_mask->data == b.instance_mask->data);
    CHECK(a.image.data != c.image.data);
    CHECK(a.image.height == 64);
    CHECK(a.image.width == 96);
    for (int i = 0; i < 20; ++i) {
      auto s = synth_sample(opt, "test", i);
      CHECK(s.count() == s.instance_mask->max_id());
      for (const auto& p : s.points.points) CHECK(s.instance_mask->at(p.row, p.col) == p.instance_id);
    }
  }

  TEST_CASE("difficulty names round trip") {
    for (auto d : {Difficulty::kTrivial, Difficulty::kStandard, Difficulty::kHard})
      CHECK(parse_difficulty(difficulty_name(d)) == d);
    CHECK_THROWS_AS(parse_difficulty("extreme"), ConfigError);
  }

  TEST_CASE("normalisation standardises and pads by edge replication") {
    RgbImage img(2, 3);
    img.at(0, 0, 0) = 255;
    img.at(1, 2, 1) = 128;
    auto t = normalize_image<double>(img);
    CHECK(t.shape() == Shape{3, 4, 4});
    CHECK(t[0] == doctest::Approx((1.0 - 0.485) / 0.229));
    CHECK(t[1] == doctest::Approx((0.0 - 0.485) / 0.229));
    // Row 3 and column 3 replicate row 1 and column 2.
    CHECK(t[16 + 3 * 4 + 3] == doctest::Approx((128 / 255.0 - 0.456) / 0.224));
  }

  TEST_CASE("dataset round trip through disk") {
    TempDir dir("roundtrip");
    SynthOptions opt;
    opt.n_train = 3;
    opt.n_val = 2;
    opt.n_test = 2;
    opt.seed = 9;
    opt.height = 32;
    opt.width = 40;
    auto manifest = synth_generate(dir.path, opt);
    auto loaded = DatasetManifest::load(dir.path);
    CHECK(loaded.split_size("train") == 3);
    CHECK(loaded.generator_seed == 9);
    auto train = load_split(loaded, "train");
    for (int i = 0; i < 3; ++i) {
      auto s = synth_sample(opt, "train", i);
      CHECK(train[i].image.data == s.image.data);
      CHECK(train[i].instance_mask->data == s.instance_mask->data);
      CHECK(train[i].points.points == s.points.points);
    }
    // Generation is byte-identical.
    TempDir again("roundtrip2");
    synth_generate(again.path, opt);
    for (const auto& rec : manifest.splits.at("val")) {
      std::ifstream a(dir.path / rec.image, std::ios::binary), b(again.path / rec.image, std::ios::binary);
      std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
      CHECK(sa == sb);
    }
  }

  TEST_CASE("corrupt or inconsistent files raise validation errors naming the file") {
    TempDir dir("corrupt");
    SynthOptions opt;
    opt.n_train = opt.n_val = opt.n_test = 1;
    opt.height = 16;
    opt.width = 16;
    opt.count_weights = {0.0, 1.0};
    auto manifest = synth_generate(dir.path, opt);
    const auto rec = manifest.splits.at("train").front();

    {
      std::ofstream(dir.path / rec.image, std::ios::binary | std::ios::trunc) << "not a png";
    }
    try {
      load_sample(dir.path, rec, "train");
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find(rec.image) != std::string::npos);
    }

    synth_generate(dir.path, opt);
    {
      std::ofstream(dir.path / rec.points, std::ios::trunc) << R"([{"y": 0.5, "x": 2}])";
    }
    CHECK_THROWS_AS(load_sample(dir.path, rec, "train"), ValidationError);

    synth_generate(dir.path, opt);
    {
      std::ofstream(dir.path / rec.points, std::ios::trunc) << "[]";
    }
    CHECK_THROWS_AS(load_sample(dir.path, rec, "train"), ValidationError);

    fs::remove(dir.path / rec.mask);
    CHECK_THROWS_AS(DatasetManifest::load(dir.path), ValidationError);
  }

  TEST_CASE("binary and instance masks survive PNG encoding") {
    TempDir dir("png");
    std::mt19937_64 rng(3);
    auto inst = random_instances(rng, 10, 12, 4);
    write_instance_mask(dir.path / "inst.png", inst);
    CHECK(read_instance_mask(dir.path / "inst.png").data == inst.data);
    InstanceMask big(2, 2);
    big.data = {0, 300, 1, 65535};
    write_instance_mask(dir.path / "big.png", big);
    CHECK(read_instance_mask(dir.path / "big.png").data == big.data);
    auto bin = oracle::random_mask(rng, 7, 9, 0.5);
    write_binary_mask(dir.path / "bin.png", bin);
    CHECK(read_binary_mask(dir.path / "bin.png").data == bin.data);
    CHECK_THROWS_AS(read_rgb(dir.path / "bin.png"), ValidationError);
    CHECK_THROWS_AS(read_rgb(dir.path / "missing.png"), IoError);
  }
}

TEST_SUITE("config") {
  TEST_CASE("sections, comments and dotted keys") {
    auto entries = parse_config_text("seed = 3  # run seed\n[train]\nlr = 1e-5\n\n[affinity]\nt=4\n");
    REQUIRE(entries.size() == 3);
    CHECK(entries[0] == std::pair<std::string, std::string>{"seed", "3"});
    CHECK(entries[1] == std::pair<std::string, std::string>{"train.lr", "1e-5"});
    CHECK(entries[2] == std::pair<std::string, std::string>{"affinity.t", "4"});
    CHECK_THROWS_AS(parse_config_text("[train\nlr=1"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("just words"), ConfigError);
  }

  TEST_CASE("overrides win over the file and the environment sets the output root") {
    TempDir dir("config");
    const auto path = dir.path / "run.cfg";
    std::ofstream(path) << "seed = 5\n[train]\nlr = 0.001\nepochs = 7\n[output]\ndir = from_file\n";
    ::unsetenv("ALCFCN_OUTPUT_ROOT");
    auto cfg = resolve_config(path, {"train.lr=0.002"});
    CHECK(cfg.seed == 5);
    CHECK(cfg.train.lr == 0.002);
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.output_dir == fs::path("from_file"));
    ::setenv("ALCFCN_OUTPUT_ROOT", "from_env", 1);
    CHECK(resolve_config(path, {}).output_dir == fs::path("from_env"));
    CHECK(resolve_config(path, {"output.dir=cli"}).output_dir == fs::path("cli"));
    ::unsetenv("ALCFCN_OUTPUT_ROOT");
  }

  TEST_CASE("presets apply before explicit keys regardless of order") {
    auto cfg = resolve_config({}, {"model.affinity_channels=50", "model.preset=paper"});
    CHECK(cfg.model.affinity_channels == 50);
    CHECK(cfg.model.affinity_level_channels == std::array<int, 3>{64, 128, 256});
    CHECK(cfg.train.epochs == 1000);
  }

  TEST_CASE("bad keys and values are configuration errors") {
    CHECK_THROWS_AS(resolve_config({}, {"train.bogus=1"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"train.lr=-1"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"affinity.t=x"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"loss.plug=unknown"}), ConfigError);
    CHECK_THROWS_AS(resolve_config({}, {"noequals"}), ConfigError);
    CHECK_THROWS_AS(resolve_config("/nonexistent/run.cfg", {}), ConfigError);
  }

  TEST_CASE("walk steps and grid values parse") {
    auto cfg = resolve_config({}, {"affinity.t=0", "grid.t=0,8", "grid.lrs=1e-4,1e-5"});
    CHECK(cfg.model.walk_steps == 0);
    CHECK(cfg.grid_walk_steps == std::vector<int>{0, 8});
    CHECK(cfg.grid_lrs == std::vector<double>{1e-4, 1e-5});
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("parameters and metadata round trip; digest tracks content") {
    TempDir dir("ckpt");
    ParamStore<float> ps;
    ps.add("a.weight", Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, -6.5f}));
    ps.add("b", Tensor<float>::from_data({1}, {0.25f}));
    const nlohmann::json meta = {{"kind", "alcfcn"}, {"epoch", 3}};
    save_checkpoint(dir.path / "x.ckpt", ps, meta);
    auto ck = load_checkpoint(dir.path / "x.ckpt");
    CHECK(ck.metadata == meta);
    REQUIRE(ck.params.size() == 2);
    CHECK(ck.params.get("a.weight").shape() == Shape{2, 3});
    CHECK(ck.params.get("a.weight")[5] == -6.5f);
    CHECK(ck.params.get("b")[0] == 0.25f);

    save_checkpoint(dir.path / "y.ckpt", ps, meta);
    CHECK(file_digest(dir.path / "x.ckpt") == file_digest(dir.path / "y.ckpt"));
    CHECK(file_digest(dir.path / "x.ckpt").size() == 16);
    ps.get("b").mutable_data()[0] = 0.5f;
    save_checkpoint(dir.path / "y.ckpt", ps, meta);
    CHECK(file_digest(dir.path / "x.ckpt") != file_digest(dir.path / "y.ckpt"));
  }

  TEST_CASE("truncated and missing checkpoints are IO errors") {
    TempDir dir("ckpt_bad");
    CHECK_THROWS_AS(load_checkpoint(dir.path / "none.ckpt"), IoError);
    std::ofstream(dir.path / "short.ckpt", std::ios::binary) << "abc";
    CHECK_THROWS_AS(load_checkpoint(dir.path / "short.ckpt"), IoError);
  }
}
