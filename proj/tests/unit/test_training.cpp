#include <doctest.h>

#include <filesystem>
#include <random>

#include "alcfcn/lcfcn_loss.hpp"
#include "alcfcn/metrics.hpp"
#include "alcfcn/param_store.hpp"
#include "alcfcn/pipeline.hpp"
#include "alcfcn/supervised_loss.hpp"
#include "oracles.hpp"

using namespace alcfcn;
namespace fs = std::filesystem;

namespace {

SynthOptions trivial_options() {
  SynthOptions o;
  o.difficulty = Difficulty::kTrivial;
  o.seed = 11;
  return o;
}

// First trivial training sample whose object count satisfies `want`.
template <typename Pred>
Sample find_sample(Pred want, const std::string& split = "train") {
  for (int i = 0;; ++i) {
    auto s = synth_sample(trivial_options(), split, i);
    if (want(s.count())) return s;
  }
}

// Adam steps on one image until the loss drops below `target`; returns the
// number of steps used, or -1.
template <typename Model, typename LossFn>
int overfit(Model& model, const Tensor<float>& input, int h, int w, LossFn loss_fn, double lr, double target,
            int max_steps) {
  Adam<float> opt(model.params(), AdamOptions{lr});
  for (int step = 1; step <= max_steps; ++step) {
    model.params().zero_grad();
    auto loss = loss_fn(model.forward(input, h, w).probs);
    if (loss.item() < target) return step;
    loss.backward();
    opt.step(model.params());
  }
  return -1;
}

fs::path scratch(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("alcfcn_train_" + tag + "_" + std::to_string(std::random_device{}()));
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("weak model overfits one trivial image within 300 steps") {
    auto s = find_sample([](int c) { return c >= 2; });
    auto model = AlcfcnModel<float>::initialize(model_preset("toy"), 1);
    const auto input = normalize_image<float>(s.image);
    const int steps = overfit(
        model, input, s.image.height, s.image.width,
        [&](const Tensor<float>& probs) { return lcfcn_loss(probs, s.points); }, 1e-3, 0.05, 300);
    CAPTURE(steps);
    CHECK(steps > 0);
  }

  TEST_CASE("trained weak model predicts an empty mask on a background-only image") {
    auto obj = find_sample([](int c) { return c >= 1; });
    auto bg = find_sample([](int c) { return c == 0; });
    auto unseen = find_sample([](int c) { return c == 0; }, "test");
    auto model = AlcfcnModel<float>::initialize(model_preset("toy"), 2);
    Adam<float> opt(model.params(), AdamOptions{1e-3});
    const Sample* pair[2] = {&obj, &bg};
    const Tensor<float> inputs[2] = {normalize_image<float>(obj.image), normalize_image<float>(bg.image)};
    for (int step = 0; step < 200; ++step) {
      const int k = step % 2;
      model.params().zero_grad();
      auto loss = lcfcn_loss(model.forward(inputs[k], pair[k]->image.height, pair[k]->image.width).probs, pair[k]->points);
      loss.backward();
      opt.step(model.params());
    }
    const auto pred = Predictor::from_model(model);
    CHECK(pred.predict(unseen.image).count() == 0);
    CHECK(pred.predict(obj.image).count() > 0);
  }

  TEST_CASE("student overfits one mask within 300 steps") {
    auto s = find_sample([](int c) { return c >= 1; });
    auto model = FsModel<float>::initialize(model_preset("toy").backbone, 3);
    const auto mask = s.instance_mask->foreground();
    const int steps = overfit(
        model, normalize_image<float>(s.image), s.image.height, s.image.width,
        [&](const Tensor<float>& probs) { return fs_loss(probs, mask); }, 1e-3, 0.05, 300);
    CAPTURE(steps);
    CHECK(steps > 0);
  }

  TEST_CASE("true masks train a better student than random masks") {
    std::vector<Sample> samples;
    for (int i = 0; samples.size() < 3; ++i) {
      auto s = synth_sample(trivial_options(), "train", i);
      if (s.count() > 0) samples.push_back(std::move(s));
    }
    std::mt19937_64 rng(5);
    auto train_and_score = [&](bool random_targets) {
      auto model = FsModel<float>::initialize(model_preset("toy").backbone, 4);
      Adam<float> opt(model.params(), AdamOptions{1e-3});
      std::vector<BinaryMask> targets;
      std::vector<Tensor<float>> inputs;
      for (const auto& s : samples) {
        inputs.push_back(normalize_image<float>(s.image));
        targets.push_back(random_targets ? oracle::random_mask(rng, s.image.height, s.image.width, 0.5)
                                         : s.instance_mask->foreground());
      }
      for (int step = 0; step < 90; ++step) {
        const auto k = static_cast<std::size_t>(step) % samples.size();
        model.params().zero_grad();
        fs_loss(model.forward(inputs[k], samples[k].image.height, samples[k].image.width).probs, targets[k]).backward();
        opt.step(model.params());
      }
      ConfusionCounts c;
      const auto pred = Predictor::from_model(model);
      for (const auto& s : samples) c.accumulate(pred.predict(s.image), s.instance_mask->foreground());
      return foreground_iou(c);
    };
    const double with_truth = train_and_score(false), with_noise = train_and_score(true);
    CAPTURE(with_truth);
    CAPTURE(with_noise);
    CHECK(with_truth >= with_noise);
  }

  TEST_CASE("pseudo-masks equal the argmax of the upsampled refined activations") {
    ModelConfig cfg;
    cfg.backbone.level_channels = {2, 3, 4};
    cfg.affinity_level_channels = {2, 2, 2};
    cfg.affinity_channels = 3;
    cfg.neighborhood = {1, true};
    cfg.walk_steps = 2;
    cfg.affinity_init_gain = 1.0;
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> U(0, 255);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto pred = Predictor::from_model(AlcfcnModel<float>::initialize(cfg, seed));
      RgbImage img(8, 8);
      for (auto& v : img.data) v = static_cast<std::uint8_t>(U(rng));
      const auto out = pred.forward(img);
      const int h = out.f_ref.dim(1), w = out.f_ref.dim(2);
      std::vector<double> bg(out.f_ref.data().begin(), out.f_ref.data().begin() + h * w);
      std::vector<double> fg(out.f_ref.data().begin() + h * w, out.f_ref.data().end());
      const auto mask = pred.predict(img);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const double b = oracle::bilinear_sample(bg, h, w, 8, 8, y, x);
          const double f = oracle::bilinear_sample(fg, h, w, 8, 8, y, x);
          if (std::abs(f - b) < 1e-5) continue;  // float rounding may decide near-ties
          CHECK(mask.at(y, x) == (f > b ? 1 : 0));
        }
    }
  }

  TEST_CASE("evaluation report matches an offline recomputation") {
    const auto root = scratch("eval");
    RunConfig cfg = resolve_config({}, {"data.n_train=4", "data.n_val=2", "data.n_test=6", "data.height=32",
                                        "data.width=48", "data.difficulty=trivial", "data.seed=9", "train.epochs=2",
                                        "affinity.t=2", "eval.overlays=0", "eval.threads=1"});
    cfg.data_root = root / "data";
    cfg.output_dir = root / "runs";
    const auto manifest = generate_data(cfg);
    const auto weak = train_weak(cfg, root / "weak");
    const auto report = evaluate(cfg, weak.checkpoint, root / "eval");

    const auto pred = Predictor::load(weak.checkpoint);
    const auto test = load_split(manifest, "test");
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double abs_err = 0.0;
    for (const auto& s : test) {
      const auto m = pred.predict(s.image);
      const auto t = s.instance_mask->foreground();
      for (std::size_t i = 0; i < m.data.size(); ++i) {
        tp += m.data[i] && t.data[i];
        fp += m.data[i] && !t.data[i];
        fn += !m.data[i] && t.data[i];
        tn += !m.data[i] && !t.data[i];
      }
      int blobs = 0;
      oracle::flood_fill_labels(m, blobs);
      abs_err += std::abs(blobs - s.count());
    }
    const auto ratio = [](std::uint64_t a, std::uint64_t b) { return b == 0 ? 1.0 : static_cast<double>(a) / b; };
    const double fg = ratio(tp, tp + fp + fn), bg = ratio(tn, tn + fn + fp);
    const auto& seg = report.at("model").at("segmentation");
    CHECK(seg.at("fg_iou").get<double>() == doctest::Approx(fg).epsilon(1e-12));
    CHECK(seg.at("bg_iou").get<double>() == doctest::Approx(bg).epsilon(1e-12));
    CHECK(seg.at("miou").get<double>() == doctest::Approx((fg + bg) / 2).epsilon(1e-12));
    CHECK(report.at("model").at("counting").at("mae").get<double>() ==
          doctest::Approx(abs_err / static_cast<double>(test.size())).epsilon(1e-12));
    fs::remove_all(root);
  }

  TEST_CASE("grid selects the row with the highest validation mIoU") {
    const auto root = scratch("grid");
    RunConfig cfg = resolve_config({}, {"data.n_train=4", "data.n_val=2", "data.n_test=2", "data.height=32",
                                        "data.width=48", "data.difficulty=trivial", "data.seed=4", "train.epochs=1",
                                        "grid.lrs=1e-3,1e-4", "grid.t=0,2", "eval.overlays=0", "eval.threads=1"});
    cfg.data_root = root / "data";
    cfg.output_dir = root / "runs";
    generate_data(cfg);
    const auto report = run_grid(cfg, root / "grid");
    const auto& rows = report.at("rows");
    REQUIRE(rows.size() == 4);
    double best = -1.0;
    for (const auto& r : rows) best = std::max(best, r.at("val_miou").get<double>());
    const auto selected = report.at("selected").get<std::size_t>();
    CHECK(rows[selected].at("val_miou").get<double>() == best);
    CHECK(report.at("selected_run") == rows[selected].at("run"));
    CHECK(fs::exists(root / "grid" / "best.ckpt"));
    CHECK(report.at("by_t").size() == 2);
    fs::remove_all(root);
  }
}
