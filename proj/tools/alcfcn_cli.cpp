// Command-line front end.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 missing or invalid
// files, 4 non-finite loss or gradient, 5 internal contract violation.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "alcfcn/config.hpp"
#include "alcfcn/errors.hpp"
#include "alcfcn/pipeline.hpp"

namespace fs = std::filesystem;
using namespace alcfcn;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitContract = 5;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-supervised segmentation with affinity refinement"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  app.add_option("-c,--config", config_path, "Config file (key = value, dotted keys)");
  app.add_option("-o,--override", overrides, "Config override key=value (repeatable, wins over the file)")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_option("--seed", seed, "Run seed (same as --override seed=N)");

  std::string out, checkpoint, split;
  std::vector<std::string> images;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset under data.root");
  auto* weak = app.add_subcommand("train-weak", "Train from point annotations");
  weak->add_option("--out", out, "Run directory (default <output.dir>/weak)");
  auto* full = app.add_subcommand("train-full", "Train the fully-supervised student on pseudo or true masks");
  full->add_option("--out", out, "Run directory (default <output.dir>/full)");
  auto* grid = app.add_subcommand("grid", "Sweep learning rates and walk lengths, select by val mIoU");
  grid->add_option("--out", out, "Grid directory (default <output.dir>/grid)");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <output.dir>/weak/best.ckpt)");
  eval->add_option("--split", split, "Split to evaluate (default eval.split)");
  eval->add_option("--out", out, "Report directory (default <output.dir>/eval/<split>)");
  auto* exp = app.add_subcommand("export-pseudo", "Export argmax pseudo-masks from a weak checkpoint");
  exp->add_option("--checkpoint", checkpoint, "Checkpoint (default <output.dir>/weak/best.ckpt)");
  exp->add_option("--out", out, "Mask directory (default pseudo.dir)");
  auto* pred = app.add_subcommand("predict", "Predict masks and overlays for RGB PNG images");
  pred->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  pred->add_option("images", images, "Input PNG files")->required();
  pred->add_option("--out", out, "Output directory (default <output.dir>/predict)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (!seed.empty()) overrides.push_back("seed=" + seed);
    if (!split.empty()) overrides.push_back("eval.split=" + split);
    const RunConfig cfg = resolve_config(config_path, overrides);
    auto out_or = [&](const fs::path& fallback) { return out.empty() ? fallback : fs::path(out); };
    auto checkpoint_or_default = [&] {
      return checkpoint.empty() ? cfg.output_dir / "weak" / "best.ckpt" : fs::path(checkpoint);
    };

    if (gen->parsed()) {
      const auto manifest = generate_data(cfg);
      std::cout << "wrote " << (manifest.root / "manifest.json").string() << "\n";
    } else if (weak->parsed()) {
      const auto r = train_weak(cfg, out_or(cfg.output_dir / "weak"));
      std::cout << "best epoch " << r.log.best_epoch << " val mIoU " << r.log.best_val_miou << "\n"
                << "checkpoint " << r.checkpoint.string() << "\n";
    } else if (full->parsed()) {
      const auto r = train_full(cfg, out_or(cfg.output_dir / "full"));
      std::cout << "best epoch " << r.log.best_epoch << " val mIoU " << r.log.best_val_miou << "\n"
                << "checkpoint " << r.checkpoint.string() << "\n";
    } else if (grid->parsed()) {
      const auto report = run_grid(cfg, out_or(cfg.output_dir / "grid"));
      std::cout << format_grid_table(report);
    } else if (eval->parsed()) {
      const auto report = evaluate(cfg, checkpoint_or_default(), out_or(cfg.output_dir / "eval" / cfg.eval_split));
      std::cout << format_metrics_table(report);
    } else if (exp->parsed()) {
      export_pseudo(cfg, checkpoint_or_default(), out_or(cfg.resolved_pseudo_dir()));
    } else if (pred->parsed()) {
      std::vector<fs::path> paths(images.begin(), images.end());
      const auto report = predict_images(cfg, checkpoint, paths, out_or(cfg.output_dir / "predict"));
      for (const auto& p : report["predictions"]) {
        std::cout << p["image"].get<std::string>() << ": " << p["count"].get<int>() << " objects\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error at step " << e.step() << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitContract;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitContract;
  }
  return 0;
}
