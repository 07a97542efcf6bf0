#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "focusft/cli.hpp"

namespace fs = std::filesystem;

namespace {

// Presets are shipped as files; look next to the working directory first,
// then wherever FOCUSFT_PRESET_DIR points.
std::string preset_path(const std::string& name) {
  std::vector<fs::path> roots = {fs::path("configs")};
  if (const char* env = std::getenv("FOCUSFT_PRESET_DIR")) roots.insert(roots.begin(), env);
  for (const fs::path& root : roots) {
    fs::path candidate = root / (name + ".cfg");
    if (fs::exists(candidate)) return candidate.string();
  }
  focusft::fail("preset '" + name + "' not found (looked under ./configs; set " +
                "FOCUSFT_PRESET_DIR to override)");
}

struct CommonOpts {
  std::string config_path;
  std::string preset;
  std::string out;
  std::optional<uint64_t> seed;
  std::string mode;
};

focusft::RunConfig resolve_config(const CommonOpts& opts) {
  focusft::check(!opts.config_path.empty() || !opts.preset.empty(),
                 "one of --config or --preset is required");
  std::string path = opts.config_path.empty() ? preset_path(opts.preset)
                                              : opts.config_path;
  focusft::RunConfig cfg = focusft::load_run_config(path);
  if (opts.seed) {
    cfg.trainer.seed = *opts.seed;
    cfg.model.seed = *opts.seed;
  }
  if (!opts.mode.empty()) cfg.trainer.mode = focusft::mode_from_name(opts.mode);
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, CommonOpts& opts, bool with_mode = true) {
  app->add_option("--config", opts.config_path, "path to a key=value config file");
  app->add_option("--preset", opts.preset, "named preset (paper, toy)")
      ->check(CLI::IsMember({"paper", "toy"}));
  app->add_option("--out", opts.out, "output directory override");
  app->add_option("--seed", opts.seed, "seed override");
  if (with_mode)
    app->add_option("--mode", opts.mode, "training mode override")
        ->check(CLI::IsMember(
            {"standard_sft", "sft_bidir", "causal_bilevel", "focusft"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FocuSFT laboratory: bilevel fine-tuning on synthetic long-context tasks"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model per the config");
  add_common(train_cmd, train_opts);

  CommonOpts vc_opts;
  CLI::App* vc_cmd =
      app.add_subcommand("validate-config", "parse and validate a config, then exit");
  add_common(vc_cmd, vc_opts);

  std::string checkpoint, samples, eval_out = "eval_out";
  int depth_bins = 4;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "greedy-decode accuracy over a sample file");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--samples", samples, "JSONL sample file")->required();
  eval_cmd->add_option("--out", eval_out, "report directory");
  eval_cmd->add_option("--depth-bins", depth_bins, "needle-depth bins");

  std::string an_checkpoint, an_samples, an_out = "analysis_out";
  CLI::App* an_cmd =
      app.add_subcommand("analyze", "attention diagnostics under both masks");
  an_cmd->add_option("--checkpoint", an_checkpoint, "checkpoint directory")->required();
  an_cmd->add_option("--samples", an_samples, "JSONL sample file")->required();
  an_cmd->add_option("--out", an_out, "figure directory");

  CommonOpts sweep_opts;
  std::string axis;
  std::vector<double> values;
  std::string sweep_out = "sweep_out";
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train once per axis value");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--axis", axis, "swept axis")
      ->required()
      ->check(CLI::IsMember({"layer_fraction", "K", "eta_in"}));
  sweep_cmd->add_option("--values", values, "axis values")->required();
  sweep_cmd->add_option("--sweep-out", sweep_out, "sweep output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) {
      std::string dir = focusft::cmd_train(resolve_config(train_opts));
      std::cout << "run directory: " << dir << "\n";
    } else if (*vc_cmd) {
      resolve_config(vc_opts);
      std::cout << "config ok\n";
    } else if (*eval_cmd) {
      double acc = focusft::cmd_eval(checkpoint, samples, eval_out, depth_bins);
      std::cout << "accuracy: " << acc << "\n";
    } else if (*an_cmd) {
      focusft::cmd_analyze(an_checkpoint, an_samples, an_out);
      std::cout << "analysis written to " << an_out << "\n";
    } else if (*sweep_cmd) {
      auto rows = focusft::cmd_sweep(resolve_config(sweep_opts), axis, values, sweep_out);
      for (const auto& r : rows)
        std::cout << axis << "=" << r.value << " accuracy=" << r.accuracy << "\n";
      std::cout << "sweep written to " << sweep_out << "\n";
    }
  } catch (const focusft::NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
