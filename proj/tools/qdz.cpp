// qdz command-line front end. See README.md for the command set and the
// config key reference.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qdz/config.hpp"
#include "qdz/errors.hpp"
#include "qdz/pipeline.hpp"
#include "qdz/version.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = "run";
  std::int64_t seed = -1;  // -1: take seed from config, default 1
};

void attach_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "flat key = value settings file");
  cmd->add_option("--set", opts.overrides, "override: key=value (repeatable)");
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option("--seed", opts.seed, "run seed (overrides config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qdz: weight quantization + distillation experiment toolkit"};
  app.set_version_flag("--version", qdz::kVersion);
  app.require_subcommand(1);

  const std::vector<std::string> commands = {
      "train-teacher",   "train-student", "quantize-pm", "quantize-distill",
      "quantize-diff",   "noise-study",   "report"};
  const std::vector<std::string> descriptions = {
      "train the full-precision teacher",
      "train a full-precision student (plain or distilled)",
      "post-mortem uniform quantization of a trained model",
      "quantized distillation training (uniform grid, full-precision master)",
      "differentiable quantization of a trained model's points",
      "quantization-noise normality study",
      "aggregate run directories into a summary table"};

  std::vector<CommonOptions> options(commands.size());
  for (std::size_t i = 0; i < commands.size(); ++i) {
    attach_common(app.add_subcommand(commands[i], descriptions[i]), options[i]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!app.get_subcommand(commands[i])->parsed()) continue;
    const CommonOptions& opts = options[i];
    try {
      qdz::KeyValueConfig cfg;
      if (!opts.config_path.empty()) {
        cfg = qdz::KeyValueConfig::parse_file(opts.config_path);
      }
      for (const auto& assignment : opts.overrides) cfg.set(assignment);
      const std::uint64_t seed =
          opts.seed >= 0 ? static_cast<std::uint64_t>(opts.seed)
                         : cfg.get_u64("seed", 1);
      qdz::pipeline::run_command(commands[i], cfg, opts.out, seed);
      return 0;
    } catch (const qdz::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const qdz::DependencyError& e) {
      std::cerr << "dependency error: " << e.what() << "\n";
      return 3;
    } catch (const qdz::DivergenceError& e) {
      std::cerr << "numerical divergence: " << e.what() << "\n";
      return 4;
    } catch (const qdz::DegenerateVarianceError& e) {
      std::cerr << "numerical degeneracy: " << e.what() << "\n";
      return 4;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
