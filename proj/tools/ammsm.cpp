// ammsm: synth | run | bench | eval, driven by one JSON run-config.

#include <CLI11.hpp>

#include "ammsm/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"AMMSM micro-expression recognition pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string checkpoint;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run-config file")->required();
    cmd->add_option("--set", overrides, "override config values, key=value (dotted paths)");
  };

  add_common(app.add_subcommand("synth", "generate the synthetic dataset"));
  add_common(app.add_subcommand("run", "LOSO train/search/finetune/eval pipeline"));
  add_common(app.add_subcommand("bench", "FLOP and latency bench over sparsity variants"));
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved fold checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "fold directory containing model.ammt and best_config.json")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return ammsm::run_command(app.get_subcommands().front()->get_name(), config_path, overrides, checkpoint);
}
