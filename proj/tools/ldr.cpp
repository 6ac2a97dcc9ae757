#include "ldr/app.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Closed-loop transcription to linear discriminative representations"};
  app.require_subcommand(1);

  ldr::RunOptions opts;
  std::uint64_t seed = 0;
  std::string out;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "override the config seed");
    cmd->add_option("--out", out, "output directory (overrides the config)");
    cmd->add_flag("--strict", opts.strict, "exit 6 when decoder collapse is flagged");
  };

  std::string config_path;
  std::string resume;
  CLI::App* train = app.add_subcommand("train", "train encoder and decoder from a config");
  train->add_option("config", config_path, "experiment config")->required();
  train->add_option("--resume", resume, "continue from a checkpoint");
  add_common(train);

  std::string checkpoint;
  std::string task;
  CLI::App* analyze = app.add_subcommand("analyze", "analyze a trained checkpoint");
  analyze->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  analyze->add_option("config", config_path, "config the checkpoint was trained with")->required();
  analyze->add_option("--task", task, "heatmap|sample|interpolate|classify|components")->required();
  add_common(analyze);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ldr::exit_code::kConfig;
  }

  for (CLI::App* cmd : {train, analyze}) {
    if (cmd->count("--seed") > 0) opts.seed = seed;
    if (cmd->count("--out") > 0) opts.out = out;
  }
  if (!resume.empty()) opts.resume = resume;

  try {
    ldr::configure_threads();
  } catch (const ldr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ldr::exit_code::kConfig;
  }

  if (train->parsed()) return ldr::cmd_train(config_path, opts, std::cout, std::cerr);
  return ldr::cmd_analyze(checkpoint, config_path, task, opts, std::cout, std::cerr);
}
