#include <CLI11.hpp>

#include <iostream>

#include "dyne/config.hpp"
#include "dyne/stages.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out = ".";
  long seed = -1;
  std::vector<std::string> overrides;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--seed", args.seed, "root seed (overrides config)");
  cmd->add_option("--override", args.overrides, "config override, section.key=value");
  cmd->add_flag("--force", args.force, "overwrite existing outputs");
}

dyne::RunConfig build_config(const CommonArgs& args) {
  dyne::RunConfig cfg;
  if (!args.config_path.empty()) cfg = dyne::RunConfig::parse_file(args.config_path);
  for (const std::string& o : args.overrides) cfg.apply_override(o);
  if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DynE: dynamics-aware embeddings for continuous control"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string analyze_sub;

  CLI::App* collect = app.add_subcommand("collect", "gather transitions with the random behavior policy");
  CLI::App* train_repr = app.add_subcommand("train-repr", "train the DynE encoders and predictor");
  CLI::App* train_decoder = app.add_subcommand("train-decoder", "train the minimum-norm action decoder");
  CLI::App* train_rl = app.add_subcommand("train-rl", "train DynE-TD3 (or reference TD3)");
  CLI::App* analyze = app.add_subcommand("analyze", "export analysis tables");
  analyze->add_option("sub", analyze_sub,
                      "one of: exploration, outcome-embedding, embedding-values, trajectories")
      ->required();
  CLI::App* sweep = app.add_subcommand("sweep-k", "full pipeline over a range of k values");
  for (CLI::App* cmd : {collect, train_repr, train_decoder, train_rl, analyze, sweep}) add_common(cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    dyne::RunConfig cfg = build_config(args);
    dyne::cli::StageOptions opt;
    opt.out_dir = args.out;
    opt.force = args.force;
    if (collect->parsed())
      dyne::cli::run_collect(cfg, opt);
    else if (train_repr->parsed())
      dyne::cli::run_train_repr(cfg, opt);
    else if (train_decoder->parsed())
      dyne::cli::run_train_decoder(cfg, opt);
    else if (train_rl->parsed())
      dyne::cli::run_train_rl(cfg, opt);
    else if (analyze->parsed())
      dyne::cli::run_analyze(cfg, analyze_sub, opt);
    else if (sweep->parsed())
      dyne::cli::run_sweep_k(cfg, opt);
    return 0;
  } catch (const dyne::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const dyne::DependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
