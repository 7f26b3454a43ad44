#pragma once

#include <string>

#include "dyne/config.hpp"

namespace dyne::cli {

struct StageOptions {
  std::string out_dir = ".";
  bool force = false;
};

// Pipeline stages behind the CLI subcommands. Each validates its config,
// writes a resolved-config snapshot next to its outputs, and refuses to
// overwrite existing outputs unless `force` is set.
void run_collect(const RunConfig& cfg, const StageOptions& opt);
void run_train_repr(const RunConfig& cfg, const StageOptions& opt);
void run_train_decoder(const RunConfig& cfg, const StageOptions& opt);
void run_train_rl(const RunConfig& cfg, const StageOptions& opt);
void run_analyze(const RunConfig& cfg, const std::string& sub, const StageOptions& opt);
void run_sweep_k(const RunConfig& cfg, const StageOptions& opt);

}  // namespace dyne::cli
