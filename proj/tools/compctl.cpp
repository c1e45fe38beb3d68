// compctl: generate data, train, evaluate, sweep and analyse.

#include "compctl/cli/commands.hpp"

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <iostream>

using namespace compctl::cli;

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees many same-sized activation buffers; keep
  // them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif

  CLI::App app{"compctl"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  CommandOptions opt;
  bool quiet = false;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "JSON config file");
    c->add_option("--set", overrides, "override a config value, e.g. --set train.epochs=5");
    c->add_option("--seed", seed, "shorthand for --set train.master_seed=N");
    c->add_flag("--force", opt.force, "replace output written by a different config");
    c->add_flag("-q,--quiet", quiet, "no progress output");
  };

  auto* gen = app.add_subcommand("gen-data", "write the train / ID / OOD splits");
  add_config(gen);
  auto* train = app.add_subcommand("train", "train one model");
  add_config(train);
  auto* sweep = app.add_subcommand("sweep", "train the (gamma, weight decay, seed) grid");
  add_config(sweep);
  sweep->add_option("--jobs", opt.jobs, "cells trained concurrently")->check(CLI::PositiveNumber);
  auto* phase = app.add_subcommand("phase-diagram", "tabulate and plot a finished sweep");
  add_config(phase);
  auto* cx = app.add_subcommand("complexity-sweep", "epochs-to-threshold vs perturbation count");
  add_config(cx);
  cx->add_option("--jobs", opt.jobs, "cells trained concurrently")->check(CLI::PositiveNumber);

  std::string ckpt, out;
  std::vector<std::string> kinds;
  auto* eval = app.add_subcommand("eval", "ID / OOD accuracy and phase of a checkpoint");
  eval->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  eval->add_option("--out", out, "also write the result to this JSON file");
  eval->add_flag("-q,--quiet", quiet, "no progress output");
  auto* analyze = app.add_subcommand("analyze", "structure and masking analyses of a checkpoint");
  analyze->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
  analyze->add_option("--out", out, "output directory (default <checkpoint>/../analysis)");
  analyze->add_option("kinds", kinds,
                      "condensation, stable-rank, embedding-pca, mask-pair, mask-anchor (default: config)");
  analyze->add_flag("-q,--quiet", quiet, "no progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  if (quiet) opt.log = nullptr;

  try {
    if (seed) overrides.push_back("train.master_seed=" + std::to_string(*seed));
    if (eval->parsed()) return cmd_eval(ckpt, out, opt);
    if (analyze->parsed()) return cmd_analyze(ckpt, kinds, out, opt);
    const ExperimentConfig cfg = load_config(config_path, overrides);
    if (gen->parsed()) return cmd_gen_data(cfg, opt);
    if (train->parsed()) return cmd_train(cfg, opt);
    if (sweep->parsed()) return cmd_sweep(cfg, opt);
    if (phase->parsed()) return cmd_phase_diagram(cfg, opt);
    if (cx->parsed()) return cmd_complexity_sweep(cfg, opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const MissingInput& e) {
    std::cerr << "missing input: " << e.what() << '\n';
    return kMissingInput;
  } catch (const Refused& e) {
    std::cerr << "refused: " << e.what() << '\n';
    return kRefused;
  } catch (const compctl::training::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
