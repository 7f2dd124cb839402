#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nacl/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"continual presentation-attack detection simulator"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "execute the configured (method x seed) sweep");
  std::string config_path, out_path, order, snapshots;
  std::vector<std::string> methods;
  int seeds = -1;
  int jobs = 1;
  run_cmd->add_option("--config", config_path, "experiment config file")->required();
  run_cmd->add_option("--method", methods, "method override, repeatable (nacl|st|jt|fr|rs|ng|frr|dl)");
  run_cmd->add_option("--order", order, "task ordering override (index|ed|de)");
  run_cmd->add_option("--seeds", seeds, "number of seeded runs");
  run_cmd->add_option("--jobs", jobs, "concurrent runs");
  run_cmd->add_option("--out", out_path, "results file")->required();
  run_cmd->add_option("--snapshots", snapshots, "directory for per-step model/mixture/buffer dumps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  nacl::cli::RunManifest manifest;
  try {
    manifest = nacl::cli::parse_config(config_path);
    if (!methods.empty()) {
      manifest.methods.clear();
      for (const auto& name : methods) manifest.methods.push_back(nacl::parse_method(name));
    }
    if (!order.empty()) manifest.base.ordering = nacl::parse_ordering(order);
    if (seeds >= 0) {
      if (seeds < 1) throw nacl::cli::ConfigError("--seeds must be >= 1");
      manifest.base.seeds = seeds;
    }
    manifest.jobs = jobs;
    manifest.out_path = out_path;
    manifest.snapshot_dir = snapshots;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  }

  try {
    return nacl::cli::run(manifest);
  } catch (const nacl::cli::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
