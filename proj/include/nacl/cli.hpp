#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "nacl/dataset.hpp"
#include "nacl/engine.hpp"

namespace nacl::cli {

/// A malformed or invalid manifest (exit code 1 territory).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class StreamKind { synthetic, table };

struct StreamSpec {
  StreamKind kind = StreamKind::synthetic;
  dataset::SyntheticConfig synthetic;
  std::string table_path;
  int table_attacks_per_task = 1;
  double table_bonafide_fraction = 0.5;
  std::uint64_t table_seed = 1;
  bool operator==(const StreamSpec&) const = default;
};

struct RunManifest {
  std::string config_path;
  StreamSpec stream;
  engine::EngineConfig base;          // train.seed holds the base seed of the sweep
  std::vector<Method> methods{Method::nacl};
  int jobs = 1;
  std::string out_path;
  std::string snapshot_dir;
};

/// Parses the flat-section config file ([stream], [engine], [train]) with
/// documented defaults. Unknown keys, type mismatches and missing required
/// keys raise ConfigError naming the key and line.
RunManifest parse_config(const std::string& path);

/// The resolved manifest as config-file text; re-parsing it reproduces the
/// manifest.
std::string dump_config(const RunManifest& manifest);

dataset::TaskStream build_stream(const StreamSpec& spec);

/// Executes every (method x seed) run, writes one results table sorted by
/// (method, seed, task_index) and prints per-step summary lines. Returns 0 on
/// success, 2 if any run failed; partial results are still flushed.
int run(const RunManifest& manifest);

}  // namespace nacl::cli
