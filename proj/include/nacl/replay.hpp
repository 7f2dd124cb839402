#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nacl/dataset.hpp"
#include "nacl/gmm.hpp"
#include "nacl/mlp.hpp"

namespace nacl::replay {

enum class LabelSource { ground_truth, predicted };

/// A stored sample and the binary label it will be rehearsed with. The label
/// may be wrong when it came from the model (label pollution).
struct BufferEntry {
  dataset::FeatureSample sample;
  int assigned_label = 0;
  LabelSource label_source = LabelSource::ground_truth;
};

enum class Strategy { mof, random, full };

/// Budgeted per-class memory. budget_per_class == 0 means unbounded, which is
/// the invariant of the full strategy (it never evicts).
struct ReplayBuffer {
  std::vector<BufferEntry> entries;
  std::size_t budget_per_class = 50;
  Strategy strategy = Strategy::mof;
};

/// Mean-of-features selection: per assigned class, the `budget` entries whose
/// embeddings are closest (squared Euclidean) to that class's mixture mean.
/// Ties break toward the smaller sample id. budget == 0 keeps everything.
std::vector<BufferEntry> select_mof(const std::vector<BufferEntry>& candidates,
                                    const gmm::GmmModel& distribution,
                                    const mlp::MlpModel& encoder, std::size_t budget);

/// Per-class uniform sample without replacement of size min(budget, count).
std::vector<BufferEntry> select_random(const std::vector<BufferEntry>& candidates,
                                       std::size_t budget, std::uint64_t seed);

/// Fraction of entries whose assigned label disagrees with the ground truth
/// binary label; 0 for an empty set.
double pollution_rate(const std::vector<BufferEntry>& entries);
double pollution_rate(const ReplayBuffer& buffer);

/// Audit dump: sample id, true class, assigned label, label source.
void dump_buffer_csv(const std::string& path, const ReplayBuffer& buffer);

}  // namespace nacl::replay
