#pragma once

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "nacl/dataset.hpp"
#include "nacl/gmm.hpp"
#include "nacl/metrics.hpp"
#include "nacl/mlp.hpp"
#include "nacl/otds.hpp"
#include "nacl/records.hpp"
#include "nacl/replay.hpp"

namespace nacl::engine {

struct EngineConfig {
  double lambda = 1.0;  // embedding-drift trade-off in the rehearsal objective
  double tau = 0.05;
  gmm::MembershipMode membership_mode = gmm::MembershipMode::density_ratio;
  int m_per_component = 0;       // 0 = match each component's real sample count
  std::size_t budget = 50;       // per-class buffer budget; 0 disables replay
  mlp::TrainConfig train;        // train.seed is the run's master seed
  Method method = Method::nacl;
  Ordering ordering = Ordering::index;
  int seeds = 10;                // sweep width, consumed by the CLI
  bool operator==(const EngineConfig&) const = default;
};

struct ProtocolState {
  mlp::MlpModel model;  // binary between steps
  gmm::GmmModel distribution;
  replay::ReplayBuffer buffer;
};

/// Confusion counts of the binary model on a sample set (argmax decision).
metrics::EvalOutcome evaluate_binary(const mlp::MlpModel& model,
                                     std::span<const dataset::FeatureSample> samples);

/// Fraction of the samples the binary model classifies as attack.
double detection_rate(const mlp::MlpModel& model,
                      std::span<const dataset::FeatureSample> samples);

/// Trains the binary model on the initial labeled data, fits the mixture on
/// its embeddings and fills the buffer from the initial data with ground
/// truth labels under the configured strategy.
ProtocolState initial_train(const dataset::TaskStream& stream, const EngineConfig& config);

/// Samples of the batch whose ternary argmax is the third (outside) class,
/// wrapped for storage with an attack label. ground_truth_labels switches to
/// the true binary labels (the delayed-label and real-label variants).
std::vector<replay::BufferEntry> detect_novel(const mlp::MlpModel& ternary_model,
                                              const std::vector<dataset::FeatureSample>& batch,
                                              bool ground_truth_labels = false);

/// The per-batch value the rehearsal update minimizes: mean cross-entropy
/// over novel plus buffer samples, plus lambda times the mean squared
/// embedding drift of the buffer samples relative to the snapshot encoder.
double rehearsal_objective(const mlp::MlpModel& model, const mlp::MlpModel& snapshot,
                           const Eigen::MatrixXd& novel_x, const std::vector<int>& novel_y,
                           const Eigen::MatrixXd& buffer_x, const std::vector<int>& buffer_y,
                           double lambda);

/// Seeded Adam on balanced batches drawn from novel plus buffer entries,
/// minimizing rehearsal_objective. snapshot is the pre-update encoder; model
/// is the freshly reinitialized binary network.
mlp::MlpModel pseudo_rehearsal_update(mlp::MlpModel model, const mlp::MlpModel& snapshot,
                                      const std::vector<replay::BufferEntry>& novel,
                                      const std::vector<replay::BufferEntry>& buffer_entries,
                                      double lambda, const mlp::TrainConfig& config);

struct ProtocolResult {
  std::vector<StepRecord> records;
  mlp::MlpModel final_model;
  replay::ReplayBuffer final_buffer;
};

/// Called with (t, state) after the initial fit (t = 0) and after each
/// continual step; joint training has no per-step state and never calls it.
using StepObserver = std::function<void(int, const ProtocolState&)>;

/// Runs the configured method over the stream's task sequence, evaluating on
/// the fixed test set after every step.
ProtocolResult run_protocol_full(const dataset::TaskStream& stream, const EngineConfig& config,
                                 const StepObserver& observer = {});
std::vector<StepRecord> run_protocol(const dataset::TaskStream& stream,
                                     const EngineConfig& config);

/// Called before each pick with the current binary model, the per-class
/// detection rates over the remaining classes, and the class chosen.
using OrderingObserver =
    std::function<void(const mlp::MlpModel&, const std::map<int, double>&, int)>;

struct OrderingResult {
  std::vector<int> realized_order;
  std::vector<std::map<int, double>> rates_per_pick;
  std::vector<StepRecord> records;
  mlp::MlpModel final_model;
};

/// Greedy synthetic task ordering: after the initial task, repeatedly pick
/// the remaining attack class with the highest (ed) or lowest (de) detection
/// rate under the current binary model, learn it with one continual step,
/// and continue until all classes are seen.
OrderingResult difficulty_ordering(const dataset::TaskStream& stream, const EngineConfig& config,
                                   Ordering direction, const OrderingObserver& observer = {});

}  // namespace nacl::engine
