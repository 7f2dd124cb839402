#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace nacl::dataset {

enum class Split { train, test };

/// One feature vector of a stream. true_class 0 is bona-fide, ids >= 1 are
/// attack species. The true class is used only for evaluation and pollution
/// accounting; the learner never sees it directly.
struct FeatureSample {
  long long id = 0;
  Eigen::VectorXd features;
  int true_class = 0;
  Split split = Split::train;
  std::string group;  // optional participant/group tag for disjoint bona-fide splits
};

/// Samples plus the binary labels the learner is given (0 bona-fide,
/// 1 attack). Assigned labels may disagree with true_class (label pollution).
struct LabeledDataset {
  std::vector<FeatureSample> samples;
  std::vector<int> assigned_labels;
};

/// A continual protocol: labeled initial data, unlabeled task batches with
/// the step at which each attack class first appears, and a test set that is
/// fixed across all steps.
struct TaskStream {
  LabeledDataset initial;
  std::vector<int> initial_attack_classes;
  std::vector<std::vector<FeatureSample>> tasks;  // batch for step t = index + 1
  std::vector<std::vector<int>> attack_schedule;  // classes introduced at step t = index + 1
  std::vector<FeatureSample> test_set;
  int dimension = 0;
};

struct SyntheticConfig {
  int dimension = 32;
  int attack_classes = 8;
  int per_class_train = 200;
  int per_class_test = 50;
  double separation = 10.0;
  std::uint64_t seed = 1;
  int attacks_per_task = 1;
  double bonafide_fraction = 0.5;  // share of bona-fide samples in each task batch
  bool operator==(const SyntheticConfig&) const = default;
};

/// One unit-variance isotropic Gaussian cluster per class (bona-fide plus
/// attack_classes attacks), cluster means pairwise at least `separation`
/// apart. Deterministic for a fixed seed.
TaskStream generate_synthetic_stream(const SyntheticConfig& config);

/// Reads a comma-separated feature table with header
/// id,true_class,split[,group],f0,...,f{d-1}.
std::vector<FeatureSample> load_feature_table(const std::string& path);
void save_feature_table(const std::string& path, const std::vector<FeatureSample>& samples);

/// Per-class proportional split: round(count * test_fraction) samples of each
/// class go to test (at least one). Bona-fide samples carrying group tags are
/// assigned group-disjointly instead.
std::pair<std::vector<FeatureSample>, std::vector<FeatureSample>>
split_grandtest(const std::vector<FeatureSample>& samples, double test_fraction,
                std::uint64_t seed);

/// Chunks `ordering` (a permutation of the attack class ids >= 2; class 1 is
/// always part of the initial task) into consecutive groups of
/// attacks_per_task classes. Group k is introduced at step k+1.
std::vector<std::vector<int>> build_protocol(const std::vector<int>& stream_classes,
                                             int attacks_per_task,
                                             const std::vector<int>& ordering);

/// Builds a TaskStream from split-tagged samples and a schedule. The initial
/// dataset holds all training bona-fides plus class-1 attacks with ground
/// truth labels; each task batch holds the scheduled classes' training
/// samples plus a seeded bona-fide draw sized by bonafide_fraction.
TaskStream assemble_stream(const std::vector<FeatureSample>& samples,
                           const std::vector<std::vector<int>>& schedule,
                           double bonafide_fraction, std::uint64_t seed);

}  // namespace nacl::dataset
