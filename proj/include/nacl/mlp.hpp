#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace nacl::mlp {

/// Fully connected ReLU network with a softmax output head. The encoder is
/// the stack up to and including the penultimate (embedding) layer; the
/// classifier head is the final affine map plus softmax.
struct MlpModel {
  std::vector<int> layer_sizes;           // e.g. {d, 64, 32, 2}
  std::vector<Eigen::MatrixXd> weights;   // weights[l] is (sizes[l+1] x sizes[l])
  std::vector<Eigen::VectorXd> biases;

  int input_dim() const { return layer_sizes.front(); }
  int output_arity() const { return layer_sizes.back(); }
  int embedding_dim() const { return layer_sizes[layer_sizes.size() - 2]; }
  int n_layers() const { return static_cast<int>(weights.size()); }
};

struct TrainConfig {
  double learning_rate = 2e-4;
  double decay = 1e-4;  // time-based schedule: lr_t = lr / (1 + decay * t)
  int batch_size = 100;
  int num_batches = 10000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  std::uint64_t seed = 0;
  bool operator==(const TrainConfig&) const = default;
};

enum class Space { feature, embedding };

/// Zero-weight model with the given layer widths (at least one hidden layer).
MlpModel make_model(const std::vector<int>& layer_sizes);

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& x);
Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& X);

/// Post-ReLU activation of the embedding layer.
Eigen::VectorXd embed(const MlpModel& model, const Eigen::VectorXd& x);
Eigen::MatrixXd embed_batch(const MlpModel& model, const Eigen::MatrixXd& X);

/// Classifier head only: embedding -> probabilities.
Eigen::VectorXd head_forward(const MlpModel& model, const Eigen::VectorXd& z);
Eigen::MatrixXd head_forward_batch(const MlpModel& model, const Eigen::MatrixXd& Z);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  void resize_like(const MlpModel& model);
  void set_zero();
};

/// Mean cross-entropy of the batch (columns of X) against integer labels.
double ce_loss_batch(const MlpModel& model, const Eigen::MatrixXd& X,
                     const std::vector<int>& labels, Space space);

/// Accumulates d(mean CE)/d(theta) into grads and returns the loss. In
/// embedding space only the head receives gradient.
double ce_backward_batch(const MlpModel& model, const Eigen::MatrixXd& X,
                         const std::vector<int>& labels, Space space, Gradients& grads);

/// Embedding drift penalty: mean ||embed(model, x) - target||^2 over the
/// batch. Accumulates weight * gradient into the encoder layers only.
double drift_backward_batch(const MlpModel& model, const Eigen::MatrixXd& X,
                            const Eigen::MatrixXd& target, double weight, Gradients& grads);

struct AdamState {
  Gradients m, v;
  long step = 0;
  void resize_like(const MlpModel& model);
};

void adam_step(MlpModel& model, const Gradients& grads, AdamState& state,
               const TrainConfig& config);

/// Indices for one balanced mini-batch: every class pool contributes an equal
/// share (remainder spread over the lowest class ids), drawn uniformly with
/// replacement.
std::vector<std::size_t> balanced_batch(const std::vector<std::vector<std::size_t>>& pools,
                                        int batch_size, std::mt19937_64& rng);

/// Adam training on seeded balanced mini-batches of (vector, class id) pairs.
/// space == embedding trains the classifier head only.
MlpModel train(MlpModel model, const std::vector<std::pair<Eigen::VectorXd, int>>& inputs,
               Space space, const TrainConfig& config);

/// Adds a third output with small seeded-random weights; existing rows are
/// preserved.
MlpModel expand_to_ternary(const MlpModel& model, std::uint64_t seed);

/// Drops the third output row.
MlpModel collapse_to_binary(const MlpModel& model);

/// Redraws every weight uniformly in +-sqrt(6 / (fan_in + fan_out)); biases
/// reset to zero. Architecture unchanged.
MlpModel reinitialize(const MlpModel& model, std::uint64_t seed);

void save_model(const std::string& path, const MlpModel& model);
MlpModel load_model(const std::string& path);

}  // namespace nacl::mlp
