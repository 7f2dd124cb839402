#include "nacl/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nacl::mlp {

namespace {

void check_dims(const MlpModel& model) {
  if (model.layer_sizes.size() < 3)
    throw std::invalid_argument("model needs at least one hidden layer");
  if (model.weights.size() + 1 != model.layer_sizes.size() ||
      model.biases.size() != model.weights.size())
    throw std::invalid_argument("inconsistent model shape");
}

void softmax_columns(Eigen::MatrixXd& M) {
  for (Eigen::Index j = 0; j < M.cols(); ++j) {
    auto col = M.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    col /= col.sum();
  }
}

// Forward pass caching each activation; acts[0] is the input, acts.back() the
// softmax output. `first_layer` > 0 starts mid-network (head-only pass).
std::vector<Eigen::MatrixXd> forward_cached(const MlpModel& model, const Eigen::MatrixXd& X,
                                            int first_layer, int last_layer) {
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(last_layer - first_layer + 2);
  acts.push_back(X);
  for (int l = first_layer; l <= last_layer; ++l) {
    Eigen::MatrixXd pre = (model.weights[l] * acts.back()).colwise() + model.biases[l];
    if (l < model.n_layers() - 1)
      pre = pre.cwiseMax(0.0);
    else
      softmax_columns(pre);
    acts.push_back(std::move(pre));
  }
  return acts;
}

void check_input(const MlpModel& model, Eigen::Index rows, Space space) {
  const int expected = space == Space::feature ? model.input_dim() : model.embedding_dim();
  if (rows != expected)
    throw std::invalid_argument("input dimension mismatch: expected " + std::to_string(expected) +
                                ", got " + std::to_string(rows));
}

void check_labels(const MlpModel& model, const std::vector<int>& labels, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(labels.size()) != cols)
    throw std::invalid_argument("label count does not match batch size");
  for (int y : labels)
    if (y < 0 || y >= model.output_arity())
      throw std::invalid_argument("class id " + std::to_string(y) + " out of range for arity " +
                                  std::to_string(model.output_arity()));
}

double glorot_bound(Eigen::Index fan_out, Eigen::Index fan_in) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace

MlpModel make_model(const std::vector<int>& layer_sizes) {
  if (layer_sizes.size() < 3) throw std::invalid_argument("model needs at least one hidden layer");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("layer widths must be positive");
  MlpModel model;
  model.layer_sizes = layer_sizes;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    model.weights.emplace_back(Eigen::MatrixXd::Zero(layer_sizes[l + 1], layer_sizes[l]));
    model.biases.emplace_back(Eigen::VectorXd::Zero(layer_sizes[l + 1]));
  }
  return model;
}

Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& X) {
  check_dims(model);
  check_input(model, X.rows(), Space::feature);
  return forward_cached(model, X, 0, model.n_layers() - 1).back();
}

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& x) {
  return forward_batch(model, x);
}

Eigen::MatrixXd embed_batch(const MlpModel& model, const Eigen::MatrixXd& X) {
  check_dims(model);
  check_input(model, X.rows(), Space::feature);
  return forward_cached(model, X, 0, model.n_layers() - 2).back();
}

Eigen::VectorXd embed(const MlpModel& model, const Eigen::VectorXd& x) {
  return embed_batch(model, x);
}

Eigen::MatrixXd head_forward_batch(const MlpModel& model, const Eigen::MatrixXd& Z) {
  check_dims(model);
  check_input(model, Z.rows(), Space::embedding);
  const int last = model.n_layers() - 1;
  return forward_cached(model, Z, last, last).back();
}

Eigen::VectorXd head_forward(const MlpModel& model, const Eigen::VectorXd& z) {
  return head_forward_batch(model, z);
}

void Gradients::resize_like(const MlpModel& model) {
  weights.clear();
  biases.clear();
  for (int l = 0; l < model.n_layers(); ++l) {
    weights.emplace_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    biases.emplace_back(Eigen::VectorXd::Zero(model.biases[l].size()));
  }
}

void Gradients::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

double ce_loss_batch(const MlpModel& model, const Eigen::MatrixXd& X,
                     const std::vector<int>& labels, Space space) {
  check_dims(model);
  check_input(model, X.rows(), space);
  check_labels(model, labels, X.cols());
  const int last = model.n_layers() - 1;
  const int first = space == Space::feature ? 0 : last;
  auto acts = forward_cached(model, X, first, last);
  const auto& probs = acts.back();
  double loss = 0.0;
  for (Eigen::Index j = 0; j < probs.cols(); ++j)
    loss -= std::log(std::max(probs(labels[j], j), 1e-300));
  return loss / static_cast<double>(probs.cols());
}

double ce_backward_batch(const MlpModel& model, const Eigen::MatrixXd& X,
                         const std::vector<int>& labels, Space space, Gradients& grads) {
  check_dims(model);
  check_input(model, X.rows(), space);
  check_labels(model, labels, X.cols());
  const int last = model.n_layers() - 1;
  const int first = space == Space::feature ? 0 : last;
  auto acts = forward_cached(model, X, first, last);
  const auto& probs = acts.back();
  const double inv_b = 1.0 / static_cast<double>(X.cols());

  double loss = 0.0;
  Eigen::MatrixXd delta = probs;  // d(mean CE)/d(logits)
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    loss -= std::log(std::max(probs(labels[j], j), 1e-300));
    delta(labels[j], j) -= 1.0;
  }
  delta *= inv_b;

  for (int l = last; l >= first; --l) {
    const Eigen::MatrixXd& input = acts[l - first];
    grads.weights[l].noalias() += delta * input.transpose();
    grads.biases[l] += delta.rowwise().sum();
    if (l > first) {
      delta = model.weights[l].transpose() * delta;
      delta.array() *= (input.array() > 0.0).cast<double>();
    }
  }
  return loss * inv_b;
}

double drift_backward_batch(const MlpModel& model, const Eigen::MatrixXd& X,
                            const Eigen::MatrixXd& target, double weight, Gradients& grads) {
  check_dims(model);
  check_input(model, X.rows(), Space::feature);
  if (target.rows() != model.embedding_dim() || target.cols() != X.cols())
    throw std::invalid_argument("drift target shape mismatch");
  const int last_enc = model.n_layers() - 2;
  auto acts = forward_cached(model, X, 0, last_enc);
  const Eigen::MatrixXd& phi = acts.back();
  const double inv_b = 1.0 / static_cast<double>(X.cols());

  Eigen::MatrixXd diff = phi - target;
  const double loss = diff.squaredNorm() * inv_b;

  Eigen::MatrixXd delta = diff * (2.0 * inv_b * weight);
  for (int l = last_enc; l >= 0; --l) {
    const Eigen::MatrixXd& out = acts[l + 1];
    delta.array() *= (out.array() > 0.0).cast<double>();  // ReLU at every encoder layer
    grads.weights[l].noalias() += delta * acts[l].transpose();
    grads.biases[l] += delta.rowwise().sum();
    if (l > 0) delta = model.weights[l].transpose() * delta;
  }
  return loss;
}

void AdamState::resize_like(const MlpModel& model) {
  m.resize_like(model);
  v.resize_like(model);
  step = 0;
}

void adam_step(MlpModel& model, const Gradients& grads, AdamState& state,
               const TrainConfig& config) {
  const double lr = config.learning_rate / (1.0 + config.decay * static_cast<double>(state.step));
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.step));
  auto update = [&](auto& m, auto& v, const auto& g, auto& theta) {
    m.array() = config.adam_beta1 * m.array() + (1.0 - config.adam_beta1) * g.array();
    v.array() = config.adam_beta2 * v.array() + (1.0 - config.adam_beta2) * g.array().square();
    theta.array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.adam_epsilon);
  };
  for (int l = 0; l < model.n_layers(); ++l) {
    update(state.m.weights[l], state.v.weights[l], grads.weights[l], model.weights[l]);
    update(state.m.biases[l], state.v.biases[l], grads.biases[l], model.biases[l]);
  }
}

std::vector<std::size_t> balanced_batch(const std::vector<std::vector<std::size_t>>& pools,
                                        int batch_size, std::mt19937_64& rng) {
  const int n_classes = static_cast<int>(pools.size());
  std::vector<std::size_t> idx;
  idx.reserve(batch_size);
  for (int c = 0; c < n_classes; ++c) {
    int count = batch_size / n_classes + (c < batch_size % n_classes ? 1 : 0);
    std::uniform_int_distribution<std::size_t> pick(0, pools[c].size() - 1);
    for (int s = 0; s < count; ++s) idx.push_back(pools[c][pick(rng)]);
  }
  return idx;
}

MlpModel train(MlpModel model, const std::vector<std::pair<Eigen::VectorXd, int>>& inputs,
               Space space, const TrainConfig& config) {
  check_dims(model);
  if (config.learning_rate <= 0.0 || config.decay < 0.0 || config.batch_size < 2 ||
      config.num_batches < 0 || config.adam_epsilon <= 0.0 || config.adam_beta1 <= 0.0 ||
      config.adam_beta1 >= 1.0 || config.adam_beta2 <= 0.0 || config.adam_beta2 >= 1.0)
    throw std::invalid_argument("invalid training configuration");
  if (config.num_batches == 0) return model;
  if (inputs.empty()) throw std::invalid_argument("empty training set");

  const int width = space == Space::feature ? model.input_dim() : model.embedding_dim();
  const int arity = model.output_arity();
  Eigen::MatrixXd X(width, static_cast<Eigen::Index>(inputs.size()));
  std::vector<std::vector<std::size_t>> pools(arity);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& [x, y] = inputs[i];
    if (x.size() != width)
      throw std::invalid_argument("input dimension mismatch: expected " + std::to_string(width) +
                                  ", got " + std::to_string(x.size()));
    if (y < 0 || y >= arity)
      throw std::invalid_argument("class id " + std::to_string(y) + " out of range for arity " +
                                  std::to_string(arity));
    X.col(static_cast<Eigen::Index>(i)) = x;
    pools[y].push_back(i);
  }
  for (int c = 0; c < arity; ++c)
    if (pools[c].empty())
      throw std::invalid_argument("class " + std::to_string(c) +
                                  " has no samples for balanced batching");

  std::mt19937_64 rng(config.seed);
  Gradients grads;
  grads.resize_like(model);
  AdamState adam;
  adam.resize_like(model);

  Eigen::MatrixXd Xb(width, config.batch_size);
  std::vector<int> yb(config.batch_size);
  for (int b = 0; b < config.num_batches; ++b) {
    auto idx = balanced_batch(pools, config.batch_size, rng);
    for (int j = 0; j < config.batch_size; ++j) {
      Xb.col(j) = X.col(static_cast<Eigen::Index>(idx[j]));
      yb[j] = inputs[idx[j]].second;
    }
    grads.set_zero();
    double loss = ce_backward_batch(model, Xb, yb, space, grads);
    if (!std::isfinite(loss))
      throw std::runtime_error("training loss diverged at batch " + std::to_string(b));
    adam_step(model, grads, adam, config);
  }
  return model;
}

MlpModel expand_to_ternary(const MlpModel& model, std::uint64_t seed) {
  check_dims(model);
  if (model.output_arity() != 2) throw std::invalid_argument("model is already ternary");
  MlpModel out = model;
  const int last = out.n_layers() - 1;
  const Eigen::Index k = out.weights[last].cols();
  out.weights[last].conservativeResize(3, Eigen::NoChange);
  out.biases[last].conservativeResize(3);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> small(0.0, 0.01);
  for (Eigen::Index c = 0; c < k; ++c) out.weights[last](2, c) = small(rng);
  out.biases[last](2) = small(rng);
  out.layer_sizes.back() = 3;
  return out;
}

MlpModel collapse_to_binary(const MlpModel& model) {
  check_dims(model);
  if (model.output_arity() != 3) throw std::invalid_argument("model is already binary");
  MlpModel out = model;
  const int last = out.n_layers() - 1;
  out.weights[last] = model.weights[last].topRows(2).eval();
  out.biases[last] = model.biases[last].head(2).eval();
  out.layer_sizes.back() = 2;
  return out;
}

MlpModel reinitialize(const MlpModel& model, std::uint64_t seed) {
  check_dims(model);
  MlpModel out = model;
  std::mt19937_64 rng(seed);
  for (int l = 0; l < out.n_layers(); ++l) {
    const double bound = glorot_bound(out.weights[l].rows(), out.weights[l].cols());
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (Eigen::Index r = 0; r < out.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < out.weights[l].cols(); ++c) out.weights[l](r, c) = uniform(rng);
    out.biases[l].setZero();
  }
  return out;
}

namespace {
constexpr char kModelMagic[8] = {'N', 'A', 'C', 'L', 'M', 'L', 'P', '1'};
}

void save_model(const std::string& path, const MlpModel& model) {
  check_dims(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file '" + path + "'");
  out.write(kModelMagic, sizeof(kModelMagic));
  // layer sizes then row-major weight blocks; doubles are stored in the
  // machine's native little-endian layout
  std::uint32_t n = static_cast<std::uint32_t>(model.layer_sizes.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (int s : model.layer_sizes) {
    std::uint32_t v = static_cast<std::uint32_t>(s);
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  for (int l = 0; l < model.n_layers(); ++l) {
    for (Eigen::Index r = 0; r < model.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < model.weights[l].cols(); ++c) {
        double v = model.weights[l](r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
    for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) {
      double v = model.biases[l](r);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!out) throw std::runtime_error("write failed for model file '" + path + "'");
}

MlpModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw std::runtime_error("'" + path + "' is not a model file");
  std::uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n < 3 || n > 64) throw std::runtime_error("corrupt model file '" + path + "'");
  std::vector<int> sizes(n);
  for (auto& s : sizes) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    s = static_cast<int>(v);
  }
  MlpModel model = make_model(sizes);
  for (int l = 0; l < model.n_layers(); ++l) {
    for (Eigen::Index r = 0; r < model.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < model.weights[l].cols(); ++c) {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        model.weights[l](r, c) = v;
      }
    for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      model.biases[l](r) = v;
    }
  }
  if (!in) throw std::runtime_error("truncated model file '" + path + "'");
  return model;
}

}  // namespace nacl::mlp
