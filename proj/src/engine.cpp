#include "nacl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "nacl/rng.hpp"

namespace nacl::engine {

namespace {

constexpr std::uint64_t kSeedInit = 1;
constexpr std::uint64_t kSeedInitialTrain = 2;
constexpr std::uint64_t kSeedInitialSelect = 3;

enum StepPhase {
  kPhasePseudo = 0,
  kPhaseExpand,
  kPhaseHead,
  kPhaseReinit,
  kPhaseUpdate,
  kPhaseSelect,
  kPhaseReals
};

std::uint64_t step_seed(std::uint64_t master, int t, int phase) {
  return seed_mix(master, 0x1000ULL + static_cast<std::uint64_t>(t) * 16 +
                              static_cast<std::uint64_t>(phase));
}

replay::Strategy strategy_for(Method method) {
  switch (method) {
    case Method::fr:
    case Method::frr:
    case Method::ng:
      return replay::Strategy::full;
    case Method::rs:
      return replay::Strategy::random;
    default:
      return replay::Strategy::mof;
  }
}

Eigen::MatrixXd features_matrix(std::span<const dataset::FeatureSample> samples) {
  if (samples.empty()) throw std::invalid_argument("empty sample set");
  Eigen::MatrixXd X(samples.front().features.size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i)
    X.col(static_cast<Eigen::Index>(i)) = samples[i].features;
  return X;
}

Eigen::MatrixXd entry_features_matrix(std::span<const replay::BufferEntry> entries) {
  if (entries.empty()) throw std::invalid_argument("empty entry set");
  Eigen::MatrixXd X(entries.front().sample.features.size(),
                    static_cast<Eigen::Index>(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i)
    X.col(static_cast<Eigen::Index>(i)) = entries[i].sample.features;
  return X;
}

std::vector<std::pair<Eigen::VectorXd, int>> labeled_pairs(const dataset::LabeledDataset& data) {
  std::vector<std::pair<Eigen::VectorXd, int>> pairs;
  pairs.reserve(data.samples.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    pairs.emplace_back(data.samples[i].features, data.assigned_labels[i]);
  return pairs;
}

int argmax_col(const Eigen::MatrixXd& P, Eigen::Index j) {
  Eigen::Index r = 0;
  P.col(j).maxCoeff(&r);
  return static_cast<int>(r);
}

gmm::GmmModel fit_on_entries(const mlp::MlpModel& model,
                             const std::vector<replay::BufferEntry>& entries) {
  Eigen::MatrixXd Z = mlp::embed_batch(model, entry_features_matrix(entries));
  std::vector<Eigen::VectorXd> embeddings;
  std::vector<int> labels;
  embeddings.reserve(entries.size());
  labels.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    embeddings.push_back(Z.col(static_cast<Eigen::Index>(i)));
    labels.push_back(entries[i].assigned_label);
  }
  return gmm::fit_map(embeddings, labels);
}

StepRecord make_record(int t, const EngineConfig& cfg, const metrics::EvalOutcome& outcome) {
  StepRecord r;
  r.task_index = t;
  r.method = cfg.method;
  r.seed = cfg.train.seed;
  r.apcer = metrics::apcer(outcome);
  r.bpcer = metrics::bpcer(outcome);
  r.acer = metrics::acer(outcome);
  return r;
}

/// One continual step: expansion + detection + rehearsal update + refit +
/// buffer refill + evaluation. Shared by the scheduled protocol and the
/// difficulty orderings.
StepRecord continual_step(ProtocolState& state, const std::vector<dataset::FeatureSample>& batch,
                          std::span<const dataset::FeatureSample> test, int t,
                          const EngineConfig& cfg) {
  const std::uint64_t master = cfg.train.seed;
  const bool gt_labels = cfg.method == Method::dl || cfg.method == Method::frr;
  const bool no_replay =
      cfg.budget == 0 && state.buffer.strategy != replay::Strategy::full;
  if (batch.empty()) throw std::invalid_argument("task batch is empty");

  auto wrap = [&](const dataset::FeatureSample& s) {
    replay::BufferEntry e;
    e.sample = s;
    e.assigned_label = gt_labels ? (s.true_class >= 1 ? 1 : 0) : 1;
    e.label_source = gt_labels ? replay::LabelSource::ground_truth : replay::LabelSource::predicted;
    return e;
  };

  // (a) expand the classifier and retrain the head on shell negatives plus
  // real embeddings, encoder frozen. With replay disabled nothing is stored,
  // so in-distribution mixture draws stand in for stored reals.
  std::vector<std::pair<Eigen::VectorXd, int>> reals;
  if (no_replay) {
    auto rng = std::mt19937_64(step_seed(master, t, kPhaseReals));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd u(state.distribution.dimension);
    for (int j = 0; j < 2; ++j) {
      const auto& comp = state.distribution.components[j];
      for (int i = 0; i < cfg.train.batch_size; ++i) {
        for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = gauss(rng);
        const Eigen::VectorXd spread = comp.chol.triangularView<Eigen::Lower>() * u;
        reals.emplace_back(comp.mean + spread, j);
      }
    }
  } else {
    Eigen::MatrixXd Zbuf =
        mlp::embed_batch(state.model, entry_features_matrix(state.buffer.entries));
    reals.reserve(state.buffer.entries.size());
    for (std::size_t i = 0; i < state.buffer.entries.size(); ++i)
      reals.emplace_back(Zbuf.col(static_cast<Eigen::Index>(i)),
                         state.buffer.entries[i].assigned_label);
  }
  auto pseudo = otds::build_pseudo_dataset(state.distribution, reals, cfg.m_per_component,
                                           cfg.tau, cfg.membership_mode,
                                           step_seed(master, t, kPhasePseudo));
  auto ternary = mlp::expand_to_ternary(state.model, step_seed(master, t, kPhaseExpand));
  auto head_cfg = cfg.train;
  head_cfg.seed = step_seed(master, t, kPhaseHead);
  std::vector<std::pair<Eigen::VectorXd, int>> augmented = std::move(pseudo.reals);
  for (auto& z : pseudo.negatives) augmented.emplace_back(std::move(z), 2);
  ternary = mlp::train(std::move(ternary), augmented, mlp::Space::embedding, head_cfg);

  // (b) novel attack detection on the unlabeled batch
  std::vector<replay::BufferEntry> novel;
  std::vector<replay::BufferEntry> rehearsal;
  if (no_replay) {
    // the rest of the batch, self-labeled by the expanded head, anchors the
    // update in place of a buffer and is discarded afterwards
    Eigen::MatrixXd P = mlp::forward_batch(ternary, features_matrix(batch));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int predicted = argmax_col(P, static_cast<Eigen::Index>(i));
      if (predicted == 2) {
        novel.push_back(wrap(batch[i]));
      } else {
        replay::BufferEntry e;
        e.sample = batch[i];
        e.assigned_label = predicted;
        e.label_source = replay::LabelSource::predicted;
        rehearsal.push_back(std::move(e));
      }
    }
  } else {
    novel = detect_novel(ternary, batch, gt_labels);
    rehearsal = state.buffer.entries;
  }

  if (novel.empty() && rehearsal.empty())
    throw std::runtime_error("step " + std::to_string(t) + ": no novel samples and empty buffer");
  if (novel.empty())
    std::fprintf(stderr, "note: step %d detected no novel samples; buffer-only update\n", t);

  // (c) fresh weights updated against the previous encoder
  mlp::MlpModel snapshot = state.model;
  auto update_cfg = cfg.train;
  update_cfg.seed = step_seed(master, t, kPhaseUpdate);
  mlp::MlpModel fresh = mlp::reinitialize(state.model, step_seed(master, t, kPhaseReinit));
  state.model = pseudo_rehearsal_update(std::move(fresh), snapshot, novel, rehearsal, cfg.lambda,
                                        update_cfg);

  // (d) refit the mixture on this step's labeled pool, then refill the buffer
  std::vector<replay::BufferEntry> pool = rehearsal;
  pool.insert(pool.end(), novel.begin(), novel.end());
  state.distribution = fit_on_entries(state.model, pool);

  std::optional<double> pollution_buffer;
  if (!no_replay) {
    std::vector<replay::BufferEntry> candidates = state.buffer.entries;
    candidates.insert(candidates.end(), novel.begin(), novel.end());
    switch (state.buffer.strategy) {
      case replay::Strategy::full:
        state.buffer.entries = std::move(candidates);
        break;
      case replay::Strategy::mof:
        state.buffer.entries =
            replay::select_mof(candidates, state.distribution, state.model, cfg.budget);
        break;
      case replay::Strategy::random:
        state.buffer.entries =
            replay::select_random(candidates, cfg.budget, step_seed(master, t, kPhaseSelect));
        break;
    }
    pollution_buffer = replay::pollution_rate(state.buffer);
  }

  // (e) learning-curve point on the fixed test set
  StepRecord record = make_record(t, cfg, evaluate_binary(state.model, test));
  record.pollution_buffer = pollution_buffer;
  record.pollution_used = replay::pollution_rate(pool);
  record.novel_detected = static_cast<int>(novel.size());
  return record;
}

ProtocolResult run_static(const dataset::TaskStream& stream, const EngineConfig& cfg,
                          const StepObserver& observer) {
  auto state = initial_train(stream, cfg);
  if (observer) observer(0, state);
  StepRecord base = make_record(0, cfg, evaluate_binary(state.model, stream.test_set));
  ProtocolResult result;
  for (std::size_t t = 1; t <= stream.tasks.size(); ++t) {
    StepRecord r = base;
    r.task_index = static_cast<int>(t);
    result.records.push_back(r);
  }
  result.final_model = std::move(state.model);
  result.final_buffer = std::move(state.buffer);
  return result;
}

ProtocolResult run_joint(const dataset::TaskStream& stream, const EngineConfig& cfg) {
  const std::uint64_t master = cfg.train.seed;
  auto model = mlp::reinitialize(mlp::make_model({stream.dimension, 64, 32, 2}),
                                 seed_mix(master, kSeedInit));
  auto pairs = labeled_pairs(stream.initial);
  for (const auto& task : stream.tasks)
    for (const auto& s : task) pairs.emplace_back(s.features, s.true_class >= 1 ? 1 : 0);
  auto tc = cfg.train;
  tc.seed = seed_mix(master, kSeedInitialTrain);
  model = mlp::train(std::move(model), pairs, mlp::Space::feature, tc);

  StepRecord base = make_record(0, cfg, evaluate_binary(model, stream.test_set));
  ProtocolResult result;
  for (std::size_t t = 1; t <= stream.tasks.size(); ++t) {
    StepRecord r = base;
    r.task_index = static_cast<int>(t);
    result.records.push_back(r);
  }
  result.final_model = std::move(model);
  return result;
}

ProtocolResult run_no_gmm(const dataset::TaskStream& stream, const EngineConfig& cfg,
                          const StepObserver& observer) {
  auto state = initial_train(stream, cfg);
  if (observer) observer(0, state);
  ProtocolResult result;
  for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
    const int t = static_cast<int>(k + 1);
    const auto& batch = stream.tasks[k];

    // every sample the binary model flags as attack joins the pool
    Eigen::MatrixXd P = mlp::forward_batch(state.model, features_matrix(batch));
    std::vector<replay::BufferEntry> detected;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (argmax_col(P, static_cast<Eigen::Index>(i)) == 1) {
        replay::BufferEntry e;
        e.sample = batch[i];
        e.assigned_label = 1;
        e.label_source = replay::LabelSource::predicted;
        detected.push_back(std::move(e));
      }
    }
    state.buffer.entries.insert(state.buffer.entries.end(), detected.begin(), detected.end());

    // head-only retrain on the accumulated pool; the encoder and the mixture
    // stay as fitted initially
    mlp::MlpModel fresh =
        mlp::reinitialize(state.model, step_seed(cfg.train.seed, t, kPhaseReinit));
    for (int l = 0; l + 1 < state.model.n_layers(); ++l) {
      fresh.weights[l] = state.model.weights[l];
      fresh.biases[l] = state.model.biases[l];
    }
    Eigen::MatrixXd Z = mlp::embed_batch(state.model, entry_features_matrix(state.buffer.entries));
    std::vector<std::pair<Eigen::VectorXd, int>> pairs;
    pairs.reserve(state.buffer.entries.size());
    for (std::size_t i = 0; i < state.buffer.entries.size(); ++i)
      pairs.emplace_back(Z.col(static_cast<Eigen::Index>(i)),
                         state.buffer.entries[i].assigned_label);
    auto head_cfg = cfg.train;
    head_cfg.seed = step_seed(cfg.train.seed, t, kPhaseHead);
    state.model = mlp::train(std::move(fresh), pairs, mlp::Space::embedding, head_cfg);

    StepRecord r = make_record(t, cfg, evaluate_binary(state.model, stream.test_set));
    r.pollution_buffer = replay::pollution_rate(state.buffer);
    r.pollution_used = r.pollution_buffer;
    r.novel_detected = static_cast<int>(detected.size());
    result.records.push_back(r);
    if (observer) observer(t, state);
  }
  result.final_model = std::move(state.model);
  result.final_buffer = std::move(state.buffer);
  return result;
}

}  // namespace

metrics::EvalOutcome evaluate_binary(const mlp::MlpModel& model,
                                     std::span<const dataset::FeatureSample> samples) {
  if (model.output_arity() != 2) throw std::invalid_argument("evaluation needs a binary model");
  if (samples.empty()) throw std::invalid_argument("empty evaluation set");
  Eigen::MatrixXd P = mlp::forward_batch(model, features_matrix(samples));
  metrics::EvalOutcome o;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool is_attack = samples[i].true_class >= 1;
    const bool said_attack = argmax_col(P, static_cast<Eigen::Index>(i)) == 1;
    if (is_attack) {
      ++o.n_attack;
      if (!said_attack) ++o.attack_as_bonafide;
    } else {
      ++o.n_bonafide;
      if (said_attack) ++o.bonafide_as_attack;
    }
  }
  return o;
}

double detection_rate(const mlp::MlpModel& model,
                      std::span<const dataset::FeatureSample> samples) {
  if (model.output_arity() != 2) throw std::invalid_argument("detection rate needs a binary model");
  if (samples.empty()) throw std::invalid_argument("empty sample set");
  Eigen::MatrixXd P = mlp::forward_batch(model, features_matrix(samples));
  std::size_t hits = 0;
  for (Eigen::Index j = 0; j < P.cols(); ++j)
    if (argmax_col(P, j) == 1) ++hits;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

ProtocolState initial_train(const dataset::TaskStream& stream, const EngineConfig& cfg) {
  if (stream.initial.samples.empty()) throw std::invalid_argument("empty initial dataset");
  const std::uint64_t master = cfg.train.seed;

  ProtocolState state;
  state.model = mlp::reinitialize(mlp::make_model({stream.dimension, 64, 32, 2}),
                                  seed_mix(master, kSeedInit));
  auto tc = cfg.train;
  tc.seed = seed_mix(master, kSeedInitialTrain);
  state.model = mlp::train(std::move(state.model), labeled_pairs(stream.initial),
                           mlp::Space::feature, tc);

  std::vector<replay::BufferEntry> candidates;
  candidates.reserve(stream.initial.samples.size());
  for (std::size_t i = 0; i < stream.initial.samples.size(); ++i) {
    replay::BufferEntry e;
    e.sample = stream.initial.samples[i];
    e.assigned_label = stream.initial.assigned_labels[i];
    e.label_source = replay::LabelSource::ground_truth;
    candidates.push_back(std::move(e));
  }
  state.distribution = fit_on_entries(state.model, candidates);

  state.buffer.strategy = strategy_for(cfg.method);
  state.buffer.budget_per_class =
      state.buffer.strategy == replay::Strategy::full ? 0 : cfg.budget;
  if (state.buffer.strategy == replay::Strategy::full) {
    state.buffer.entries = std::move(candidates);
  } else if (cfg.budget > 0) {
    state.buffer.entries =
        state.buffer.strategy == replay::Strategy::mof
            ? replay::select_mof(candidates, state.distribution, state.model, cfg.budget)
            : replay::select_random(candidates, cfg.budget, seed_mix(master, kSeedInitialSelect));
  }
  return state;
}

std::vector<replay::BufferEntry> detect_novel(const mlp::MlpModel& ternary_model,
                                              const std::vector<dataset::FeatureSample>& batch,
                                              bool ground_truth_labels) {
  if (ternary_model.output_arity() != 3)
    throw std::invalid_argument("novel detection needs the expanded ternary model");
  std::vector<replay::BufferEntry> novel;
  if (batch.empty()) return novel;
  Eigen::MatrixXd P = mlp::forward_batch(ternary_model, features_matrix(batch));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (argmax_col(P, static_cast<Eigen::Index>(i)) != 2) continue;
    replay::BufferEntry e;
    e.sample = batch[i];
    e.assigned_label = ground_truth_labels ? (batch[i].true_class >= 1 ? 1 : 0) : 1;
    e.label_source =
        ground_truth_labels ? replay::LabelSource::ground_truth : replay::LabelSource::predicted;
    novel.push_back(std::move(e));
  }
  return novel;
}

double rehearsal_objective(const mlp::MlpModel& model, const mlp::MlpModel& snapshot,
                           const Eigen::MatrixXd& novel_x, const std::vector<int>& novel_y,
                           const Eigen::MatrixXd& buffer_x, const std::vector<int>& buffer_y,
                           double lambda) {
  const Eigen::Index n_nov = novel_x.cols();
  const Eigen::Index n_buf = buffer_x.cols();
  if (n_nov + n_buf == 0) throw std::invalid_argument("empty objective input");
  double ce_sum = 0.0;
  if (n_nov > 0) ce_sum += mlp::ce_loss_batch(model, novel_x, novel_y, mlp::Space::feature) *
                           static_cast<double>(n_nov);
  if (n_buf > 0) ce_sum += mlp::ce_loss_batch(model, buffer_x, buffer_y, mlp::Space::feature) *
                           static_cast<double>(n_buf);
  double value = ce_sum / static_cast<double>(n_nov + n_buf);
  if (n_buf > 0 && lambda != 0.0) {
    const Eigen::MatrixXd drift =
        mlp::embed_batch(model, buffer_x) - mlp::embed_batch(snapshot, buffer_x);
    value += lambda * drift.squaredNorm() / static_cast<double>(n_buf);
  }
  return value;
}

mlp::MlpModel pseudo_rehearsal_update(mlp::MlpModel model, const mlp::MlpModel& snapshot,
                                      const std::vector<replay::BufferEntry>& novel,
                                      const std::vector<replay::BufferEntry>& buffer_entries,
                                      double lambda, const mlp::TrainConfig& config) {
  if (model.output_arity() != 2)
    throw std::invalid_argument("rehearsal update needs a binary model");
  if (snapshot.input_dim() != model.input_dim() ||
      snapshot.embedding_dim() != model.embedding_dim())
    throw std::invalid_argument("snapshot encoder is incompatible with the model");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (novel.empty() && buffer_entries.empty())
    throw std::invalid_argument("rehearsal update needs novel samples or buffer entries");
  if (config.num_batches == 0) return model;

  const std::size_t n_nov = novel.size();
  const std::size_t n = n_nov + buffer_entries.size();
  Eigen::MatrixXd X(model.input_dim(), static_cast<Eigen::Index>(n));
  std::vector<int> y(n);
  std::vector<std::vector<std::size_t>> pools(2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = i < n_nov ? novel[i] : buffer_entries[i - n_nov];
    if (e.assigned_label != 0 && e.assigned_label != 1)
      throw std::invalid_argument("assigned labels must be binary");
    X.col(static_cast<Eigen::Index>(i)) = e.sample.features;
    y[i] = e.assigned_label;
    pools[y[i]].push_back(i);
  }
  for (int c = 0; c < 2; ++c)
    if (pools[c].empty())
      throw std::invalid_argument("class " + std::to_string(c) +
                                  " has no samples for balanced batching");

  // the snapshot encoder is fixed, so its embeddings are computed once
  Eigen::MatrixXd anchor;
  if (!buffer_entries.empty() && lambda > 0.0)
    anchor = mlp::embed_batch(snapshot, X.rightCols(static_cast<Eigen::Index>(buffer_entries.size())));

  std::mt19937_64 rng(config.seed);
  mlp::Gradients grads;
  grads.resize_like(model);
  mlp::AdamState adam;
  adam.resize_like(model);

  Eigen::MatrixXd Xb(model.input_dim(), config.batch_size);
  std::vector<int> yb(config.batch_size);
  std::vector<std::size_t> buffer_slots;
  for (int b = 0; b < config.num_batches; ++b) {
    auto idx = mlp::balanced_batch(pools, config.batch_size, rng);
    buffer_slots.clear();
    for (int j = 0; j < config.batch_size; ++j) {
      Xb.col(j) = X.col(static_cast<Eigen::Index>(idx[j]));
      yb[j] = y[idx[j]];
      if (idx[j] >= n_nov) buffer_slots.push_back(static_cast<std::size_t>(j));
    }
    grads.set_zero();
    double loss = mlp::ce_backward_batch(model, Xb, yb, mlp::Space::feature, grads);
    if (lambda > 0.0 && !buffer_slots.empty()) {
      Eigen::MatrixXd Xbb(model.input_dim(), static_cast<Eigen::Index>(buffer_slots.size()));
      Eigen::MatrixXd target(model.embedding_dim(), static_cast<Eigen::Index>(buffer_slots.size()));
      for (std::size_t k = 0; k < buffer_slots.size(); ++k) {
        const std::size_t j = buffer_slots[k];
        Xbb.col(static_cast<Eigen::Index>(k)) = Xb.col(static_cast<Eigen::Index>(j));
        target.col(static_cast<Eigen::Index>(k)) =
            anchor.col(static_cast<Eigen::Index>(idx[j] - n_nov));
      }
      loss += lambda * mlp::drift_backward_batch(model, Xbb, target, lambda, grads);
    }
    if (!std::isfinite(loss))
      throw std::runtime_error("rehearsal objective diverged at batch " + std::to_string(b));
    mlp::adam_step(model, grads, adam, config);
  }
  return model;
}

ProtocolResult run_protocol_full(const dataset::TaskStream& stream, const EngineConfig& cfg,
                                 const StepObserver& observer) {
  if (stream.tasks.empty()) throw std::invalid_argument("stream has no tasks");
  switch (cfg.method) {
    case Method::st:
      return run_static(stream, cfg, observer);
    case Method::jt:
      return run_joint(stream, cfg);
    case Method::ng:
      return run_no_gmm(stream, cfg, observer);
    default: {
      auto state = initial_train(stream, cfg);
      if (observer) observer(0, state);
      ProtocolResult result;
      for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
        result.records.push_back(continual_step(state, stream.tasks[k], stream.test_set,
                                                static_cast<int>(k + 1), cfg));
        if (observer) observer(static_cast<int>(k + 1), state);
      }
      result.final_model = std::move(state.model);
      result.final_buffer = std::move(state.buffer);
      return result;
    }
  }
}

std::vector<StepRecord> run_protocol(const dataset::TaskStream& stream,
                                     const EngineConfig& cfg) {
  return run_protocol_full(stream, cfg).records;
}

OrderingResult difficulty_ordering(const dataset::TaskStream& stream, const EngineConfig& cfg,
                                   Ordering direction, const OrderingObserver& observer) {
  if (direction != Ordering::ed && direction != Ordering::de)
    throw std::invalid_argument("direction must be ed or de");
  if (cfg.method == Method::st || cfg.method == Method::jt || cfg.method == Method::ng)
    throw std::invalid_argument("difficulty orderings need a continual method");

  auto state = initial_train(stream, cfg);

  std::map<int, std::vector<dataset::FeatureSample>> per_class;
  std::vector<std::vector<dataset::FeatureSample>> bonafide_slots(stream.tasks.size());
  for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
    for (const auto& s : stream.tasks[k]) {
      if (s.true_class >= 2)
        per_class[s.true_class].push_back(s);
      else if (s.true_class == 0)
        bonafide_slots[k].push_back(s);
    }
  }

  OrderingResult result;
  std::vector<int> remaining;
  for (const auto& [cls, _] : per_class) remaining.push_back(cls);

  for (std::size_t pick = 0; !remaining.empty(); ++pick) {
    std::map<int, double> rates;
    for (int cls : remaining) rates[cls] = detection_rate(state.model, per_class[cls]);
    int chosen = remaining.front();
    for (int cls : remaining) {
      const bool better = direction == Ordering::ed ? rates[cls] > rates[chosen]
                                                    : rates[cls] < rates[chosen];
      if (better || (rates[cls] == rates[chosen] && cls < chosen)) chosen = cls;
    }
    if (observer) observer(state.model, rates, chosen);

    std::vector<dataset::FeatureSample> batch = per_class[chosen];
    if (pick < bonafide_slots.size())
      batch.insert(batch.end(), bonafide_slots[pick].begin(), bonafide_slots[pick].end());
    result.records.push_back(
        continual_step(state, batch, stream.test_set, static_cast<int>(pick + 1), cfg));
    result.realized_order.push_back(chosen);
    result.rates_per_pick.push_back(std::move(rates));
    remaining.erase(std::find(remaining.begin(), remaining.end(), chosen));
  }
  result.final_model = std::move(state.model);
  return result;
}

}  // namespace nacl::engine
