#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nacl/engine.hpp"
#include "nacl/rng.hpp"

using namespace nacl;
using namespace nacl::engine;

namespace {

dataset::TaskStream small_stream(int attack_classes, double separation, std::uint64_t seed,
                                 int per_class_train = 40, int per_class_test = 15) {
  dataset::SyntheticConfig sc;
  sc.dimension = 8;
  sc.attack_classes = attack_classes;
  sc.per_class_train = per_class_train;
  sc.per_class_test = per_class_test;
  sc.separation = separation;
  sc.seed = seed;
  return dataset::generate_synthetic_stream(sc);
}

EngineConfig fast_config(std::uint64_t seed, int batches = 400) {
  EngineConfig cfg;
  cfg.train.num_batches = batches;
  cfg.train.batch_size = 40;
  cfg.train.learning_rate = 1e-3;
  cfg.train.seed = seed;
  cfg.budget = 10;
  return cfg;
}

bool models_equal(const mlp::MlpModel& a, const mlp::MlpModel& b) {
  if (a.layer_sizes != b.layer_sizes) return false;
  for (int l = 0; l < a.n_layers(); ++l)
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  return true;
}

bool records_equal(const StepRecord& a, const StepRecord& b) {
  return a.task_index == b.task_index && a.method == b.method && a.seed == b.seed &&
         a.apcer == b.apcer && a.bpcer == b.bpcer && a.acer == b.acer &&
         a.pollution_buffer == b.pollution_buffer && a.pollution_used == b.pollution_used &&
         a.novel_detected == b.novel_detected;
}

replay::BufferEntry make_entry(long long id, const Eigen::VectorXd& x, int true_class,
                               int assigned) {
  replay::BufferEntry e;
  e.sample.id = id;
  e.sample.features = x;
  e.sample.true_class = true_class;
  e.assigned_label = assigned;
  e.label_source = replay::LabelSource::predicted;
  return e;
}

// plain-scalar reimplementation of the rehearsal objective, independent of
// the library's forward pass
double scalar_objective(const mlp::MlpModel& model, const mlp::MlpModel& snapshot,
                        const std::vector<std::vector<double>>& novel_x,
                        const std::vector<int>& novel_y,
                        const std::vector<std::vector<double>>& buffer_x,
                        const std::vector<int>& buffer_y, double lambda) {
  auto layer_out = [](const mlp::MlpModel& m, const std::vector<double>& x, bool to_embedding) {
    std::vector<double> a = x;
    const int last = to_embedding ? m.n_layers() - 2 : m.n_layers() - 1;
    for (int l = 0; l <= last; ++l) {
      std::vector<double> next(m.weights[l].rows(), 0.0);
      for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r) {
        double s = m.biases[l](r);
        for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c) s += m.weights[l](r, c) * a[c];
        next[r] = s;
      }
      if (l < m.n_layers() - 1)
        for (auto& v : next) v = std::max(0.0, v);
      else {
        double mx = next[0];
        for (double v : next) mx = std::max(mx, v);
        double z = 0.0;
        for (auto& v : next) {
          v = std::exp(v - mx);
          z += v;
        }
        for (auto& v : next) v /= z;
      }
      a = std::move(next);
    }
    return a;
  };

  double ce = 0.0;
  for (std::size_t i = 0; i < novel_x.size(); ++i)
    ce -= std::log(layer_out(model, novel_x[i], false)[novel_y[i]]);
  for (std::size_t i = 0; i < buffer_x.size(); ++i)
    ce -= std::log(layer_out(model, buffer_x[i], false)[buffer_y[i]]);
  double value = ce / static_cast<double>(novel_x.size() + buffer_x.size());
  if (!buffer_x.empty() && lambda != 0.0) {
    double drift = 0.0;
    for (std::size_t i = 0; i < buffer_x.size(); ++i) {
      auto now = layer_out(model, buffer_x[i], true);
      auto then = layer_out(snapshot, buffer_x[i], true);
      for (std::size_t k = 0; k < now.size(); ++k)
        drift += (now[k] - then[k]) * (now[k] - then[k]);
    }
    value += lambda * drift / static_cast<double>(buffer_x.size());
  }
  return value;
}

}  // namespace

TEST_CASE("initial training reaches the known classes and fills the buffer evenly") {
  auto stream = small_stream(2, 10.0, 3);
  auto cfg = fast_config(1);
  auto state = initial_train(stream, cfg);

  std::vector<dataset::FeatureSample> known_test;
  for (const auto& s : stream.test_set)
    if (s.true_class <= 1) known_test.push_back(s);
  auto outcome = evaluate_binary(state.model, known_test);
  const double accuracy =
      1.0 - static_cast<double>(outcome.attack_as_bonafide + outcome.bonafide_as_attack) /
                static_cast<double>(outcome.n_attack + outcome.n_bonafide);
  CHECK(accuracy >= 0.95);

  // 40 bona-fide + 40 attack candidates, budget 10 per class
  CHECK(state.buffer.entries.size() == 20);
  int bf = 0;
  for (const auto& e : state.buffer.entries)
    if (e.assigned_label == 0) ++bf;
  CHECK(bf == 10);
  for (const auto& e : state.buffer.entries)
    CHECK(e.label_source == replay::LabelSource::ground_truth);

  SUBCASE("budget above the candidate count keeps everything") {
    cfg.budget = 500;
    auto big = initial_train(stream, cfg);
    CHECK(big.buffer.entries.size() == stream.initial.samples.size());
  }
  SUBCASE("same seed reproduces model and buffer exactly") {
    auto again = initial_train(stream, cfg);
    CHECK(models_equal(state.model, again.model));
    REQUIRE(again.buffer.entries.size() == state.buffer.entries.size());
    for (std::size_t i = 0; i < state.buffer.entries.size(); ++i)
      CHECK(state.buffer.entries[i].sample.id == again.buffer.entries[i].sample.id);
  }
}

TEST_CASE("novel detection basics") {
  auto ternary = mlp::expand_to_ternary(
      mlp::reinitialize(mlp::make_model({4, 6, 5, 2}), 3), 4);

  SUBCASE("empty batch gives an empty result") {
    CHECK(detect_novel(ternary, {}).empty());
  }
  SUBCASE("binary model is rejected") {
    auto binary = mlp::reinitialize(mlp::make_model({4, 6, 5, 2}), 3);
    std::vector<dataset::FeatureSample> batch(1);
    batch[0].features = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_WITH_AS(detect_novel(binary, batch), doctest::Contains("ternary"),
                         std::invalid_argument);
  }
  SUBCASE("a sample whose third logit dominates is detected") {
    // force the outside class to win everywhere
    auto forced = ternary;
    forced.weights.back().setZero();
    forced.biases.back() << -1.0, -1.0, 5.0;
    std::vector<dataset::FeatureSample> batch(3);
    for (int i = 0; i < 3; ++i) {
      batch[i].id = i;
      batch[i].true_class = 5;
      batch[i].features = Eigen::VectorXd::Constant(4, static_cast<double>(i));
    }
    auto novel = detect_novel(forced, batch);
    REQUIRE(novel.size() == 3);
    for (const auto& e : novel) {
      CHECK(e.assigned_label == 1);
      CHECK(e.label_source == replay::LabelSource::predicted);
    }
    auto truth = detect_novel(forced, batch, true);
    for (const auto& e : truth) {
      CHECK(e.assigned_label == 1);  // true_class 5 is an attack
      CHECK(e.label_source == replay::LabelSource::ground_truth);
    }
  }
}

TEST_CASE("a well-separated novel cluster is detected with high recall") {
  auto stream = small_stream(2, 10.0, 7, 60, 20);
  auto cfg = fast_config(2, 600);
  auto state = initial_train(stream, cfg);

  // build the expanded head exactly as the protocol does
  Eigen::MatrixXd X(stream.dimension, state.buffer.entries.size());
  for (std::size_t i = 0; i < state.buffer.entries.size(); ++i)
    X.col(static_cast<Eigen::Index>(i)) = state.buffer.entries[i].sample.features;
  Eigen::MatrixXd Z = mlp::embed_batch(state.model, X);
  std::vector<std::pair<Eigen::VectorXd, int>> reals;
  for (std::size_t i = 0; i < state.buffer.entries.size(); ++i)
    reals.emplace_back(Z.col(static_cast<Eigen::Index>(i)),
                       state.buffer.entries[i].assigned_label);
  auto pseudo = otds::build_pseudo_dataset(state.distribution, reals, 300, cfg.tau,
                                           cfg.membership_mode, 11);
  auto ternary = mlp::expand_to_ternary(state.model, 12);
  std::vector<std::pair<Eigen::VectorXd, int>> augmented = pseudo.reals;
  for (const auto& z : pseudo.negatives) augmented.emplace_back(z, 2);
  auto head_cfg = cfg.train;
  head_cfg.seed = 13;
  ternary = mlp::train(std::move(ternary), augmented, mlp::Space::embedding, head_cfg);

  auto novel = detect_novel(ternary, stream.tasks[0]);
  std::size_t cluster_size = 0, detected = 0;
  for (const auto& s : stream.tasks[0])
    if (s.true_class >= 2) ++cluster_size;
  for (const auto& e : novel)
    if (e.sample.true_class >= 2) ++detected;
  REQUIRE(cluster_size > 0);
  CHECK(static_cast<double>(detected) / static_cast<double>(cluster_size) >= 0.9);
}

TEST_CASE("rehearsal objective equals the plain supervised loss when the extras vanish") {
  auto model = mlp::reinitialize(mlp::make_model({3, 6, 4, 2}), 17);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 12;
  Eigen::MatrixXd Xbuf(3, n);
  std::vector<int> ybuf(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) Xbuf(k, i) = gauss(rng);
    ybuf[i] = i % 2;
  }
  Eigen::MatrixXd empty(3, 0);
  std::vector<int> no_labels;

  const double objective =
      rehearsal_objective(model, model, empty, no_labels, Xbuf, ybuf, 0.0);
  const double plain = mlp::ce_loss_batch(model, Xbuf, ybuf, mlp::Space::feature);
  CHECK(std::abs(objective - plain) < 1e-12);

  // identical encoders: the drift term contributes nothing at any lambda
  const double anchored =
      rehearsal_objective(model, model, empty, no_labels, Xbuf, ybuf, 7.5);
  CHECK(std::abs(anchored - plain) < 1e-12);
}

TEST_CASE("rehearsal objective matches an independently assembled three-term sum") {
  auto model = mlp::reinitialize(mlp::make_model({3, 5, 4, 2}), 23);
  auto snapshot = mlp::reinitialize(mlp::make_model({3, 5, 4, 2}), 24);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int n_nov = 5, n_buf = 7;
  Eigen::MatrixXd Xnov(3, n_nov), Xbuf(3, n_buf);
  std::vector<int> ynov(n_nov), ybuf(n_buf);
  std::vector<std::vector<double>> nov_rows, buf_rows;
  for (int i = 0; i < n_nov; ++i) {
    std::vector<double> row(3);
    for (int k = 0; k < 3; ++k) Xnov(k, i) = row[k] = gauss(rng);
    ynov[i] = 1;
    nov_rows.push_back(row);
  }
  for (int i = 0; i < n_buf; ++i) {
    std::vector<double> row(3);
    for (int k = 0; k < 3; ++k) Xbuf(k, i) = row[k] = gauss(rng);
    ybuf[i] = i % 2;
    buf_rows.push_back(row);
  }

  for (double lambda : {0.0, 0.1, 1.0, 10.0}) {
    const double ours = rehearsal_objective(model, snapshot, Xnov, ynov, Xbuf, ybuf, lambda);
    const double reference =
        scalar_objective(model, snapshot, nov_rows, ynov, buf_rows, ybuf, lambda);
    CHECK(std::abs(ours - reference) / std::abs(reference) < 1e-10);
  }
}

TEST_CASE("rehearsal update with lambda zero and no novel equals plain training") {
  auto stream = small_stream(2, 8.0, 19);
  auto cfg = fast_config(4, 120);
  auto state = initial_train(stream, cfg);

  auto fresh = mlp::reinitialize(state.model, 99);
  auto update_cfg = cfg.train;
  update_cfg.seed = 123;
  auto updated =
      pseudo_rehearsal_update(fresh, state.model, {}, state.buffer.entries, 0.0, update_cfg);

  std::vector<std::pair<Eigen::VectorXd, int>> pairs;
  for (const auto& e : state.buffer.entries)
    pairs.emplace_back(e.sample.features, e.assigned_label);
  auto trained = mlp::train(fresh, pairs, mlp::Space::feature, update_cfg);
  CHECK(models_equal(updated, trained));
}

TEST_CASE("rehearsal update validates its inputs") {
  auto model = mlp::reinitialize(mlp::make_model({3, 5, 4, 2}), 1);
  auto update_cfg = mlp::TrainConfig{};
  CHECK_THROWS_WITH_AS(pseudo_rehearsal_update(model, model, {}, {}, 1.0, update_cfg),
                       doctest::Contains("novel samples or buffer"), std::invalid_argument);
  auto ternary = mlp::expand_to_ternary(model, 2);
  auto entry = make_entry(0, Eigen::VectorXd::Zero(3), 0, 0);
  CHECK_THROWS_WITH_AS(pseudo_rehearsal_update(ternary, model, {entry}, {}, 1.0, update_cfg),
                       doctest::Contains("binary"), std::invalid_argument);
}

TEST_CASE("static training yields a constant learning curve") {
  auto stream = small_stream(3, 9.0, 5);
  auto cfg = fast_config(6);
  cfg.method = Method::st;
  auto records = run_protocol(stream, cfg);
  REQUIRE(records.size() == stream.tasks.size());
  for (std::size_t t = 0; t < records.size(); ++t) {
    CHECK(records[t].task_index == static_cast<int>(t + 1));
    CHECK(records[t].apcer == records[0].apcer);
    CHECK(records[t].bpcer == records[0].bpcer);
    CHECK(records[t].acer == records[0].acer);
    CHECK_FALSE(records[t].pollution_buffer.has_value());
    CHECK_FALSE(records[t].novel_detected.has_value());
  }
}

TEST_CASE("acer identity holds exactly on every record") {
  auto stream = small_stream(3, 9.0, 8);
  for (Method m : {Method::st, Method::jt, Method::nacl, Method::rs, Method::fr, Method::ng,
                   Method::dl, Method::frr}) {
    auto cfg = fast_config(2, 250);
    cfg.method = m;
    for (const auto& r : run_protocol(stream, cfg)) {
      CHECK(r.acer == (r.apcer + r.bpcer) / 2.0);
      CHECK(r.apcer >= 0.0);
      CHECK(r.apcer <= 1.0);
      CHECK(r.bpcer >= 0.0);
      CHECK(r.bpcer <= 1.0);
    }
  }
}

TEST_CASE("delayed labels never pollute the buffer") {
  auto stream = small_stream(3, 6.0, 21);
  auto cfg = fast_config(3, 250);
  cfg.method = Method::dl;
  for (const auto& r : run_protocol(stream, cfg)) {
    REQUIRE(r.pollution_buffer.has_value());
    CHECK(*r.pollution_buffer == 0.0);
  }
}

TEST_CASE("full replay never evicts") {
  auto stream = small_stream(3, 9.0, 22);
  auto cfg = fast_config(5, 250);
  cfg.method = Method::fr;
  auto state = initial_train(stream, cfg);
  CHECK(state.buffer.entries.size() == stream.initial.samples.size());
  auto result = run_protocol_full(stream, cfg);
  std::size_t expected = stream.initial.samples.size();
  for (const auto& r : result.records) expected += static_cast<std::size_t>(*r.novel_detected);
  CHECK(result.final_buffer.entries.size() == expected);
}

TEST_CASE("a step without novel detections proceeds on the buffer alone") {
  // the scheduled "novel" class sits pinned on the known attack cluster's
  // center, so the expanded head sees nothing outside the training
  // distribution and the step falls back to a buffer-only update
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<dataset::FeatureSample> samples;
  long long id = 0;
  auto add_cluster = [&](int cls, double cx, int train_n, int test_n, double spread) {
    for (int i = 0; i < train_n + test_n; ++i) {
      dataset::FeatureSample s;
      s.id = id++;
      s.true_class = cls;
      s.split = i < train_n ? dataset::Split::train : dataset::Split::test;
      s.features.resize(4);
      for (int k = 0; k < 4; ++k) s.features[k] = spread * gauss(rng) + (k == 0 ? cx : 0.0);
      samples.push_back(std::move(s));
    }
  };
  add_cluster(0, 0.0, 40, 15, 1.0);
  add_cluster(1, 12.0, 40, 15, 1.0);
  add_cluster(2, 12.0, 40, 15, 0.01);  // dead center of the known attack cluster
  auto stream = dataset::assemble_stream(samples, {{2}}, 0.0, 77);

  auto cfg = fast_config(1, 300);
  cfg.method = Method::nacl;
  auto records = run_protocol(stream, cfg);
  REQUIRE(records.size() == 1);
  CHECK(*records[0].novel_detected == 0);
  CHECK(std::isfinite(records[0].acer));
  REQUIRE(records[0].pollution_buffer.has_value());
  CHECK(*records[0].pollution_buffer == 0.0);  // buffer refilled from itself
}

TEST_CASE("the full pipeline is deterministic") {
  auto stream = small_stream(3, 8.0, 31);
  for (Method m : {Method::nacl, Method::rs, Method::ng}) {
    auto cfg = fast_config(9, 200);
    cfg.method = m;
    auto a = run_protocol(stream, cfg);
    auto b = run_protocol(stream, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(records_equal(a[i], b[i]));
  }
}

TEST_CASE("no-replay runs complete and keep no buffer") {
  auto stream = small_stream(3, 9.0, 41);
  auto cfg = fast_config(2, 250);
  cfg.method = Method::nacl;
  cfg.budget = 0;
  auto result = run_protocol_full(stream, cfg);
  REQUIRE(result.records.size() == stream.tasks.size());
  CHECK(result.final_buffer.entries.empty());
  for (const auto& r : result.records) {
    CHECK_FALSE(r.pollution_buffer.has_value());
    CHECK(r.pollution_used.has_value());
  }
}

TEST_CASE("difficulty ordering picks by detection rate") {
  auto stream = small_stream(4, 9.0, 51);
  auto cfg = fast_config(3, 250);

  for (Ordering direction : {Ordering::ed, Ordering::de}) {
    std::vector<std::map<int, double>> observed_rates;
    std::vector<int> observed_picks;
    auto result = difficulty_ordering(
        stream, cfg, direction,
        [&](const mlp::MlpModel&, const std::map<int, double>& rates, int chosen) {
          observed_rates.push_back(rates);
          observed_picks.push_back(chosen);
        });

    REQUIRE(result.realized_order.size() == 3);  // classes 2, 3, 4
    CHECK(result.realized_order == observed_picks);
    for (std::size_t pick = 0; pick < observed_rates.size(); ++pick) {
      const auto& rates = observed_rates[pick];
      const int chosen = observed_picks[pick];
      for (const auto& [cls, rate] : rates) {
        if (direction == Ordering::ed)
          CHECK(rates.at(chosen) >= rate);
        else
          CHECK(rates.at(chosen) <= rate);
      }
    }
    std::set<int> seen(result.realized_order.begin(), result.realized_order.end());
    CHECK(seen == std::set<int>{2, 3, 4});
    CHECK(result.records.size() == 3);
  }

  CHECK_THROWS_AS(
      [&] {
        auto bad = cfg;
        bad.method = Method::st;
        difficulty_ordering(stream, bad, Ordering::ed);
      }(),
      std::invalid_argument);
}

TEST_CASE("joint training gives a flat curve at the separability optimum") {
  auto stream = small_stream(3, 10.0, 61);
  auto cfg = fast_config(7, 600);
  cfg.method = Method::jt;
  auto records = run_protocol(stream, cfg);
  REQUIRE(records.size() == stream.tasks.size());
  for (const auto& r : records) CHECK(r.acer == records[0].acer);
  CHECK(records.back().acer <= 0.05);
}
