#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "nacl/replay.hpp"

using namespace nacl;
using namespace nacl::replay;

namespace {

// an encoder that passes features through unchanged: identity weights on a
// d -> d -> d -> 2 stack (inputs are kept nonnegative so ReLU is transparent)
mlp::MlpModel passthrough_encoder(int dim) {
  auto model = mlp::make_model({dim, dim, dim, 2});
  model.weights[0] = Eigen::MatrixXd::Identity(dim, dim);
  model.weights[1] = Eigen::MatrixXd::Identity(dim, dim);
  return model;
}

gmm::GmmModel centers_model(const Eigen::VectorXd& mu0, const Eigen::VectorXd& mu1) {
  gmm::GmmModel model;
  model.dimension = static_cast<int>(mu0.size());
  for (int j = 0; j < 2; ++j) {
    auto& c = model.components[j];
    c.weight = 0.5;
    c.mean = j == 0 ? mu0 : mu1;
    c.covariance = Eigen::MatrixXd::Identity(model.dimension, model.dimension);
    c.chol = c.covariance;
  }
  return model;
}

BufferEntry entry(long long id, double x, double y, int true_class, int assigned,
                  LabelSource source = LabelSource::predicted) {
  BufferEntry e;
  e.sample.id = id;
  e.sample.true_class = true_class;
  e.sample.features.resize(2);
  e.sample.features << x, y;
  e.assigned_label = assigned;
  e.label_source = source;
  return e;
}

std::set<long long> ids_of(const std::vector<BufferEntry>& entries) {
  std::set<long long> ids;
  for (const auto& e : entries) ids.insert(e.sample.id);
  return ids;
}

}  // namespace

TEST_CASE("mean-of-features keeps the closest entries") {
  auto encoder = passthrough_encoder(2);
  auto model = centers_model(Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 0));
  std::vector<BufferEntry> candidates{
      entry(1, 11.0, 0, 1, 1),  // distance 1
      entry(2, 12.0, 0, 1, 1),  // distance 4
      entry(3, 13.0, 0, 1, 1),  // distance 9
      entry(4, 0.5, 0, 0, 0),
  };
  auto kept = select_mof(candidates, model, encoder, 2);
  CHECK(ids_of(kept) == std::set<long long>{1, 2, 4});
}

TEST_CASE("mean-of-features breaks ties toward the smaller id") {
  auto encoder = passthrough_encoder(2);
  auto model = centers_model(Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 0));
  std::vector<BufferEntry> candidates{
      entry(9, 10.0, 1.0, 1, 1),  // distance 1
      entry(4, 10.0, 1.0, 1, 1),  // distance 1, lower id wins
      entry(7, 10.0, 1.0, 1, 1),
      entry(1, 0.0, 0.5, 0, 0),
  };
  auto kept = select_mof(candidates, model, encoder, 2);
  CHECK(ids_of(kept) == std::set<long long>{4, 7, 1});
}

TEST_CASE("mean-of-features equals a brute-force distance sort") {
  auto encoder = passthrough_encoder(2);
  auto model = centers_model(Eigen::Vector2d(1, 2), Eigen::Vector2d(8, 3));
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> coord(0.0, 12.0);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<BufferEntry> candidates;
    const int n = 5 + static_cast<int>(rng() % 60);
    for (int i = 0; i < n; ++i)
      candidates.push_back(entry(i, coord(rng), coord(rng), static_cast<int>(rng() % 2),
                                 static_cast<int>(rng() % 2)));
    const std::size_t budget = 1 + rng() % 10;
    auto kept = select_mof(candidates, model, encoder, budget);

    // oracle: exhaustive sort of every candidate's distance per class
    std::set<long long> expected;
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<std::pair<double, long long>> scored;
      for (const auto& e : candidates) {
        if (e.assigned_label != cls) continue;
        const Eigen::VectorXd z = mlp::embed(encoder, e.sample.features);
        scored.emplace_back((model.components[cls].mean - z).squaredNorm(), e.sample.id);
      }
      std::sort(scored.begin(), scored.end());
      for (std::size_t k = 0; k < std::min(budget, scored.size()); ++k)
        expected.insert(scored[k].second);
    }
    CHECK(ids_of(kept) == expected);
  }
}

TEST_CASE("mean-of-features with a zero budget keeps everything") {
  auto encoder = passthrough_encoder(2);
  auto model = centers_model(Eigen::Vector2d(0, 0), Eigen::Vector2d(10, 0));
  std::vector<BufferEntry> candidates{entry(1, 1, 0, 1, 1), entry(2, 0, 1, 0, 0),
                                      entry(3, 2, 2, 1, 1)};
  CHECK(select_mof(candidates, model, encoder, 0).size() == 3);
}

TEST_CASE("random selection saturates the budget and is seeded") {
  std::vector<BufferEntry> candidates;
  for (int i = 0; i < 10; ++i) candidates.push_back(entry(i, i, 0, i % 2, i % 2));

  auto all = select_random(candidates, 50, 1);
  CHECK(all.size() == 10);

  auto a = select_random(candidates, 3, 42);
  auto b = select_random(candidates, 3, 42);
  CHECK(ids_of(a) == ids_of(b));
  CHECK(a.size() == 6);  // three per class
}

TEST_CASE("random selection inclusion frequencies are uniform") {
  const int n_per_class = 8;
  const std::size_t budget = 3;
  std::vector<BufferEntry> candidates;
  for (int i = 0; i < 2 * n_per_class; ++i) candidates.push_back(entry(i, i, 0, i % 2, i % 2));

  std::map<long long, int> included;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    for (const auto& e : select_random(candidates, budget, static_cast<std::uint64_t>(t)))
      ++included[e.sample.id];
  }
  const double p = static_cast<double>(budget) / n_per_class;
  const double sigma = std::sqrt(p * (1.0 - p) * trials);
  for (const auto& [id, count] : included)
    CHECK(std::abs(count - p * trials) <= 3.0 * sigma);
  CHECK(included.size() == candidates.size());
}

TEST_CASE("pollution rate counts assigned labels that disagree with ground truth") {
  std::vector<BufferEntry> entries;
  for (int i = 0; i < 9; ++i) entries.push_back(entry(i, 0, 0, 1, 1));
  entries.push_back(entry(9, 0, 0, 0, 1));  // bona-fide stored as attack
  ReplayBuffer buffer{entries, 0, Strategy::full};
  CHECK(pollution_rate(buffer) == doctest::Approx(0.10).epsilon(1e-12));
}

TEST_CASE("ground-truth labeled buffers have zero pollution") {
  std::vector<BufferEntry> entries;
  for (int i = 0; i < 12; ++i)
    entries.push_back(entry(i, 0, 0, i % 3 == 0 ? 0 : i % 3, (i % 3 == 0 ? 0 : i % 3) >= 1,
                            LabelSource::ground_truth));
  for (auto& e : entries) e.assigned_label = e.sample.true_class >= 1 ? 1 : 0;
  CHECK(pollution_rate(entries) == 0.0);
  CHECK(pollution_rate(std::vector<BufferEntry>{}) == 0.0);
}

TEST_CASE("pollution matches a hand count and ignores entry order") {
  std::vector<BufferEntry> entries{
      entry(0, 0, 0, 0, 0), entry(1, 0, 0, 0, 1), entry(2, 0, 0, 1, 1), entry(3, 0, 0, 2, 0),
      entry(4, 0, 0, 3, 1), entry(5, 0, 0, 0, 0), entry(6, 0, 0, 1, 0), entry(7, 0, 0, 0, 0),
  };
  // wrong entries: 1 (0 as attack), 3 (attack as bona-fide), 6 (attack as bona-fide)
  CHECK(pollution_rate(entries) == doctest::Approx(3.0 / 8.0).epsilon(1e-12));
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    std::shuffle(entries.begin(), entries.end(), rng);
    CHECK(pollution_rate(entries) == doctest::Approx(3.0 / 8.0).epsilon(1e-12));
  }
}

TEST_CASE("per-class budget is never exceeded") {
  auto encoder = passthrough_encoder(2);
  auto model = centers_model(Eigen::Vector2d(0, 0), Eigen::Vector2d(6, 6));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coord(0.0, 8.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<BufferEntry> candidates;
    for (int i = 0; i < 200; ++i)
      candidates.push_back(entry(i, coord(rng), coord(rng), static_cast<int>(rng() % 2),
                                 static_cast<int>(rng() % 2)));
    const std::size_t budget = 1 + rng() % 20;
    for (auto* kept : {new auto(select_mof(candidates, model, encoder, budget)),
                       new auto(select_random(candidates, budget, rng()))}) {
      std::map<int, std::size_t> per_class;
      for (const auto& e : *kept) ++per_class[e.assigned_label];
      for (const auto& [cls, count] : per_class) CHECK(count <= budget);
      delete kept;
    }
  }
}

TEST_CASE("buffer audit dump") {
  ReplayBuffer buffer;
  buffer.entries = {entry(3, 0, 0, 1, 1, LabelSource::ground_truth),
                    entry(5, 0, 0, 0, 1, LabelSource::predicted)};
  const std::string path = "buffer_audit.csv";
  dump_buffer_csv(path, buffer);
  std::ifstream in(path);
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "id,true_class,assigned_label,label_source");
  CHECK(row1 == "3,1,1,ground_truth");
  CHECK(row2 == "5,0,1,predicted");
  std::filesystem::remove(path);
}
