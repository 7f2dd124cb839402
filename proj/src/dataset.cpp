#include "nacl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "nacl/rng.hpp"

namespace nacl::dataset {

namespace {

constexpr std::uint64_t kTagMeans = 0xD5;
constexpr std::uint64_t kTagSamples = 0xD6;
constexpr std::uint64_t kTagAssemble = 0xD7;
constexpr std::uint64_t kTagTaskBonafide = 0x200;
constexpr std::uint64_t kTagSplitClass = 0x300;

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, int line_no, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("row at line " + std::to_string(line_no) +
                             ": non-numeric " + what + " '" + text + "'");
  }
}

long long parse_int(const std::string& text, int line_no, const std::string& what) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(text, &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("row at line " + std::to_string(line_no) +
                             ": non-numeric " + what + " '" + text + "'");
  }
}

}  // namespace

TaskStream generate_synthetic_stream(const SyntheticConfig& cfg) {
  if (cfg.dimension < 2) throw std::invalid_argument("dimension must be >= 2");
  if (cfg.attack_classes < 2) throw std::invalid_argument("attack_classes must be >= 2");
  if (cfg.per_class_train < 10 || cfg.per_class_test < 10)
    throw std::invalid_argument("per-class counts must be >= 10");
  if (cfg.separation <= 0.0) throw std::invalid_argument("separation must be positive");
  if (cfg.attacks_per_task != 1 && cfg.attacks_per_task != 2)
    throw std::invalid_argument("attacks_per_task must be 1 or 2");
  if (cfg.bonafide_fraction < 0.0 || cfg.bonafide_fraction >= 1.0)
    throw std::invalid_argument("bonafide_fraction must be in [0, 1)");
  if (cfg.dimension < cfg.attack_classes)
    throw std::invalid_argument(
        "cannot place " + std::to_string(cfg.attack_classes + 1) +
        " clusters at separation " + std::to_string(cfg.separation) + " in dimension " +
        std::to_string(cfg.dimension) +
        ": a simplex-like arrangement needs dimension >= attack_classes");

  const int n_clusters = cfg.attack_classes + 1;
  auto rng = make_rng(cfg.seed, kTagMeans);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<Eigen::VectorXd> means(n_clusters);
  for (auto& m : means) {
    m.resize(cfg.dimension);
    for (int i = 0; i < cfg.dimension; ++i) m[i] = gauss(rng);
  }

  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < n_clusters; ++a)
    for (int b = a + 1; b < n_clusters; ++b)
      min_dist = std::min(min_dist, (means[a] - means[b]).norm());
  if (!(min_dist > 1e-9))
    throw std::runtime_error("degenerate cluster mean draw; retry with another seed");
  const double scale = cfg.separation / min_dist;
  for (auto& m : means) m *= scale;

  auto sample_rng = make_rng(cfg.seed, kTagSamples);
  std::vector<FeatureSample> samples;
  samples.reserve(static_cast<std::size_t>(n_clusters) *
                  (cfg.per_class_train + cfg.per_class_test));
  long long next_id = 0;
  for (int c = 0; c < n_clusters; ++c) {
    const int total = cfg.per_class_train + cfg.per_class_test;
    for (int i = 0; i < total; ++i) {
      FeatureSample s;
      s.id = next_id++;
      s.true_class = c;
      s.split = i < cfg.per_class_train ? Split::train : Split::test;
      s.features.resize(cfg.dimension);
      for (int k = 0; k < cfg.dimension; ++k) s.features[k] = means[c][k] + gauss(sample_rng);
      samples.push_back(std::move(s));
    }
  }

  std::vector<int> stream_classes(cfg.attack_classes);
  std::iota(stream_classes.begin(), stream_classes.end(), 1);
  std::vector<int> ordering(stream_classes.begin() + 1, stream_classes.end());
  auto schedule = build_protocol(stream_classes, cfg.attacks_per_task, ordering);
  return assemble_stream(samples, schedule, cfg.bonafide_fraction,
                         seed_mix(cfg.seed, kTagAssemble));
}

std::vector<FeatureSample> load_feature_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open feature table '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("feature table '" + path + "': empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_line(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "true_class" || header[2] != "split")
    throw std::runtime_error("feature table '" + path +
                             "': header must start with id,true_class,split");
  bool has_group = header.size() > 3 && header[3] == "group";
  const std::size_t first_feature = has_group ? 4 : 3;
  const int dim = static_cast<int>(header.size() - first_feature);
  if (dim < 1) throw std::runtime_error("feature table '" + path + "': no feature columns");
  for (int k = 0; k < dim; ++k) {
    if (header[first_feature + k] != "f" + std::to_string(k))
      throw std::runtime_error("feature table '" + path + "': feature column " +
                               std::to_string(k) + " must be named f" + std::to_string(k));
  }

  std::vector<FeatureSample> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != header.size())
      throw std::runtime_error("row at line " + std::to_string(line_no) + ": expected " +
                               std::to_string(header.size()) + " columns, got " +
                               std::to_string(fields.size()));
    FeatureSample s;
    s.id = parse_int(fields[0], line_no, "id");
    s.true_class = static_cast<int>(parse_int(fields[1], line_no, "true_class"));
    if (s.true_class < 0)
      throw std::runtime_error("row at line " + std::to_string(line_no) + ": negative class id");
    if (fields[2] == "train")
      s.split = Split::train;
    else if (fields[2] == "test")
      s.split = Split::test;
    else
      throw std::runtime_error("row at line " + std::to_string(line_no) + ": unknown split tag '" +
                               fields[2] + "'");
    if (has_group) s.group = fields[3];
    s.features.resize(dim);
    for (int k = 0; k < dim; ++k)
      s.features[k] = parse_double(fields[first_feature + k], line_no, "feature f" + std::to_string(k));
    if (!s.features.allFinite())
      throw std::runtime_error("row at line " + std::to_string(line_no) + ": non-finite feature");
    out.push_back(std::move(s));
  }
  return out;
}

void save_feature_table(const std::string& path, const std::vector<FeatureSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write feature table '" + path + "'");
  const int dim = samples.empty() ? 0 : static_cast<int>(samples.front().features.size());
  bool has_group = std::any_of(samples.begin(), samples.end(),
                               [](const FeatureSample& s) { return !s.group.empty(); });
  out << "id,true_class,split";
  if (has_group) out << ",group";
  for (int k = 0; k < dim; ++k) out << ",f" << k;
  out << "\n";
  char buf[64];
  for (const auto& s : samples) {
    out << s.id << ',' << s.true_class << ',' << (s.split == Split::train ? "train" : "test");
    if (has_group) out << ',' << s.group;
    for (int k = 0; k < dim; ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", s.features[k]);
      out << ',' << buf;
    }
    out << "\n";
  }
}

std::pair<std::vector<FeatureSample>, std::vector<FeatureSample>>
split_grandtest(const std::vector<FeatureSample>& samples, double test_fraction,
                std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must be in (0, 1)");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].true_class].push_back(i);
  for (const auto& [cls, idx] : by_class) {
    if (idx.size() < 2)
      throw std::invalid_argument("class " + std::to_string(cls) +
                                  " has fewer than 2 samples; cannot split");
  }

  std::vector<char> to_test(samples.size(), 0);
  for (const auto& [cls, idx] : by_class) {
    const std::size_t target = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction)));
    auto rng = make_rng(seed, kTagSplitClass + static_cast<std::uint64_t>(cls));

    bool grouped = cls == 0 && std::any_of(idx.begin(), idx.end(), [&](std::size_t i) {
                     return !samples[i].group.empty();
                   });
    if (grouped) {
      // group-disjoint bona-fide assignment: whole groups move to test until
      // the per-class target is reached
      std::map<std::string, std::vector<std::size_t>> groups;
      for (auto i : idx) groups[samples[i].group].push_back(i);
      std::vector<std::string> names;
      for (const auto& [g, _] : groups) names.push_back(g);
      std::shuffle(names.begin(), names.end(), rng);
      std::size_t placed = 0;
      for (const auto& g : names) {
        if (placed >= target) break;
        for (auto i : groups[g]) to_test[i] = 1;
        placed += groups[g].size();
      }
    } else {
      std::vector<std::size_t> shuffled = idx;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      for (std::size_t k = 0; k < target && k < shuffled.size(); ++k) to_test[shuffled[k]] = 1;
    }
  }

  std::vector<FeatureSample> train, test;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (to_test[i] ? test : train).push_back(samples[i]);
  return {std::move(train), std::move(test)};
}

std::vector<std::vector<int>> build_protocol(const std::vector<int>& stream_classes,
                                             int attacks_per_task,
                                             const std::vector<int>& ordering) {
  if (attacks_per_task != 1 && attacks_per_task != 2)
    throw std::invalid_argument("attacks_per_task must be 1 or 2");

  std::multiset<int> expected;
  for (int c : stream_classes)
    if (c >= 2) expected.insert(c);
  std::multiset<int> got(ordering.begin(), ordering.end());
  if (expected != got) {
    std::string missing, dup;
    for (int c : expected)
      if (got.count(c) == 0) missing += (missing.empty() ? "" : ",") + std::to_string(c);
    std::set<int> seen;
    for (int c : ordering) {
      if (got.count(c) > 1 || expected.count(c) == 0) {
        if (!seen.insert(c).second) continue;
        dup += (dup.empty() ? "" : ",") + std::to_string(c);
      }
    }
    throw std::invalid_argument("ordering is not a permutation of attack classes >= 2 (missing: [" +
                                missing + "], duplicate/foreign: [" + dup + "])");
  }

  std::vector<std::vector<int>> schedule;
  for (std::size_t i = 0; i < ordering.size(); i += attacks_per_task) {
    std::vector<int> chunk;
    for (std::size_t j = i; j < std::min(ordering.size(), i + attacks_per_task); ++j)
      chunk.push_back(ordering[j]);
    schedule.push_back(std::move(chunk));
  }
  return schedule;
}

TaskStream assemble_stream(const std::vector<FeatureSample>& samples,
                           const std::vector<std::vector<int>>& schedule,
                           double bonafide_fraction, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("no samples");
  if (bonafide_fraction < 0.0 || bonafide_fraction >= 1.0)
    throw std::invalid_argument("bonafide_fraction must be in [0, 1)");
  const int dim = static_cast<int>(samples.front().features.size());
  for (const auto& s : samples)
    if (s.features.size() != dim) throw std::invalid_argument("inconsistent feature dimension");

  TaskStream stream;
  stream.dimension = dim;

  std::vector<const FeatureSample*> bf_pool;
  std::map<int, std::vector<const FeatureSample*>> train_by_class;
  std::set<int> attack_classes;
  for (const auto& s : samples) {
    if (s.true_class >= 1) attack_classes.insert(s.true_class);
    if (s.split == Split::test) {
      stream.test_set.push_back(s);
      continue;
    }
    train_by_class[s.true_class].push_back(&s);
    if (s.true_class == 0) bf_pool.push_back(&s);
  }
  if (bf_pool.empty()) throw std::invalid_argument("no bona-fide training samples");
  if (train_by_class.count(1) == 0) throw std::invalid_argument("no class-1 training samples");

  std::set<int> scheduled;
  for (const auto& chunk : schedule)
    for (int c : chunk) {
      if (!scheduled.insert(c).second)
        throw std::invalid_argument("class " + std::to_string(c) + " scheduled twice");
      if (c < 2) throw std::invalid_argument("scheduled class ids must be >= 2");
      if (train_by_class.count(c) == 0 || train_by_class[c].empty())
        throw std::invalid_argument("scheduled class " + std::to_string(c) +
                                    " has no training samples");
    }
  std::set<int> covered = scheduled;
  covered.insert(1);
  if (covered != attack_classes)
    throw std::invalid_argument("schedule plus initial class do not cover the attack classes");

  for (const auto& s : samples) {
    if (s.split != Split::train || s.true_class > 1) continue;
    stream.initial.samples.push_back(s);
    stream.initial.assigned_labels.push_back(s.true_class >= 1 ? 1 : 0);
  }
  stream.initial_attack_classes = {1};

  for (std::size_t k = 0; k < schedule.size(); ++k) {
    std::vector<FeatureSample> batch;
    for (int c : schedule[k])
      for (const auto* s : train_by_class[c]) batch.push_back(*s);
    const std::size_t n_att = batch.size();
    std::size_t n_bf = 0;
    if (bonafide_fraction > 0.0) {
      n_bf = static_cast<std::size_t>(std::llround(
          static_cast<double>(n_att) * bonafide_fraction / (1.0 - bonafide_fraction)));
      n_bf = std::min(n_bf, bf_pool.size());
    }
    if (n_bf > 0) {
      std::vector<std::size_t> order(bf_pool.size());
      std::iota(order.begin(), order.end(), 0);
      auto rng = make_rng(seed, kTagTaskBonafide + static_cast<std::uint64_t>(k));
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(n_bf);
      std::sort(order.begin(), order.end());
      for (auto i : order) batch.push_back(*bf_pool[i]);
    }
    if (batch.empty()) throw std::invalid_argument("task batch " + std::to_string(k + 1) + " is empty");
    stream.tasks.push_back(std::move(batch));
    stream.attack_schedule.push_back(schedule[k]);
  }

  std::unordered_set<long long> test_ids;
  for (const auto& s : stream.test_set) test_ids.insert(s.id);
  auto check_disjoint = [&](const FeatureSample& s) {
    if (test_ids.count(s.id))
      throw std::invalid_argument("sample id " + std::to_string(s.id) +
                                  " appears in both test and train data");
  };
  for (const auto& s : stream.initial.samples) check_disjoint(s);
  for (const auto& task : stream.tasks)
    for (const auto& s : task) check_disjoint(s);

  return stream;
}

}  // namespace nacl::dataset
