#include "nacl/replay.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "nacl/rng.hpp"

namespace nacl::replay {

std::vector<BufferEntry> select_mof(const std::vector<BufferEntry>& candidates,
                                    const gmm::GmmModel& distribution,
                                    const mlp::MlpModel& encoder, std::size_t budget) {
  if (candidates.empty()) return {};
  Eigen::MatrixXd X(encoder.input_dim(), static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].assigned_label != 0 && candidates[i].assigned_label != 1)
      throw std::invalid_argument("assigned labels must be binary");
    X.col(static_cast<Eigen::Index>(i)) = candidates[i].sample.features;
  }
  Eigen::MatrixXd Z = mlp::embed_batch(encoder, X);

  std::vector<BufferEntry> kept;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::pair<double, std::size_t>> scored;  // (distance, index)
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].assigned_label != cls) continue;
      const double d =
          (distribution.components[cls].mean - Z.col(static_cast<Eigen::Index>(i))).squaredNorm();
      scored.emplace_back(d, i);
    }
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return candidates[a.second].sample.id < candidates[b.second].sample.id;
    });
    const std::size_t take = budget == 0 ? scored.size() : std::min(budget, scored.size());
    for (std::size_t k = 0; k < take; ++k) kept.push_back(candidates[scored[k].second]);
  }
  return kept;
}

std::vector<BufferEntry> select_random(const std::vector<BufferEntry>& candidates,
                                       std::size_t budget, std::uint64_t seed) {
  std::vector<BufferEntry> kept;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i].assigned_label == cls) idx.push_back(i);
    auto rng = make_rng(seed, static_cast<std::uint64_t>(cls));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t take = budget == 0 ? idx.size() : std::min(budget, idx.size());
    idx.resize(take);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) kept.push_back(candidates[i]);
  }
  return kept;
}

double pollution_rate(const std::vector<BufferEntry>& entries) {
  if (entries.empty()) return 0.0;
  std::size_t wrong = 0;
  for (const auto& e : entries)
    if (e.assigned_label != (e.sample.true_class >= 1 ? 1 : 0)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(entries.size());
}

double pollution_rate(const ReplayBuffer& buffer) { return pollution_rate(buffer.entries); }

void dump_buffer_csv(const std::string& path, const ReplayBuffer& buffer) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write buffer dump '" + path + "'");
  out << "id,true_class,assigned_label,label_source\n";
  for (const auto& e : buffer.entries)
    out << e.sample.id << ',' << e.sample.true_class << ',' << e.assigned_label << ','
        << (e.label_source == LabelSource::ground_truth ? "ground_truth" : "predicted") << "\n";
}

}  // namespace nacl::replay
