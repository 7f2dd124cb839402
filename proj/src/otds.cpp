#include "nacl/otds.hpp"

#include <random>
#include <stdexcept>

#include "nacl/rng.hpp"

namespace nacl::otds {

Eigen::VectorXd shell_point(const gmm::GmmModel& model, int component, const Eigen::VectorXd& u) {
  if (component < 0 || component > 1) throw std::invalid_argument("component must be 0 or 1");
  if (u.size() != model.dimension) throw std::invalid_argument("draw dimension mismatch");
  const auto& comp = model.components[component];
  const Eigen::VectorXd scaled = comp.chol.triangularView<Eigen::Lower>() * u;
  return comp.mean + 2.0 * scaled;
}

std::vector<Eigen::VectorXd> sample_shell(const gmm::GmmModel& model, int component, int count,
                                          std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  Eigen::VectorXd u(model.dimension);
  for (int i = 0; i < count; ++i) {
    for (int k = 0; k < model.dimension; ++k) u[k] = gauss(rng);
    out.push_back(shell_point(model, component, u));
  }
  return out;
}

PseudoDataset build_pseudo_dataset(const gmm::GmmModel& model,
                                   const std::vector<std::pair<Eigen::VectorXd, int>>& reals,
                                   int m_per_component, double tau, gmm::MembershipMode mode,
                                   std::uint64_t seed) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in (0, 1]");
  if (m_per_component < 0) throw std::invalid_argument("m_per_component must be >= 0");

  std::array<int, 2> counts{m_per_component, m_per_component};
  if (m_per_component == 0) counts = {0, 0};
  for (const auto& [z, y] : reals) {
    if (y != 0 && y != 1) throw std::invalid_argument("real labels must be binary");
    if (m_per_component == 0) ++counts[y];
  }

  PseudoDataset out;
  out.reals = reals;
  for (int j = 0; j < 2; ++j) {
    if (counts[j] < 1)
      throw std::invalid_argument("no negatives requested for component " + std::to_string(j) +
                                  "; provide reals or set m_per_component");
    // independent sub-seed per component so generation can be parallelized
    auto draws = sample_shell(model, j, counts[j], seed_mix(seed, static_cast<std::uint64_t>(j)));
    out.drawn[j] = counts[j];
    for (auto& z : draws) {
      if (gmm::membership(model, j, z, mode) <= tau) {
        out.negatives.push_back(std::move(z));
        ++out.kept[j];
      }
    }
    if (out.kept[j] == 0)
      throw std::runtime_error("no generated negatives survived the membership filter for component " +
                               std::to_string(j) + " (0/" + std::to_string(counts[j]) +
                               "); tau is too small or the covariance is degenerate");
  }
  return out;
}

}  // namespace nacl::otds
