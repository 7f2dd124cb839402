#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "nacl/gmm.hpp"

namespace nacl::otds {

/// Negatives from the overconfident region (class id 2) packaged with the
/// real labeled embeddings (class ids 0/1) for ternary head training.
struct PseudoDataset {
  std::vector<Eigen::VectorXd> negatives;
  std::vector<std::pair<Eigen::VectorXd, int>> reals;
  std::array<int, 2> drawn{0, 0};
  std::array<int, 2> kept{0, 0};
};

/// mean_j + 2 * chol_j * u for a caller-supplied draw u.
Eigen::VectorXd shell_point(const gmm::GmmModel& model, int component, const Eigen::VectorXd& u);

/// `count` seeded shell samples around the component; the transform doubles
/// the covariance root, so the draws concentrate outside the class cluster.
std::vector<Eigen::VectorXd> sample_shell(const gmm::GmmModel& model, int component, int count,
                                          std::uint64_t seed);

/// Draws m shell samples per component, keeps those with membership <= tau,
/// labels them class 2 and packages them with the real embeddings.
/// m_per_component == 0 matches each component's real sample count.
PseudoDataset build_pseudo_dataset(const gmm::GmmModel& model,
                                   const std::vector<std::pair<Eigen::VectorXd, int>>& reals,
                                   int m_per_component, double tau, gmm::MembershipMode mode,
                                   std::uint64_t seed);

}  // namespace nacl::otds
