#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace nacl::gmm {

/// Two-component labeled Gaussian mixture over the embedding space.
/// Component 0 models bona-fide embeddings, component 1 attacks. chol is the
/// lower Cholesky factor of the jittered covariance.
struct GmmModel {
  struct Component {
    double weight = 0.0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    Eigen::MatrixXd chol;
  };
  std::array<Component, 2> components;
  double jitter = 0.0;  // value actually added to the diagonals
  int dimension = 0;
};

/// Lower Cholesky factor of cov + jitter*I. On failure the jitter escalates
/// by factors of 10 up to 1e-2 before giving up; the value used is written
/// back.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& covariance, double& jitter);

/// Decoupled MAP estimates per component: weight = class share, mean = class
/// mean, covariance = biased class covariance (divide by the class count).
GmmModel fit_map(const std::vector<Eigen::VectorXd>& embeddings, const std::vector<int>& labels,
                 double jitter = 1e-6);

double log_component_density(const GmmModel& model, int component, const Eigen::VectorXd& z);
double component_density(const GmmModel& model, int component, const Eigen::VectorXd& z);

/// Squared Mahalanobis distance of z to the component, under the jittered
/// covariance.
double mahalanobis_sq(const GmmModel& model, int component, const Eigen::VectorXd& z);

enum class MembershipMode { density_ratio, posterior };

/// density_ratio: N_j(z) / N_j(mean_j) = exp(-m^2/2) at Mahalanobis distance
/// m. posterior: weight_j N_j(z) / sum_c weight_c N_c(z), evaluated in log
/// space. If both densities vanish in posterior mode the prior weight is
/// returned and *degenerate is set.
double membership(const GmmModel& model, int component, const Eigen::VectorXd& z,
                  MembershipMode mode, bool* degenerate = nullptr);

void save_gmm(const std::string& path, const GmmModel& model);
GmmModel load_gmm(const std::string& path);

}  // namespace nacl::gmm
