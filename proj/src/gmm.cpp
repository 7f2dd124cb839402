#include "nacl/gmm.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace nacl::gmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_component(const GmmModel& model, int component, const Eigen::VectorXd& z) {
  if (component < 0 || component > 1) throw std::invalid_argument("component must be 0 or 1");
  if (z.size() != model.dimension)
    throw std::invalid_argument("embedding dimension mismatch: expected " +
                                std::to_string(model.dimension) + ", got " +
                                std::to_string(z.size()));
}

}  // namespace

Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& covariance, double& jitter) {
  if (covariance.rows() != covariance.cols())
    throw std::invalid_argument("covariance must be square");
  if (!covariance.allFinite()) throw std::runtime_error("covariance has non-finite entries");
  const Eigen::Index k = covariance.rows();
  double jit = jitter;
  while (true) {
    Eigen::MatrixXd shifted = covariance + jit * Eigen::MatrixXd::Identity(k, k);
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success) {
      // LLT may accept slightly indefinite inputs; require strictly positive pivots
      Eigen::MatrixXd L = llt.matrixL();
      if ((L.diagonal().array() > 0.0).all()) {
        jitter = jit;
        return L;
      }
    }
    if (jit >= 1e-2)
      throw std::runtime_error("Cholesky factorization failed after jitter escalation to 1e-2");
    jit = jit <= 0.0 ? 1e-10 : jit * 10.0;
  }
}

GmmModel fit_map(const std::vector<Eigen::VectorXd>& embeddings, const std::vector<int>& labels,
                 double jitter) {
  if (embeddings.size() != labels.size())
    throw std::invalid_argument("embeddings and labels have different lengths");
  if (embeddings.empty()) throw std::invalid_argument("empty fit input");
  if (jitter < 0.0) throw std::invalid_argument("jitter must be >= 0");

  const Eigen::Index k = embeddings.front().size();
  std::array<std::vector<const Eigen::VectorXd*>, 2> classes;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be binary");
    if (embeddings[i].size() != k) throw std::invalid_argument("inconsistent embedding dimension");
    classes[labels[i]].push_back(&embeddings[i]);
  }
  for (int j = 0; j < 2; ++j)
    if (classes[j].empty())
      throw std::invalid_argument("class " + std::to_string(j) + " absent from fit input");

  GmmModel model;
  model.dimension = static_cast<int>(k);
  const double n_total = static_cast<double>(embeddings.size());
  double max_jitter = 0.0;
  for (int j = 0; j < 2; ++j) {
    auto& comp = model.components[j];
    const auto& members = classes[j];
    const double n = static_cast<double>(members.size());
    comp.weight = n / n_total;

    Eigen::MatrixXd Z(k, members.size());
    for (std::size_t i = 0; i < members.size(); ++i) Z.col(static_cast<Eigen::Index>(i)) = *members[i];
    comp.mean = Z.rowwise().mean();
    Eigen::MatrixXd centered = Z.colwise() - comp.mean;
    comp.covariance = (centered * centered.transpose()) / n;
    comp.covariance = 0.5 * (comp.covariance + comp.covariance.transpose()).eval();

    double jit = jitter;
    comp.chol = robust_cholesky(comp.covariance, jit);
    max_jitter = std::max(max_jitter, jit);
  }
  model.jitter = max_jitter;
  // both factors must use the same diagonal shift
  for (int j = 0; j < 2; ++j) {
    double jit = model.jitter;
    model.components[j].chol = robust_cholesky(model.components[j].covariance, jit);
    if (jit != model.jitter)
      throw std::runtime_error("jitter escalation diverged between components");
  }
  return model;
}

double mahalanobis_sq(const GmmModel& model, int component, const Eigen::VectorXd& z) {
  check_component(model, component, z);
  const auto& comp = model.components[component];
  Eigen::VectorXd v = comp.chol.triangularView<Eigen::Lower>().solve(z - comp.mean);
  return v.squaredNorm();
}

double log_component_density(const GmmModel& model, int component, const Eigen::VectorXd& z) {
  check_component(model, component, z);
  const auto& comp = model.components[component];
  const double log_det = 2.0 * comp.chol.diagonal().array().log().sum();
  const double maha = mahalanobis_sq(model, component, z);
  return -0.5 * (static_cast<double>(model.dimension) * kLog2Pi + log_det + maha);
}

double component_density(const GmmModel& model, int component, const Eigen::VectorXd& z) {
  return std::exp(log_component_density(model, component, z));
}

double membership(const GmmModel& model, int component, const Eigen::VectorXd& z,
                  MembershipMode mode, bool* degenerate) {
  check_component(model, component, z);
  if (degenerate) *degenerate = false;
  if (mode == MembershipMode::density_ratio)
    return std::exp(-0.5 * mahalanobis_sq(model, component, z));

  const double l0 = std::log(model.components[0].weight) + log_component_density(model, 0, z);
  const double l1 = std::log(model.components[1].weight) + log_component_density(model, 1, z);
  if (!std::isfinite(l0) && !std::isfinite(l1)) {
    if (degenerate) *degenerate = true;
    return model.components[component].weight;
  }
  const double hi = std::max(l0, l1);
  const double lse = hi + std::log(std::exp(l0 - hi) + std::exp(l1 - hi));
  const double value = std::exp((component == 0 ? l0 : l1) - lse);
  return std::clamp(value, 0.0, 1.0);
}

namespace {
constexpr char kGmmMagic[8] = {'N', 'A', 'C', 'L', 'G', 'M', 'M', '1'};

void write_matrix(std::ofstream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
}

void read_matrix(std::ifstream& in, Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      m(r, c) = v;
    }
}
}  // namespace

void save_gmm(const std::string& path, const GmmModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write gmm file '" + path + "'");
  out.write(kGmmMagic, sizeof(kGmmMagic));
  std::uint32_t dim = static_cast<std::uint32_t>(model.dimension);
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(&model.jitter), sizeof(model.jitter));
  for (const auto& comp : model.components) {
    out.write(reinterpret_cast<const char*>(&comp.weight), sizeof(comp.weight));
    Eigen::MatrixXd mean = comp.mean;
    write_matrix(out, mean);
    write_matrix(out, comp.covariance);
  }
  if (!out) throw std::runtime_error("write failed for gmm file '" + path + "'");
}

GmmModel load_gmm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open gmm file '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kGmmMagic, sizeof(magic)) != 0)
    throw std::runtime_error("'" + path + "' is not a gmm file");
  std::uint32_t dim = 0;
  in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
  GmmModel model;
  model.dimension = static_cast<int>(dim);
  in.read(reinterpret_cast<char*>(&model.jitter), sizeof(model.jitter));
  for (auto& comp : model.components) {
    in.read(reinterpret_cast<char*>(&comp.weight), sizeof(comp.weight));
    Eigen::MatrixXd mean(dim, 1);
    read_matrix(in, mean);
    comp.mean = mean;
    comp.covariance.resize(dim, dim);
    read_matrix(in, comp.covariance);
    double jit = model.jitter;
    comp.chol = robust_cholesky(comp.covariance, jit);
  }
  if (!in) throw std::runtime_error("truncated gmm file '" + path + "'");
  return model;
}

}  // namespace nacl::gmm
