#include "stwd/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include <Eigen/Eigenvalues>

#include "stwd/error.hpp"

namespace stwd {

namespace {

GaussHermiteRule build_rule(std::size_t n) {
  const auto size = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(size, size);
  for (Eigen::Index k = 1; k < size; ++k) {
    const double beta = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = beta;
    jacobi(k, k - 1) = beta;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  require(solver.info() == Eigen::Success, "Gauss-Hermite eigen-decomposition failed");

  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  double total = 0.0;
  for (Eigen::Index k = 0; k < size; ++k) {
    rule.nodes[k] = solver.eigenvalues()(k);
    const double v0 = solver.eigenvectors()(0, k);
    rule.weights[k] = v0 * v0;
    total += rule.weights[k];
  }
  for (double& w : rule.weights) w /= total;
  return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite(std::size_t n) {
  require(n >= 1, "Gauss-Hermite rule needs at least one node");
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<GaussHermiteRule>(build_rule(n));
  return *slot;
}

}  // namespace stwd
