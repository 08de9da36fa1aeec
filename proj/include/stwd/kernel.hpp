#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace stwd {

// Symmetric tridiagonal matrix stored as its diagonal and first off-diagonal.
// Entries with |i - j| >= 2 are identically zero.
struct Tridiagonal {
  Eigen::VectorXd diag;
  Eigen::VectorXd off;  // off(k) is entry (k, k+1) == (k+1, k)

  Eigen::Index size() const { return diag.size(); }
  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
  double bilinear(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
  Eigen::MatrixXd dense() const;
};

// kappa^2 * Q for a strictly increasing positive time grid, where
// Q(l, k) = min(t_l^alpha, t_k^alpha): Brownian covariance in Lambda-time.
class KernelMatrix {
 public:
  KernelMatrix(std::span<const double> times, double alpha, double kappa);

  Eigen::Index size() const { return static_cast<Eigen::Index>(times_.size()); }
  const std::vector<double>& times() const { return times_; }
  double alpha() const { return alpha_; }
  double kappa() const { return kappa_; }
  // Lambda(t_k) = t_k^alpha.
  const Eigen::VectorXd& clock() const { return clock_; }
  // d_k = t_k^alpha - t_{k-1}^alpha with t_0 = 0.
  const Eigen::VectorXd& increments() const { return increments_; }
  // d'_k = t_k^alpha ln t_k - t_{k-1}^alpha ln t_{k-1}, the alpha-derivative of d_k.
  Eigen::VectorXd increment_derivatives() const;

  Eigen::MatrixXd dense() const;

 private:
  std::vector<double> times_;
  double alpha_;
  double kappa_;
  Eigen::VectorXd clock_;
  Eigen::VectorXd increments_;
};

double kernel_logdet(const KernelMatrix& kernel);
Tridiagonal kernel_inverse(const KernelMatrix& kernel);
// alpha-derivative of kernel_inverse, entrywise through d'_k.
Tridiagonal kernel_inverse_dalpha(const KernelMatrix& kernel);

// Sigma~ = Xi Xi^T + kappa^2 Q, handled through its rank-one structure.
class RankOneCovariance {
 public:
  RankOneCovariance(Eigen::VectorXd loadings, KernelMatrix kernel);

  const Eigen::VectorXd& loadings() const { return loadings_; }
  const KernelMatrix& kernel() const { return kernel_; }
  const Tridiagonal& kernel_inv() const { return kernel_inv_; }
  // Q~^{-1} Xi
  const Eigen::VectorXd& whitened() const { return whitened_; }
  // B = 1 + Xi^T Q~^{-1} Xi >= 1
  double b_star() const { return b_star_; }
  // A = Q~^{-1} Xi Xi^T Q~^{-1}
  Eigen::MatrixXd a_star() const { return whitened_ * whitened_.transpose(); }

  // Sigma~^{-1} x without forming the inverse.
  Eigen::VectorXd solve(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd dense() const;

 private:
  Eigen::VectorXd loadings_;
  KernelMatrix kernel_;
  Tridiagonal kernel_inv_;
  Eigen::VectorXd whitened_;
  double b_star_;
};

double rank_one_logdet(const RankOneCovariance& rc);
Eigen::MatrixXd rank_one_inverse(const RankOneCovariance& rc);

struct QuadformLogdet {
  double quadform;
  double logdet;
};

// Lower Cholesky factor. A pivot below kPivotTolerance times the largest
// diagonal entry throws NotPositiveDefinite naming that leading minor.
inline constexpr double kPivotTolerance = 1e-12;
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& cov);

// residual^T cov^{-1} residual and ln|cov| from one factorization.
QuadformLogdet stable_mvn_quadform_logdet(const Eigen::MatrixXd& cov, const Eigen::VectorXd& residual);

}  // namespace stwd
