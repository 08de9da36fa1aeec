#include "stwd/kernel.hpp"

#include <cmath>
#include <string>

#include "stwd/error.hpp"

namespace stwd {

Eigen::VectorXd Tridiagonal::multiply(const Eigen::VectorXd& x) const {
  const Eigen::Index n = size();
  Eigen::VectorXd y = diag.cwiseProduct(x);
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    y(k) += off(k) * x(k + 1);
    y(k + 1) += off(k) * x(k);
  }
  return y;
}

double Tridiagonal::bilinear(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
  const Eigen::Index n = size();
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) s += diag(k) * x(k) * y(k);
  for (Eigen::Index k = 0; k + 1 < n; ++k) s += off(k) * (x(k) * y(k + 1) + x(k + 1) * y(k));
  return s;
}

Eigen::MatrixXd Tridiagonal::dense() const {
  const Eigen::Index n = size();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  m.diagonal() = diag;
  for (Eigen::Index k = 0; k + 1 < n; ++k) m(k, k + 1) = m(k + 1, k) = off(k);
  return m;
}

KernelMatrix::KernelMatrix(std::span<const double> times, double alpha, double kappa)
    : times_(times.begin(), times.end()), alpha_(alpha), kappa_(kappa) {
  require(!times_.empty(), "kernel: empty time grid");
  require(alpha > 0.0 && std::isfinite(alpha), "kernel: alpha must be positive");
  require(kappa > 0.0 && std::isfinite(kappa), "kernel: kappa must be positive");
  const auto n = static_cast<Eigen::Index>(times_.size());
  clock_.resize(n);
  increments_.resize(n);
  double previous = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = times_[static_cast<std::size_t>(k)];
    require(t > 0.0, "kernel: times must be positive");
    clock_(k) = std::pow(t, alpha);
    increments_(k) = clock_(k) - previous;
    if (!(increments_(k) > 0.0)) {
      throw InvalidArgument("kernel: nonpositive increment d_" + std::to_string(k + 1) +
                            " (times must be strictly increasing)");
    }
    previous = clock_(k);
  }
}

Eigen::VectorXd KernelMatrix::increment_derivatives() const {
  const Eigen::Index n = size();
  Eigen::VectorXd out(n);
  double previous = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = times_[static_cast<std::size_t>(k)];
    const double current = clock_(k) * std::log(t);
    out(k) = current - previous;
    previous = current;
  }
  return out;
}

Eigen::MatrixXd KernelMatrix::dense() const {
  const Eigen::Index n = size();
  const double k2 = kappa_ * kappa_;
  Eigen::MatrixXd q(n, n);
  for (Eigen::Index l = 0; l < n; ++l)
    for (Eigen::Index k = 0; k < n; ++k) q(l, k) = k2 * std::min(clock_(l), clock_(k));
  return q;
}

double kernel_logdet(const KernelMatrix& kernel) {
  const auto n = static_cast<double>(kernel.size());
  return 2.0 * n * std::log(kernel.kappa()) + kernel.increments().array().log().sum();
}

Tridiagonal kernel_inverse(const KernelMatrix& kernel) {
  const Eigen::Index n = kernel.size();
  const Eigen::VectorXd& d = kernel.increments();
  const double k2 = kernel.kappa() * kernel.kappa();
  Tridiagonal inv{Eigen::VectorXd(n), Eigen::VectorXd(std::max<Eigen::Index>(n - 1, 0))};
  for (Eigen::Index k = 0; k < n; ++k) {
    double v = 1.0 / d(k);
    if (k + 1 < n) {
      v += 1.0 / d(k + 1);
      inv.off(k) = -1.0 / (d(k + 1) * k2);
    }
    inv.diag(k) = v / k2;
  }
  return inv;
}

Tridiagonal kernel_inverse_dalpha(const KernelMatrix& kernel) {
  const Eigen::Index n = kernel.size();
  const Eigen::VectorXd& d = kernel.increments();
  const Eigen::VectorXd dd = kernel.increment_derivatives();
  const double k2 = kernel.kappa() * kernel.kappa();
  Tridiagonal out{Eigen::VectorXd(n), Eigen::VectorXd(std::max<Eigen::Index>(n - 1, 0))};
  for (Eigen::Index k = 0; k < n; ++k) {
    double v = -dd(k) / (d(k) * d(k));
    if (k + 1 < n) {
      const double r = dd(k + 1) / (d(k + 1) * d(k + 1));
      v -= r;
      out.off(k) = r / k2;
    }
    out.diag(k) = v / k2;
  }
  return out;
}

RankOneCovariance::RankOneCovariance(Eigen::VectorXd loadings, KernelMatrix kernel)
    : loadings_(std::move(loadings)),
      kernel_(std::move(kernel)),
      kernel_inv_(kernel_inverse(kernel_)) {
  require(loadings_.size() == kernel_.size(), "rank-one covariance: loading/kernel size mismatch");
  whitened_ = kernel_inv_.multiply(loadings_);
  b_star_ = 1.0 + loadings_.dot(whitened_);
}

Eigen::VectorXd RankOneCovariance::solve(const Eigen::VectorXd& x) const {
  return kernel_inv_.multiply(x) - whitened_ * (whitened_.dot(x) / b_star_);
}

Eigen::MatrixXd RankOneCovariance::dense() const {
  return loadings_ * loadings_.transpose() + kernel_.dense();
}

double rank_one_logdet(const RankOneCovariance& rc) {
  return kernel_logdet(rc.kernel()) + std::log(rc.b_star());
}

Eigen::MatrixXd rank_one_inverse(const RankOneCovariance& rc) {
  return rc.kernel_inv().dense() - rc.a_star() / rc.b_star();
}

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& cov) {
  require(cov.rows() == cov.cols(), "cholesky: matrix must be square");
  const Eigen::Index n = cov.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  if (n == 0) return l;
  const double scale = cov.diagonal().cwiseAbs().maxCoeff();
  const double floor = kPivotTolerance * scale;
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = cov(j, j);
    if (j > 0) pivot -= l.row(j).head(j).squaredNorm();
    if (!(pivot > floor) || !std::isfinite(pivot)) {
      throw NotPositiveDefinite(static_cast<std::size_t>(j + 1), "cholesky failed");
    }
    const double root = std::sqrt(pivot);
    l(j, j) = root;
    if (j + 1 < n) {
      Eigen::VectorXd col = cov.col(j).tail(n - j - 1);
      if (j > 0) col.noalias() -= l.bottomLeftCorner(n - j - 1, j) * l.row(j).head(j).transpose();
      l.col(j).tail(n - j - 1) = col / root;
    }
  }
  return l;
}

QuadformLogdet stable_mvn_quadform_logdet(const Eigen::MatrixXd& cov, const Eigen::VectorXd& residual) {
  require(cov.rows() == residual.size(), "quadform: dimension mismatch");
  const Eigen::MatrixXd l = cholesky_lower(cov);
  const Eigen::VectorXd z = l.triangularView<Eigen::Lower>().solve(residual);
  return {z.squaredNorm(), 2.0 * l.diagonal().array().log().sum()};
}

}  // namespace stwd
