#include "stwd/temporal_design.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <string>

#include "stwd/error.hpp"
#include "stwd/kernel.hpp"
#include "stwd/quadrature.hpp"
#include "stwd/random.hpp"

namespace stwd {

void UnitHistory::validate() const {
  require(!times.empty(), "unit history needs at least one observation");
  require(times.size() == levels.size(), "unit history times and levels differ in length");
  for (std::size_t k = 0; k < times.size(); ++k) {
    require(std::isfinite(times[k]) && times[k] > 0.0, "history times must be positive");
    require(std::isfinite(levels[k]), "history levels must be finite");
    if (k > 0) require(times[k] > times[k - 1], "history times must be strictly increasing");
  }
}

Eigen::VectorXd AugmentedVector::stacked(double x_next) const {
  Eigen::VectorXd x(observed.size() + 1);
  x.head(observed.size()) = observed;
  x(observed.size()) = x_next;
  return x;
}

namespace {

void require_random_effects(const ModelParams& theta) {
  require(theta.tau_a2 > 0.0, "augmented likelihood needs tau_a^2 > 0");
}

RankOneCovariance augmented_covariance(const ModelParams& theta, const AugmentedVector& aug) {
  return RankOneCovariance(aug.loadings, KernelMatrix(aug.times, theta.alpha, theta.kappa));
}

}  // namespace

AugmentedVector augment(const ModelParams& theta, const UnitHistory& history, double t_next) {
  history.validate();
  theta.validate();
  require_random_effects(theta);
  require(std::isfinite(t_next) && t_next > history.times.back(), "t_next must exceed the last history time");

  const std::size_t m = history.times.size();
  AugmentedVector aug;
  aug.times = history.times;
  aug.times.push_back(t_next);
  aug.observed = Eigen::Map<const Eigen::VectorXd>(history.levels.data(), static_cast<Eigen::Index>(m));
  aug.loadings.resize(m + 1);
  aug.dloadings_dalpha.resize(m + 1);
  aug.dloadings_dgamma.resize(m + 1, 2);
  for (std::size_t j = 0; j <= m; ++j) {
    const double t = aug.times[j];
    const double eta = covariate_link(history.profile, t, theta.gamma1, theta.gamma2) * time_transform(t, theta.alpha);
    aug.loadings(j) = eta;
    aug.dloadings_dalpha(j) = eta * std::log(t);
    aug.dloadings_dgamma(j, 0) = eta * history.profile.z1(t);
    aug.dloadings_dgamma(j, 1) = eta * history.profile.z2(t);
  }

  // Single-unit marginal law x* ~ N(mu Xi*, tau^2 Sigma~*), conditioned on the history.
  const Eigen::MatrixXd cov = augmented_covariance(theta, aug).dense();
  const auto mm = static_cast<Eigen::Index>(m);
  const Eigen::MatrixXd hh = cov.topLeftCorner(mm, mm);
  const Eigen::VectorXd hn = cov.col(mm).head(mm);
  const Eigen::MatrixXd lower = cholesky_lower(hh);
  const auto tri = lower.triangularView<Eigen::Lower>();
  const Eigen::VectorXd w = tri.solve(hn);
  const Eigen::VectorXd resid = aug.observed - theta.mu_a * aug.loadings.head(mm);
  const Eigen::VectorXd z = tri.solve(resid);
  aug.predictive_mean = theta.mu_a * aug.loadings(mm) + w.dot(z);
  aug.predictive_variance = theta.tau_a2 * (cov(mm, mm) - w.squaredNorm());
  if (!(aug.predictive_variance > 0.0)) {
    throw InvalidArgument("predictive variance is not positive");
  }
  return aug;
}

double augmented_loglik(const ModelParams& theta, const AugmentedVector& aug, double x_next) {
  require_random_effects(theta);
  const RankOneCovariance rc = augmented_covariance(theta, aug);
  const Eigen::VectorXd r = aug.stacked(x_next) - theta.mu_a * aug.loadings;
  const double d = r.dot(rc.solve(r));
  return -0.5 * std::log(theta.tau_a2) - 0.5 * rank_one_logdet(rc) - d / (2.0 * theta.tau_a2);
}

namespace {

// dl*/dXi*_j for every j.
Eigen::VectorXd loading_gradient(const ModelParams& theta, const RankOneCovariance& rc, const Eigen::VectorXd& r) {
  const Eigen::VectorXd& v = rc.whitened();
  const double b = rc.b_star();
  const Eigen::VectorXd qr = rc.kernel_inv().multiply(r);
  const double vr = v.dot(r);
  const Eigen::VectorXd sr = qr - v * (vr / b);
  const Eigen::VectorXd dd = -2.0 * theta.mu_a * sr + 2.0 * v * (vr * vr / (b * b)) - 2.0 * qr * (vr / b);
  return -v / b - dd / (2.0 * theta.tau_a2);
}

double alpha_score(const ModelParams& theta, const AugmentedVector& aug, const RankOneCovariance& rc,
                   const Tridiagonal& dqinv, double dlogq, const Eigen::VectorXd& r) {
  const Eigen::VectorXd& xi = aug.loadings;
  const Eigen::VectorXd& dxi = aug.dloadings_dalpha;
  const Eigen::VectorXd& v = rc.whitened();
  const double b = rc.b_star();
  const Tridiagonal& qinv = rc.kernel_inv();

  const Eigen::VectorXd dv = dqinv.multiply(xi) + qinv.multiply(dxi);
  const double db = 2.0 * dxi.dot(v) + dqinv.bilinear(xi, xi);
  const double dlogdet = dlogq + db / b;

  const double vr = v.dot(r);
  const double dvr = dv.dot(r);
  const Eigen::VectorXd sr = qinv.multiply(r) - v * (vr / b);
  const double dquad = dqinv.bilinear(r, r) - (2.0 * vr * dvr * b - vr * vr * db) / (b * b);
  // r depends on alpha through mu * Xi*.
  const double dd = -2.0 * theta.mu_a * dxi.dot(sr) + dquad;
  return -0.5 * dlogdet - dd / (2.0 * theta.tau_a2);
}

struct ScoreWorkspace {
  RankOneCovariance rc;
  Tridiagonal dqinv;
  double dlogq;

  ScoreWorkspace(const ModelParams& theta, const AugmentedVector& aug)
      : rc(augmented_covariance(theta, aug)),
        dqinv(kernel_inverse_dalpha(rc.kernel())),
        dlogq(0.0) {
    const Eigen::VectorXd dd = rc.kernel().increment_derivatives();
    const Eigen::VectorXd& d = rc.kernel().increments();
    dlogq = (dd.array() / d.array()).sum();
  }

  Eigen::Vector3d score(const ModelParams& theta, const AugmentedVector& aug, double x_next) const {
    const Eigen::VectorXd r = aug.stacked(x_next) - theta.mu_a * aug.loadings;
    const Eigen::VectorXd g = loading_gradient(theta, rc, r);
    Eigen::Vector3d s;
    s(0) = alpha_score(theta, aug, rc, dqinv, dlogq, r);
    s.tail<2>() = aug.dloadings_dgamma.transpose() * g;
    return s;
  }
};

}  // namespace

Eigen::Vector2d score_gamma(const ModelParams& theta, const AugmentedVector& aug, double x_next) {
  require_random_effects(theta);
  const RankOneCovariance rc = augmented_covariance(theta, aug);
  const Eigen::VectorXd r = aug.stacked(x_next) - theta.mu_a * aug.loadings;
  return aug.dloadings_dgamma.transpose() * loading_gradient(theta, rc, r);
}

double score_alpha(const ModelParams& theta, const AugmentedVector& aug, double x_next) {
  require_random_effects(theta);
  return ScoreWorkspace(theta, aug).score(theta, aug, x_next)(0);
}

Eigen::Vector3d score(const ModelParams& theta, const AugmentedVector& aug, double x_next) {
  require_random_effects(theta);
  return ScoreWorkspace(theta, aug).score(theta, aug, x_next);
}

void CriterionConfig::validate() const {
  require(omega1 >= 0.0 && omega2 >= 0.0, "criterion weights must be nonnegative");
  require(std::abs(omega1 + omega2 - 1.0) <= 1e-12, "criterion weights must sum to one");
  require(resolution > 0.0, "candidate resolution must be positive");
  require(min_spacing >= 0.0, "minimum spacing must be nonnegative");
  require(quadrature_nodes >= 1, "quadrature needs at least one node");
  require(mc_draws >= 2, "Monte Carlo fallback needs at least two draws");
  require(audit_tolerance > 0.0, "audit tolerance must be positive");
  if (window) require(window->high > window->low, "candidate window must have high > low");
}

namespace {

double snap(double t) { return std::round(t * 1e10) / 1e10; }

}  // namespace

std::vector<double> candidate_times(const UnitHistory& history, const CriterionConfig& config) {
  config.validate();
  require(!history.times.empty(), "unit history needs at least one observation");
  const double t_m = history.times.back();
  std::vector<double> out;
  if (config.window) {
    const double low = config.window->low;
    const double high = config.window->high;
    const auto steps = static_cast<long>(std::round((high - low) / config.resolution));
    if (steps <= 0) {
      if (high > t_m) out.push_back(high);
    } else {
      for (long k = 1; k <= steps; ++k) {
        const double t = snap(low + (high - low) * static_cast<double>(k) / static_cast<double>(steps));
        if (t > t_m) out.push_back(t);
      }
    }
  } else {
    const double first = t_m + config.min_spacing;
    auto k = static_cast<long>(std::ceil(first / config.resolution - 1e-9));
    for (;; ++k) {
      const double t = snap(static_cast<double>(k) * config.resolution);
      if (t > config.t_max + 1e-9) break;
      if (t > t_m) out.push_back(t);
    }
  }
  return out;
}

Eigen::Matrix3d fim_quadrature(const ModelParams& theta, const AugmentedVector& aug, std::size_t nodes) {
  require(aug.predictive_variance > 0.0, "predictive variance must be positive");
  const ScoreWorkspace ws(theta, aug);
  const GaussHermiteRule& rule = gauss_hermite(nodes);
  const double sd = std::sqrt(aug.predictive_variance);
  Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const Eigen::Vector3d s = ws.score(theta, aug, aug.predictive_mean + sd * rule.nodes[k]);
    info.noalias() += rule.weights[k] * (s * s.transpose());
  }
  return 0.5 * (info + info.transpose());
}

Eigen::Matrix3d fim_monte_carlo(const ModelParams& theta, const AugmentedVector& aug, std::size_t draws,
                                std::uint64_t seed) {
  require(aug.predictive_variance > 0.0, "predictive variance must be positive");
  require(draws >= 1, "Monte Carlo needs at least one draw");
  const ScoreWorkspace ws(theta, aug);
  NormalStream normal(seed);
  const double sd = std::sqrt(aug.predictive_variance);
  Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
  for (std::size_t k = 0; k < draws; ++k) {
    const Eigen::Vector3d s = ws.score(theta, aug, aug.predictive_mean + sd * normal());
    info.noalias() += s * s.transpose();
  }
  info /= static_cast<double>(draws);
  return 0.5 * (info + info.transpose());
}

Eigen::Matrix3d fim(const ModelParams& theta, const UnitHistory& history, double t_next,
                    const CriterionConfig& config) {
  config.validate();
  const AugmentedVector aug = augment(theta, history, t_next);
  const std::uint64_t seed = derive_seed(config.seed, {static_cast<std::uint64_t>(std::llround(t_next * 1e6))});
  if (config.monte_carlo) return fim_monte_carlo(theta, aug, config.mc_draws, seed);
  const Eigen::Matrix3d coarse = fim_quadrature(theta, aug, config.quadrature_nodes);
  if (!config.audit_quadrature) return coarse;
  const Eigen::Matrix3d fine = fim_quadrature(theta, aug, 2 * config.quadrature_nodes);
  const double scale = std::max(fine.cwiseAbs().maxCoeff(), 1e-300);
  if ((fine - coarse).cwiseAbs().maxCoeff() <= config.audit_tolerance * scale) return coarse;
  return fim_monte_carlo(theta, aug, config.mc_draws, seed);
}

Eigen::Matrix3d history_information(const ModelParams& theta, const UnitHistory& history) {
  history.validate();
  theta.validate();
  require_random_effects(theta);
  const std::size_t m = history.times.size();
  const auto n = static_cast<Eigen::Index>(m);

  Eigen::VectorXd xi(n), dxi_alpha(n);
  Eigen::MatrixXd dxi_gamma(n, 2);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double t = history.times[j];
    const double eta = covariate_link(history.profile, t, theta.gamma1, theta.gamma2) * time_transform(t, theta.alpha);
    xi(j) = eta;
    dxi_alpha(j) = eta * std::log(t);
    dxi_gamma(j, 0) = eta * history.profile.z1(t);
    dxi_gamma(j, 1) = eta * history.profile.z2(t);
  }
  const KernelMatrix kernel(history.times, theta.alpha, theta.kappa);
  const Eigen::MatrixXd sigma = xi * xi.transpose() + kernel.dense();
  const Eigen::MatrixXd lower = cholesky_lower(sigma);
  const Eigen::MatrixXd lower_inv = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd sym_inv = lower_inv.transpose() * lower_inv;

  // dQ/dalpha(l, k) = t_min^alpha ln t_min.
  Eigen::MatrixXd dq(n, n);
  for (Eigen::Index l = 0; l < n; ++l) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double t = history.times[std::min(l, k)];
      dq(l, k) = std::pow(t, theta.alpha) * std::log(t);
    }
  }
  const double kappa2 = theta.kappa * theta.kappa;

  std::array<Eigen::VectorXd, 3> dmean = {dxi_alpha, dxi_gamma.col(0), dxi_gamma.col(1)};
  std::array<Eigen::MatrixXd, 3> dcov;
  for (int p = 0; p < 3; ++p) dcov[p] = dmean[p] * xi.transpose() + xi * dmean[p].transpose();
  dcov[0] += kappa2 * dq;

  std::array<Eigen::MatrixXd, 3> a;
  for (int p = 0; p < 3; ++p) a[p] = sym_inv * dcov[p];

  Eigen::Matrix3d info;
  const double mu2 = theta.mu_a * theta.mu_a;
  for (int p = 0; p < 3; ++p) {
    for (int q = p; q < 3; ++q) {
      const double mean_part = mu2 / theta.tau_a2 * dmean[p].dot(sym_inv * dmean[q]);
      const double cov_part = 0.5 * (a[p].cwiseProduct(a[q].transpose())).sum();
      info(p, q) = mean_part + cov_part;
      info(q, p) = info(p, q);
    }
  }
  return info;
}

double exploration_value(double t, double alpha) {
  require(t > 0.0 && alpha > 0.0, "exploration term needs t > 0 and alpha > 0");
  const double rate = alpha * std::pow(t, alpha - 1.0);
  return alpha >= 1.0 ? 1.0 / rate : rate;
}

Normalization criterion_normalization(const ModelParams& theta, const UnitHistory& history,
                                      const CriterionConfig& config) {
  const std::vector<double> candidates = candidate_times(history, config);
  require(!candidates.empty(), "candidate set is empty");
  Normalization norm;
  norm.exploration = 0.0;
  for (double t : candidates) norm.exploration = std::max(norm.exploration, exploration_value(t, theta.alpha));

  if (theta.fixed_effects() || config.omega1 == 0.0) {
    norm.information = 1.0;
    norm.information_degenerate = theta.fixed_effects();
    return norm;
  }
  double logdet = std::numeric_limits<double>::quiet_NaN();
  try {
    const Eigen::Matrix3d i0 = history_information(theta, history);
    const double det = i0.determinant();
    if (det > 0.0 && std::isfinite(det)) logdet = std::log(det);
  } catch (const NotPositiveDefinite&) {
  }
  if (std::isfinite(logdet) && std::abs(logdet) > 0.0) {
    norm.information = std::abs(logdet);
  } else {
    norm.information = 1.0;
    norm.information_degenerate = true;
  }
  return norm;
}

CriterionTerms criterion_terms(const ModelParams& theta, const UnitHistory& history, double t_next,
                               const CriterionConfig& config, const Normalization& norm) {
  require(norm.information > 0.0 && norm.exploration > 0.0, "normalization constants must be positive");
  CriterionTerms terms;
  terms.exploration = config.omega2 * exploration_value(t_next, theta.alpha) / norm.exploration;
  if (config.omega1 > 0.0) {
    if (theta.fixed_effects()) {
      terms.information_degenerate = true;
    } else {
      const Eigen::Matrix3d info = fim(theta, history, t_next, config);
      const double det = info.determinant();
      if (det > 0.0 && std::isfinite(det)) {
        terms.information = config.omega1 * std::abs(std::log(det) / norm.information);
      } else {
        terms.information_degenerate = true;
      }
    }
  }
  terms.value = terms.information + terms.exploration;
  return terms;
}

double criterion(const ModelParams& theta, const UnitHistory& history, double t_next, const CriterionConfig& config) {
  const Normalization norm = criterion_normalization(theta, history, config);
  return criterion_terms(theta, history, t_next, config, norm).value;
}

NextTimeResult next_time(const ModelParams& theta, const UnitHistory& history, const CriterionConfig& config) {
  history.validate();
  const std::vector<double> candidates = candidate_times(history, config);
  if (candidates.empty()) throw InvalidArgument("candidate set is empty");
  const Normalization norm = criterion_normalization(theta, history, config);

  NextTimeResult result;
  result.information_degenerate = norm.information_degenerate;
  result.trace.reserve(candidates.size());
  double best = -std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    const CriterionTerms terms = criterion_terms(theta, history, t, config, norm);
    result.information_degenerate = result.information_degenerate || terms.information_degenerate;
    result.trace.emplace_back(t, terms.value);
    if (terms.value > best) {
      best = terms.value;
      result.t_star = t;
    }
  }
  if (!std::isfinite(best)) result.t_star = candidates.front();
  return result;
}

}  // namespace stwd
