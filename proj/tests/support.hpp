#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests.
// Oracles work from the defining formulas in long double and never call the
// library routine they check.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stwd/model.hpp"
#include "stwd/temporal_design.hpp"

namespace testing {

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

inline std::vector<double> random_grid(std::mt19937_64& rng, std::size_t n, double first_lo = 0.1,
                                       double first_hi = 1.0, double gap_lo = 0.05, double gap_hi = 0.5) {
  std::uniform_real_distribution<double> first(first_lo, first_hi);
  std::uniform_real_distribution<double> gap(gap_lo, gap_hi);
  std::vector<double> t(n);
  t[0] = first(rng);
  for (std::size_t k = 1; k < n; ++k) t[k] = t[k - 1] + gap(rng);
  return t;
}

// kappa^2 * min(t_l^alpha, t_k^alpha)
inline LMatrix dense_kernel(const std::vector<double>& t, double alpha, double kappa) {
  const auto n = static_cast<Eigen::Index>(t.size());
  LMatrix q(n, n);
  for (Eigen::Index l = 0; l < n; ++l) {
    for (Eigen::Index k = 0; k < n; ++k) {
      q(l, k) = static_cast<long double>(kappa) * kappa *
                std::pow(static_cast<long double>(std::min(t[l], t[k])), static_cast<long double>(alpha));
    }
  }
  return q;
}

inline long double logdet(const LMatrix& a) {
  Eigen::LLT<LMatrix> llt(a);
  long double s = 0;
  for (Eigen::Index k = 0; k < a.rows(); ++k) s += std::log(llt.matrixL()(k, k));
  return 2 * s;
}

inline LMatrix inverse(const LMatrix& a) {
  return Eigen::LLT<LMatrix>(a).solve(LMatrix::Identity(a.rows(), a.cols()));
}

inline LMatrix widen(const Eigen::MatrixXd& a) { return a.cast<long double>(); }

inline double max_abs_diff(const Eigen::MatrixXd& a, const LMatrix& b) {
  return static_cast<double>((widen(a) - b).cwiseAbs().maxCoeff());
}

inline double max_abs(const LMatrix& b) { return static_cast<double>(b.cwiseAbs().maxCoeff()); }

// Loading lambda(t) t^alpha straight from the covariate definitions.
inline double loading(const stwd::CovariateProfile& p, double t, double alpha, double g1, double g2) {
  const stwd::Segment& s = p.at(t);
  return std::exp(g1 * 1000.0 / (s.s1 + 273.15) + g2 * std::log(s.s2)) * std::pow(t, alpha);
}

// Psi element by element from the covariance formula.
inline LMatrix dense_psi(const stwd::ModelParams& p, const stwd::Profiles& profiles,
                         const std::vector<std::vector<double>>& grids) {
  std::vector<std::size_t> unit;
  std::vector<double> time;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    for (double t : grids[i]) {
      unit.push_back(i);
      time.push_back(t);
    }
  }
  const auto m = static_cast<Eigen::Index>(time.size());
  LMatrix psi = LMatrix::Zero(m, m);
  const long double sigma2 = static_cast<long double>(p.kappa) * p.kappa * p.tau_a2;
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      const std::size_t i = unit[a];
      const std::size_t j = unit[b];
      const long double xa = loading(profiles[i], time[a], p.alpha, p.gamma1, p.gamma2);
      const long double xb = loading(profiles[j], time[b], p.alpha, p.gamma1, p.gamma2);
      long double cov = 0;
      if (i == j) {
        cov = p.tau_a2 * xa * xb + sigma2 * std::pow(static_cast<long double>(std::min(time[a], time[b])),
                                                     static_cast<long double>(p.alpha));
      } else if (i + 1 == j || j + 1 == i) {
        cov = p.tau_a2 * p.rho * xa * xb;
      }
      psi(a, b) = cov;
    }
  }
  return psi;
}

// Simulation-study truth for the given alpha.
inline stwd::ModelParams study_truth(double alpha = 1.2) {
  stwd::ModelParams p;
  p.alpha = alpha;
  p.mu_a = 1.0;
  p.tau_a2 = 0.01;
  p.kappa = 1.0;
  p.gamma1 = 0.1;
  p.gamma2 = 0.2;
  p.rho = 0.5;
  return p;
}

// Engineering schedule: semi-annual to 8, quarterly to 10 (24 epochs).
inline std::vector<double> full_schedule() {
  std::vector<double> t;
  for (int k = 1; k <= 16; ++k) t.push_back(0.5 * k);
  for (int k = 1; k <= 8; ++k) t.push_back(8.0 + 0.25 * k);
  return t;
}

// One synthetic data set: every unit observed on the same grid.
inline stwd::ObservationSet simulate_dataset(const stwd::ModelParams& p, const stwd::Profiles& profiles,
                                             const std::vector<double>& grid, std::uint64_t seed) {
  const stwd::PathTensor paths = stwd::simulate_paths(p, profiles, grid, 1, seed);
  std::vector<stwd::Observation> records;
  for (std::size_t i = 0; i < profiles.size(); ++i)
    for (std::size_t k = 0; k < grid.size(); ++k) records.push_back({i, grid[k], paths(0, i, k)});
  return stwd::ObservationSet(profiles.size(), records);
}

inline stwd::Profiles orbit_profiles(std::size_t units) {
  return stwd::Profiles(units, stwd::CovariateProfile::orbit(12.0));
}

// Random single-unit instance for the augmented likelihood.
struct Instance {
  stwd::ModelParams theta;
  stwd::UnitHistory history;
  double t_next;
  double x_next;
};

inline Instance random_instance(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance in;
  in.theta.alpha = 0.4 + 1.6 * u(rng);
  in.theta.kappa = std::exp(std::log(0.3) + std::log(10.0) * u(rng));
  in.theta.tau_a2 = std::exp(std::log(0.005) + std::log(100.0) * u(rng));
  in.theta.mu_a = 0.5 + 2.5 * u(rng);
  in.theta.gamma1 = -0.3 + 0.6 * u(rng);
  in.theta.gamma2 = -0.5 + 1.0 * u(rng);
  in.history.profile = stwd::CovariateProfile::orbit(12.0);
  // m history times plus the next one, all inside [0.5, 12].
  std::vector<double> t(m + 1);
  for (auto& x : t) x = 0.5 + 11.5 * u(rng);
  std::sort(t.begin(), t.end());
  for (std::size_t k = 1; k < t.size(); ++k) t[k] = std::max(t[k], t[k - 1] + 0.01);
  in.t_next = t.back();
  t.pop_back();
  in.history.times = t;
  std::normal_distribution<double> n(0.0, 1.0);
  const double tau = std::sqrt(in.theta.tau_a2);
  const double a = in.theta.mu_a + tau * n(rng);
  for (double time : t) {
    in.history.levels.push_back(a * loading(in.history.profile, time, in.theta.alpha, in.theta.gamma1, in.theta.gamma2) +
                                in.theta.kappa * tau * std::sqrt(std::pow(time, in.theta.alpha)) * n(rng));
  }
  const stwd::AugmentedVector aug = stwd::augment(in.theta, in.history, in.t_next);
  in.x_next = aug.predictive_mean + std::sqrt(aug.predictive_variance) * n(rng);
  return in;
}

// Single-unit Gaussian log-density of (history, x_next) from the covariance
// definition, dropping only the 2 pi term.
inline long double loglik_oracle(const stwd::ModelParams& p, const stwd::CovariateProfile& profile,
                                 const std::vector<double>& times, const std::vector<double>& levels) {
  const auto n = static_cast<Eigen::Index>(times.size());
  LMatrix cov = dense_kernel(times, p.alpha, p.kappa);
  LVector r(n);
  LVector xi(n);
  for (Eigen::Index j = 0; j < n; ++j) xi(j) = loading(profile, times[j], p.alpha, p.gamma1, p.gamma2);
  cov += xi * xi.transpose();
  cov *= static_cast<long double>(p.tau_a2);
  for (Eigen::Index j = 0; j < n; ++j) r(j) = levels[j] - p.mu_a * xi(j);
  return -0.5L * logdet(cov) - 0.5L * r.dot(inverse(cov) * r);
}

// Central differences at steps h and h/2 combined by Richardson extrapolation,
// which removes the O(h^2) truncation term.
inline Eigen::Vector3d fd_score(const Instance& in, double h = 1e-5) {
  std::vector<double> times = in.history.times;
  std::vector<double> levels = in.history.levels;
  times.push_back(in.t_next);
  levels.push_back(in.x_next);
  auto central = [&](int k, long double step) {
    stwd::ModelParams up = in.theta, down = in.theta;
    double* pu = k == 0 ? &up.alpha : k == 1 ? &up.gamma1 : &up.gamma2;
    double* pd = k == 0 ? &down.alpha : k == 1 ? &down.gamma1 : &down.gamma2;
    *pu += static_cast<double>(step);
    *pd -= static_cast<double>(step);
    return (loglik_oracle(up, in.history.profile, times, levels) - loglik_oracle(down, in.history.profile, times, levels)) /
           (static_cast<long double>(*pu) - static_cast<long double>(*pd));
  };
  Eigen::Vector3d g;
  for (int k = 0; k < 3; ++k) g(k) = static_cast<double>((4.0L * central(k, h / 2.0L) - central(k, h)) / 3.0L);
  return g;
}

// Largest |rho| for which the L x L tridiagonal correlation stays positive definite.
inline double rho_limit(std::size_t units) {
  if (units <= 1) return 1.0;
  return std::min(1.0, 1.0 / (2.0 * std::cos(M_PI / (static_cast<double>(units) + 1.0))));
}

}  // namespace testing
