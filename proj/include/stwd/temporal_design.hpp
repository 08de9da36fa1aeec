#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stwd/model.hpp"

namespace stwd {

struct UnitHistory {
  std::vector<double> times;   // t_1 < ... < t_m, all > 0
  std::vector<double> levels;  // x_1 ... x_m
  CovariateProfile profile;

  void validate() const;
};

// The history extended by one prospective observation time, with the
// loadings Xi* and their derivatives evaluated at theta_hat.
struct AugmentedVector {
  std::vector<double> times;          // m + 1 times, last is t_next
  Eigen::VectorXd observed;           // the m observed levels
  Eigen::VectorXd loadings;           // Xi*, entries lambda(t_j) Lambda(t_j)
  Eigen::VectorXd dloadings_dalpha;   // lambda(t_j) t_j^alpha ln t_j
  Eigen::MatrixXd dloadings_dgamma;   // (m+1) x 2, Xi*_j * [z1(t_j), z2(t_j)]
  double predictive_mean = 0.0;       // law of X(t_next) given the history
  double predictive_variance = 0.0;

  Eigen::VectorXd stacked(double x_next) const;
};

AugmentedVector augment(const ModelParams& theta, const UnitHistory& history, double t_next);

// l* up to its additive constant: -ln tau - 0.5 ln|Sigma~*| - D*/(2 tau^2).
double augmented_loglik(const ModelParams& theta, const AugmentedVector& aug, double x_next);

// (dl*/dgamma1, dl*/dgamma2) through the chain rule on Xi*.
Eigen::Vector2d score_gamma(const ModelParams& theta, const AugmentedVector& aug, double x_next);
// dl*/dalpha, including the alpha-dependence of both Xi* and Q~*.
double score_alpha(const ModelParams& theta, const AugmentedVector& aug, double x_next);
// (alpha, gamma1, gamma2) score.
Eigen::Vector3d score(const ModelParams& theta, const AugmentedVector& aug, double x_next);

struct CandidateWindow {
  double low;   // exclusive
  double high;  // inclusive
};

struct CriterionConfig {
  double omega1 = 0.5;
  double omega2 = 0.5;
  // Windowed plan: candidates are (low, high] on the resolution lattice.
  std::optional<CandidateWindow> window;
  // Free plan: candidates are [t_m + min_spacing, t_max].
  double t_max = 10.0;
  double min_spacing = 0.05;
  double resolution = 0.05;
  std::size_t quadrature_nodes = 32;
  // Refine the quadrature to twice the nodes and fall back to Monte Carlo when
  // the two disagree by more than audit_tolerance (relative).
  bool audit_quadrature = true;
  double audit_tolerance = 1e-6;
  bool monte_carlo = false;
  std::size_t mc_draws = 50000;
  std::uint64_t seed = 1;

  void validate() const;
};

std::vector<double> candidate_times(const UnitHistory& history, const CriterionConfig& config);

// E[s s^T] over the predictive law of X(t_next), s the (alpha, gamma) score.
Eigen::Matrix3d fim(const ModelParams& theta, const UnitHistory& history, double t_next, const CriterionConfig& config);
Eigen::Matrix3d fim_quadrature(const ModelParams& theta, const AugmentedVector& aug, std::size_t nodes);
Eigen::Matrix3d fim_monte_carlo(const ModelParams& theta, const AugmentedVector& aug, std::size_t draws,
                                std::uint64_t seed);

// Gaussian Fisher information of the existing history alone for (alpha, gamma).
Eigen::Matrix3d history_information(const ModelParams& theta, const UnitHistory& history);

// N0 = |ln det I0| for the information term and C = max exploration value over
// the candidate set.
struct Normalization {
  double information = 1.0;
  double exploration = 1.0;
  bool information_degenerate = false;
};

Normalization criterion_normalization(const ModelParams& theta, const UnitHistory& history,
                                      const CriterionConfig& config);

struct CriterionTerms {
  double value = 0.0;
  double information = 0.0;
  double exploration = 0.0;
  bool information_degenerate = false;
};

// 1/Lambda'(t) for alpha >= 1, Lambda'(t) for alpha < 1.
double exploration_value(double t, double alpha);

CriterionTerms criterion_terms(const ModelParams& theta, const UnitHistory& history, double t_next,
                               const CriterionConfig& config, const Normalization& norm);
double criterion(const ModelParams& theta, const UnitHistory& history, double t_next, const CriterionConfig& config);

struct NextTimeResult {
  double t_star = 0.0;
  std::vector<std::pair<double, double>> trace;  // (t, Gamma)
  bool information_degenerate = false;
};

// argmax of Gamma over the candidate set, earliest time on ties.
NextTimeResult next_time(const ModelParams& theta, const UnitHistory& history, const CriterionConfig& config);

}  // namespace stwd
