#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace stwd {

// theta = (alpha, mu_a, tau_a^2, kappa, gamma1, gamma2, rho); sigma = kappa * tau_a.
// tau_a2 == 0 selects the fixed-effects special case, where kappa is undefined
// and the diffusion scale comes from sigma_fixed instead.
struct ModelParams {
  double alpha = 1.0;
  double mu_a = 0.0;
  double tau_a2 = 0.0;
  double kappa = 1.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double rho = 0.0;
  double sigma_fixed = 0.0;

  bool fixed_effects() const { return tau_a2 == 0.0; }
  double sigma() const;
  double sigma2() const;
  void validate() const;
};

// Structural parameters theta_1 = (alpha, kappa, gamma1, gamma2, rho): what is
// left after concentrating out (mu_a, tau_a^2).
struct StructuralParams {
  double alpha = 1.0;
  double kappa = 1.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double rho = 0.0;

  static StructuralParams from(const ModelParams& p) {
    return {p.alpha, p.kappa, p.gamma1, p.gamma2, p.rho};
  }
};

struct Segment {
  double start;  // years
  double s1;     // junction temperature, deg C
  double s2;     // electrical stress, > 0
};

// Piecewise-constant covariate schedule; the last segment extends to infinity.
class CovariateProfile {
 public:
  CovariateProfile() = default;
  explicit CovariateProfile(std::vector<Segment> segments);

  static CovariateProfile constant(double s1, double s2);
  // Orbit-like alternation: half-year segments, S1 toggling cold/hot every
  // segment and S2 toggling low/high every year, up to `years`.
  static CovariateProfile orbit(double years, double s1_cold = 20.0, double s1_hot = 45.0,
                                double s2_low = 1.0, double s2_high = 1.5);

  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& at(double t) const;
  double z1(double t) const;  // 1000 / (S1 + 273.15)
  double z2(double t) const;  // ln S2

 private:
  std::vector<Segment> segments_;
};

using Profiles = std::vector<CovariateProfile>;

struct Observation {
  std::size_t unit;  // 0-based
  double time;
  double level;
};

// Degradation records grouped per unit, each unit's times strictly increasing.
class ObservationSet {
 public:
  ObservationSet() = default;
  ObservationSet(std::size_t num_units, std::span<const Observation> records);

  std::size_t num_units() const { return times_.size(); }
  std::size_t size() const { return total_; }
  bool empty() const { return total_ == 0; }
  const std::vector<double>& times(std::size_t unit) const { return times_.at(unit); }
  const std::vector<double>& levels(std::size_t unit) const { return levels_.at(unit); }
  std::vector<std::vector<double>> grids() const { return times_; }
  std::vector<Observation> records() const;
  // Stacked y = (x_1^T, ..., x_L^T)^T.
  Eigen::VectorXd stacked() const;

  // Adds records; each new time must exceed that unit's last time.
  void append(std::span<const Observation> records);

 private:
  std::vector<std::vector<double>> times_;
  std::vector<std::vector<double>> levels_;
  std::size_t total_ = 0;
};

struct ReliabilityConfig {
  double threshold_xi = 1.0;
  std::vector<double> horizons;
  std::size_t n_paths = 2000;
  double dt = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

struct LastState {
  double time;
  double level;
};

struct Moments {
  double mean;
  double variance;
};

struct GaussianLaw {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

using UnitGrids = std::vector<std::vector<double>>;

double time_transform(double t, double alpha);
double covariate_link(const CovariateProfile& profile, double t, double gamma1, double gamma2);
Moments marginal_moments(const ModelParams& params, const CovariateProfile& profile, double t);
double drift_covariance(double tau_a2, double rho, std::size_t i, std::size_t j);

// Stacked loading vector Xi with Xi_i^(j) = lambda_i(t_ij) * Lambda(t_ij).
Eigen::VectorXd loading_vector(const StructuralParams& theta1, const Profiles& profiles,
                               const UnitGrids& grids);

// Psi~ = Psi / tau_a^2 as a function of theta_1 alone.
Eigen::MatrixXd assemble_scaled_covariance(const StructuralParams& theta1, const Profiles& profiles,
                                           const UnitGrids& grids);

// Psi: Cov(a_i, a_j) Xi_i Xi_j^T + delta_ij sigma^2 Q_i, stacked by unit. The
// upper triangle is computed and mirrored, so the result is exactly symmetric.
Eigen::MatrixXd assemble_covariance(const ModelParams& params, const Profiles& profiles,
                                    const UnitGrids& grids);

// path x unit x time tensor, row-major.
struct PathTensor {
  std::size_t n_paths = 0;
  std::size_t n_units = 0;
  std::vector<double> grid;
  std::vector<double> values;

  double operator()(std::size_t path, std::size_t unit, std::size_t k) const {
    return values[(path * n_units + unit) * grid.size() + k];
  }
  double& operator()(std::size_t path, std::size_t unit, std::size_t k) {
    return values[(path * n_units + unit) * grid.size() + k];
  }
};

// Exact joint draws on a shared grid via the Cholesky factor of Psi.
PathTensor simulate_paths(const ModelParams& params, const Profiles& profiles,
                          std::span<const double> grid, std::size_t n_paths, std::uint64_t seed);

struct Target {
  std::size_t unit;
  double time;
};

// Gaussian law of the target coordinates given the history.
GaussianLaw conditional_law(const ModelParams& params, const Profiles& profiles,
                            const ObservationSet& history, std::span<const Target> targets);

// n_draws x targets.size() matrix of conditional draws.
Eigen::MatrixXd conditional_sample(const ModelParams& params, const Profiles& profiles,
                                   const ObservationSet& history, std::span<const Target> targets,
                                   std::size_t n_draws, std::uint64_t seed);

// First-passage Monte Carlo reliability at each horizon. Without a last
// state the paths start at the origin; with one, the drift coefficient is
// drawn from its law given X(t0) = x0 and the path continues from there.
std::vector<double> reliability(const ModelParams& params, const CovariateProfile& profile,
                                const std::optional<LastState>& last_state,
                                const ReliabilityConfig& config);

}  // namespace stwd
