#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "stwd/model.hpp"

namespace stwd {

// Indices into the structural vector (alpha, kappa, gamma1, gamma2, rho).
enum class Structural : std::size_t { alpha = 0, kappa, gamma1, gamma2, rho };
inline constexpr std::size_t kStructuralCount = 5;

double get(const StructuralParams& p, Structural which);
void set(StructuralParams& p, Structural which, double value);
std::string_view name(Structural which);
std::optional<Structural> structural_from_name(std::string_view name);

struct Interval {
  double low;
  double high;
};

struct FitConfig {
  std::array<Interval, kStructuralCount> bounds{{{0.2, 3.0}, {0.05, 50.0}, {-2.0, 2.0}, {-2.0, 2.0}, {-0.999, 0.999}}};
  std::size_t n_starts = 12;
  double tolerance = 1e-6;        // simplex size in the transformed space
  std::size_t max_evals = 3000;   // per start, restarts included
  std::array<std::optional<double>, kStructuralCount> fixed{};
  std::uint64_t seed = 1;
  // When set, the first start is this point instead of a stratified draw.
  std::optional<StructuralParams> initial_guess;

  void pin(Structural which, double value) { fixed[static_cast<std::size_t>(which)] = value; }
  void validate() const;
};

struct StartTrace {
  StructuralParams start;
  StructuralParams end;
  double value;
  bool converged;
  std::size_t evaluations;
};

struct FitResult {
  ModelParams theta_hat;
  double profile_loglik_at_max;
  std::vector<StartTrace> trace;
  bool converged;
  // tau^2 concentrated to exactly zero (exact interpolation).
  bool degenerate_tau;
};

struct ScaleEstimate {
  double mu_hat;
  double tau2_hat;
};

// Closed-form (mu_hat, tau2_hat) at fixed theta_1 using per-unit tridiagonal
// kernel inverses and an L x L spatial system; no M x M matrix is formed.
ScaleEstimate concentrate_scale(const StructuralParams& theta1, const ObservationSet& data,
                                const Profiles& profiles);

// Profile log-likelihood, constants included so that it equals full_loglik at
// (theta_1, mu_hat, tau2_hat). Returns -infinity when Psi~ is not positive
// definite at theta_1.
double profile_loglik(const StructuralParams& theta1, const ObservationSet& data, const Profiles& profiles);

// Same quantities through a dense Cholesky factorization of Psi~.
ScaleEstimate concentrate_scale_dense(const StructuralParams& theta1, const ObservationSet& data,
                                      const Profiles& profiles);
double profile_loglik_dense(const StructuralParams& theta1, const ObservationSet& data, const Profiles& profiles);

// Full Gaussian log-likelihood of the stacked data (tau_a2 > 0).
double full_loglik(const ModelParams& theta, const ObservationSet& data, const Profiles& profiles);

// Multi-start bounded simplex search of profile_loglik.
FitResult fit(const ObservationSet& data, const Profiles& profiles, const FitConfig& config);

}  // namespace stwd
