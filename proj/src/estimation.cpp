#include "stwd/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include <gsl/gsl_multimin.h>
#include <gsl/gsl_qrng.h>

#include "stwd/error.hpp"
#include "stwd/kernel.hpp"
#include "stwd/random.hpp"

namespace stwd {

double get(const StructuralParams& p, Structural which) {
  switch (which) {
    case Structural::alpha: return p.alpha;
    case Structural::kappa: return p.kappa;
    case Structural::gamma1: return p.gamma1;
    case Structural::gamma2: return p.gamma2;
    case Structural::rho: return p.rho;
  }
  return 0.0;
}

void set(StructuralParams& p, Structural which, double value) {
  switch (which) {
    case Structural::alpha: p.alpha = value; break;
    case Structural::kappa: p.kappa = value; break;
    case Structural::gamma1: p.gamma1 = value; break;
    case Structural::gamma2: p.gamma2 = value; break;
    case Structural::rho: p.rho = value; break;
  }
}

std::string_view name(Structural which) {
  static constexpr std::array<std::string_view, kStructuralCount> names{"alpha", "kappa", "gamma1", "gamma2", "rho"};
  return names[static_cast<std::size_t>(which)];
}

std::optional<Structural> structural_from_name(std::string_view n) {
  for (std::size_t k = 0; k < kStructuralCount; ++k)
    if (name(static_cast<Structural>(k)) == n) return static_cast<Structural>(k);
  return std::nullopt;
}

void FitConfig::validate() const {
  require(n_starts >= 1, "fit: n_starts must be >= 1");
  require(tolerance > 0.0, "fit: tolerance must be positive");
  require(max_evals >= 10, "fit: max_evals too small");
  for (std::size_t k = 0; k < kStructuralCount; ++k) {
    const auto which = static_cast<Structural>(k);
    const Interval& b = bounds[k];
    require(std::isfinite(b.low) && std::isfinite(b.high) && b.low < b.high,
            "fit: bounds for " + std::string(name(which)) + " must be finite and ordered");
    if (which == Structural::alpha || which == Structural::kappa)
      require(b.low > 0.0, "fit: " + std::string(name(which)) + " lower bound must be positive");
    if (which == Structural::rho) require(b.low > -1.0 && b.high < 1.0, "fit: rho bounds must lie inside (-1, 1)");
    if (fixed[k]) {
      require(std::isfinite(*fixed[k]), "fit: pinned value must be finite");
      if (which == Structural::alpha || which == Structural::kappa)
        require(*fixed[k] > 0.0, "fit: pinned " + std::string(name(which)) + " must be positive");
      if (which == Structural::rho) require(std::abs(*fixed[k]) < 1.0, "fit: pinned rho must lie inside (-1, 1)");
    }
  }
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

// Per-unit pieces of Psi~ = blockdiag(kappa^2 Q_i) + B R B^T with B the
// block-diagonal loading matrix and R the tridiagonal drift correlation.
// With G_i = Xi_i^T Q~_i^{-1} Xi_i, H = diag(sqrt(G_i)) and S = I + H R H:
//   ln|Psi~| = sum ln|Q~_i| + ln|S|
//   a^T Psi~^{-1} b = sum a_i^T Q~_i^{-1} b_i - w_a^T w_b + w_a^T S^{-1} w_b,
// where w_{a,i} = Xi_i^T Q~_i^{-1} a_i / H_i.
class BlockSystem {
 public:
  BlockSystem(const StructuralParams& theta1, const ObservationSet& data, const Profiles& profiles) {
    require(profiles.size() == data.num_units(), "profiles/data unit count mismatch");
    double logdet = 0.0;
    for (std::size_t i = 0; i < data.num_units(); ++i) {
      const auto& ts = data.times(i);
      if (ts.empty()) continue;
      Unit u{i, KernelMatrix(ts, theta1.alpha, theta1.kappa), {}, {}, {}, Eigen::VectorXd::Map(data.levels(i).data(), static_cast<Eigen::Index>(ts.size())), 0.0};
      u.xi.resize(static_cast<Eigen::Index>(ts.size()));
      for (std::size_t j = 0; j < ts.size(); ++j)
        u.xi(static_cast<Eigen::Index>(j)) =
            covariate_link(profiles[i], ts[j], theta1.gamma1, theta1.gamma2) * u.kernel.clock()(static_cast<Eigen::Index>(j));
      u.inv = kernel_inverse(u.kernel);
      u.v = u.inv.multiply(u.xi);
      u.h = std::sqrt(u.xi.dot(u.v));
      logdet += kernel_logdet(u.kernel);
      units_.push_back(std::move(u));
    }
    require(!units_.empty(), "no observations");
    const auto n = static_cast<Eigen::Index>(units_.size());
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      s(a, a) += units_[static_cast<std::size_t>(a)].h * units_[static_cast<std::size_t>(a)].h;
      if (a + 1 < n && units_[static_cast<std::size_t>(a + 1)].index == units_[static_cast<std::size_t>(a)].index + 1) {
        s(a, a + 1) = s(a + 1, a) = units_[static_cast<std::size_t>(a)].h * theta1.rho * units_[static_cast<std::size_t>(a + 1)].h;
      }
    }
    chol_ = cholesky_lower(s);
    logdet_ = logdet + 2.0 * chol_.diagonal().array().log().sum();
    h_.resize(n);
    for (Eigen::Index a = 0; a < n; ++a) h_(a) = units_[static_cast<std::size_t>(a)].h;
  }

  double logdet() const { return logdet_; }
  std::size_t observations() const {
    std::size_t m = 0;
    for (const auto& u : units_) m += static_cast<std::size_t>(u.y.size());
    return m;
  }

  ScaleEstimate concentrate() const {
    const auto n = static_cast<Eigen::Index>(units_.size());
    Eigen::VectorXd wy(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const Unit& u = units_[static_cast<std::size_t>(a)];
      wy(a) = u.v.dot(u.y) / u.h;
    }
    const auto tri = chol_.triangularView<Eigen::Lower>();
    const Eigen::VectorXd zh = tri.solve(h_);
    const Eigen::VectorXd zy = tri.solve(wy);
    const double xx = zh.squaredNorm();
    require(xx > 0.0, "concentrate_scale: Xi^T Psi~^{-1} Xi is zero (all-zero loadings)");
    const double mu = zh.dot(zy) / xx;

    double quad = 0.0;
    Eigen::VectorXd wr(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const Unit& u = units_[static_cast<std::size_t>(a)];
      const Eigen::VectorXd r = u.y - mu * u.xi;
      quad += u.inv.bilinear(r, r);
      wr(a) = u.v.dot(r) / u.h;
    }
    quad += tri.solve(wr).squaredNorm() - wr.squaredNorm();
    return {mu, std::max(quad, 0.0) / static_cast<double>(observations())};
  }

 private:
  struct Unit {
    std::size_t index;
    KernelMatrix kernel;
    Tridiagonal inv;
    Eigen::VectorXd xi;
    Eigen::VectorXd v;
    Eigen::VectorXd y;
    double h;
  };
  std::vector<Unit> units_;
  Eigen::MatrixXd chol_;
  Eigen::VectorXd h_;
  double logdet_ = 0.0;
};

double profile_from(double logdet, double tau2, std::size_t m) {
  const auto md = static_cast<double>(m);
  if (tau2 <= 0.0) return std::numeric_limits<double>::infinity();
  return -0.5 * md * (kLog2Pi + 1.0) - 0.5 * md * std::log(tau2) - 0.5 * logdet;
}

}  // namespace

ScaleEstimate concentrate_scale(const StructuralParams& theta1, const ObservationSet& data,
                                const Profiles& profiles) {
  return BlockSystem(theta1, data, profiles).concentrate();
}

double profile_loglik(const StructuralParams& theta1, const ObservationSet& data, const Profiles& profiles) {
  try {
    const BlockSystem sys(theta1, data, profiles);
    return profile_from(sys.logdet(), sys.concentrate().tau2_hat, data.size());
  } catch (const NotPositiveDefinite&) {
    return -std::numeric_limits<double>::infinity();
  }
}

ScaleEstimate concentrate_scale_dense(const StructuralParams& theta1, const ObservationSet& data,
                                      const Profiles& profiles) {
  const UnitGrids grids = data.grids();
  const Eigen::MatrixXd l = cholesky_lower(assemble_scaled_covariance(theta1, profiles, grids));
  const auto tri = l.triangularView<Eigen::Lower>();
  const Eigen::VectorXd xi = loading_vector(theta1, profiles, grids);
  const Eigen::VectorXd y = data.stacked();
  const Eigen::VectorXd zx = tri.solve(xi);
  const Eigen::VectorXd zy = tri.solve(y);
  require(zx.squaredNorm() > 0.0, "concentrate_scale: Xi^T Psi~^{-1} Xi is zero (all-zero loadings)");
  const double mu = zx.dot(zy) / zx.squaredNorm();
  const double quad = (zy - mu * zx).squaredNorm();
  return {mu, quad / static_cast<double>(y.size())};
}

double profile_loglik_dense(const StructuralParams& theta1, const ObservationSet& data, const Profiles& profiles) {
  try {
    const UnitGrids grids = data.grids();
    const Eigen::MatrixXd psi = assemble_scaled_covariance(theta1, profiles, grids);
    const Eigen::MatrixXd l = cholesky_lower(psi);
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    return profile_from(logdet, concentrate_scale_dense(theta1, data, profiles).tau2_hat, data.size());
  } catch (const NotPositiveDefinite&) {
    return -std::numeric_limits<double>::infinity();
  }
}

double full_loglik(const ModelParams& theta, const ObservationSet& data, const Profiles& profiles) {
  theta.validate();
  require(theta.tau_a2 > 0.0, "full_loglik: tau_a2 must be positive");
  const StructuralParams theta1 = StructuralParams::from(theta);
  const UnitGrids grids = data.grids();
  const Eigen::VectorXd resid = data.stacked() - theta.mu_a * loading_vector(theta1, profiles, grids);
  const QuadformLogdet ql = stable_mvn_quadform_logdet(assemble_scaled_covariance(theta1, profiles, grids), resid);
  const auto m = static_cast<double>(data.size());
  return -0.5 * m * kLog2Pi - 0.5 * m * std::log(theta.tau_a2) - 0.5 * ql.logdet - 0.5 * ql.quadform / theta.tau_a2;
}

namespace {

bool log_scaled(Structural which) { return which == Structural::alpha || which == Structural::kappa; }

double to_search(Structural which, double v) {
  if (log_scaled(which)) return std::log(v);
  if (which == Structural::rho) return std::atanh(v);
  return v;
}

double from_search(Structural which, double s) {
  if (log_scaled(which)) return std::exp(s);
  if (which == Structural::rho) return std::tanh(s);
  return s;
}

class Search {
 public:
  Search(const ObservationSet& data, const Profiles& profiles, const FitConfig& config)
      : data_(data), profiles_(profiles), config_(config) {
    for (std::size_t k = 0; k < kStructuralCount; ++k)
      if (!config.fixed[k]) free_.push_back(static_cast<Structural>(k));
  }

  std::size_t dims() const { return free_.size(); }
  const std::vector<Structural>& free() const { return free_; }

  double lower(std::size_t d) const { return to_search(free_[d], config_.bounds[static_cast<std::size_t>(free_[d])].low); }
  double upper(std::size_t d) const { return to_search(free_[d], config_.bounds[static_cast<std::size_t>(free_[d])].high); }

  // Point in the original space; search coordinates are clamped to the box and
  // pinned parameters take their exact fixed values.
  StructuralParams decode(const double* x) const {
    StructuralParams p;
    for (std::size_t k = 0; k < kStructuralCount; ++k)
      if (config_.fixed[k]) set(p, static_cast<Structural>(k), *config_.fixed[k]);
    for (std::size_t d = 0; d < free_.size(); ++d) {
      const Interval& b = config_.bounds[static_cast<std::size_t>(free_[d])];
      const double s = std::clamp(x[d], lower(d), upper(d));
      set(p, free_[d], std::clamp(from_search(free_[d], s), b.low, b.high));
    }
    return p;
  }

  double objective(const double* x) {
    ++evaluations_;
    const double lp = profile_loglik(decode(x), data_, profiles_);
    if (!std::isfinite(lp)) return lp > 0.0 ? -kPenalty : kPenalty;
    return -lp;
  }

  std::size_t evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }

  static constexpr double kPenalty = 1e100;

 private:
  const ObservationSet& data_;
  const Profiles& profiles_;
  const FitConfig& config_;
  std::vector<Structural> free_;
  std::size_t evaluations_ = 0;
};

double gsl_objective(const gsl_vector* x, void* params) {
  return static_cast<Search*>(params)->objective(x->data);
}

struct MinimizerDeleter {
  void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};
struct VectorDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
struct QrngDeleter {
  void operator()(gsl_qrng* q) const { gsl_qrng_free(q); }
};

struct LocalResult {
  std::vector<double> x;
  double value;
  bool converged;
};

// Nelder-Mead (GSL nmsimplex2) restarted from the incumbent until a restart
// stops improving or the evaluation budget runs out.
LocalResult local_search(Search& search, std::vector<double> x, const FitConfig& config) {
  const std::size_t n = search.dims();
  search.reset_evaluations();
  if (n == 0) return {x, search.objective(x.data()), true};

  gsl_multimin_function fn{&gsl_objective, n, &search};
  std::unique_ptr<gsl_vector, VectorDeleter> start(gsl_vector_alloc(n));
  std::unique_ptr<gsl_vector, VectorDeleter> step(gsl_vector_alloc(n));
  std::unique_ptr<gsl_multimin_fminimizer, MinimizerDeleter> minimizer(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n));

  double best = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int restart = 0; restart < 4; ++restart) {
    for (std::size_t d = 0; d < n; ++d) {
      gsl_vector_set(start.get(), d, x[d]);
      gsl_vector_set(step.get(), d, 0.1 * (search.upper(d) - search.lower(d)) / (restart + 1));
    }
    gsl_multimin_fminimizer_set(minimizer.get(), &fn, start.get(), step.get());
    converged = false;
    while (search.evaluations() < config.max_evals) {
      if (gsl_multimin_fminimizer_iterate(minimizer.get()) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(minimizer.get()), config.tolerance) == GSL_SUCCESS) {
        converged = true;
        break;
      }
    }
    const double value = minimizer->fval;
    const bool improved = value < best - 1e-9 * (1.0 + std::abs(best));
    if (value < best) {
      best = value;
      for (std::size_t d = 0; d < n; ++d)
        x[d] = std::clamp(gsl_vector_get(minimizer->x, d), search.lower(d), search.upper(d));
    }
    if (!improved || search.evaluations() >= config.max_evals) break;
  }
  return {x, best, converged};
}

// A start where Psi~ is indefinite leaves the simplex on a flat penalty
// plateau. Pull a free rho toward the admissible value nearest 0 until the
// objective is finite; rho = 0 is always admissible.
void repair_start(Search& search, std::vector<double>& x) {
  if (search.objective(x.data()) < Search::kPenalty) return;
  const auto& free = search.free();
  const auto it = std::find(free.begin(), free.end(), Structural::rho);
  if (it == free.end()) return;
  const auto d = static_cast<std::size_t>(it - free.begin());
  const double target = std::clamp(0.0, search.lower(d), search.upper(d));
  for (int k = 0; k < 40 && search.objective(x.data()) >= Search::kPenalty; ++k) x[d] = target + 0.5 * (x[d] - target);
}

}  // namespace

FitResult fit(const ObservationSet& data, const Profiles& profiles, const FitConfig& config) {
  config.validate();
  require(!data.empty(), "fit: no observations");
  require(profiles.size() == data.num_units(), "fit: profiles/data unit count mismatch");

  Search search(data, profiles, config);
  const std::size_t n = search.dims();

  // Starts: optional warm start, then a randomly shifted Halton sequence over
  // the full 5-d box (pinned coordinates ignored), so the start set for
  // n_starts = k is a prefix of the set for any larger n_starts.
  std::unique_ptr<gsl_qrng, QrngDeleter> qrng(gsl_qrng_alloc(gsl_qrng_halton, kStructuralCount));
  Rng shift_rng = make_rng(derive_seed(config.seed, {0x5ea7}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, kStructuralCount> shift{};
  for (double& s : shift) s = unit(shift_rng);

  FitResult result{};
  result.profile_loglik_at_max = -std::numeric_limits<double>::infinity();
  std::vector<double> best_x;
  double best_value = std::numeric_limits<double>::infinity();

  for (std::size_t s = 0; s < config.n_starts; ++s) {
    std::vector<double> x(n);
    if (s == 0 && config.initial_guess) {
      for (std::size_t d = 0; d < n; ++d)
        x[d] = std::clamp(to_search(search.free()[d], get(*config.initial_guess, search.free()[d])), search.lower(d),
                          search.upper(d));
    } else {
      std::array<double, kStructuralCount> q{};
      gsl_qrng_get(qrng.get(), q.data());
      for (std::size_t d = 0; d < n; ++d) {
        const auto k = static_cast<std::size_t>(search.free()[d]);
        const double u = std::fmod(q[k] + shift[k], 1.0);
        x[d] = search.lower(d) + u * (search.upper(d) - search.lower(d));
      }
    }
    repair_start(search, x);
    const StructuralParams start_point = search.decode(x.data());
    const LocalResult local = local_search(search, x, config);
    const double lp = local.value >= Search::kPenalty ? -std::numeric_limits<double>::infinity() : -local.value;
    result.trace.push_back({start_point, search.decode(local.x.data()), lp, local.converged, search.evaluations()});
    if (local.value < best_value) {
      best_value = local.value;
      best_x = local.x;
      result.converged = local.converged;
    }
  }

  if (best_x.empty() || best_value >= Search::kPenalty) throw FitFailure("fit: no start produced a finite objective");

  const StructuralParams theta1 = search.decode(best_x.data());
  const ScaleEstimate scale = concentrate_scale(theta1, data, profiles);
  result.profile_loglik_at_max = -best_value;
  result.degenerate_tau = scale.tau2_hat <= 0.0;
  result.theta_hat = ModelParams{theta1.alpha, scale.mu_hat, scale.tau2_hat, theta1.kappa, theta1.gamma1,
                                 theta1.gamma2, theta1.rho, 0.0};
  return result;
}

}  // namespace stwd
