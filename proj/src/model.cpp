#include "stwd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "stwd/error.hpp"
#include "stwd/kernel.hpp"
#include "stwd/random.hpp"

namespace stwd {

double ModelParams::sigma() const {
  return fixed_effects() ? sigma_fixed : kappa * std::sqrt(tau_a2);
}

double ModelParams::sigma2() const {
  const double s = sigma();
  return s * s;
}

void ModelParams::validate() const {
  require(std::isfinite(alpha) && alpha > 0.0, "params: alpha must be positive");
  require(std::isfinite(mu_a), "params: mu_a must be finite");
  require(std::isfinite(tau_a2) && tau_a2 >= 0.0, "params: tau_a2 must be nonnegative");
  require(std::isfinite(kappa) && kappa > 0.0, "params: kappa must be positive");
  require(std::isfinite(gamma1) && std::isfinite(gamma2), "params: gamma must be finite");
  require(std::isfinite(rho) && std::abs(rho) < 1.0, "params: |rho| must be < 1");
  require(std::isfinite(sigma_fixed) && sigma_fixed >= 0.0, "params: sigma must be nonnegative");
  require(std::isfinite(sigma()), "params: sigma must be finite");
}

CovariateProfile::CovariateProfile(std::vector<Segment> segments) : segments_(std::move(segments)) {
  require(!segments_.empty(), "profile: at least one segment required");
  require(segments_.front().start == 0.0, "profile: first segment must start at 0");
  for (std::size_t k = 0; k < segments_.size(); ++k) {
    const Segment& s = segments_[k];
    require(std::isfinite(s.start) && std::isfinite(s.s1) && std::isfinite(s.s2),
            "profile: non-finite segment value");
    require(s.s2 > 0.0, "profile: S2 must be positive on every segment");
    require(s.s1 > -273.15, "profile: S1 below absolute zero");
    if (k > 0) require(s.start > segments_[k - 1].start, "profile: segment starts must increase");
  }
}

CovariateProfile CovariateProfile::constant(double s1, double s2) {
  return CovariateProfile({Segment{0.0, s1, s2}});
}

CovariateProfile CovariateProfile::orbit(double years, double s1_cold, double s1_hot, double s2_low,
                                         double s2_high) {
  require(years > 0.0, "orbit profile: years must be positive");
  const auto n = static_cast<std::size_t>(std::ceil(2.0 * years));
  std::vector<Segment> segs;
  segs.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    segs.push_back({0.5 * static_cast<double>(k), k % 2 == 0 ? s1_cold : s1_hot,
                    (k / 2) % 2 == 0 ? s2_low : s2_high});
  }
  return CovariateProfile(std::move(segs));
}

const Segment& CovariateProfile::at(double t) const {
  require(t >= 0.0, "profile: time must be nonnegative");
  require(!segments_.empty(), "profile: empty");
  auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                             [](double v, const Segment& s) { return v < s.start; });
  return *std::prev(it);
}

double CovariateProfile::z1(double t) const { return 1000.0 / (at(t).s1 + 273.15); }

double CovariateProfile::z2(double t) const { return std::log(at(t).s2); }

ObservationSet::ObservationSet(std::size_t num_units, std::span<const Observation> records)
    : times_(num_units), levels_(num_units) {
  std::vector<Observation> sorted(records.begin(), records.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const Observation& a, const Observation& b) {
    return a.unit != b.unit ? a.unit < b.unit : a.time < b.time;
  });
  append(sorted);
}

void ObservationSet::append(std::span<const Observation> records) {
  for (const Observation& r : records) {
    require(r.unit < times_.size(), "observations: unit index out of range");
    require(std::isfinite(r.time) && r.time > 0.0, "observations: times must be positive");
    require(std::isfinite(r.level), "observations: levels must be finite");
    auto& ts = times_[r.unit];
    require(ts.empty() || r.time > ts.back(),
            "observations: per-unit times must be strictly increasing (unit " +
                std::to_string(r.unit + 1) + ")");
    ts.push_back(r.time);
    levels_[r.unit].push_back(r.level);
    ++total_;
  }
}

std::vector<Observation> ObservationSet::records() const {
  std::vector<Observation> out;
  out.reserve(total_);
  for (std::size_t i = 0; i < times_.size(); ++i)
    for (std::size_t j = 0; j < times_[i].size(); ++j) out.push_back({i, times_[i][j], levels_[i][j]});
  return out;
}

Eigen::VectorXd ObservationSet::stacked() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(total_));
  Eigen::Index k = 0;
  for (const auto& lv : levels_)
    for (double v : lv) y(k++) = v;
  return y;
}

void ReliabilityConfig::validate() const {
  require(std::isfinite(threshold_xi) && threshold_xi > 0.0, "reliability: xi must be positive and finite");
  require(std::isfinite(dt) && dt > 0.0, "reliability: dt must be positive");
  require(!horizons.empty(), "reliability: horizons must be nonempty");
  require(n_paths >= 1, "reliability: n_paths must be >= 1");
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    require(std::isfinite(horizons[k]) && horizons[k] >= 0.0, "reliability: horizons must be >= 0");
    if (k > 0) {
      require(horizons[k] > horizons[k - 1], "reliability: horizons must be strictly increasing");
      require(dt <= horizons[k] - horizons[k - 1] + 1e-12,
              "reliability: dt larger than the smallest inter-horizon gap");
    }
  }
}

double time_transform(double t, double alpha) {
  require(t >= 0.0, "time_transform: negative time");
  require(alpha > 0.0, "time_transform: alpha must be positive");
  return t == 0.0 ? 0.0 : std::pow(t, alpha);
}

double covariate_link(const CovariateProfile& profile, double t, double gamma1, double gamma2) {
  const Segment& s = profile.at(t);
  require(s.s2 > 0.0, "covariate_link: S2 must be positive");
  return std::exp(gamma1 * 1000.0 / (s.s1 + 273.15) + gamma2 * std::log(s.s2));
}

Moments marginal_moments(const ModelParams& params, const CovariateProfile& profile, double t) {
  params.validate();
  const double clock = time_transform(t, params.alpha);
  const double load = covariate_link(profile, t, params.gamma1, params.gamma2) * clock;
  return {params.mu_a * load, params.tau_a2 * load * load + params.sigma2() * clock};
}

double drift_covariance(double tau_a2, double rho, std::size_t i, std::size_t j) {
  if (i == j) return tau_a2;
  const std::size_t gap = i > j ? i - j : j - i;
  return gap == 1 ? tau_a2 * rho : 0.0;
}

namespace {

void check_grids(const Profiles& profiles, const UnitGrids& grids) {
  require(profiles.size() == grids.size(), "profiles/grids unit count mismatch");
  for (std::size_t i = 0; i < grids.size(); ++i)
    for (std::size_t j = 0; j < grids[i].size(); ++j) {
      require(grids[i][j] > 0.0, "time grids must be positive");
      require(j == 0 || grids[i][j] > grids[i][j - 1],
              "time grid of unit " + std::to_string(i + 1) + " is not strictly increasing");
    }
}

// Sum_{i,j} C(i,j) Xi_i Xi_j^T + delta_ij * diffusion * Q_i, upper triangle mirrored.
Eigen::MatrixXd assemble(double drift_var, double rho, double diffusion, const StructuralParams& theta1,
                         const Profiles& profiles, const UnitGrids& grids) {
  check_grids(profiles, grids);
  const Eigen::VectorXd xi = loading_vector(theta1, profiles, grids);
  std::vector<Eigen::Index> offset(grids.size() + 1, 0);
  for (std::size_t i = 0; i < grids.size(); ++i)
    offset[i + 1] = offset[i] + static_cast<Eigen::Index>(grids[i].size());
  const Eigen::Index n = offset.back();
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    for (std::size_t j = i; j < grids.size() && j <= i + 1; ++j) {
      const double c = drift_covariance(drift_var, rho, i, j);
      for (Eigen::Index l = 0; l < offset[i + 1] - offset[i]; ++l) {
        const Eigen::Index row = offset[i] + l;
        for (Eigen::Index k = 0; k < offset[j + 1] - offset[j]; ++k) {
          const Eigen::Index col = offset[j] + k;
          if (col < row) continue;
          double v = c * xi(row) * xi(col);
          if (i == j) {
            const double tmin = std::min(grids[i][static_cast<std::size_t>(l)], grids[i][static_cast<std::size_t>(k)]);
            v += diffusion * std::pow(tmin, theta1.alpha);
          }
          psi(row, col) = v;
        }
      }
    }
  }
  psi.triangularView<Eigen::StrictlyLower>() = psi.transpose();
  return psi;
}

}  // namespace

Eigen::VectorXd loading_vector(const StructuralParams& theta1, const Profiles& profiles,
                               const UnitGrids& grids) {
  require(profiles.size() == grids.size(), "profiles/grids unit count mismatch");
  Eigen::Index n = 0;
  for (const auto& g : grids) n += static_cast<Eigen::Index>(g.size());
  Eigen::VectorXd xi(n);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < grids.size(); ++i)
    for (double t : grids[i])
      xi(k++) = covariate_link(profiles[i], t, theta1.gamma1, theta1.gamma2) * time_transform(t, theta1.alpha);
  return xi;
}

Eigen::MatrixXd assemble_scaled_covariance(const StructuralParams& theta1, const Profiles& profiles,
                                           const UnitGrids& grids) {
  require(theta1.alpha > 0.0 && theta1.kappa > 0.0, "structural params: alpha, kappa must be positive");
  return assemble(1.0, theta1.rho, theta1.kappa * theta1.kappa, theta1, profiles, grids);
}

Eigen::MatrixXd assemble_covariance(const ModelParams& params, const Profiles& profiles,
                                    const UnitGrids& grids) {
  params.validate();
  return assemble(params.tau_a2, params.rho, params.sigma2(), StructuralParams::from(params), profiles, grids);
}

namespace {

Eigen::MatrixXd standard_normals(Eigen::Index rows, Eigen::Index cols, NormalStream& normal) {
  Eigen::MatrixXd z(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) z(r, c) = normal();
  return z;
}

}  // namespace

PathTensor simulate_paths(const ModelParams& params, const Profiles& profiles,
                          std::span<const double> grid, std::size_t n_paths, std::uint64_t seed) {
  params.validate();
  require(!grid.empty(), "simulate_paths: empty grid");
  require(n_paths >= 1, "simulate_paths: n_paths must be >= 1");
  const std::size_t units = profiles.size();
  require(units >= 1, "simulate_paths: no units");
  UnitGrids grids(units, std::vector<double>(grid.begin(), grid.end()));
  const StructuralParams theta1 = StructuralParams::from(params);
  const Eigen::VectorXd xi = loading_vector(theta1, profiles, grids);
  const Eigen::VectorXd mean = params.mu_a * xi;
  const auto g = static_cast<Eigen::Index>(grid.size());

  PathTensor out;
  out.n_paths = n_paths;
  out.n_units = units;
  out.grid.assign(grid.begin(), grid.end());
  out.values.resize(n_paths * units * grid.size());

  NormalStream normal(seed);
  const bool no_drift_noise = params.tau_a2 == 0.0;
  const bool no_diffusion = params.sigma2() == 0.0;

  // Noise-free diffusion makes Psi rank-deficient; draw the drift
  // coefficients directly instead.
  Eigen::MatrixXd factor;
  if (no_diffusion && !no_drift_noise) {
    Eigen::MatrixXd drift(static_cast<Eigen::Index>(units), static_cast<Eigen::Index>(units));
    for (std::size_t i = 0; i < units; ++i)
      for (std::size_t j = 0; j < units; ++j)
        drift(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = drift_covariance(params.tau_a2, params.rho, i, j);
    factor = cholesky_lower(drift);
  } else if (!no_diffusion) {
    factor = cholesky_lower(assemble_covariance(params, profiles, grids));
  }

  constexpr std::size_t kBatch = 2048;
  for (std::size_t first = 0; first < n_paths; first += kBatch) {
    const std::size_t count = std::min(kBatch, n_paths - first);
    Eigen::MatrixXd draws;
    if (no_diffusion && no_drift_noise) {
      draws = mean.replicate(1, static_cast<Eigen::Index>(count));
    } else if (no_diffusion) {
      const Eigen::MatrixXd z = standard_normals(static_cast<Eigen::Index>(units), static_cast<Eigen::Index>(count), normal);
      const Eigen::MatrixXd a = (factor.triangularView<Eigen::Lower>() * z).array() + params.mu_a;
      draws.resize(mean.size(), static_cast<Eigen::Index>(count));
      for (std::size_t i = 0; i < units; ++i) {
        const Eigen::Index off = static_cast<Eigen::Index>(i) * g;
        draws.middleRows(off, g) = xi.segment(off, g) * a.row(static_cast<Eigen::Index>(i));
      }
    } else {
      const Eigen::MatrixXd z = standard_normals(mean.size(), static_cast<Eigen::Index>(count), normal);
      draws = factor.triangularView<Eigen::Lower>() * z;
      draws.colwise() += mean;
    }
    for (std::size_t p = 0; p < count; ++p)
      for (std::size_t i = 0; i < units; ++i)
        for (std::size_t k = 0; k < grid.size(); ++k)
          out(first + p, i, k) = draws(static_cast<Eigen::Index>(i * grid.size() + k), static_cast<Eigen::Index>(p));
  }
  return out;
}

GaussianLaw conditional_law(const ModelParams& params, const Profiles& profiles,
                            const ObservationSet& history, std::span<const Target> targets) {
  params.validate();
  const std::size_t units = profiles.size();
  require(history.num_units() == units, "conditional: history/profile unit count mismatch");
  require(!targets.empty(), "conditional: no targets");

  // Joint grid per unit: history times, then that unit's targets ascending.
  UnitGrids grids(units);
  std::vector<std::vector<std::size_t>> target_slots(units);
  for (std::size_t q = 0; q < targets.size(); ++q) {
    const Target& tg = targets[q];
    require(tg.unit < units, "conditional: target unit out of range");
    require(tg.time > 0.0, "conditional: target times must be positive");
    const auto& ht = history.times(tg.unit);
    require(std::find(ht.begin(), ht.end(), tg.time) == ht.end(),
            "conditional: target duplicates an observed (unit, time) pair");
    require(ht.empty() || tg.time > ht.back(),
            "conditional: target time must exceed the unit's last observed time");
    target_slots[tg.unit].push_back(q);
  }
  std::vector<Eigen::Index> row_of_target(targets.size());
  std::vector<Eigen::Index> history_rows;
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < units; ++i) {
    const auto& ht = history.times(i);
    for (double t : ht) {
      grids[i].push_back(t);
      history_rows.push_back(row++);
    }
    auto& slots = target_slots[i];
    std::sort(slots.begin(), slots.end(), [&](std::size_t a, std::size_t b) { return targets[a].time < targets[b].time; });
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (s > 0) require(targets[slots[s]].time > targets[slots[s - 1]].time, "conditional: duplicate target");
      grids[i].push_back(targets[slots[s]].time);
      row_of_target[slots[s]] = row++;
    }
  }

  const Eigen::MatrixXd psi = assemble_covariance(params, profiles, grids);
  const Eigen::VectorXd mean = params.mu_a * loading_vector(StructuralParams::from(params), profiles, grids);
  const auto nt = static_cast<Eigen::Index>(targets.size());
  const auto nh = static_cast<Eigen::Index>(history_rows.size());

  GaussianLaw law;
  law.mean.resize(nt);
  law.cov.resize(nt, nt);
  for (Eigen::Index a = 0; a < nt; ++a) {
    law.mean(a) = mean(row_of_target[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < nt; ++b)
      law.cov(a, b) = psi(row_of_target[static_cast<std::size_t>(a)], row_of_target[static_cast<std::size_t>(b)]);
  }
  if (nh == 0) return law;

  Eigen::MatrixXd hh(nh, nh), gh(nt, nh);
  Eigen::VectorXd resid(nh);
  const Eigen::VectorXd y = history.stacked();
  for (Eigen::Index a = 0; a < nh; ++a) {
    const Eigen::Index ra = history_rows[static_cast<std::size_t>(a)];
    resid(a) = y(a) - mean(ra);
    for (Eigen::Index b = 0; b < nh; ++b) hh(a, b) = psi(ra, history_rows[static_cast<std::size_t>(b)]);
    for (Eigen::Index q = 0; q < nt; ++q) gh(q, a) = psi(row_of_target[static_cast<std::size_t>(q)], ra);
  }
  Eigen::MatrixXd l;
  try {
    l = cholesky_lower(hh);
  } catch (const NotPositiveDefinite& e) {
    throw NotPositiveDefinite(e.minor(), "conditional: singular conditioning block");
  }
  const auto tri = l.triangularView<Eigen::Lower>();
  const Eigen::VectorXd wr = tri.solve(resid);
  const Eigen::MatrixXd wg = tri.solve(gh.transpose());
  law.mean += wg.transpose() * wr;
  law.cov -= wg.transpose() * wg;
  law.cov = 0.5 * (law.cov + law.cov.transpose()).eval();
  return law;
}

Eigen::MatrixXd conditional_sample(const ModelParams& params, const Profiles& profiles,
                                   const ObservationSet& history, std::span<const Target> targets,
                                   std::size_t n_draws, std::uint64_t seed) {
  const GaussianLaw law = conditional_law(params, profiles, history, targets);
  Eigen::MatrixXd l;
  try {
    l = cholesky_lower(law.cov);
  } catch (const NotPositiveDefinite& e) {
    throw NotPositiveDefinite(e.minor(), "conditional: degenerate conditional covariance");
  }
  NormalStream normal(seed);
  const Eigen::MatrixXd z = standard_normals(law.mean.size(), static_cast<Eigen::Index>(n_draws), normal);
  Eigen::MatrixXd draws = l.triangularView<Eigen::Lower>() * z;
  draws.colwise() += law.mean;
  return draws.transpose();
}

std::vector<double> reliability(const ModelParams& params, const CovariateProfile& profile,
                                const std::optional<LastState>& last_state,
                                const ReliabilityConfig& config) {
  params.validate();
  config.validate();
  const double t0 = last_state ? last_state->time : 0.0;
  const double x0 = last_state ? last_state->level : 0.0;
  require(t0 >= 0.0, "reliability: last state time must be nonnegative");
  require(config.horizons.front() >= t0, "reliability: horizons must not precede the last state");

  const std::size_t nh = config.horizons.size();
  std::vector<double> out(nh, 0.0);
  if (x0 >= config.threshold_xi) return out;

  // Shared step grid from t0 with every horizon inserted; horizon_step[h] is
  // the grid index of horizon h.
  std::vector<double> grid{t0};
  std::vector<std::size_t> horizon_step(nh);
  {
    std::size_t h = 0;
    const double last = config.horizons.back();
    for (std::size_t k = 1;; ++k) {
      const double t = t0 + static_cast<double>(k) * config.dt;
      while (h < nh && config.horizons[h] <= t + 1e-12) {
        if (config.horizons[h] > grid.back() + 1e-12) grid.push_back(config.horizons[h]);
        horizon_step[h] = grid.size() - 1;
        ++h;
      }
      if (h == nh || t > last) break;
      if (t > grid.back() + 1e-12) grid.push_back(t);
    }
  }

  const std::size_t n = grid.size();
  std::vector<double> load(n), root_dclock(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double clock = time_transform(grid[k], params.alpha);
    load[k] = covariate_link(profile, grid[k], params.gamma1, params.gamma2) * clock;
    if (k > 0) root_dclock[k] = std::sqrt(clock - time_transform(grid[k - 1], params.alpha));
  }

  // Drift coefficient law, conditioned on X(t0) = x0 when a last state exists.
  double a_mean = params.mu_a;
  double a_var = params.tau_a2;
  const double sigma = params.sigma();
  if (last_state && t0 > 0.0) {
    const double v = params.tau_a2 * load[0] * load[0] + params.sigma2() * time_transform(t0, params.alpha);
    if (v > 0.0) {
      a_mean += params.tau_a2 * load[0] * (x0 - params.mu_a * load[0]) / v;
      a_var -= params.tau_a2 * params.tau_a2 * load[0] * load[0] / v;
    }
  }
  const double a_sd = std::sqrt(std::max(a_var, 0.0));

  std::vector<std::size_t> first_fail_count(n + 1, 0);
  // One stream per path keeps path p identical across parameter values.
  for (std::size_t p = 0; p < config.n_paths; ++p) {
    NormalStream normal(derive_seed(config.seed, {p}));
    const double a = a_mean + a_sd * normal();
    const double base = x0 - a * load[0];
    double w = 0.0;
    std::size_t fail = n;
    for (std::size_t k = 1; k < n; ++k) {
      w += root_dclock[k] * normal();
      if (a * load[k] + base + sigma * w >= config.threshold_xi) {
        fail = k;
        break;
      }
    }
    ++first_fail_count[fail];
  }
  std::size_t failed = 0;
  std::size_t k = 0;
  for (std::size_t h = 0; h < nh; ++h) {
    for (; k <= horizon_step[h]; ++k) failed += first_fail_count[k];
    out[h] = 1.0 - static_cast<double>(failed) / static_cast<double>(config.n_paths);
  }
  return out;
}

}  // namespace stwd
