#include "stwd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

#include "stwd/error.hpp"
#include "stwd/io.hpp"
#include "stwd/kernel.hpp"
#include "stwd/random.hpp"

namespace stwd {

namespace {

constexpr std::uint64_t kStreamLatent = 1;
constexpr std::uint64_t kStreamInitialDesign = 2;
constexpr std::uint64_t kStreamLaterDesign = 3;
constexpr std::uint64_t kStreamFit = 4;
constexpr std::uint64_t kStreamReliability = 5;
constexpr std::uint64_t kStreamCriterion = 6;
constexpr std::uint64_t kStreamTruth = 7;
constexpr std::uint64_t kStreamFixedDesign = 8;

double snap(double t) { return std::round(t * 1e10) / 1e10; }

bool on_lattice(double t, double step) {
  const double k = std::round(t / step);
  return std::abs(k * step - t) <= 1e-9;
}

std::vector<double> default_horizons() {
  std::vector<double> h;
  for (int k = 1; k <= 16; ++k) h.push_back(10.0 + 0.125 * k);
  return h;
}

bool same_profile(const CovariateProfile& a, const CovariateProfile& b) {
  const auto& sa = a.segments();
  const auto& sb = b.segments();
  if (sa.size() != sb.size()) return false;
  for (std::size_t k = 0; k < sa.size(); ++k) {
    if (sa[k].start != sb[k].start || sa[k].s1 != sb[k].s1 || sa[k].s2 != sb[k].s2) return false;
  }
  return true;
}

}  // namespace

std::string method_name(Method method) {
  switch (method) {
    case Method::m0: return "m0";
    case Method::m1: return "m1";
    case Method::m2: return "m2";
  }
  return "m0";
}

Method method_from_name(const std::string& name) {
  if (name == "m0" || name == "M0") return Method::m0;
  if (name == "m1" || name == "M1") return Method::m1;
  if (name == "m2" || name == "M2") return Method::m2;
  throw InvalidArgument("unknown method '" + name + "' (expected m0, m1 or m2)");
}

EngineeringPlan engineering_plan() {
  EngineeringPlan plan;
  for (int k = 1; k <= 10; ++k) plan.initial_epochs.push_back(0.5 * k);
  for (int k = 0; k < 6; ++k) plan.later_windows.push_back({5.0 + 0.5 * k, 5.5 + 0.5 * k});
  for (int k = 0; k < 8; ++k) plan.later_windows.push_back({8.0 + 0.25 * k, 8.25 + 0.25 * k});
  return plan;
}

void ScenarioConfig::finalize() {
  if (profiles.empty()) profiles.assign(units, CovariateProfile::orbit(12.0));
  const EngineeringPlan plan = engineering_plan();
  if (initial_epochs.empty()) initial_epochs = plan.initial_epochs;
  if (later_windows.empty()) later_windows = plan.later_windows;
  if (horizons.empty()) horizons = default_horizons();
  criterion.t_max = design_life;
}

void ScenarioConfig::validate() const {
  for (int flag : {s1, s2, s3, s4}) require(flag == 0 || flag == 1, "scenario flags must be 0 or 1");
  require(!methods.empty(), "at least one method is required");
  require(units >= 1, "at least one unit is required");
  require(c_initial >= 1 && c_initial <= units, "c_initial must lie in 1..L");
  require(c_later >= 1 && c_later <= units, "c_later must lie in 1..L");
  require(c_m2 <= units, "c_m2 must not exceed L");
  require(replications >= 1, "replications must be at least 1");
  require(profiles.size() == units, "one covariate profile per unit is required");
  require(!horizons.empty(), "horizons must not be empty");
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    require(horizons[k] > 0.0, "horizons must be positive");
    if (k > 0) require(horizons[k] > horizons[k - 1], "horizons must be strictly increasing");
  }
  require(n_paths >= 1, "n_paths must be positive");
  require(truth_multiplier >= 10, "truth_multiplier must be at least 10");
  require(dt > 0.0, "dt must be positive");
  require(lattice_step > 0.0, "lattice_step must be positive");
  require(design_life > 0.0 && on_lattice(design_life, lattice_step), "design_life must lie on the lattice");
  require(!initial_epochs.empty(), "initial epochs must not be empty");
  for (std::size_t k = 0; k < initial_epochs.size(); ++k) {
    require(initial_epochs[k] > 0.0 && on_lattice(initial_epochs[k], lattice_step),
            "initial epochs must be positive lattice points");
    if (k > 0) require(initial_epochs[k] > initial_epochs[k - 1], "initial epochs must be strictly increasing");
  }
  require(!later_windows.empty(), "later windows must not be empty");
  for (std::size_t k = 0; k < later_windows.size(); ++k) {
    const CandidateWindow& w = later_windows[k];
    require(w.high > w.low, "windows must have high > low");
    require(on_lattice(w.low, lattice_step) && on_lattice(w.high, lattice_step), "window ends must lie on the lattice");
    require(w.low >= initial_epochs.back() - 1e-12, "windows must start after the initial phase");
    require(w.high <= design_life + 1e-12, "windows must end by the design life");
    if (k > 0) require(w.low >= later_windows[k - 1].high - 1e-12, "windows must not overlap");
  }
  require(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0, "max_failure_fraction must lie in [0, 1]");
  require(workers >= 1, "workers must be at least 1");
  require(refit_starts >= 1, "refit_starts must be at least 1");
  require(design_iterations >= 1, "design_iterations must be at least 1");
  require(min_true_reliability >= 0.0, "min_true_reliability must be nonnegative");
  true_params.validate();
  require(true_params.tau_a2 > 0.0, "scenario truth needs tau_a^2 > 0");
  fit.validate();
  criterion.validate();
}

double ScenarioConfig::threshold() const {
  if (threshold_xi) return *threshold_xi;
  require(!profiles.empty(), "threshold needs a covariate profile");
  return true_params.mu_a * covariate_link(profiles[0], xi_reference_time, true_params.gamma1, true_params.gamma2) *
         time_transform(xi_reference_time, true_params.alpha);
}

ScenarioConfig default_scenario(int s1, int s2, int s3, int s4) {
  ScenarioConfig c;
  c.s1 = s1;
  c.s2 = s2;
  c.s3 = s3;
  c.s4 = s4;
  c.true_params.alpha = s1 == 1 ? 1.2 : 0.5;
  c.true_params.mu_a = 1.0;
  c.true_params.tau_a2 = 0.01;
  c.true_params.kappa = 1.0;
  c.true_params.gamma1 = 0.1;
  c.true_params.gamma2 = 0.2;
  c.true_params.rho = 0.5;
  c.finalize();
  return c;
}

ScenarioConfig real_case_config() {
  ScenarioConfig c = default_scenario(1, 1, 1, 0);
  c.methods = {Method::m0, Method::m1, Method::m2};
  c.units = 12;
  c.c_initial = 4;
  c.c_later = 6;
  c.c_m2 = 5;
  c.replications = 50;
  c.true_params.alpha = 1.2;
  c.true_params.mu_a = 4.661;
  c.true_params.tau_a2 = 0.405 * 0.405;
  c.true_params.kappa = 1.841;
  c.true_params.rho = 0.5;
  c.true_params.gamma1 = 0.1;
  c.true_params.gamma2 = 0.2;
  c.profiles.clear();
  c.later_windows.clear();
  for (int k = 0; k < 5; ++k) c.later_windows.push_back({5.0 + k, 6.0 + k});
  c.horizons.clear();
  for (int k = 0; k <= 16; ++k) c.horizons.push_back(10.0 + 0.125 * k);
  c.xi_reference_time = 12.0;
  c.finalize();
  return c;
}

MethodPlan make_plan(const ScenarioConfig& config, Method method) {
  MethodPlan plan;
  plan.method = method;
  plan.initial_epochs = config.initial_epochs;
  plan.design_life = config.design_life;
  plan.phase_start = config.initial_epochs.back();
  if (config.s4 == 1) plan.pin_alpha = config.true_params.alpha;
  switch (method) {
    case Method::m0:
    case Method::m1:
      plan.initial_selection = config.s2 == 1;
      plan.c_initial = plan.initial_selection ? config.c_initial : config.units;
      plan.windows = config.later_windows;
      plan.windowed = config.s3 == 1;
      plan.c_later = config.c_later;
      if (method == Method::m0) {
        plan.rule = TimeRule::adaptive;
      } else {
        plan.rule = plan.windowed ? TimeRule::right_endpoint : TimeRule::uniform;
      }
      break;
    case Method::m2:
      plan.initial_selection = false;
      plan.c_initial = config.units;
      plan.windows = engineering_plan().later_windows;
      plan.windowed = true;
      plan.rule = TimeRule::fixed_schedule;
      plan.c_later = config.c_m2 == 0 ? config.units : config.c_m2;
      plan.pin_rho_zero = true;
      break;
  }
  return plan;
}

namespace {

// One realization of the drift coefficients and the Brownian motion on the
// time lattice, shared by every method of a replication.
class LatentRealization {
 public:
  LatentRealization(const ScenarioConfig& config, std::uint64_t seed)
      : params_(config.true_params), profiles_(config.profiles), step_(config.lattice_step) {
    const std::size_t units = config.units;
    steps_ = static_cast<std::size_t>(std::llround(config.design_life / step_));
    NormalStream normal(seed);

    Eigen::MatrixXd cov(units, units);
    for (std::size_t i = 0; i < units; ++i) {
      for (std::size_t j = 0; j < units; ++j) cov(i, j) = drift_covariance(params_.tau_a2, params_.rho, i, j);
    }
    const Eigen::MatrixXd lower = cholesky_lower(cov);
    Eigen::VectorXd z(units);
    for (std::size_t i = 0; i < units; ++i) z(i) = normal();
    drift_ = Eigen::VectorXd::Constant(units, params_.mu_a) + lower * z;

    const double sigma = params_.sigma();
    brownian_.assign(units, std::vector<double>(steps_ + 1, 0.0));
    for (std::size_t i = 0; i < units; ++i) {
      double prev = 0.0;
      for (std::size_t k = 1; k <= steps_; ++k) {
        const double clock = time_transform(static_cast<double>(k) * step_, params_.alpha);
        brownian_[i][k] = brownian_[i][k - 1] + sigma * std::sqrt(clock - prev) * normal();
        prev = clock;
      }
    }
  }

  double level(std::size_t unit, double t) const {
    const double kd = std::round(t / step_);
    require(std::abs(kd * step_ - t) <= 1e-6, "observation time off the simulation lattice");
    const auto k = static_cast<std::size_t>(kd);
    require(k >= 1 && k <= steps_, "observation time outside the simulated span");
    const double eta = covariate_link(profiles_[unit], t, params_.gamma1, params_.gamma2) * time_transform(t, params_.alpha);
    return drift_(unit) * eta + brownian_[unit][k];
  }

 private:
  ModelParams params_;
  Profiles profiles_;
  double step_;
  std::size_t steps_ = 0;
  Eigen::VectorXd drift_;
  std::vector<std::vector<double>> brownian_;
};

struct Designs {
  ObservationMatrix initial;
  ObservationMatrix later;
  ObservationMatrix fixed;  // M2 later phase
};

ObservationMatrix unit_design(const ScenarioConfig& config, std::size_t epochs, std::size_t budget,
                              std::uint64_t seed) {
  SearchConfig search;
  search.algorithm = config.design_algorithm;
  search.iterations = config.design_iterations;
  search.seed = seed;
  return optimize_design(epochs, config.units, budget, search).matrix;
}

class MethodRun {
 public:
  MethodRun(const ScenarioConfig& config, const MethodPlan& plan, const LatentRealization& latent,
            const Designs& designs, std::size_t rep)
      : config_(config), plan_(plan), latent_(latent), designs_(designs), rep_(rep),
        data_(config.units, std::span<const Observation>()) {}

  MethodOutcome run(std::optional<std::size_t> matched_epochs) {
    MethodOutcome out;
    out.method = plan_.method;
    try {
      initial_phase();
      switch (plan_.rule) {
        case TimeRule::adaptive:
          fit_now(false);
          if (plan_.windowed) {
            adaptive_windowed();
          } else {
            adaptive_free();
          }
          break;
        case TimeRule::right_endpoint:
          for (std::size_t w = 0; w < plan_.windows.size(); ++w) {
            observe(designs_.later.column(w % designs_.later.epochs()), plan_.windows[w].high);
          }
          fit_now(false);
          break;
        case TimeRule::uniform: {
          require(matched_epochs.has_value(), "uniform plan needs the adaptive epoch count");
          const std::size_t n = *matched_epochs;
          for (std::size_t k = 1; k <= n; ++k) {
            const double raw = plan_.phase_start + (plan_.design_life - plan_.phase_start) * static_cast<double>(k) /
                                                       static_cast<double>(n);
            const double t = snap(std::round(raw / config_.lattice_step) * config_.lattice_step);
            observe(designs_.later.column((k - 1) % designs_.later.epochs()), t);
          }
          fit_now(false);
          break;
        }
        case TimeRule::fixed_schedule:
          for (std::size_t w = 0; w < plan_.windows.size(); ++w) {
            observe(designs_.fixed.column(w), plan_.windows[w].high);
          }
          fit_now(false);
          break;
      }
      out.theta_hat = theta_;
      out.observations = data_.size();
      out.epochs = epochs_;
      out.max_epoch_units = max_epoch_units_;
      out.data = data_.records();
      out.reliability = predict();
    } catch (const Error& e) {
      out.failed = true;
      out.failure = std::string(e.kind()) + ": " + e.what();
      out.observations = data_.size();
      out.epochs = epochs_;
    }
    return out;
  }

 private:
  void initial_phase() {
    std::vector<Observation> batch;
    for (std::size_t k = 0; k < plan_.initial_epochs.size(); ++k) {
      std::vector<std::size_t> units;
      if (plan_.initial_selection) {
        units = designs_.initial.column(k);
      } else {
        for (std::size_t i = 0; i < config_.units; ++i) units.push_back(i);
      }
      max_epoch_units_ = std::max(max_epoch_units_, units.size());
      for (std::size_t u : units) batch.push_back({u, plan_.initial_epochs[k], latent_.level(u, plan_.initial_epochs[k])});
    }
    data_.append(batch);
  }

  void observe(const std::vector<std::size_t>& units, double t) {
    std::vector<Observation> batch;
    for (std::size_t u : units) batch.push_back({u, t, latent_.level(u, t)});
    record_epoch(batch);
  }

  void record_epoch(const std::vector<Observation>& batch) {
    require(batch.size() <= plan_.c_later, "epoch exceeds the unit budget");
    max_epoch_units_ = std::max(max_epoch_units_, batch.size());
    data_.append(batch);
    ++epochs_;
  }

  void fit_now(bool warm) {
    FitConfig fc = config_.fit;
    if (plan_.pin_rho_zero) fc.pin(Structural::rho, 0.0);
    if (plan_.pin_alpha) fc.pin(Structural::alpha, *plan_.pin_alpha);
    fc.seed = derive_seed(config_.master_seed, {rep_, kStreamFit, static_cast<std::uint64_t>(plan_.method), fits_});
    if (warm) {
      fc.initial_guess = StructuralParams::from(theta_);
      fc.n_starts = config_.refit_starts;
    }
    theta_ = fit(data_, config_.profiles, fc).theta_hat;
    ++fits_;
  }

  UnitHistory history(std::size_t unit) const {
    return UnitHistory{data_.times(unit), data_.levels(unit), config_.profiles[unit]};
  }

  CriterionConfig criterion_for(std::size_t epoch, std::size_t unit) const {
    CriterionConfig crit = config_.criterion;
    crit.seed = derive_seed(config_.master_seed, {rep_, kStreamCriterion, epoch, unit});
    return crit;
  }

  void adaptive_windowed() {
    for (std::size_t w = 0; w < plan_.windows.size(); ++w) {
      std::vector<Observation> batch;
      for (std::size_t u : designs_.later.column(w % designs_.later.epochs())) {
        CriterionConfig crit = criterion_for(w, u);
        crit.window = plan_.windows[w];
        const double t = next_time(theta_, history(u), crit).t_star;
        batch.push_back({u, t, latent_.level(u, t)});
      }
      record_epoch(batch);
      fit_now(true);
    }
  }

  // One common time per epoch: the argmax of the criterion averaged over
  // the epoch's units, on the lattice after the previous epoch.
  void adaptive_free() {
    const CriterionConfig& base = config_.criterion;
    double t_cur = plan_.phase_start;
    for (std::size_t e = 0;; ++e) {
      if (t_cur + base.min_spacing > plan_.design_life + 1e-9) break;
      const std::vector<std::size_t> units = designs_.later.column(e % designs_.later.epochs());
      std::vector<double> candidates;
      std::vector<double> mean;
      for (std::size_t u : units) {
        CriterionConfig crit = criterion_for(e, u);
        crit.window = CandidateWindow{t_cur + base.min_spacing - base.resolution, plan_.design_life};
        const UnitHistory h = history(u);
        const std::vector<double> ts = candidate_times(h, crit);
        if (candidates.empty()) {
          candidates = ts;
          mean.assign(ts.size(), 0.0);
        }
        require(ts == candidates, "units disagree on the candidate set");
        const Normalization norm = criterion_normalization(theta_, h, crit);
        for (std::size_t k = 0; k < ts.size(); ++k) {
          mean[k] += criterion_terms(theta_, h, ts[k], crit, norm).value / static_cast<double>(units.size());
        }
      }
      if (candidates.empty()) break;
      std::size_t best = 0;
      for (std::size_t k = 1; k < candidates.size(); ++k) {
        if (mean[k] > mean[best]) best = k;
      }
      observe(units, candidates[best]);
      t_cur = candidates[best];
      fit_now(true);
    }
  }

  std::vector<std::vector<double>> predict() const {
    ReliabilityConfig rc;
    rc.threshold_xi = config_.threshold();
    rc.horizons = config_.horizons;
    rc.n_paths = config_.n_paths;
    rc.dt = config_.dt;
    rc.seed = derive_seed(config_.master_seed, {rep_, kStreamReliability});
    std::vector<std::vector<double>> out(config_.units);
    for (std::size_t i = 0; i < config_.units; ++i) {
      bool reused = false;
      for (std::size_t j = 0; j < i && !reused; ++j) {
        if (same_profile(config_.profiles[i], config_.profiles[j])) {
          out[i] = out[j];
          reused = true;
        }
      }
      if (!reused) out[i] = reliability(theta_, config_.profiles[i], std::nullopt, rc);
    }
    return out;
  }

  const ScenarioConfig& config_;
  const MethodPlan& plan_;
  const LatentRealization& latent_;
  const Designs& designs_;
  std::size_t rep_;
  ObservationSet data_;
  ModelParams theta_;
  std::size_t epochs_ = 0;
  std::size_t max_epoch_units_ = 0;
  std::uint64_t fits_ = 0;
};

}  // namespace

ReplicationResult run_replication(const ScenarioConfig& config, std::size_t rep_index) {
  const std::uint64_t rep = rep_index;
  const LatentRealization latent(config, derive_seed(config.master_seed, {rep, kStreamLatent}));

  Designs designs;
  designs.initial = unit_design(config, config.initial_epochs.size(), config.c_initial,
                                derive_seed(config.master_seed, {rep, kStreamInitialDesign}));
  designs.later = unit_design(config, config.later_windows.size(), config.c_later,
                              derive_seed(config.master_seed, {rep, kStreamLaterDesign}));
  const std::size_t fixed_budget = config.c_m2 == 0 ? config.units : config.c_m2;
  designs.fixed = unit_design(config, engineering_plan().later_windows.size(), fixed_budget,
                              derive_seed(config.master_seed, {rep, kStreamFixedDesign}));

  ReplicationResult result;
  result.rep_index = rep_index;

  const bool wants_m1 = std::find(config.methods.begin(), config.methods.end(), Method::m1) != config.methods.end();
  const bool free_plan = config.s3 == 0;
  std::optional<MethodOutcome> m0;
  auto run_m0 = [&]() -> const MethodOutcome& {
    if (!m0) {
      const MethodPlan plan = make_plan(config, Method::m0);
      m0 = MethodRun(config, plan, latent, designs, rep_index).run(std::nullopt);
    }
    return *m0;
  };

  for (Method method : config.methods) {
    if (method == Method::m0) {
      result.outcomes.push_back(run_m0());
      continue;
    }
    const MethodPlan plan = make_plan(config, method);
    std::optional<std::size_t> matched;
    if (method == Method::m1 && free_plan) {
      const MethodOutcome& ref = run_m0();
      if (ref.failed) {
        MethodOutcome failed;
        failed.method = method;
        failed.failed = true;
        failed.failure = "matched count unavailable: m0 failed";
        result.outcomes.push_back(failed);
        continue;
      }
      matched = ref.epochs;
    }
    result.outcomes.push_back(MethodRun(config, plan, latent, designs, rep_index).run(matched));
  }

  // Fair comparison: M1 matches M0's observation count.
  if (wants_m1 && m0 && !m0->failed) {
    for (const MethodOutcome& o : result.outcomes) {
      if (o.method != Method::m1 || o.failed) continue;
      const auto a = static_cast<long long>(o.observations);
      const auto b = static_cast<long long>(m0->observations);
      if (std::abs(a - b) > 1) {
        throw Error("replication " + std::to_string(rep_index) + ": m1 observed " + std::to_string(a) +
                    " times against m0's " + std::to_string(b));
      }
    }
  }
  return result;
}

namespace {

Json truth_key(const ScenarioConfig& config) {
  Json doc = {{"params", params_to_json(config.true_params)},
              {"profiles", profiles_to_json(config.profiles)},
              {"xi", config.threshold()},
              {"horizons", config.horizons},
              {"n_paths", config.n_paths * config.truth_multiplier},
              {"dt", config.dt},
              {"seed", derive_seed(config.master_seed, {kStreamTruth})}};
  return doc;
}

}  // namespace

TruthCurve true_reliability(const ScenarioConfig& config) {
  static std::mutex mutex;
  static std::map<std::string, TruthCurve> memo;
  const Json key = truth_key(config);
  const std::string hash = config_hash(key);
  {
    std::lock_guard<std::mutex> lock(mutex);
    const auto it = memo.find(hash);
    if (it != memo.end()) return it->second;
  }

  std::string cache_file;
  if (!config.truth_cache_dir.empty()) {
    cache_file = config.truth_cache_dir + "/truth-" + hash + ".json";
    if (std::filesystem::exists(cache_file)) {
      const Json cached = read_json_file(cache_file);
      if (cached.contains("key") && cached.at("key") == key) {
        TruthCurve curve;
        curve.reliability = cached.at("reliability").get<std::vector<std::vector<double>>>();
        std::lock_guard<std::mutex> lock(mutex);
        memo[hash] = curve;
        return curve;
      }
    }
  }

  ReliabilityConfig rc;
  rc.threshold_xi = config.threshold();
  rc.horizons = config.horizons;
  rc.n_paths = config.n_paths * config.truth_multiplier;
  rc.dt = config.dt;
  rc.seed = derive_seed(config.master_seed, {kStreamTruth});
  TruthCurve curve;
  curve.reliability.resize(config.units);
  for (std::size_t i = 0; i < config.units; ++i) {
    bool reused = false;
    for (std::size_t j = 0; j < i && !reused; ++j) {
      if (same_profile(config.profiles[i], config.profiles[j])) {
        curve.reliability[i] = curve.reliability[j];
        reused = true;
      }
    }
    if (!reused) curve.reliability[i] = reliability(config.true_params, config.profiles[i], std::nullopt, rc);
  }

  if (!cache_file.empty()) {
    std::filesystem::create_directories(config.truth_cache_dir);
    const Json doc = {{"key", key}, {"reliability", curve.reliability}};
    write_text_file(cache_file, doc.dump());
  }
  std::lock_guard<std::mutex> lock(mutex);
  memo[hash] = curve;
  return curve;
}

const ErrorRow& ErrorTable::row(const std::string& method, double horizon) const {
  for (const ErrorRow& r : rows) {
    if (r.method == method && std::abs(r.horizon - horizon) <= 1e-9) return r;
  }
  throw InvalidArgument("no row for method " + method + " at horizon " + format_double(horizon));
}

ErrorTable aggregate(const ScenarioConfig& config, const TruthCurve& truth,
                     const std::vector<ReplicationResult>& replications) {
  ErrorTable table;
  table.config_hash = config_hash(scenario_to_json(config));
  table.replications = replications.size();
  const std::size_t nh = config.horizons.size();

  std::vector<double> true_mean(nh, 0.0);
  std::vector<std::size_t> usable(nh, 0);
  for (std::size_t k = 0; k < nh; ++k) {
    for (std::size_t i = 0; i < config.units; ++i) {
      true_mean[k] += truth.reliability[i][k] / static_cast<double>(config.units);
      if (truth.reliability[i][k] >= config.min_true_reliability) ++usable[k];
    }
    if (usable[k] == 0) table.excluded_horizons.push_back(config.horizons[k]);
  }

  for (std::size_t m = 0; m < config.methods.size(); ++m) {
    const std::string label = method_name(config.methods[m]);
    std::size_t failed = 0;
    std::string first_failure;
    std::vector<double> err(nh, 0.0);
    std::vector<double> pred(nh, 0.0);
    std::size_t used = 0;
    double observations = 0.0;
    for (const ReplicationResult& rep : replications) {
      const MethodOutcome& o = rep.outcomes.at(m);
      if (o.failed) {
        if (failed == 0) first_failure = "replication " + std::to_string(rep.rep_index) + ": " + o.failure;
        ++failed;
        continue;
      }
      ++used;
      observations += static_cast<double>(o.observations);
      for (std::size_t k = 0; k < nh; ++k) {
        double e = 0.0;
        double p = 0.0;
        for (std::size_t i = 0; i < config.units; ++i) {
          const double r_true = truth.reliability[i][k];
          p += o.reliability[i][k];
          if (r_true >= config.min_true_reliability) e += std::abs(o.reliability[i][k] - r_true) / r_true;
        }
        if (usable[k] > 0) err[k] += e / static_cast<double>(usable[k]);
        pred[k] += p / static_cast<double>(config.units);
      }
    }
    table.failures[label] = failed;
    if (static_cast<double>(failed) > config.max_failure_fraction * static_cast<double>(replications.size())) {
      throw Error(label + ": " + std::to_string(failed) + " of " + std::to_string(replications.size()) +
                  " replications failed, above the " + format_double(100.0 * config.max_failure_fraction) +
                  "% limit (first: " + first_failure + ")");
    }
    require(used > 0, label + ": no replication succeeded");
    table.mean_observations[label] = observations / static_cast<double>(used);
    for (std::size_t k = 0; k < nh; ++k) {
      ErrorRow row;
      row.method = label;
      row.horizon = config.horizons[k];
      row.relative_error_pct =
          usable[k] > 0 ? 100.0 * err[k] / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
      row.predicted_reliability = pred[k] / static_cast<double>(used);
      row.true_reliability = true_mean[k];
      row.replications = static_cast<double>(used);
      table.rows.push_back(row);
    }
  }
  return table;
}

ScenarioResult run_scenario(const ScenarioConfig& config) {
  config.validate();
  const TruthCurve truth = true_reliability(config);

  std::vector<ReplicationResult> results(config.replications);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t r = next.fetch_add(1);
      if (r >= config.replications) return;
      try {
        results[r] = run_replication(config, r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(config.replications);
        return;
      }
    }
  };
  const std::size_t n_workers = std::min(config.workers, config.replications);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  ScenarioResult out;
  out.table = aggregate(config, truth, results);
  out.replications = std::move(results);
  return out;
}

ScenarioResult real_case(const ScenarioConfig& config) { return run_scenario(config); }

namespace {

constexpr const char* kStatistics[] = {"relative_error_pct", "predicted_reliability", "true_reliability",
                                       "replications"};

}  // namespace

std::string emit_plotdata(const ErrorTable& table) {
  require(!table.rows.empty(), "error table is empty");
  std::string out = "config_hash,method,horizon,statistic,value\n";
  for (const ErrorRow& r : table.rows) {
    const double values[] = {r.relative_error_pct, r.predicted_reliability, r.true_reliability, r.replications};
    for (std::size_t s = 0; s < 4; ++s) {
      out += table.config_hash + "," + r.method + "," + format_double(r.horizon) + "," + kStatistics[s] + "," +
             format_double(values[s]) + "\n";
    }
  }
  return out;
}

ErrorTable parse_plotdata(const std::string& csv) {
  const auto rows = parse_csv(csv);
  require(!rows.empty(), "plot data is empty");
  ErrorTable table;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    require(cells.size() == 5, "plot data rows have five cells");
    if (table.config_hash.empty()) table.config_hash = cells[0];
    const double horizon = parse_double(cells[2]);
    ErrorRow* row = nullptr;
    for (ErrorRow& existing : table.rows) {
      if (existing.method == cells[1] && existing.horizon == horizon) row = &existing;
    }
    if (row == nullptr) {
      table.rows.push_back(ErrorRow{cells[1], horizon});
      row = &table.rows.back();
    }
    const double value = parse_double(cells[4]);
    if (cells[3] == kStatistics[0]) {
      row->relative_error_pct = value;
    } else if (cells[3] == kStatistics[1]) {
      row->predicted_reliability = value;
    } else if (cells[3] == kStatistics[2]) {
      row->true_reliability = value;
    } else if (cells[3] == kStatistics[3]) {
      row->replications = value;
    } else {
      throw InvalidArgument("unknown statistic '" + cells[3] + "'");
    }
  }
  return table;
}

}  // namespace stwd
