#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stwd/estimation.hpp"
#include "stwd/model.hpp"
#include "stwd/spatial_design.hpp"
#include "stwd/temporal_design.hpp"

namespace stwd {

enum class Method { m0, m1, m2 };

std::string method_name(Method method);
Method method_from_name(const std::string& name);

// How the later-phase observation times are chosen.
enum class TimeRule {
  adaptive,        // argmax of the balanced criterion
  right_endpoint,  // right end of each window
  uniform,         // evenly over (phase_start, design_life], count matched to M0
  fixed_schedule,  // every window end, all selected units
};

struct EngineeringPlan {
  std::vector<double> initial_epochs;         // 0.5, 1.0, ..., 5.0
  std::vector<CandidateWindow> later_windows; // 6 semi-annual + 8 quarterly
};

EngineeringPlan engineering_plan();

struct MethodPlan {
  Method method = Method::m0;
  std::vector<double> initial_epochs;
  bool initial_selection = false;  // spatial design in the initial phase
  std::size_t c_initial = 0;
  std::vector<CandidateWindow> windows;
  bool windowed = true;
  TimeRule rule = TimeRule::adaptive;
  std::size_t c_later = 0;
  double phase_start = 5.0;
  double design_life = 10.0;
  bool pin_rho_zero = false;
  std::optional<double> pin_alpha;
};

struct ScenarioConfig {
  int s1 = 1;  // alpha 0.5 (concave) or 1.2 (convex)
  int s2 = 0;  // spatial design in the initial phase
  int s3 = 1;  // windowed later phase
  int s4 = 0;  // alpha known
  std::vector<Method> methods{Method::m0, Method::m1};
  std::size_t units = 5;
  std::size_t c_initial = 3;
  std::size_t c_later = 3;
  // Units observed per later epoch by M2; 0 means all of them.
  std::size_t c_m2 = 0;
  std::size_t replications = 200;
  std::uint64_t master_seed = 1;
  ModelParams true_params;
  Profiles profiles;
  std::vector<CandidateWindow> later_windows;  // M0/M1 windows; default engineering plan
  std::vector<double> initial_epochs;          // default engineering plan
  std::optional<double> threshold_xi;          // default: true mean level at xi_reference_time
  double xi_reference_time = 11.0;
  std::vector<double> horizons;                // default 10.125 ... 12.0 step 0.125
  std::size_t n_paths = 2000;
  std::size_t truth_multiplier = 10;
  double dt = 0.01;
  double lattice_step = 0.05;
  double design_life = 10.0;
  double min_true_reliability = 0.01;
  FitConfig fit;
  std::size_t refit_starts = 3;
  CriterionConfig criterion;
  std::size_t design_iterations = 20000;
  SearchAlgorithm design_algorithm = SearchAlgorithm::threshold_accepting;
  double max_failure_fraction = 0.05;
  std::size_t workers = 1;
  std::string truth_cache_dir;  // empty: no on-disk cache

  // Fills the defaults that depend on the flags (alpha, profiles, plan, horizons).
  void finalize();
  void validate() const;
  double threshold() const;
};

// The simulation study for the given flags, with everything else at its default.
ScenarioConfig default_scenario(int s1, int s2, int s3, int s4);
// The 12-unit case study configuration.
ScenarioConfig real_case_config();

MethodPlan make_plan(const ScenarioConfig& config, Method method);

struct MethodOutcome {
  Method method = Method::m0;
  bool failed = false;
  std::string failure;
  ModelParams theta_hat;
  std::size_t observations = 0;
  std::size_t epochs = 0;  // later-phase epochs
  std::size_t max_epoch_units = 0;
  std::vector<Observation> data;
  std::vector<std::vector<double>> reliability;  // unit x horizon
};

struct ReplicationResult {
  std::size_t rep_index = 0;
  std::vector<MethodOutcome> outcomes;
};

ReplicationResult run_replication(const ScenarioConfig& config, std::size_t rep_index);

struct TruthCurve {
  std::vector<std::vector<double>> reliability;  // unit x horizon
};

TruthCurve true_reliability(const ScenarioConfig& config);

struct ErrorRow {
  std::string method;
  double horizon = 0.0;
  double relative_error_pct = 0.0;    // NaN when the horizon is excluded
  double predicted_reliability = 0.0; // mean over units and replications
  double true_reliability = 0.0;      // mean over units
  double replications = 0.0;          // replications entering the mean
};

struct ErrorTable {
  std::string config_hash;
  std::vector<ErrorRow> rows;
  std::map<std::string, std::size_t> failures;
  std::map<std::string, double> mean_observations;
  std::vector<double> excluded_horizons;
  std::size_t replications = 0;

  const ErrorRow& row(const std::string& method, double horizon) const;
};

struct ScenarioResult {
  ErrorTable table;
  std::vector<ReplicationResult> replications;
};

// Runs every replication, then folds them in rep_index order. Throws Error
// when more than max_failure_fraction of a method's replications fail.
ScenarioResult run_scenario(const ScenarioConfig& config);
ErrorTable aggregate(const ScenarioConfig& config, const TruthCurve& truth,
                     const std::vector<ReplicationResult>& replications);

ScenarioResult real_case(const ScenarioConfig& config);

// Tidy CSV, one row per method x horizon x statistic, and its inverse.
std::string emit_plotdata(const ErrorTable& table);
ErrorTable parse_plotdata(const std::string& csv);

}  // namespace stwd
