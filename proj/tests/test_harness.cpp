#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "stwd/error.hpp"
#include "stwd/harness.hpp"
#include "stwd/io.hpp"
#include "support.hpp"

using namespace stwd;

namespace {

// A desk-sized version of a study scenario.
ScenarioConfig small_scenario(int s1, int s2, int s3, int s4, std::size_t reps) {
  ScenarioConfig c = default_scenario(s1, s2, s3, s4);
  c.replications = reps;
  c.n_paths = 200;
  c.truth_multiplier = 10;
  c.design_iterations = 2000;
  c.fit.n_starts = 4;
  c.refit_starts = 1;
  c.master_seed = 42;
  c.finalize();
  return c;
}

bool same_rows(const ErrorTable& a, const ErrorTable& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    const ErrorRow& x = a.rows[k];
    const ErrorRow& y = b.rows[k];
    auto eq = [](double u, double v) { return (std::isnan(u) && std::isnan(v)) || u == v; };
    if (x.method != y.method || !eq(x.horizon, y.horizon) || !eq(x.relative_error_pct, y.relative_error_pct) ||
        !eq(x.predicted_reliability, y.predicted_reliability) || !eq(x.true_reliability, y.true_reliability) ||
        !eq(x.replications, y.replications))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("engineering plan and method plans") {
  const EngineeringPlan plan = engineering_plan();
  CHECK(plan.initial_epochs.size() == 10);
  CHECK(plan.initial_epochs.front() == 0.5);
  CHECK(plan.initial_epochs.back() == 5.0);
  REQUIRE(plan.later_windows.size() == 14);
  const double ends[] = {5.5, 6.0, 6.5, 7.0, 7.5, 8.0, 8.25, 8.5, 8.75, 9.0, 9.25, 9.5, 9.75, 10.0};
  for (std::size_t k = 0; k < 14; ++k) {
    CHECK(plan.later_windows[k].high == doctest::Approx(ends[k]));
    CHECK(plan.later_windows[k].low == doctest::Approx(k == 0 ? 5.0 : ends[k - 1]));
  }

  ScenarioConfig c = default_scenario(1, 1, 1, 1);
  const MethodPlan m0 = make_plan(c, Method::m0);
  CHECK(m0.rule == TimeRule::adaptive);
  CHECK(m0.initial_selection);
  CHECK(m0.windowed);
  REQUIRE(m0.pin_alpha.has_value());
  CHECK(*m0.pin_alpha == 1.2);
  CHECK(make_plan(c, Method::m1).rule == TimeRule::right_endpoint);
  const MethodPlan m2 = make_plan(c, Method::m2);
  CHECK(m2.rule == TimeRule::fixed_schedule);
  CHECK(m2.pin_rho_zero);
  CHECK(m2.c_later == c.units);
  CHECK(make_plan(default_scenario(0, 0, 0, 0), Method::m1).rule == TimeRule::uniform);
  CHECK(default_scenario(0, 0, 1, 0).true_params.alpha == 0.5);

  for (Method m : {Method::m0, Method::m1, Method::m2}) CHECK(method_from_name(method_name(m)) == m);
  CHECK_THROWS_AS(method_from_name("m7"), InvalidArgument);
}

TEST_CASE("scenario defaults and validation") {
  ScenarioConfig c = default_scenario(1, 0, 1, 0);
  CHECK(c.horizons.size() == 16);
  CHECK(c.horizons.front() == 10.125);
  CHECK(c.horizons.back() == 12.0);
  CHECK(c.profiles.size() == c.units);
  const double xi = c.threshold();
  CHECK(xi == doctest::Approx(testing::loading(c.profiles[0], 11.0, 1.2, 0.1, 0.2)));

  ScenarioConfig empty = c;
  empty.horizons.clear();
  CHECK_THROWS_AS(empty.validate(), InvalidArgument);
  ScenarioConfig budget = c;
  budget.c_later = c.units + 1;
  CHECK_THROWS_AS(budget.validate(), InvalidArgument);

  const ScenarioConfig real = real_case_config();
  CHECK(real.units == 12);
  CHECK(real.later_windows.size() == 5);
  CHECK(real.horizons.size() == 17);
}

TEST_CASE("replications respect the budgets and are deterministic") {
  ScenarioConfig c = small_scenario(1, 1, 1, 0, 2);
  c.methods = {Method::m0, Method::m1, Method::m2};
  const ReplicationResult a = run_replication(c, 0);
  const ReplicationResult b = run_replication(c, 0);
  REQUIRE(a.outcomes.size() == 3);
  std::size_t m0_obs = 0, m1_obs = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const MethodOutcome& o = a.outcomes[k];
    REQUIRE_FALSE(o.failed);
    CHECK(o.observations == o.data.size());
    CHECK(o.theta_hat.alpha == b.outcomes[k].theta_hat.alpha);
    CHECK(o.reliability == b.outcomes[k].reliability);
    CHECK(o.data.size() == b.outcomes[k].data.size());
    if (o.method == Method::m2) {
      CHECK(o.observations == 120);
      CHECK(o.max_epoch_units == c.units);
      CHECK(o.theta_hat.rho == 0.0);
    } else {
      CHECK(o.max_epoch_units <= std::max(c.c_initial, c.c_later));
    }
    if (o.method == Method::m0) m0_obs = o.observations;
    if (o.method == Method::m1) m1_obs = o.observations;
    // Observation times never repeat within a unit.
    ObservationSet set(c.units, o.data);
    CHECK(set.size() == o.data.size());
  }
  CHECK((m0_obs > m1_obs ? m0_obs - m1_obs : m1_obs - m0_obs) <= 1);
  CHECK(m0_obs == 10 * c.c_initial + 14 * c.c_later);

  const ReplicationResult other = run_replication(c, 1);
  CHECK(other.outcomes[0].data.front().level != a.outcomes[0].data.front().level);
}

TEST_CASE("unconstrained plans match the adaptive count") {
  ScenarioConfig c = small_scenario(0, 0, 0, 0, 1);
  const ReplicationResult r = run_replication(c, 3);
  REQUIRE(r.outcomes.size() == 2);
  REQUIRE_FALSE(r.outcomes[0].failed);
  REQUIRE_FALSE(r.outcomes[1].failed);
  const std::size_t a = r.outcomes[0].observations, b = r.outcomes[1].observations;
  CHECK((a > b ? a - b : b - a) <= 1);
  for (const auto& o : r.outcomes)
    for (const Observation& obs : o.data) CHECK(obs.time <= c.design_life + 1e-12);
}

TEST_CASE("aggregation, plot data and worker independence") {
  ScenarioConfig c = small_scenario(1, 0, 1, 0, 2);
  const ScenarioResult serial = run_scenario(c);
  ScenarioConfig parallel_config = c;
  parallel_config.workers = 2;
  const ScenarioResult parallel = run_scenario(parallel_config);
  CHECK(emit_plotdata(serial.table) == emit_plotdata(parallel.table));
  CHECK(serial.table.rows.size() == 16 * 2);
  CHECK(serial.table.replications == 2);

  const ErrorTable back = parse_plotdata(emit_plotdata(serial.table));
  CHECK(back.config_hash == serial.table.config_hash);
  CHECK(same_rows(back, serial.table));
  CHECK(emit_plotdata(back) == emit_plotdata(serial.table));

  // One replication: the table is that replication's per-unit mean error.
  const TruthCurve truth = true_reliability(c);
  const std::vector<ReplicationResult> one{serial.replications[0]};
  const ErrorTable single = aggregate(c, truth, one);
  const MethodOutcome& m0 = serial.replications[0].outcomes[0];
  for (std::size_t h = 0; h < c.horizons.size(); ++h) {
    double sum = 0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < c.units; ++i) {
      if (truth.reliability[i][h] < c.min_true_reliability) continue;
      sum += 100.0 * std::abs(m0.reliability[i][h] - truth.reliability[i][h]) / truth.reliability[i][h];
      ++used;
    }
    const ErrorRow& row = single.row("m0", c.horizons[h]);
    if (used == 0) {
      CHECK(std::isnan(row.relative_error_pct));
    } else {
      CHECK(row.relative_error_pct == doctest::Approx(sum / static_cast<double>(used)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(single.row("m0", 3.0), InvalidArgument);
}

TEST_CASE("failure fraction is enforced") {
  ScenarioConfig c = small_scenario(1, 0, 1, 0, 1);
  const TruthCurve truth = true_reliability(c);
  ReplicationResult broken = run_replication(c, 0);
  broken.outcomes[0].failed = true;
  broken.outcomes[0].failure = "synthetic";
  CHECK_THROWS_AS(aggregate(c, truth, {broken}), Error);
}

TEST_CASE("number formatting round trips") {
  std::mt19937_64 rng(501);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 2000; ++k) {
    const double x = u(rng) * std::pow(10.0, static_cast<double>(k % 40 - 20));
    CHECK(parse_double(format_double(x)) == x);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(std::isnan(parse_double(format_double(std::numeric_limits<double>::quiet_NaN()))));
  CHECK_THROWS_AS(parse_double("1.5x"), InvalidArgument);
}

TEST_CASE("json configuration") {
  const Json params = Json::parse(R"({"alpha": 1.2, "mu_a": 1, "tau_a": 0.1, "kappa": 1, "gamma1": 0.1, "gamma2": 0.2, "rho": 0.5})");
  const ModelParams p = params_from_json(params);
  CHECK(p.tau_a2 == doctest::Approx(0.01));
  const ModelParams q = params_from_json(params_to_json(p));
  CHECK(q.tau_a2 == p.tau_a2);
  CHECK(q.alpha == p.alpha);
  CHECK_THROWS_AS(params_from_json(Json::parse(R"({"alpha": -1})")), InvalidArgument);

  const Json profiles = Json::parse(R"([{"unit": 2, "segments": [{"start": 0, "S1": 30, "S2": 1.2}]}])");
  const Profiles prof = profiles_from_json(profiles, 3, CovariateProfile::orbit(12.0));
  CHECK(prof[1].at(4.0).s1 == 30.0);
  CHECK(prof[0].at(0.75).s1 == 45.0);
  CHECK_THROWS_AS(profiles_from_json(Json::parse(R"([{"unit": 4, "segments": [{"start": 0, "S1": 30, "S2": 1}]}])"), 3,
                                     CovariateProfile::orbit(12.0)),
                  InvalidArgument);

  FitConfig f;
  f.pin(Structural::alpha, 1.2);
  f.n_starts = 5;
  const FitConfig g = fit_config_from_json(fit_config_to_json(f));
  CHECK(g.n_starts == 5);
  REQUIRE(g.fixed[0].has_value());
  CHECK(*g.fixed[0] == 1.2);

  CriterionConfig cc;
  cc.window = CandidateWindow{8.0, 8.25};
  cc.omega1 = 0.25;
  cc.omega2 = 0.75;
  const CriterionConfig dd = criterion_from_json(criterion_to_json(cc));
  REQUIRE(dd.window.has_value());
  CHECK(dd.window->high == 8.25);
  CHECK(dd.omega1 == 0.25);

  const ScenarioConfig base = default_scenario(1, 0, 1, 0);
  const ScenarioConfig parsed = scenario_from_json(Json::parse(R"({"replications": 7, "params": {"rho": 0.2}})"), base);
  CHECK(parsed.replications == 7);
  CHECK(parsed.true_params.rho == 0.2);
  CHECK(parsed.true_params.alpha == 1.2);
  const ScenarioConfig again = scenario_from_json(scenario_to_json(parsed), base);
  CHECK(scenario_to_json(again) == scenario_to_json(parsed));
  CHECK(config_hash(scenario_to_json(again)) == config_hash(scenario_to_json(parsed)));
  CHECK(config_hash(scenario_to_json(again)).size() == 16);
  CHECK(config_hash(scenario_to_json(base)) != config_hash(scenario_to_json(parsed)));
}

TEST_CASE("csv input and output") {
  const std::string text = "unit,time,level\n1,0.5,0.1\n2,0.5,0.12\n1,1.0,0.25\n";
  const std::vector<Observation> obs = observations_from_csv(text);
  REQUIRE(obs.size() == 3);
  CHECK(obs[1].unit == 1);
  CHECK(obs[2].time == 1.0);
  CHECK(observations_from_csv(observations_to_csv(obs)).size() == 3);
  CHECK(observations_to_csv(observations_from_csv(observations_to_csv(obs))) == observations_to_csv(obs));
  CHECK_THROWS_AS(observations_from_csv("unit,time\n1,0.5\n"), InvalidArgument);
  CHECK_THROWS_AS(observations_from_csv("unit,time,level\n0,0.5,1\n"), InvalidArgument);
  CHECK_THROWS_AS(observations_from_csv("unit,time,level\n1,abc,1\n"), InvalidArgument);

  const auto rows = parse_csv("a,b\n1,2\n\n3,4\n");
  CHECK(rows.size() == 3);
  CHECK(rows[2][1] == "4");
}
