#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stwd/error.hpp"
#include "stwd/estimation.hpp"
#include "stwd/harness.hpp"
#include "stwd/io.hpp"
#include "stwd/model.hpp"
#include "stwd/spatial_design.hpp"
#include "stwd/temporal_design.hpp"
#include "stwd/version.hpp"

using namespace stwd;

namespace {

Json metadata(const std::string& command, const Json& inputs, std::uint64_t seed) {
  Json doc = {{"command", command},
              {"config_hash", config_hash(inputs)},
              {"seed", seed},
              {"version", kVersion},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"inputs", inputs}};
  return doc;
}

void write_outputs(const std::string& out, const std::string& csv, const std::string& meta_path, const Json& meta) {
  write_text_file(out, csv);
  write_text_file(meta_path.empty() ? out + ".meta.json" : meta_path, meta.dump(2) + "\n");
}

Json optional_json(const std::string& path) { return path.empty() ? Json::object() : read_json_file(path); }

std::size_t unit_count(const Json& config, std::size_t from_data) {
  std::size_t units = from_data;
  if (config.contains("units")) units = std::max(units, config.at("units").get<std::size_t>());
  if (config.contains("profiles")) {
    for (const Json& p : config.at("profiles")) {
      if (p.contains("unit")) units = std::max(units, p.at("unit").get<std::size_t>());
    }
  }
  return units;
}

Profiles load_profiles(const Json& config, std::size_t units) {
  const CovariateProfile fallback = CovariateProfile::orbit(12.0);
  if (!config.contains("profiles")) return Profiles(units, fallback);
  return profiles_from_json(config.at("profiles"), units, fallback);
}

// Accepts {"theta_hat": {...}}, {"params": {...}} or a bare parameter object.
ModelParams load_params(const Json& doc) {
  if (doc.contains("theta_hat")) return params_from_json(doc.at("theta_hat"));
  if (doc.contains("params")) return params_from_json(doc.at("params"));
  return params_from_json(doc);
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ':')) parts.push_back(part);
  require(parts.size() == 3, "grid must be start:stop:step");
  const double start = parse_double(parts[0]);
  const double stop = parse_double(parts[1]);
  const double step = parse_double(parts[2]);
  require(step > 0.0 && stop >= start, "grid needs step > 0 and stop >= start");
  for (long k = 0;; ++k) {
    const double t = std::round((start + step * static_cast<double>(k)) * 1e10) / 1e10;
    if (t > stop + 1e-9) break;
    out.push_back(t);
  }
  return out;
}

std::vector<int> parse_flags(const std::string& text) {
  std::vector<int> flags;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    require(part == "0" || part == "1", "scenario flags are 0 or 1");
    flags.push_back(part == "1" ? 1 : 0);
  }
  require(flags.size() == 4, "--scenario takes four flags s1,s2,s3,s4");
  return flags;
}

std::vector<Method> parse_methods(const std::string& text) {
  std::vector<Method> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(method_from_name(part));
  require(!out.empty(), "--method lists at least one method");
  return out;
}

void write_scenario(const ScenarioConfig& config, const ScenarioResult& result, const std::string& dir,
                    const std::string& command) {
  std::filesystem::create_directories(dir);
  write_text_file(dir + "/errors.csv", emit_plotdata(result.table));

  std::string reps = "rep,method,failed,observations,epochs,alpha,mu_a,tau_a2,kappa,gamma1,gamma2,rho\n";
  for (const ReplicationResult& r : result.replications) {
    for (const MethodOutcome& o : r.outcomes) {
      const ModelParams& p = o.theta_hat;
      reps += std::to_string(r.rep_index) + "," + method_name(o.method) + "," + (o.failed ? "1" : "0") + "," +
              std::to_string(o.observations) + "," + std::to_string(o.epochs);
      for (double v : {p.alpha, p.mu_a, p.tau_a2, p.kappa, p.gamma1, p.gamma2, p.rho}) reps += "," + format_double(v);
      reps += "\n";
    }
  }
  write_text_file(dir + "/replications.csv", reps);

  Json failures = Json::object();
  for (const auto& [m, n] : result.table.failures) failures[m] = n;
  Json observations = Json::object();
  for (const auto& [m, n] : result.table.mean_observations) observations[m] = n;
  Json meta = metadata(command, scenario_to_json(config), config.master_seed);
  meta["failures"] = failures;
  meta["mean_observations"] = observations;
  meta["excluded_horizons"] = result.table.excluded_horizons;
  meta["replications"] = result.table.replications;
  write_text_file(dir + "/metadata.json", meta.dump(2) + "\n");

  std::printf("%-6s %-8s %-14s %-10s %-10s\n", "method", "horizon", "rel_err_pct", "R_pred", "R_true");
  for (const ErrorRow& row : result.table.rows) {
    std::printf("%-6s %-8s %-14s %-10.4f %-10.4f\n", row.method.c_str(), format_double(row.horizon).c_str(),
                format_double(std::round(row.relative_error_pct * 1e4) / 1e4).c_str(), row.predicted_reliability,
                row.true_reliability);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal Wiener degradation modeling and sampling design"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // simulate
  std::string sim_config, sim_out, sim_meta, sim_grid = "0.5:10:0.5";
  std::size_t sim_paths = 1;
  std::uint64_t sim_seed = 1;
  auto* sim = app.add_subcommand("simulate", "Draw degradation paths on a shared time grid");
  sim->add_option("--config", sim_config, "JSON with params and profiles")->required();
  sim->add_option("--grid", sim_grid, "start:stop:step");
  sim->add_option("--paths", sim_paths, "number of joint draws");
  sim->add_option("--seed", sim_seed);
  sim->add_option("--out", sim_out, "CSV output")->required();
  sim->add_option("--meta", sim_meta, "metadata JSON (default <out>.meta.json)");

  // fit
  std::string fit_data, fit_config_path, fit_out, fit_trace;
  std::optional<std::uint64_t> fit_seed;
  auto* fitc = app.add_subcommand("fit", "Maximize the profile likelihood");
  fitc->add_option("--data", fit_data, "observation CSV unit,time,level")->required();
  fitc->add_option("--config", fit_config_path, "JSON with profiles and fit settings");
  fitc->add_option("--out", fit_out, "fitted parameters JSON")->required();
  fitc->add_option("--trace", fit_trace, "per-start trace CSV");
  fitc->add_option("--seed", fit_seed);

  // design-units
  std::size_t du_units = 0, du_epochs = 0, du_budget = 0, du_iters = 20000;
  std::string du_algo = "ta", du_out, du_meta;
  std::uint64_t du_seed = 1;
  auto* du = app.add_subcommand("design-units", "Choose units per epoch by wrap-around discrepancy");
  du->add_option("--units", du_units)->required();
  du->add_option("--epochs", du_epochs)->required();
  du->add_option("--budget", du_budget)->required();
  du->add_option("--algo", du_algo)->check(CLI::IsMember({"ta", "swap"}));
  du->add_option("--iters", du_iters);
  du->add_option("--seed", du_seed);
  du->add_option("--out", du_out, "observation matrix CSV")->required();
  du->add_option("--meta", du_meta);

  // design-time
  std::string dt_params, dt_history, dt_config, dt_out, dt_meta;
  std::size_t dt_unit = 0;
  auto* dtc = app.add_subcommand("design-time", "Choose the next observation time of one unit");
  dtc->add_option("--params", dt_params, "fitted parameter JSON")->required();
  dtc->add_option("--history", dt_history, "history CSV unit,time,level")->required();
  dtc->add_option("--config", dt_config, "criterion JSON (optional profiles)");
  dtc->add_option("--unit", dt_unit, "unit id when the history holds several");
  dtc->add_option("--out", dt_out, "(t, Gamma) trace CSV")->required();
  dtc->add_option("--meta", dt_meta);

  // predict
  std::string pr_config, pr_params, pr_data, pr_out, pr_meta;
  auto* pr = app.add_subcommand("predict", "Monte Carlo reliability curves");
  pr->add_option("--config", pr_config, "JSON with params, profiles and reliability")->required();
  pr->add_option("--params", pr_params, "fitted parameter JSON overriding the config params");
  pr->add_option("--data", pr_data, "observation CSV; each unit continues from its last record");
  pr->add_option("--out", pr_out, "reliability CSV")->required();
  pr->add_option("--meta", pr_meta);

  // experiment
  std::string ex_scenario = "1,0,1,0", ex_method = "m0,m1", ex_config, ex_dir = "experiment";
  std::optional<std::size_t> ex_reps;
  std::optional<std::uint64_t> ex_seed;
  std::size_t ex_workers = 1;
  auto* ex = app.add_subcommand("experiment", "Replicated simulation study");
  ex->add_option("--scenario", ex_scenario, "flags s1,s2,s3,s4");
  ex->add_option("--method", ex_method, "comma list of m0, m1, m2");
  ex->add_option("--reps", ex_reps);
  ex->add_option("--seed", ex_seed);
  ex->add_option("--config", ex_config, "scenario JSON overrides");
  ex->add_option("--workers", ex_workers);
  ex->add_option("--out-dir", ex_dir);

  // real-case
  std::string rc_config, rc_dir = "real-case";
  std::optional<std::size_t> rc_reps;
  std::optional<std::uint64_t> rc_seed;
  std::size_t rc_workers = 1;
  auto* rcc = app.add_subcommand("real-case", "Twelve-unit case study with m0, m1 and m2");
  rcc->add_option("--config", rc_config, "scenario JSON overrides");
  rcc->add_option("--reps", rc_reps);
  rcc->add_option("--seed", rc_seed);
  rcc->add_option("--workers", rc_workers);
  rcc->add_option("--out-dir", rc_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const Json config = read_json_file(sim_config);
      require(config.contains("params"), "simulate config needs 'params'");
      const ModelParams params = params_from_json(config.at("params"));
      const std::size_t units = unit_count(config, 1);
      const Profiles profiles = load_profiles(config, units);
      const std::vector<double> grid = parse_grid(sim_grid);
      const PathTensor paths = simulate_paths(params, profiles, grid, sim_paths, sim_seed);
      Json inputs = {{"config", config}, {"grid", sim_grid}, {"paths", sim_paths}};
      write_outputs(sim_out, paths_to_csv(paths), sim_meta, metadata("simulate", inputs, sim_seed));
    } else if (*fitc) {
      const Json config = optional_json(fit_config_path);
      const std::vector<Observation> records = observations_from_csv(read_text_file(fit_data));
      std::size_t max_unit = 0;
      for (const Observation& o : records) max_unit = std::max(max_unit, o.unit + 1);
      const std::size_t units = unit_count(config, max_unit);
      const ObservationSet data(units, records);
      const Profiles profiles = load_profiles(config, units);
      FitConfig fc = config.contains("fit") ? fit_config_from_json(config.at("fit")) : FitConfig{};
      if (fit_seed) fc.seed = *fit_seed;
      const FitResult result = fit(data, profiles, fc);
      Json doc = fit_result_to_json(result);
      Json inputs = {{"config", config}, {"data_hash", config_hash(Json(read_text_file(fit_data)))}};
      doc["metadata"] = metadata("fit", inputs, fc.seed);
      write_text_file(fit_out, doc.dump(2) + "\n");
      if (!fit_trace.empty()) write_text_file(fit_trace, fit_trace_to_csv(result.trace));
    } else if (*du) {
      SearchConfig search;
      search.algorithm = du_algo == "ta" ? SearchAlgorithm::threshold_accepting : SearchAlgorithm::random_swap;
      search.iterations = du_iters;
      search.seed = du_seed;
      const DesignResult result = optimize_design(du_epochs, du_units, du_budget, search);
      Json inputs = {{"units", du_units}, {"epochs", du_epochs}, {"budget", du_budget},
                     {"algo", du_algo},   {"iters", du_iters}};
      Json meta = metadata("design-units", inputs, du_seed);
      meta["wd2"] = result.wd2;
      meta["accepted"] = result.accepted;
      write_outputs(du_out, matrix_to_csv(result.matrix), du_meta, meta);
      std::printf("%s\n", format_double(result.wd2).c_str());
    } else if (*dtc) {
      const ModelParams theta = load_params(read_json_file(dt_params));
      const Json config = optional_json(dt_config);
      const std::vector<Observation> records = observations_from_csv(read_text_file(dt_history));
      require(!records.empty(), "history is empty");
      std::size_t unit = dt_unit == 0 ? records.front().unit : dt_unit - 1;
      UnitHistory history;
      std::vector<Observation> own;
      for (const Observation& o : records) {
        if (o.unit == unit) own.push_back(o);
      }
      std::sort(own.begin(), own.end(), [](const Observation& a, const Observation& b) { return a.time < b.time; });
      for (const Observation& o : own) {
        history.times.push_back(o.time);
        history.levels.push_back(o.level);
      }
      history.profile = load_profiles(config, unit_count(config, unit + 1)).at(unit);
      const CriterionConfig crit =
          criterion_from_json(config.contains("criterion") ? config.at("criterion") : config);
      const NextTimeResult result = next_time(theta, history, crit);
      Json inputs = {{"config", config}, {"params", params_to_json(theta)}, {"unit", unit + 1},
                     {"history_hash", config_hash(Json(read_text_file(dt_history)))}};
      Json meta = metadata("design-time", inputs, crit.seed);
      meta["t_star"] = result.t_star;
      meta["information_degenerate"] = result.information_degenerate;
      write_outputs(dt_out, criterion_trace_to_csv(result.trace), dt_meta, meta);
      std::printf("%s\n", format_double(result.t_star).c_str());
    } else if (*pr) {
      const Json config = read_json_file(pr_config);
      const ModelParams params = pr_params.empty() ? load_params(config) : load_params(read_json_file(pr_params));
      require(config.contains("reliability"), "predict config needs 'reliability'");
      const ReliabilityConfig rc = reliability_from_json(config.at("reliability"));
      std::vector<Observation> records;
      if (!pr_data.empty()) records = observations_from_csv(read_text_file(pr_data));
      std::size_t max_unit = 0;
      for (const Observation& o : records) max_unit = std::max(max_unit, o.unit + 1);
      const std::size_t units = unit_count(config, std::max<std::size_t>(max_unit, 1));
      const Profiles profiles = load_profiles(config, units);
      const ObservationSet data(units, records);
      std::vector<std::size_t> ids;
      std::vector<std::vector<double>> curves;
      for (std::size_t i = 0; i < units; ++i) {
        std::optional<LastState> last;
        if (!data.times(i).empty()) last = LastState{data.times(i).back(), data.levels(i).back()};
        ReliabilityConfig unit_rc = rc;
        unit_rc.seed = derive_seed(rc.seed, {i});
        ids.push_back(i);
        curves.push_back(reliability(params, profiles[i], last, unit_rc));
      }
      Json inputs = {{"config", config}, {"params", params_to_json(params)}};
      if (!pr_data.empty()) inputs["data_hash"] = config_hash(Json(read_text_file(pr_data)));
      write_outputs(pr_out, reliability_to_csv(ids, rc.horizons, curves), pr_meta, metadata("predict", inputs, rc.seed));
    } else if (*ex) {
      const std::vector<int> flags = parse_flags(ex_scenario);
      ScenarioConfig config = default_scenario(flags[0], flags[1], flags[2], flags[3]);
      config.methods = parse_methods(ex_method);
      if (!ex_config.empty()) config = scenario_from_json(read_json_file(ex_config), config);
      if (ex_reps) config.replications = *ex_reps;
      if (ex_seed) config.master_seed = *ex_seed;
      config.workers = ex_workers;
      config.finalize();
      const ScenarioResult result = run_scenario(config);
      write_scenario(config, result, ex_dir, "experiment");
    } else if (*rcc) {
      ScenarioConfig config = real_case_config();
      if (!rc_config.empty()) config = scenario_from_json(read_json_file(rc_config), config);
      if (rc_reps) config.replications = *rc_reps;
      if (rc_seed) config.master_seed = *rc_seed;
      config.workers = rc_workers;
      config.finalize();
      const ScenarioResult result = real_case(config);
      write_scenario(config, result, rc_dir, "real-case");
    }
  } catch (const Error& e) {
    const Json err = {{"error", {{"kind", e.kind()}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    const Json err = {{"error", {{"kind", "internal"}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 3;
  }
  return 0;
}
