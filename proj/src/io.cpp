#include "stwd/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "stwd/error.hpp"

namespace stwd {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  if (begin < end && text[begin] == '+') ++begin;
  double value = 0.0;
  const auto res = std::from_chars(text.data() + begin, text.data() + end, value);
  if (res.ec != std::errc() || res.ptr != text.data() + end) {
    throw InvalidArgument("not a number: '" + text + "'");
  }
  return value;
}

std::string config_hash(const Json& doc) {
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << text;
  if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw InvalidArgument("malformed JSON in '" + path + "': " + e.what());
  }
}

namespace {

template <typename T>
void read_opt(const Json& doc, const char* key, T& target) {
  if (!doc.contains(key)) return;
  try {
    target = doc.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string("bad value for '") + key + "': " + e.what());
  }
}

void require_object(const Json& doc, const std::string& what) {
  require(doc.is_object(), what + " must be a JSON object");
}

}  // namespace

ModelParams params_from_json(const Json& doc) {
  require_object(doc, "params");
  ModelParams p;
  read_opt(doc, "alpha", p.alpha);
  read_opt(doc, "mu_a", p.mu_a);
  if (doc.contains("tau_a2")) {
    read_opt(doc, "tau_a2", p.tau_a2);
  } else if (doc.contains("tau_a")) {
    double tau = 0.0;
    read_opt(doc, "tau_a", tau);
    p.tau_a2 = tau * tau;
  }
  read_opt(doc, "kappa", p.kappa);
  read_opt(doc, "gamma1", p.gamma1);
  read_opt(doc, "gamma2", p.gamma2);
  read_opt(doc, "rho", p.rho);
  if (p.tau_a2 == 0.0) read_opt(doc, "sigma", p.sigma_fixed);
  p.validate();
  return p;
}

Json params_to_json(const ModelParams& p) {
  Json doc = {{"alpha", p.alpha}, {"mu_a", p.mu_a},     {"tau_a2", p.tau_a2}, {"kappa", p.kappa},
              {"gamma1", p.gamma1}, {"gamma2", p.gamma2}, {"rho", p.rho},       {"sigma", p.sigma()}};
  return doc;
}

namespace {

CovariateProfile profile_entry(const Json& entry) {
  if (entry.contains("segments")) {
    std::vector<Segment> segments;
    for (const Json& s : entry.at("segments")) {
      Segment seg{0.0, 0.0, 1.0};
      read_opt(s, "start", seg.start);
      read_opt(s, "S1", seg.s1);
      read_opt(s, "S2", seg.s2);
      segments.push_back(seg);
    }
    return CovariateProfile(std::move(segments));
  }
  if (entry.contains("orbit")) {
    const Json& o = entry.at("orbit");
    double years = 12.0, cold = 20.0, hot = 45.0, low = 1.0, high = 1.5;
    read_opt(o, "years", years);
    read_opt(o, "S1_cold", cold);
    read_opt(o, "S1_hot", hot);
    read_opt(o, "S2_low", low);
    read_opt(o, "S2_high", high);
    return CovariateProfile::orbit(years, cold, hot, low, high);
  }
  if (entry.contains("constant")) {
    const Json& c = entry.at("constant");
    double s1 = 25.0, s2 = 1.0;
    read_opt(c, "S1", s1);
    read_opt(c, "S2", s2);
    return CovariateProfile::constant(s1, s2);
  }
  throw InvalidArgument("profile entry needs 'segments', 'orbit' or 'constant'");
}

}  // namespace

Profiles profiles_from_json(const Json& doc, std::size_t units, const CovariateProfile& fallback) {
  require(doc.is_array(), "profiles must be a JSON array");
  Profiles out(units, fallback);
  std::vector<bool> seen(units, false);
  for (const Json& entry : doc) {
    require_object(entry, "profile entry");
    if (entry.contains("unit")) {
      const auto unit = entry.at("unit").get<long long>();
      require(unit >= 1 && static_cast<std::size_t>(unit) <= units,
              "profile unit " + std::to_string(unit) + " outside 1.." + std::to_string(units));
      require(!seen[unit - 1], "duplicate profile for unit " + std::to_string(unit));
      seen[unit - 1] = true;
      out[unit - 1] = profile_entry(entry);
    } else {
      // No unit: applies to every unit not given explicitly.
      const CovariateProfile shared = profile_entry(entry);
      for (std::size_t i = 0; i < units; ++i) {
        if (!seen[i]) out[i] = shared;
      }
    }
  }
  return out;
}

Json profiles_to_json(const Profiles& profiles) {
  Json doc = Json::array();
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    Json segs = Json::array();
    for (const Segment& s : profiles[i].segments()) segs.push_back({{"start", s.start}, {"S1", s.s1}, {"S2", s.s2}});
    doc.push_back({{"unit", i + 1}, {"segments", segs}});
  }
  return doc;
}

ReliabilityConfig reliability_from_json(const Json& doc) {
  require_object(doc, "reliability");
  ReliabilityConfig c;
  read_opt(doc, "xi", c.threshold_xi);
  read_opt(doc, "horizons", c.horizons);
  read_opt(doc, "n_paths", c.n_paths);
  read_opt(doc, "dt", c.dt);
  read_opt(doc, "seed", c.seed);
  c.validate();
  return c;
}

FitConfig fit_config_from_json(const Json& doc, FitConfig c) {
  require_object(doc, "fit");
  read_opt(doc, "n_starts", c.n_starts);
  read_opt(doc, "tolerance", c.tolerance);
  read_opt(doc, "max_evals", c.max_evals);
  read_opt(doc, "seed", c.seed);
  if (doc.contains("bounds")) {
    for (const auto& [key, value] : doc.at("bounds").items()) {
      const auto which = structural_from_name(key);
      require(which.has_value(), "unknown structural parameter '" + key + "'");
      require(value.is_array() && value.size() == 2, "bounds for '" + key + "' must be [low, high]");
      c.bounds[static_cast<std::size_t>(*which)] = {value[0].get<double>(), value[1].get<double>()};
    }
  }
  if (doc.contains("fixed")) {
    for (const auto& [key, value] : doc.at("fixed").items()) {
      const auto which = structural_from_name(key);
      require(which.has_value(), "unknown structural parameter '" + key + "'");
      c.pin(*which, value.get<double>());
    }
  }
  if (doc.contains("initial_guess")) {
    const ModelParams guess = params_from_json(doc.at("initial_guess"));
    c.initial_guess = StructuralParams::from(guess);
  }
  c.validate();
  return c;
}

Json fit_config_to_json(const FitConfig& c) {
  Json bounds = Json::object();
  Json fixed = Json::object();
  for (std::size_t k = 0; k < kStructuralCount; ++k) {
    const std::string key(name(static_cast<Structural>(k)));
    bounds[key] = {c.bounds[k].low, c.bounds[k].high};
    if (c.fixed[k]) fixed[key] = *c.fixed[k];
  }
  Json doc = {{"n_starts", c.n_starts}, {"tolerance", c.tolerance}, {"max_evals", c.max_evals},
              {"seed", c.seed},         {"bounds", bounds},          {"fixed", fixed}};
  return doc;
}

CriterionConfig criterion_from_json(const Json& doc, CriterionConfig c) {
  require_object(doc, "criterion");
  read_opt(doc, "omega1", c.omega1);
  read_opt(doc, "omega2", c.omega2);
  if (doc.contains("omega1") && !doc.contains("omega2")) c.omega2 = 1.0 - c.omega1;
  if (doc.contains("omega2") && !doc.contains("omega1")) c.omega1 = 1.0 - c.omega2;
  if (doc.contains("window")) {
    const Json& w = doc.at("window");
    if (w.is_null()) {
      c.window.reset();
    } else {
      require(w.is_array() && w.size() == 2, "window must be [low, high]");
      c.window = CandidateWindow{w[0].get<double>(), w[1].get<double>()};
    }
  }
  read_opt(doc, "t_max", c.t_max);
  read_opt(doc, "min_spacing", c.min_spacing);
  read_opt(doc, "resolution", c.resolution);
  read_opt(doc, "quadrature_nodes", c.quadrature_nodes);
  read_opt(doc, "audit_quadrature", c.audit_quadrature);
  read_opt(doc, "audit_tolerance", c.audit_tolerance);
  read_opt(doc, "monte_carlo", c.monte_carlo);
  read_opt(doc, "mc_draws", c.mc_draws);
  read_opt(doc, "seed", c.seed);
  c.validate();
  return c;
}

Json criterion_to_json(const CriterionConfig& c) {
  Json doc = {{"omega1", c.omega1},
              {"omega2", c.omega2},
              {"t_max", c.t_max},
              {"min_spacing", c.min_spacing},
              {"resolution", c.resolution},
              {"quadrature_nodes", c.quadrature_nodes},
              {"audit_quadrature", c.audit_quadrature},
              {"audit_tolerance", c.audit_tolerance},
              {"monte_carlo", c.monte_carlo},
              {"mc_draws", c.mc_draws},
              {"seed", c.seed}};
  doc["window"] = c.window ? Json{c.window->low, c.window->high} : Json(nullptr);
  return doc;
}

namespace {

std::vector<CandidateWindow> windows_from_json(const Json& doc) {
  require(doc.is_array(), "windows must be an array of [low, high]");
  std::vector<CandidateWindow> out;
  for (const Json& w : doc) {
    require(w.is_array() && w.size() == 2, "window must be [low, high]");
    out.push_back({w[0].get<double>(), w[1].get<double>()});
  }
  return out;
}

}  // namespace

ScenarioConfig scenario_from_json(const Json& doc, ScenarioConfig c) {
  require_object(doc, "scenario");
  if (doc.contains("flags")) {
    const auto flags = doc.at("flags").get<std::vector<int>>();
    require(flags.size() == 4, "flags must list S1..S4");
    c.s1 = flags[0];
    c.s2 = flags[1];
    c.s3 = flags[2];
    c.s4 = flags[3];
  }
  read_opt(doc, "s1", c.s1);
  read_opt(doc, "s2", c.s2);
  read_opt(doc, "s3", c.s3);
  read_opt(doc, "s4", c.s4);
  if (doc.contains("methods")) {
    c.methods.clear();
    for (const Json& m : doc.at("methods")) c.methods.push_back(method_from_name(m.get<std::string>()));
  }
  read_opt(doc, "units", c.units);
  read_opt(doc, "c_initial", c.c_initial);
  read_opt(doc, "c_later", c.c_later);
  read_opt(doc, "c_m2", c.c_m2);
  read_opt(doc, "replications", c.replications);
  read_opt(doc, "seed", c.master_seed);
  if (doc.contains("params")) {
    // Partial overrides on top of the current truth.
    Json merged = params_to_json(c.true_params);
    merged.erase("sigma");
    for (const auto& [key, value] : doc.at("params").items()) merged[key] = value;
    if (doc.at("params").contains("tau_a")) merged.erase("tau_a2");
    c.true_params = params_from_json(merged);
  }
  if (doc.contains("profiles")) {
    c.profiles = profiles_from_json(doc.at("profiles"), c.units, CovariateProfile::orbit(12.0));
  }
  if (doc.contains("later_windows")) c.later_windows = windows_from_json(doc.at("later_windows"));
  read_opt(doc, "initial_epochs", c.initial_epochs);
  if (doc.contains("xi")) c.threshold_xi = doc.at("xi").get<double>();
  read_opt(doc, "xi_reference_time", c.xi_reference_time);
  read_opt(doc, "horizons", c.horizons);
  read_opt(doc, "n_paths", c.n_paths);
  read_opt(doc, "truth_multiplier", c.truth_multiplier);
  read_opt(doc, "dt", c.dt);
  read_opt(doc, "lattice_step", c.lattice_step);
  read_opt(doc, "design_life", c.design_life);
  read_opt(doc, "min_true_reliability", c.min_true_reliability);
  if (doc.contains("fit")) c.fit = fit_config_from_json(doc.at("fit"), c.fit);
  read_opt(doc, "refit_starts", c.refit_starts);
  if (doc.contains("criterion")) c.criterion = criterion_from_json(doc.at("criterion"), c.criterion);
  read_opt(doc, "design_iterations", c.design_iterations);
  if (doc.contains("design_algorithm")) {
    const auto algo = doc.at("design_algorithm").get<std::string>();
    require(algo == "ta" || algo == "swap", "design_algorithm must be 'ta' or 'swap'");
    c.design_algorithm = algo == "ta" ? SearchAlgorithm::threshold_accepting : SearchAlgorithm::random_swap;
  }
  read_opt(doc, "max_failure_fraction", c.max_failure_fraction);
  read_opt(doc, "workers", c.workers);
  read_opt(doc, "truth_cache_dir", c.truth_cache_dir);
  c.finalize();
  c.validate();
  return c;
}

Json scenario_to_json(const ScenarioConfig& c) {
  Json methods = Json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  Json windows = Json::array();
  for (const CandidateWindow& w : c.later_windows) windows.push_back({w.low, w.high});
  Json doc = {{"flags", {c.s1, c.s2, c.s3, c.s4}},
              {"methods", methods},
              {"units", c.units},
              {"c_initial", c.c_initial},
              {"c_later", c.c_later},
              {"c_m2", c.c_m2},
              {"replications", c.replications},
              {"seed", c.master_seed},
              {"params", params_to_json(c.true_params)},
              {"profiles", profiles_to_json(c.profiles)},
              {"later_windows", windows},
              {"initial_epochs", c.initial_epochs},
              {"xi", c.threshold()},
              {"horizons", c.horizons},
              {"n_paths", c.n_paths},
              {"truth_multiplier", c.truth_multiplier},
              {"dt", c.dt},
              {"lattice_step", c.lattice_step},
              {"design_life", c.design_life},
              {"min_true_reliability", c.min_true_reliability},
              {"fit", fit_config_to_json(c.fit)},
              {"refit_starts", c.refit_starts},
              {"criterion", criterion_to_json(c.criterion)},
              {"design_iterations", c.design_iterations},
              {"design_algorithm", c.design_algorithm == SearchAlgorithm::threshold_accepting ? "ta" : "swap"},
              {"max_failure_fraction", c.max_failure_fraction}};
  return doc;
}

Json fit_result_to_json(const FitResult& r) {
  Json doc = {{"theta_hat", params_to_json(r.theta_hat)},
              {"profile_loglik", r.profile_loglik_at_max},
              {"converged", r.converged},
              {"degenerate_tau", r.degenerate_tau},
              {"starts", r.trace.size()}};
  return doc;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

namespace {

std::size_t column_index(const std::vector<std::string>& header, const std::string& key) {
  for (std::size_t k = 0; k < header.size(); ++k) {
    std::string cell = header[k];
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.back()))) cell.pop_back();
    while (!cell.empty() && std::isspace(static_cast<unsigned char>(cell.front()))) cell.erase(cell.begin());
    if (cell == key) return k;
  }
  throw InvalidArgument("CSV header lacks column '" + key + "'");
}

}  // namespace

std::vector<Observation> observations_from_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  require(!rows.empty(), "observation CSV is empty");
  const std::size_t cu = column_index(rows[0], "unit");
  const std::size_t ct = column_index(rows[0], "time");
  const std::size_t cl = column_index(rows[0], "level");
  std::vector<Observation> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    require(row.size() == rows[0].size(), "CSV row " + std::to_string(r + 1) + " has the wrong number of cells");
    const double unit = parse_double(row[cu]);
    require(unit >= 1.0 && unit == std::floor(unit), "unit ids are positive integers (row " + std::to_string(r + 1) + ")");
    out.push_back({static_cast<std::size_t>(unit) - 1, parse_double(row[ct]), parse_double(row[cl])});
  }
  return out;
}

std::string observations_to_csv(std::span<const Observation> records) {
  std::string out = "unit,time,level\n";
  for (const Observation& o : records) {
    out += std::to_string(o.unit + 1) + "," + format_double(o.time) + "," + format_double(o.level) + "\n";
  }
  return out;
}

std::string paths_to_csv(const PathTensor& paths) {
  const bool single = paths.n_paths == 1;
  std::string out = single ? "unit,time,level\n" : "path,unit,time,level\n";
  for (std::size_t p = 0; p < paths.n_paths; ++p) {
    for (std::size_t i = 0; i < paths.n_units; ++i) {
      for (std::size_t k = 0; k < paths.grid.size(); ++k) {
        if (!single) out += std::to_string(p + 1) + ",";
        out += std::to_string(i + 1) + "," + format_double(paths.grid[k]) + "," + format_double(paths(p, i, k)) + "\n";
      }
    }
  }
  return out;
}

std::string reliability_to_csv(const std::vector<std::size_t>& units, const std::vector<double>& horizons,
                               const std::vector<std::vector<double>>& values) {
  require(units.size() == values.size(), "one reliability curve per unit");
  std::string out = "unit,horizon,reliability\n";
  for (std::size_t i = 0; i < units.size(); ++i) {
    require(values[i].size() == horizons.size(), "reliability curve length differs from horizons");
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      out += std::to_string(units[i] + 1) + "," + format_double(horizons[k]) + "," + format_double(values[i][k]) + "\n";
    }
  }
  return out;
}

std::string matrix_to_csv(const ObservationMatrix& w) {
  std::string out;
  for (std::size_t j = 0; j < w.units(); ++j) {
    for (std::size_t k = 0; k < w.epochs(); ++k) {
      if (k > 0) out += ",";
      out += w.at(j, k) ? "1" : "0";
    }
    out += "\n";
  }
  return out;
}

std::string fit_trace_to_csv(const std::vector<StartTrace>& trace) {
  std::string out = "start";
  for (const char* stage : {"start_", "end_"}) {
    for (std::size_t k = 0; k < kStructuralCount; ++k) out += std::string(",") + stage + std::string(name(static_cast<Structural>(k)));
  }
  out += ",profile_loglik,converged,evaluations\n";
  for (std::size_t s = 0; s < trace.size(); ++s) {
    const StartTrace& t = trace[s];
    out += std::to_string(s + 1);
    for (const StructuralParams* p : {&t.start, &t.end}) {
      for (std::size_t k = 0; k < kStructuralCount; ++k) out += "," + format_double(get(*p, static_cast<Structural>(k)));
    }
    out += "," + format_double(t.value) + "," + (t.converged ? "1" : "0") + "," + std::to_string(t.evaluations) + "\n";
  }
  return out;
}

std::string criterion_trace_to_csv(const std::vector<std::pair<double, double>>& trace) {
  std::string out = "time,gamma\n";
  for (const auto& [t, g] : trace) out += format_double(t) + "," + format_double(g) + "\n";
  return out;
}

}  // namespace stwd
