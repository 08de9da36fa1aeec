#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stwd/estimation.hpp"
#include "stwd/harness.hpp"
#include "stwd/model.hpp"
#include "stwd/spatial_design.hpp"
#include "stwd/temporal_design.hpp"

namespace stwd {

using Json = nlohmann::json;

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
double parse_double(const std::string& text);

// FNV-1a over the compact dump of `doc` (object keys are sorted), as 16 hex digits.
std::string config_hash(const Json& doc);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
Json read_json_file(const std::string& path);

// Model parameters. Accepts tau_a2 or tau_a, and sigma for the fixed-effects case.
ModelParams params_from_json(const Json& doc);
Json params_to_json(const ModelParams& params);

// `[{unit, segments: [{start, S1, S2}]}]` or `[{unit, orbit: {years, ...}}]`.
// Units are 1-based in files. Missing units default to `fallback`.
Profiles profiles_from_json(const Json& doc, std::size_t units, const CovariateProfile& fallback);
Json profiles_to_json(const Profiles& profiles);

ReliabilityConfig reliability_from_json(const Json& doc);
FitConfig fit_config_from_json(const Json& doc, FitConfig base = {});
Json fit_config_to_json(const FitConfig& config);
CriterionConfig criterion_from_json(const Json& doc, CriterionConfig base = {});
Json criterion_to_json(const CriterionConfig& config);

// Overlays `doc` on `base`, then finalizes.
ScenarioConfig scenario_from_json(const Json& doc, ScenarioConfig base);
Json scenario_to_json(const ScenarioConfig& config);

Json fit_result_to_json(const FitResult& result);

// CSV. Unit ids are 1-based on disk, 0-based in memory.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::vector<Observation> observations_from_csv(const std::string& text);
std::string observations_to_csv(std::span<const Observation> records);
std::string paths_to_csv(const PathTensor& paths);
std::string reliability_to_csv(const std::vector<std::size_t>& units, const std::vector<double>& horizons,
                               const std::vector<std::vector<double>>& values);
std::string matrix_to_csv(const ObservationMatrix& matrix);
std::string fit_trace_to_csv(const std::vector<StartTrace>& trace);
std::string criterion_trace_to_csv(const std::vector<std::pair<double, double>>& trace);

}  // namespace stwd
