#pragma once

#include "bgee/estimator.hpp"
#include "bgee/simulation.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bgee {

using Json = nlohmann::ordered_json;

inline constexpr int result_schema_version = 1;

/// Scenario as a JSON object. The same layout is accepted by
/// `scenario_from_json`, so the `config.scenario` block of any simulate
/// result can be fed back as a scenario file.
Json scenario_to_json(const SimulationScenario& scenario);

/// Builds a scenario from a JSON object. Keys that are absent keep the
/// values of `base` (preset `"preset": k` when given, otherwise scenario 1).
/// Unknown keys and wrongly typed values throw std::invalid_argument.
SimulationScenario scenario_from_json(const Json& doc);

Json covariate_law_to_json(const CovariateLaw& law);

struct SimulationConfig {
    SimulationScenario scenario;
    std::vector<Method> methods;
    RunOptions options;
};

/// Result document of `simulate`. The thread count is deliberately left
/// out so files agree byte for byte across schedules.
Json simulation_result_json(const SimulationConfig& config, const ScenarioReport& report);

/// Relative bias / ESE / CR per coefficient and method, followed by the
/// relative efficiencies for theta.
std::string simulation_tables(const ScenarioReport& report);

/// Columns: method, coefficient, rel_bias_pct, ese, cr_pct, rel_eff.
void write_simulation_csv(std::ostream& out, const ScenarioReport& report);

/// One method's fit on a data set, or the reason it failed.
struct MethodFit {
    std::string method;  // worse | average | both
    std::optional<GeeFit> fit;
    std::vector<WaldInterval> intervals;
    std::string error;

    bool ok() const { return fit.has_value() && fit->converged && error.empty(); }
};

struct FitReport {
    Json config;
    std::vector<std::string> coefficient_names;
    int n_participants = 0;
    int n_rows = 0;
    std::vector<MethodFit> fits;
};

Json correlation_to_json(const CorrelationSpec& corr);
Json fit_result_json(const FitReport& report);

/// Estimate (SE) and confidence interval per coefficient, one column block
/// per method.
std::string fit_table(const FitReport& report, double level);

/// Columns: method, coefficient, estimate, se, ci_low, ci_high.
void write_fit_csv(std::ostream& out, const FitReport& report);

/// Minimal result document for runs that stop before producing results.
Json error_result_json(const std::string& command, const std::string& message);

}  // namespace bgee
