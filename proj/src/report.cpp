#include "bgee/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace bgee {

namespace {

const std::vector<std::string> table_coefficients{"beta2", "beta3", "theta"};

Json optional_number(const std::optional<double>& v) {
    if (v && std::isfinite(*v)) return *v;
    return nullptr;
}

Json number(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string pad_right(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string pad_left(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

// CSV cells are plain names and numbers; quote defensively anyway.
std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_number(double v) {
    if (!std::isfinite(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <int N>
Json vector_json(const Eigen::Matrix<double, N, 1>& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Json matrix_json(const MatrixXd& m) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(number(m(i, j)));
        out.push_back(std::move(row));
    }
    return out;
}

void fail(const std::string& what) { throw std::invalid_argument("scenario file: " + what); }

double get_number(const Json& v, const std::string& key) {
    if (!v.is_number()) fail("'" + key + "' must be a number");
    return v.get<double>();
}

template <typename T>
T get_integer(const Json& v, const std::string& key) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) fail("'" + key + "' must be an integer");
    return v.get<T>();
}

Eigen::Vector4d get_vector4(const Json& v, const std::string& key) {
    if (!v.is_array() || v.size() != 4) fail("'" + key + "' must be an array of 4 numbers");
    Eigen::Vector4d out;
    for (int i = 0; i < 4; ++i) out(i) = get_number(v[static_cast<std::size_t>(i)], key);
    return out;
}

Eigen::Matrix4d get_matrix4(const Json& v, const std::string& key) {
    if (!v.is_array() || v.size() != 4) fail("'" + key + "' must be a 4x4 array");
    Eigen::Matrix4d out;
    for (int i = 0; i < 4; ++i) {
        const Json& row = v[static_cast<std::size_t>(i)];
        if (!row.is_array() || row.size() != 4) fail("'" + key + "' must be a 4x4 array");
        for (int j = 0; j < 4; ++j) out(i, j) = get_number(row[static_cast<std::size_t>(j)], key);
    }
    return out;
}

void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) fail("unknown key '" + key + "' in " + where);
    }
}

CovariateLaw covariates_from_json(const Json& v) {
    if (v.is_string()) {
        const auto name = v.get<std::string>();
        if (name == "calibrated") return CovariateLaw::calibrated();
        if (name == "standard") return CovariateLaw::standard();
        fail("covariate law must be 'calibrated', 'standard' or an object");
    }
    if (!v.is_object()) fail("'covariates' must be a string or an object");
    check_keys(v, {"x_mean", "x_sd", "z_mean", "z_sd", "z_correlation"}, "covariates");
    CovariateLaw law;
    if (v.contains("x_mean")) law.x_mean = get_number(v["x_mean"], "x_mean");
    if (v.contains("x_sd")) law.x_sd = get_number(v["x_sd"], "x_sd");
    if (v.contains("z_mean")) law.z_mean = get_number(v["z_mean"], "z_mean");
    if (v.contains("z_sd")) law.z_sd = get_number(v["z_sd"], "z_sd");
    if (v.contains("z_correlation")) law.z_correlation = get_number(v["z_correlation"], "z_correlation");
    return law;
}

const MethodSummary* find_summary(const ScenarioReport& report, Method m) {
    for (const auto& s : report.summaries)
        if (s.method == m) return &s;
    return nullptr;
}

const CoefficientSummary* find_coefficient(const MethodSummary& s, const std::string& name) {
    for (const auto& c : s.coefficients)
        if (c.name == name) return &c;
    return nullptr;
}

}  // namespace

Json covariate_law_to_json(const CovariateLaw& law) {
    return Json{{"x_mean", law.x_mean},
                {"x_sd", law.x_sd},
                {"z_mean", law.z_mean},
                {"z_sd", law.z_sd},
                {"z_correlation", law.z_correlation}};
}

Json scenario_to_json(const SimulationScenario& s) {
    Json sigma = Json::array();
    for (int i = 0; i < 4; ++i) {
        Json row = Json::array();
        for (int j = 0; j < 4; ++j) row.push_back(s.sigma_eps(i, j));
        sigma.push_back(std::move(row));
    }
    return Json{{"name", s.name},
                {"beta_true", vector_json<4>(s.beta_true)},
                {"sigma_eps", std::move(sigma)},
                {"theta_mean", s.theta_mean},
                {"theta_scale", vector_json<4>(s.theta_scale)},
                {"alpha",
                 {{"base", s.alpha.base}, {"freq1", s.alpha.freq1}, {"freq2", s.alpha.freq2}, {"ear", s.alpha.ear}}},
                {"n_participants", s.n_participants},
                {"n_replicates", s.n_replicates},
                {"base_seed", s.base_seed},
                {"covariates", covariate_law_to_json(s.covariates)}};
}

SimulationScenario scenario_from_json(const Json& doc) {
    if (!doc.is_object()) fail("top level must be an object");
    check_keys(doc,
               {"preset", "name", "beta_true", "sigma_eps", "theta_mean", "theta_scale", "alpha",
                "n_participants", "n_replicates", "base_seed", "covariates"},
               "scenario");
    SimulationScenario s;
    if (doc.contains("preset")) s = SimulationScenario::preset(get_integer<int>(doc["preset"], "preset"));
    if (doc.contains("name")) {
        if (!doc["name"].is_string()) fail("'name' must be a string");
        s.name = doc["name"].get<std::string>();
    }
    if (doc.contains("beta_true")) s.beta_true = get_vector4(doc["beta_true"], "beta_true");
    if (doc.contains("sigma_eps")) s.sigma_eps = get_matrix4(doc["sigma_eps"], "sigma_eps");
    if (doc.contains("theta_mean")) s.theta_mean = get_number(doc["theta_mean"], "theta_mean");
    if (doc.contains("theta_scale")) s.theta_scale = get_vector4(doc["theta_scale"], "theta_scale");
    if (doc.contains("alpha")) {
        const Json& a = doc["alpha"];
        if (!a.is_object()) fail("'alpha' must be an object");
        check_keys(a, {"base", "freq1", "freq2", "ear"}, "alpha");
        for (const char* key : {"base", "freq1", "freq2", "ear"}) {
            if (!a.contains(key)) fail(std::string("'alpha' needs '") + key + "'");
        }
        s.alpha = {get_number(a["base"], "base"), get_number(a["freq1"], "freq1"),
                   get_number(a["freq2"], "freq2"), get_number(a["ear"], "ear")};
    }
    if (doc.contains("n_participants")) {
        s.n_participants = get_integer<int>(doc["n_participants"], "n_participants");
    }
    if (doc.contains("n_replicates")) s.n_replicates = get_integer<int>(doc["n_replicates"], "n_replicates");
    if (doc.contains("base_seed")) s.base_seed = get_integer<std::uint64_t>(doc["base_seed"], "base_seed");
    if (doc.contains("covariates")) s.covariates = covariates_from_json(doc["covariates"]);

    if (s.n_participants < 2) fail("'n_participants' must be at least 2");
    if (s.n_replicates < 1) fail("'n_replicates' must be at least 1");
    try {
        ClusterSampler check(s);
    } catch (const std::exception& e) {
        fail(e.what());
    }
    return s;
}

Json simulation_result_json(const SimulationConfig& config, const ScenarioReport& report) {
    Json methods = Json::array();
    for (Method m : config.methods) methods.push_back(to_string(m));

    const auto& gee15 = config.options.gee15;
    Json cfg{{"command", "simulate"},
             {"scenario", scenario_to_json(config.scenario)},
             {"methods", methods},
             {"level", config.options.level},
             {"ci_se", config.options.naive_se ? "naive" : "sandwich"},
             {"gee15_rounds", gee15.fixed_rounds ? Json(*gee15.fixed_rounds) : Json(nullptr)},
             {"gee15_max_rounds", gee15.max_rounds}};

    Json results = Json::array();
    bool any_all_failed = false;
    for (const auto& ms : report.summaries) {
        Json coefs = Json::array();
        for (const auto& c : ms.coefficients) {
            coefs.push_back(Json{{"name", c.name},
                                 {"truth", c.truth},
                                 {"rel_bias_pct", optional_number(c.rel_bias_pct)},
                                 {"mean_estimate", number(c.mean_estimate)},
                                 {"ese", number(c.ese)},
                                 {"mean_se", number(c.mean_se)},
                                 {"cr_pct", number(c.coverage_pct)},
                                 {"rel_eff", optional_number(c.rel_eff)}});
        }
        if (ms.n_success == 0) any_all_failed = true;
        results.push_back(Json{{"method", to_string(ms.method)},
                               {"label", display_name(ms.method)},
                               {"n_success", ms.n_success},
                               {"n_failed", ms.n_failed},
                               {"failure_examples", ms.failure_examples},
                               {"coefficients", std::move(coefs)}});
    }

    return Json{{"schema_version", result_schema_version},
                {"status", any_all_failed ? "error" : "ok"},
                {"config", std::move(cfg)},
                {"reference_method", report.reference ? Json(to_string(*report.reference)) : Json(nullptr)},
                {"results", std::move(results)},
                {"warnings", report.warnings}};
}

std::string simulation_tables(const ScenarioReport& report) {
    const auto& sc = report.scenario;
    std::ostringstream os;
    os << "Scenario " << sc.name << ": n = " << sc.n_participants << ", replicates = " << sc.n_replicates
       << ", seed = " << sc.base_seed << "\n\n";

    std::size_t label_width = 6;
    for (const auto& ms : report.summaries) label_width = std::max(label_width, display_name(ms.method).size());
    label_width += 2;

    os << pad_right("Coef", 8) << pad_right("Method", label_width) << pad_left("Rel. bias (%)", 14)
       << pad_left("ESE", 10) << pad_left("CR (%)", 9) << "\n";
    for (const auto& name : table_coefficients) {
        bool first = true;
        for (const auto& ms : report.summaries) {
            const CoefficientSummary* c = find_coefficient(ms, name);
            if (c == nullptr) continue;
            os << pad_right(first ? name : "", 8) << pad_right(display_name(ms.method), label_width);
            if (ms.n_success == 0) {
                os << pad_left("failed", 14) << pad_left("-", 10) << pad_left("-", 9) << "\n";
            } else {
                os << pad_left(c->rel_bias_pct ? fixed(*c->rel_bias_pct, 3) : "NA", 14)
                   << pad_left(fixed(c->ese, 3), 10) << pad_left(fixed(c->coverage_pct, 1), 9) << "\n";
            }
            first = false;
        }
    }

    if (report.reference) {
        os << "\nRelative efficiency for theta (ESE of " << display_name(*report.reference)
           << " / ESE of method)\n";
        os << pad_right("Method", label_width) << pad_left("RE", 8) << "\n";
        const MethodSummary* ref = find_summary(report, *report.reference);
        for (const auto& ms : report.summaries) {
            if (ms.method == *report.reference) continue;
            const CoefficientSummary* c = find_coefficient(ms, "theta");
            std::string re = "NA";
            if (ref != nullptr && ref->n_success > 0 && c != nullptr && c->rel_eff) re = fixed(*c->rel_eff, 3);
            os << pad_right(display_name(ms.method), label_width) << pad_left(re, 8) << "\n";
        }
    }

    bool header = false;
    for (const auto& ms : report.summaries) {
        if (ms.n_failed == 0) continue;
        if (!header) os << "\nFailed replicates (excluded from the summaries)\n";
        header = true;
        os << "  " << pad_right(display_name(ms.method), label_width) << ms.n_failed << " of "
           << ms.n_failed + ms.n_success;
        if (!ms.failure_examples.empty()) os << "  e.g. " << ms.failure_examples.front();
        os << "\n";
    }
    for (const auto& w : report.warnings) os << "warning: " << w << "\n";
    return os.str();
}

void write_simulation_csv(std::ostream& out, const ScenarioReport& report) {
    out << "method,coefficient,rel_bias_pct,ese,cr_pct,rel_eff\n";
    for (const auto& ms : report.summaries) {
        for (const auto& c : ms.coefficients) {
            const bool ok = ms.n_success > 0;
            out << csv_cell(to_string(ms.method)) << ',' << csv_cell(c.name) << ','
                << (ok && c.rel_bias_pct ? csv_number(*c.rel_bias_pct) : "") << ','
                << (ok ? csv_number(c.ese) : "") << ',' << (ok ? csv_number(c.coverage_pct) : "") << ','
                << (ok && c.rel_eff ? csv_number(*c.rel_eff) : "") << '\n';
        }
    }
}

Json correlation_to_json(const CorrelationSpec& corr) {
    Json out{{"kind", to_string(corr.kind())}};
    switch (corr.kind()) {
    case CorrelationKind::independence: break;
    case CorrelationKind::exchangeable: out["rho"] = number(corr.rho()); break;
    case CorrelationKind::unstructured: out["by_position"] = matrix_json(corr.by_position()); break;
    case CorrelationKind::ear_freq:
        out["alpha"] = Json{{"base", corr.alpha().base}, {"ear", corr.alpha().ear}, {"freq", corr.alpha().freq}};
        break;
    }
    return out;
}

Json fit_result_json(const FitReport& report) {
    Json fits = Json::array();
    bool any_failed = false;
    for (const auto& mf : report.fits) {
        Json entry{{"method", mf.method}, {"ok", mf.ok()}};
        if (!mf.ok()) any_failed = true;
        if (!mf.error.empty()) entry["error"] = mf.error;
        if (mf.fit) {
            const GeeFit& f = *mf.fit;
            entry["converged"] = f.converged;
            entry["iterations"] = f.iterations;
            entry["rounds"] = f.rounds;
            entry["alpha_iterations"] = f.alpha_iterations;
            entry["score_norm"] = number(f.score_norm);
            entry["dispersion"] = number(f.dispersion);
            entry["correlation"] = correlation_to_json(f.correlation);
            entry["correlation_fallback"] = f.correlation_fallback;
            entry["n_clusters"] = f.n_clusters;
            Json coefs = Json::array();
            for (std::size_t j = 0; j < mf.intervals.size(); ++j) {
                const auto& w = mf.intervals[j];
                const auto jj = static_cast<Eigen::Index>(j);
                const double naive = f.naive_cov.size() > 0 ? f.naive_cov(jj, jj) : NAN;
                coefs.push_back(Json{{"name", j < report.coefficient_names.size() ? report.coefficient_names[j] : ""},
                                     {"estimate", number(w.estimate)},
                                     {"se", number(w.se)},
                                     {"naive_se", number(naive >= 0.0 ? std::sqrt(naive) : NAN)},
                                     {"ci_low", number(w.lower)},
                                     {"ci_high", number(w.upper)}});
            }
            entry["coefficients"] = std::move(coefs);
            entry["warnings"] = f.warnings;
        }
        fits.push_back(std::move(entry));
    }
    return Json{{"schema_version", result_schema_version},
                {"status", any_failed ? "error" : "ok"},
                {"config", report.config},
                {"data", {{"n_participants", report.n_participants}, {"n_rows", report.n_rows}}},
                {"fits", std::move(fits)}};
}

std::string fit_table(const FitReport& report, double level) {
    std::ostringstream os;
    const std::string pct = fixed(100.0 * level, 0) + "% CI";
    std::size_t name_width = 11;
    for (const auto& n : report.coefficient_names) name_width = std::max(name_width, n.size());
    name_width += 2;
    constexpr std::size_t est_width = 22;
    constexpr std::size_t ci_width = 24;

    os << pad_right("", name_width);
    for (const auto& mf : report.fits) os << pad_right(mf.method + "-ear", est_width + ci_width);
    os << "\n" << pad_right("Coefficient", name_width);
    for (std::size_t m = 0; m < report.fits.size(); ++m) {
        os << pad_right("Estimate (SE)", est_width) << pad_right(pct, ci_width);
    }
    os << "\n";
    for (std::size_t j = 0; j < report.coefficient_names.size(); ++j) {
        os << pad_right(report.coefficient_names[j], name_width);
        for (const auto& mf : report.fits) {
            if (!mf.ok() || j >= mf.intervals.size()) {
                os << pad_right("-", est_width) << pad_right("-", ci_width);
                continue;
            }
            const auto& w = mf.intervals[j];
            os << pad_right(fixed(w.estimate, 3) + " (" + fixed(w.se, 3) + ")", est_width)
               << pad_right("(" + fixed(w.lower, 3) + ", " + fixed(w.upper, 3) + ")", ci_width);
        }
        os << "\n";
    }
    for (const auto& mf : report.fits) {
        if (!mf.error.empty()) os << mf.method << "-ear: " << mf.error << "\n";
        if (!mf.fit) continue;
        os << mf.method << "-ear: " << to_string(mf.fit->correlation.kind()) << " correlation";
        if (mf.fit->correlation.kind() == CorrelationKind::ear_freq) {
            const auto& a = mf.fit->correlation.alpha();
            os << ", alpha = (" << fixed(a.base, 4) << ", " << fixed(a.ear, 4) << ", " << fixed(a.freq, 4) << ")";
        } else if (mf.fit->correlation.kind() == CorrelationKind::exchangeable) {
            os << ", rho = " << fixed(mf.fit->correlation.rho(), 4);
        }
        os << ", phi = " << fixed(mf.fit->dispersion, 4) << (mf.fit->converged ? "" : ", NOT CONVERGED") << "\n";
        for (const auto& w : mf.fit->warnings) os << "  warning: " << w << "\n";
    }
    return os.str();
}

void write_fit_csv(std::ostream& out, const FitReport& report) {
    out << "method,coefficient,estimate,se,ci_low,ci_high\n";
    for (const auto& mf : report.fits) {
        if (!mf.ok()) continue;
        for (std::size_t j = 0; j < mf.intervals.size(); ++j) {
            const auto& w = mf.intervals[j];
            const std::string name = j < report.coefficient_names.size() ? report.coefficient_names[j] : "";
            out << csv_cell(mf.method) << ',' << csv_cell(name) << ',' << csv_number(w.estimate) << ','
                << csv_number(w.se) << ',' << csv_number(w.lower) << ',' << csv_number(w.upper) << '\n';
        }
    }
}

Json error_result_json(const std::string& command, const std::string& message) {
    return Json{{"schema_version", result_schema_version},
                {"status", "error"},
                {"config", {{"command", command}}},
                {"error", message}};
}

}  // namespace bgee
