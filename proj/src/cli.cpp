#include "bgee/cli.hpp"

#include "bgee/long_format.hpp"
#include "bgee/reduction.hpp"
#include "bgee/report.hpp"
#include "bgee/simulation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>

namespace bgee {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitArgs {
    std::string data;
    std::string corr = "ear-freq";
    std::vector<std::string> methods{"both"};
    int freq_levels = 0;
    std::vector<std::string> covariates;
    std::vector<std::string> interact;
    std::vector<std::string> ear_covs;
    std::string link = "identity";
    double level = 0.95;
    std::string ci_se = "sandwich";
    std::optional<int> gee15_rounds;
    std::string out;
    std::string table_csv;
};

struct ScenarioArgs {
    std::optional<int> scenario;
    std::string scenario_file;
    std::optional<int> n;
    std::optional<std::uint64_t> seed;
    std::string covariate_law;
};

struct SimulateArgs {
    ScenarioArgs scenario;
    std::optional<int> reps;
    std::vector<std::string> methods;
    int threads = 0;
    double level = 0.95;
    std::string ci_se = "sandwich";
    std::optional<int> gee15_rounds;
    std::string out;
    std::string table_csv;
};

struct GenerateArgs {
    ScenarioArgs scenario;
    std::uint64_t replicate = 0;
    std::string out;
};

void add_scenario_options(CLI::App* cmd, ScenarioArgs& a) {
    auto* id = cmd->add_option("--scenario", a.scenario, "Preset scenario 1-4")->check(CLI::Range(1, 4));
    auto* file = cmd->add_option("--scenario-file", a.scenario_file, "Scenario definition (JSON)");
    id->excludes(file);
    cmd->add_option("--n", a.n, "Participants per data set")->check(CLI::Range(2, 100000000));
    cmd->add_option("--seed", a.seed, "Base seed");
    cmd->add_option("--covariate-law", a.covariate_law, "Covariate distributions")
        ->check(CLI::IsMember({"calibrated", "standard"}));
}

SimulationScenario resolve_scenario(const ScenarioArgs& a) {
    SimulationScenario s;
    if (a.scenario) {
        s = SimulationScenario::preset(*a.scenario);
    } else if (!a.scenario_file.empty()) {
        std::ifstream in(a.scenario_file);
        if (!in) throw InputError("cannot open scenario file '" + a.scenario_file + "'");
        Json doc;
        try {
            doc = Json::parse(in);
        } catch (const Json::parse_error& e) {
            throw InputError("scenario file '" + a.scenario_file + "' is not valid JSON: " + e.what());
        }
        s = scenario_from_json(doc);
    } else {
        throw UsageError("one of --scenario or --scenario-file is required");
    }
    if (a.n) s.n_participants = *a.n;
    if (a.seed) s.base_seed = *a.seed;
    if (a.covariate_law == "standard") s.covariates = CovariateLaw::standard();
    if (a.covariate_law == "calibrated") s.covariates = CovariateLaw::calibrated();
    ClusterSampler check(s);
    return s;
}

void check_level(double level) {
    if (!(level > 0.0 && level < 1.0)) throw UsageError("--level must lie strictly between 0 and 1");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << text;
    if (!f) throw InputError("failed writing '" + path + "'");
}

std::string dump(const Json& doc) { return doc.dump(2) + "\n"; }

Gee15Options gee15_options(const std::optional<int>& rounds) {
    Gee15Options o;
    if (rounds) o.fixed_rounds = *rounds;
    return o;
}

int run_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
    check_level(a.level);
    const CorrelationKind kind = parse_correlation_kind(a.corr);
    std::set<std::string> seen;
    for (const auto& m : a.methods) {
        if (m != "worse" && m != "average" && m != "both") {
            throw UsageError("--method must be worse, average or both, got '" + m + "'");
        }
        if (!seen.insert(m).second) throw UsageError("--method lists '" + m + "' twice");
        if (kind == CorrelationKind::ear_freq && m != "both") {
            throw UsageError("--corr ear-freq needs both ears (--method both)");
        }
    }

    LongFormatOptions opts;
    opts.freq_levels = a.freq_levels;
    opts.link = a.link == "logit" ? Link::logit : Link::identity;
    opts.covariates = a.covariates;
    opts.interact = a.interact;
    opts.ear_covariates = a.ear_covs;
    const LongFormatData data = read_long_format(std::filesystem::path(a.data), opts);

    FitReport report;
    report.coefficient_names = data.model.column_names();
    report.n_participants = static_cast<int>(data.clusters.size());
    report.n_rows = data.n_rows;
    Json covariates = Json::array();
    for (const auto& c : data.model.covariates) covariates.push_back(c.name);
    report.config = Json{{"command", "fit"},
                         {"data", a.data},
                         {"corr", to_string(kind)},
                         {"methods", a.methods},
                         {"freq_levels", data.model.freq_levels},
                         {"link", to_string(data.model.link)},
                         {"covariates", covariates},
                         {"interact", a.interact},
                         {"ear_covs", a.ear_covs},
                         {"level", a.level},
                         {"ci_se", a.ci_se},
                         {"gee15_rounds", a.gee15_rounds ? Json(*a.gee15_rounds) : Json(nullptr)}};

    Gee15Options options = gee15_options(a.gee15_rounds);
    options.solver.column_names = report.coefficient_names;
    for (const auto& m : a.methods) {
        MethodFit mf;
        mf.method = m;
        try {
            std::vector<ClusterData> clusters;
            if (m == "both") {
                clusters = data.clusters;
            } else {
                for (const auto& cl : data.clusters) {
                    clusters.push_back((m == "worse" ? worse_ear(cl) : average_ear(cl)).to_cluster());
                }
            }
            GeeFit fit = fit_gee(clusters, data.model, kind, options);
            if (fit.converged) {
                mf.intervals = wald_intervals(fit, a.level, a.ci_se == "naive");
            } else {
                mf.error = fit.warnings.empty() ? "fit did not converge" : fit.warnings.back();
            }
            mf.fit = std::move(fit);
        } catch (const std::exception& e) {
            mf.error = e.what();
        }
        report.fits.push_back(std::move(mf));
    }

    out << fit_table(report, a.level);
    const Json doc = fit_result_json(report);
    if (!a.out.empty()) write_text(a.out, dump(doc));
    if (!a.table_csv.empty()) {
        std::ostringstream csv;
        write_fit_csv(csv, report);
        write_text(a.table_csv, csv.str());
    }
    const bool failed = doc["status"] != "ok";
    if (failed) err << "error: at least one fit failed; see the diagnostics above\n";
    return failed ? exit_failure : exit_ok;
}

int run_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
    check_level(a.level);
    SimulationConfig config;
    config.scenario = resolve_scenario(a.scenario);
    if (a.reps) config.scenario.n_replicates = *a.reps;

    if (a.methods.empty()) {
        config.methods = all_methods();
    } else {
        for (const auto& name : a.methods) {
            const Method m = parse_method(name);
            if (std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end()) {
                throw UsageError("--methods lists '" + name + "' twice");
            }
            config.methods.push_back(m);
        }
    }
    config.options.threads = a.threads;
    config.options.level = a.level;
    config.options.naive_se = a.ci_se == "naive";
    config.options.gee15 = gee15_options(a.gee15_rounds);

    err << "simulating " << config.scenario.name << ": " << config.scenario.n_replicates << " replicates of "
        << config.scenario.n_participants << " participants, seed " << config.scenario.base_seed << "\n";
    const ScenarioReport report = run_scenario(config.scenario, config.methods, config.options);
    out << simulation_tables(report);

    const Json doc = simulation_result_json(config, report);
    if (!a.out.empty()) write_text(a.out, dump(doc));
    if (!a.table_csv.empty()) {
        std::ostringstream csv;
        write_simulation_csv(csv, report);
        write_text(a.table_csv, csv.str());
    }
    if (doc["status"] != "ok") {
        err << "error: a method failed on every replicate\n";
        return exit_failure;
    }
    return exit_ok;
}

int run_generate(const GenerateArgs& a, std::ostream& err) {
    const SimulationScenario s = resolve_scenario(a.scenario);
    Engine rng = replicate_stream(s.base_seed, a.replicate);
    const auto data = ClusterSampler(s).draw_dataset(rng);
    std::ostringstream csv;
    // raw X and Z sit in design columns 2 and 3
    write_long_format(csv, data, {{"x", 2}, {"z", 3}});
    write_text(a.out, csv.str());
    err << "wrote " << data.size() << " participants to " << a.out << "\n";
    return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"GEE with an ear-by-frequency working correlation for bilateral audiometric data"};
    app.name("bgee");
    app.require_subcommand(1);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "Fit GEE models to long-format CSV data");
    fit->add_option("--data", fa.data, "CSV: participant_id, ear, freq, y, covariates...")->required();
    fit->add_option("--corr", fa.corr, "Working correlation")
        ->check(CLI::IsMember({"independence", "exchangeable", "unstructured", "ear-freq"}));
    fit->add_option("--method", fa.methods, "Outcome handling: worse, average, both")->delimiter(',');
    fit->add_option("--freq-levels", fa.freq_levels, "Number of frequency levels Q")->check(CLI::Range(1, 1000));
    fit->add_option("--covariates", fa.covariates, "Covariate columns (default: all after y)")->delimiter(',');
    fit->add_option("--interact", fa.interact, "Covariates interacted with frequency")->delimiter(',');
    fit->add_option("--ear-covs", fa.ear_covs, "Ear-level covariates")->delimiter(',');
    fit->add_option("--link", fa.link, "Link function")->check(CLI::IsMember({"identity", "logit"}));
    fit->add_option("--level", fa.level, "Confidence level");
    fit->add_option("--ci-se", fa.ci_se, "SE used for intervals")->check(CLI::IsMember({"sandwich", "naive"}));
    fit->add_option("--gee15-rounds", fa.gee15_rounds, "Run exactly this many alpha/beta rounds")
        ->check(CLI::Range(1, 1000));
    fit->add_option("--out", fa.out, "Result file (JSON)");
    fit->add_option("--table-csv", fa.table_csv, "Coefficient table (CSV)");

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo scenario across methods");
    add_scenario_options(sim, sa.scenario);
    sim->add_option("--reps", sa.reps, "Replicates")->check(CLI::Range(1, 100000000));
    sim->add_option("--methods", sa.methods, "Methods (default: all)")->delimiter(',');
    sim->add_option("--threads", sa.threads, "Worker threads (0: all cores)")->check(CLI::Range(0, 4096));
    sim->add_option("--level", sa.level, "Confidence level");
    sim->add_option("--ci-se", sa.ci_se, "SE used for intervals")->check(CLI::IsMember({"sandwich", "naive"}));
    sim->add_option("--gee15-rounds", sa.gee15_rounds, "Run exactly this many alpha/beta rounds")
        ->check(CLI::Range(1, 1000));
    sim->add_option("--out", sa.out, "Result file (JSON)");
    sim->add_option("--table-csv", sa.table_csv, "Operating characteristics (CSV)");

    GenerateArgs ga;
    auto* gen = app.add_subcommand("generate", "Write one simulated data set as long-format CSV");
    add_scenario_options(gen, ga.scenario);
    gen->add_option("--replicate", ga.replicate, "Replicate index whose stream is used");
    gen->add_option("--out", ga.out, "CSV file")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_invalid_input;
    }

    std::string out_path;
    std::string command;
    if (fit->parsed()) {
        command = "fit";
        out_path = fa.out;
    } else if (sim->parsed()) {
        command = "simulate";
        out_path = sa.out;
    } else {
        command = "generate";
    }
    try {
        if (command == "fit") return run_fit(fa, out, err);
        if (command == "simulate") return run_simulate(sa, out, err);
        return run_generate(ga, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        if (!out_path.empty()) {
            try {
                write_text(out_path, dump(error_result_json(command, e.what())));
            } catch (const std::exception&) {
            }
        }
        return exit_invalid_input;
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, out, err);
}

}  // namespace bgee
