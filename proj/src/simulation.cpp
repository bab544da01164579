#include "bgee/simulation.hpp"

#include "bgee/correlation.hpp"
#include "bgee/reduction.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace bgee {

Eigen::Matrix4d SimulationScenario::default_sigma_eps() {
    Eigen::Matrix4d s;
    s << 1.0, 0.5, 0.9, 0.6,
         0.5, 1.0, 0.6, 0.9,
         0.9, 0.6, 2.25, 1.35,
         0.6, 0.9, 1.35, 2.25;
    return s;
}

SimulationScenario SimulationScenario::preset(int id) {
    SimulationScenario s;
    switch (id) {
    case 1: s.alpha = {0.2, 0.3, 0.7, 0.55}; break;
    case 2: s.alpha = {0.4, 0.8, 0.9, 0.6}; break;
    case 3: s.alpha = {0.6, 0.8, 0.9, 0.65}; break;
    case 4: s.alpha = {0.8, 0.8, 0.9, 0.8}; break;
    default:
        throw std::invalid_argument("scenario must be 1, 2, 3 or 4, got " + std::to_string(id));
    }
    s.name = "scenario" + std::to_string(id);
    return s;
}

Eigen::Matrix4d SimulationScenario::sigma_theta() const {
    const Eigen::Matrix4d a = theta_scale.asDiagonal();
    return a * dgp_correlation(alpha) * a;
}

Eigen::Matrix4d dgp_correlation(const DgpAlpha& alpha) {
    for (double v : {alpha.base, alpha.freq1, alpha.freq2, alpha.ear}) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("slope correlation parameters must lie in [0, 1]");
        }
    }
    const double same_freq1 = 1.0 - alpha.base * alpha.freq1;
    const double same_freq2 = 1.0 - alpha.base * alpha.freq2;
    const double same_ear = 1.0 - alpha.base * alpha.ear;
    const double neither = 1.0 - alpha.base;
    Eigen::Matrix4d r;
    r << 1.0, same_freq1, same_ear, neither,
         same_freq1, 1.0, neither, same_ear,
         same_ear, neither, 1.0, same_freq2,
         neither, same_ear, same_freq2, 1.0;
    if (min_eigenvalue(r) < -1e-8) {
        throw std::domain_error("slope correlation matrix is not positive semi-definite");
    }
    return r;
}

MeanModelSpec simulation_model() {
    return MeanModelSpec::for_link(Link::identity, 2,
                                   {{"X", true, false}, {"Z", false, true}});
}

std::vector<std::string> simulation_coefficient_names() {
    return {"beta0", "beta1", "beta2", "theta", "beta3"};
}

VectorXd simulation_truth(const SimulationScenario& scenario) {
    VectorXd truth(5);
    truth << scenario.beta_true(0), scenario.beta_true(1), scenario.beta_true(2),
        scenario.theta_mean, scenario.beta_true(3);
    return truth;
}

Engine replicate_stream(std::uint64_t base_seed, std::uint64_t replicate) {
    std::seed_seq seq{static_cast<std::uint32_t>(base_seed),
                      static_cast<std::uint32_t>(base_seed >> 32),
                      static_cast<std::uint32_t>(replicate),
                      static_cast<std::uint32_t>(replicate >> 32)};
    return Engine(seq);
}

namespace {

// Lower factor L with L L' = S; falls back to a symmetric square root for
// singular (but positive semi-definite) S.
Eigen::Matrix4d covariance_factor(const Eigen::Matrix4d& s) {
    Eigen::LLT<Eigen::Matrix4d> llt(s);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(s);
    if (eig.eigenvalues().minCoeff() < -1e-8) {
        throw std::domain_error("covariance matrix is not positive semi-definite");
    }
    return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

const SimulationScenario& validated(const SimulationScenario& s) {
    const CovariateLaw& law = s.covariates;
    if (!(law.x_sd >= 0.0) || !(law.z_sd >= 0.0)) {
        throw std::invalid_argument("covariate standard deviations must be non-negative");
    }
    if (!(law.z_correlation >= 0.0 && law.z_correlation <= 1.0)) {
        throw std::invalid_argument("z_correlation must lie in [0, 1]");
    }
    if (!s.sigma_eps.allFinite() || (s.sigma_eps - s.sigma_eps.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw std::invalid_argument("sigma_eps must be symmetric");
    }
    for (double v : s.theta_scale) {
        if (!(v >= 0.0)) throw std::invalid_argument("theta_scale entries must be non-negative");
    }
    return s;
}

}  // namespace

ClusterSampler::ClusterSampler(const SimulationScenario& scenario)
    : scenario_(validated(scenario)),
      model_(simulation_model()),
      eps_factor_(covariance_factor(scenario.sigma_eps)),
      theta_factor_(covariance_factor(scenario.sigma_theta())) {}

ClusterData ClusterSampler::draw(Engine& rng, std::string participant_id) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    const CovariateLaw& law = scenario_.covariates;
    const double x = law.x_mean + law.x_sd * normal(rng);
    const double shared = std::sqrt(law.z_correlation) * normal(rng);
    const double own = std::sqrt(1.0 - law.z_correlation);
    Eigen::Vector4d z;
    for (int p = 0; p < 4; ++p) z(p) = law.z_mean + law.z_sd * (shared + own * normal(rng));
    Eigen::Vector4d u;
    for (int p = 0; p < 4; ++p) u(p) = normal(rng);
    const Eigen::Vector4d theta = Eigen::Vector4d::Constant(scenario_.theta_mean) + theta_factor_ * u;
    for (int p = 0; p < 4; ++p) u(p) = normal(rng);
    const Eigen::Vector4d eps = eps_factor_ * u;

    const Eigen::Vector4d& b = scenario_.beta_true;
    VectorXd y(4);
    MatrixXd raw(4, 2);
    VectorXi ear(4);
    VectorXi freq(4);
    for (int p = 0; p < 4; ++p) {
        ear(p) = p % 2 + 1;
        freq(p) = p / 2 + 1;
        const double second = freq(p) == 2 ? 1.0 : 0.0;
        y(p) = b(0) + b(1) * second + b(2) * x + b(3) * x * second + theta(p) * z(p) + eps(p);
        raw(p, 0) = x;
        raw(p, 1) = z(p);
    }
    return ClusterData(std::move(participant_id), y, expand_design(raw, freq, model_), ear, freq);
}

std::vector<ClusterData> ClusterSampler::draw_dataset(Engine& rng) const {
    std::vector<ClusterData> clusters;
    clusters.reserve(static_cast<std::size_t>(scenario_.n_participants));
    for (int i = 0; i < scenario_.n_participants; ++i) {
        clusters.push_back(draw(rng, std::to_string(i + 1)));
    }
    return clusters;
}

ClusterData simulate_cluster(const SimulationScenario& scenario, Engine& rng,
                             std::string participant_id) {
    return ClusterSampler(scenario).draw(rng, std::move(participant_id));
}

std::string to_string(Method method) {
    switch (method) {
    case Method::worse_ind: return "worse-ind";
    case Method::avg_ind: return "avg-ind";
    case Method::both_ind: return "both-ind";
    case Method::both_exch: return "both-exch";
    case Method::both_uns: return "both-uns";
    case Method::proposed: return "proposed";
    }
    return "unknown";
}

std::string display_name(Method method) {
    switch (method) {
    case Method::worse_ind: return "Worse-ear (ind.)";
    case Method::avg_ind: return "Average-ear (ind.)";
    case Method::both_ind: return "Both-ear (ind.)";
    case Method::both_exch: return "Both-ear (exch.)";
    case Method::both_uns: return "Both-ear (uns.)";
    case Method::proposed: return "Proposed";
    }
    return "unknown";
}

Method parse_method(const std::string& text) {
    for (Method m : all_methods())
        if (to_string(m) == text) return m;
    throw std::invalid_argument("unknown method '" + text +
                                "' (expected worse-ind, avg-ind, both-ind, both-exch, "
                                "both-uns or proposed)");
}

std::vector<Method> all_methods() {
    return {Method::worse_ind, Method::avg_ind, Method::both_ind,
            Method::both_exch, Method::both_uns, Method::proposed};
}

GeeFit fit_method(Method method, std::span<const ClusterData> clusters,
                  const MeanModelSpec& model, const Gee15Options& options) {
    auto reduced_fit = [&](ReducedCluster (*reduce)(const ClusterData&)) {
        std::vector<ClusterData> reduced;
        reduced.reserve(clusters.size());
        for (const auto& cl : clusters) reduced.push_back(reduce(cl).to_cluster());
        return fit_gee(reduced, model, CorrelationKind::independence, options);
    };
    switch (method) {
    case Method::worse_ind: return reduced_fit(&worse_ear);
    case Method::avg_ind: return reduced_fit(&average_ear);
    case Method::both_ind: return fit_gee(clusters, model, CorrelationKind::independence, options);
    case Method::both_exch: return fit_gee(clusters, model, CorrelationKind::exchangeable, options);
    case Method::both_uns: {
        Gee15Options relaxed = options;
        relaxed.solver.allow_indefinite = true;
        return fit_gee(clusters, model, CorrelationKind::unstructured, relaxed);
    }
    case Method::proposed: return fit_gee(clusters, model, CorrelationKind::ear_freq, options);
    }
    throw std::invalid_argument("unknown method");
}

std::vector<CoefficientSummary> summarize(std::span<const ReplicateRecord> records,
                                          const VectorXd& truth,
                                          const std::vector<std::string>& names) {
    const auto k = truth.size();
    std::vector<CoefficientSummary> out(static_cast<std::size_t>(k));
    std::vector<const ReplicateRecord*> ok;
    for (const auto& r : records)
        if (r.ok) ok.push_back(&r);
    const double s = static_cast<double>(ok.size());

    for (Eigen::Index j = 0; j < k; ++j) {
        CoefficientSummary& c = out[static_cast<std::size_t>(j)];
        c.name = j < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                             : "coef" + std::to_string(j);
        c.truth = truth(j);
        if (ok.empty()) continue;
        double sum = 0.0, sum_se = 0.0, covered = 0.0;
        for (const auto* r : ok) {
            sum += r->beta(j);
            sum_se += r->se(j);
            covered += r->covered[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
        }
        c.mean_estimate = sum / s;
        c.mean_se = sum_se / s;
        c.coverage_pct = 100.0 * covered / s;
        if (truth(j) != 0.0) c.rel_bias_pct = 100.0 * (c.mean_estimate - truth(j)) / truth(j);
        if (ok.size() > 1) {
            double ss = 0.0;
            for (const auto* r : ok) ss += (r->beta(j) - c.mean_estimate) * (r->beta(j) - c.mean_estimate);
            c.ese = std::sqrt(ss / (s - 1.0));
        }
    }
    return out;
}

ScenarioReport run_scenario(const SimulationScenario& scenario, std::span<const Method> methods,
                            const RunOptions& options) {
    if (scenario.n_participants < 2) throw std::invalid_argument("need at least two participants");
    if (scenario.n_replicates < 1) throw std::invalid_argument("need at least one replicate");
    if (methods.empty()) throw std::invalid_argument("no methods requested");

    const ClusterSampler sampler(scenario);
    const MeanModelSpec model = simulation_model();
    const VectorXd truth = simulation_truth(scenario);
    const auto n_methods = methods.size();
    const auto n_reps = static_cast<std::size_t>(scenario.n_replicates);

    ScenarioReport report;
    report.scenario = scenario;
    report.methods.assign(methods.begin(), methods.end());
    report.records.assign(n_methods, std::vector<ReplicateRecord>(n_reps));

    auto run_replicate = [&](std::size_t s) {
        Engine rng = replicate_stream(scenario.base_seed, s);
        const std::vector<ClusterData> data = sampler.draw_dataset(rng);
        for (std::size_t m = 0; m < n_methods; ++m) {
            ReplicateRecord& rec = report.records[m][s];
            try {
                const GeeFit fit = fit_method(methods[m], data, model, options.gee15);
                if (!fit.converged) {
                    rec.error = fit.warnings.empty() ? "fit did not converge" : fit.warnings.back();
                    continue;
                }
                const auto intervals = wald_intervals(fit, options.level, options.naive_se);
                rec.beta = fit.beta;
                rec.se.resize(fit.beta.size());
                rec.covered.resize(intervals.size());
                for (std::size_t j = 0; j < intervals.size(); ++j) {
                    rec.se(static_cast<Eigen::Index>(j)) = intervals[j].se;
                    const double t = truth(static_cast<Eigen::Index>(j));
                    rec.covered[j] = intervals[j].lower <= t && t <= intervals[j].upper;
                }
                rec.ok = true;
            } catch (const std::exception& e) {
                rec.error = e.what();
            }
        }
    };

    unsigned threads = options.threads > 0 ? static_cast<unsigned>(options.threads)
                                           : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(n_reps));
    if (threads <= 1) {
        for (std::size_t s = 0; s < n_reps; ++s) run_replicate(s);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t s = next++; s < n_reps; s = next++) run_replicate(s);
            });
        }
    }

    const auto names = simulation_coefficient_names();
    for (std::size_t m = 0; m < n_methods; ++m) {
        MethodSummary ms;
        ms.method = methods[m];
        for (const auto& rec : report.records[m]) {
            if (rec.ok) {
                ++ms.n_success;
            } else {
                ++ms.n_failed;
                if (ms.failure_examples.size() < 5) ms.failure_examples.push_back(rec.error);
            }
        }
        ms.coefficients = summarize(report.records[m], truth, names);
        if (ms.n_success == 0) {
            report.warnings.push_back(to_string(ms.method) + " failed on every replicate");
        } else if (ms.n_failed > 0) {
            report.warnings.push_back(to_string(ms.method) + " failed on " +
                                      std::to_string(ms.n_failed) + " replicate(s)");
        }
        report.summaries.push_back(std::move(ms));
    }
    if (scenario.n_replicates == 1) {
        report.warnings.push_back("a single replicate gives no empirical SE; reported as 0");
    }

    const auto ref = std::find(methods.begin(), methods.end(), Method::proposed);
    if (ref != methods.end()) {
        report.reference = Method::proposed;
        const auto& ref_coefs = report.summaries[static_cast<std::size_t>(ref - methods.begin())].coefficients;
        for (auto& ms : report.summaries) {
            if (ms.n_success == 0) continue;
            for (std::size_t j = 0; j < ms.coefficients.size(); ++j) {
                const double denom = ms.coefficients[j].ese;
                if (denom > 0.0 && ref_coefs[j].ese > 0.0) {
                    ms.coefficients[j].rel_eff = ref_coefs[j].ese / denom;
                }
            }
        }
    }
    return report;
}

}  // namespace bgee
