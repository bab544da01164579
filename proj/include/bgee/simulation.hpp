#pragma once

#include "bgee/estimator.hpp"
#include "bgee/model.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace bgee {

/// Distributions of the participant-level covariate X_i and the ear-level
/// covariate Z_ijq. Both are normal; the four Z values of a participant share
/// an exchangeable correlation `z_correlation`. The defaults were calibrated
/// so that the comparator methods' empirical SEs in scenario 1 (n = 200) land
/// near reference values; `standard()` gives X, Z ~ N(0, 1) independently.
struct CovariateLaw {
    double x_mean = 0.0;
    double x_sd = 0.04838;
    double z_mean = 1.4018;
    double z_sd = 0.5901;
    double z_correlation = 0.9171;

    static CovariateLaw calibrated() { return {}; }
    static CovariateLaw standard() { return {0.0, 1.0, 0.0, 1.0, 0.0}; }
};

/// Correlation parameters of the random ear-level slopes. Frequency 1 and
/// frequency 2 get their own same-frequency parameter.
struct DgpAlpha {
    double base = 1.0;
    double freq1 = 1.0;
    double freq2 = 1.0;
    double ear = 1.0;
};

struct SimulationScenario {
    std::string name = "custom";
    Eigen::Vector4d beta_true{2.0, -0.7, -1.2, 0.9};
    Eigen::Matrix4d sigma_eps = default_sigma_eps();
    double theta_mean = -0.8;
    Eigen::Vector4d theta_scale{0.8, 1.9, 0.6, 2.5};
    DgpAlpha alpha;
    int n_participants = 200;
    int n_replicates = 1000;
    std::uint64_t base_seed = 1;
    CovariateLaw covariates;

    /// Scenarios 1-4 (very strong to weak slope correlation).
    static SimulationScenario preset(int id);
    static Eigen::Matrix4d default_sigma_eps();

    /// Sigma_theta = A R A with A = diag(theta_scale).
    Eigen::Matrix4d sigma_theta() const;
};

/// 4x4 slope correlation over cells (ear1,f1), (ear2,f1), (ear1,f2), (ear2,f2).
/// Throws std::invalid_argument for parameters outside [0, 1] and
/// std::domain_error when the matrix is not positive semi-definite.
Eigen::Matrix4d dgp_correlation(const DgpAlpha& alpha);

/// Mean model fitted in the study: Q = 2, covariates X (interacted with
/// frequency) and Z (ear level). Design columns are
/// (intercept, freq2, X, Z, X:freq2).
MeanModelSpec simulation_model();

/// Coefficient labels in design-column order.
std::vector<std::string> simulation_coefficient_names();

/// True coefficients in design-column order: (b0, b1, b2, theta, b3).
VectorXd simulation_truth(const SimulationScenario& scenario);

using Engine = std::mt19937_64;

/// Independent engine for one replicate, derived from the base seed and the
/// replicate index.
Engine replicate_stream(std::uint64_t base_seed, std::uint64_t replicate);

/// Draws participants. Draw order per participant: X, the shared Z
/// component, the four cell-specific Z components in canonical row order, the
/// four slopes, then the four residuals.
class ClusterSampler {
public:
    explicit ClusterSampler(const SimulationScenario& scenario);

    ClusterData draw(Engine& rng, std::string participant_id) const;
    std::vector<ClusterData> draw_dataset(Engine& rng) const;

private:
    SimulationScenario scenario_;
    MeanModelSpec model_;
    Eigen::Matrix4d eps_factor_;
    Eigen::Matrix4d theta_factor_;
};

ClusterData simulate_cluster(const SimulationScenario& scenario, Engine& rng,
                             std::string participant_id = "1");

enum class Method { worse_ind, avg_ind, both_ind, both_exch, both_uns, proposed };

std::string to_string(Method method);
std::string display_name(Method method);
Method parse_method(const std::string& text);
std::vector<Method> all_methods();

/// Applies a method's outcome reduction and working correlation, then fits.
GeeFit fit_method(Method method, std::span<const ClusterData> clusters,
                  const MeanModelSpec& model, const Gee15Options& options = {});

struct ReplicateRecord {
    bool ok = false;
    VectorXd beta;
    VectorXd se;
    std::vector<bool> covered;
    std::string error;
};

struct CoefficientSummary {
    std::string name;
    double truth = 0.0;
    std::optional<double> rel_bias_pct;
    double mean_estimate = 0.0;
    double ese = 0.0;
    double mean_se = 0.0;
    double coverage_pct = 0.0;
    std::optional<double> rel_eff;
};

/// Relative bias, empirical SE (sample standard deviation), mean estimated
/// SE and coverage over the successful replicates. Relative efficiency is
/// left empty; it needs a reference method.
std::vector<CoefficientSummary> summarize(std::span<const ReplicateRecord> records,
                                          const VectorXd& truth,
                                          const std::vector<std::string>& names);

struct MethodSummary {
    Method method = Method::proposed;
    int n_success = 0;
    int n_failed = 0;
    std::vector<std::string> failure_examples;
    std::vector<CoefficientSummary> coefficients;
};

struct RunOptions {
    int threads = 0;  // 0: hardware concurrency
    double level = 0.95;
    bool naive_se = false;
    Gee15Options gee15;
};

struct ScenarioReport {
    SimulationScenario scenario;
    std::vector<Method> methods;
    std::vector<MethodSummary> summaries;
    std::optional<Method> reference;  // method relative efficiencies are taken against
    std::vector<std::vector<ReplicateRecord>> records;  // [method][replicate]
    std::vector<std::string> warnings;
};

/// Simulates every replicate once and fits all requested methods to the same
/// data. Results do not depend on the thread count.
ScenarioReport run_scenario(const SimulationScenario& scenario, std::span<const Method> methods,
                            const RunOptions& options = {});

}  // namespace bgee
