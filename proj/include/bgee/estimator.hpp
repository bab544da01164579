#pragma once

#include "bgee/correlation.hpp"
#include "bgee/model.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bgee {

/// Thrown when sum_i D_i' V_i^{-1} D_i is singular; the message names the
/// columns involved in the near-collinearity.
class RankDeficientError : public std::runtime_error {
public:
    RankDeficientError(const std::string& what, std::vector<int> columns)
        : std::runtime_error(what), columns_(std::move(columns)) {}
    const std::vector<int>& columns() const { return columns_; }

private:
    std::vector<int> columns_;
};

struct GeeFit {
    VectorXd beta;
    CorrelationSpec correlation;
    double dispersion = 1.0;
    MatrixXd naive_cov;
    MatrixXd sandwich_cov;
    int n_clusters = 0;
    int iterations = 0;
    bool converged = false;
    double score_norm = 0.0;
    bool indefinite_correlation = false;  // fitted with allow_indefinite

    // GEE1.5 / moment-iteration diagnostics.
    int rounds = 0;
    int alpha_iterations = 0;
    bool correlation_fallback = false;
    std::vector<std::string> warnings;
};

struct SolverOptions {
    int max_iterations = 100;
    double tolerance = 1e-8;
    std::vector<std::string> column_names;  // for rank-deficiency messages
    /// Accept a working correlation that is not positive semi-definite, as long
    /// as it is invertible. Off by default.
    bool allow_indefinite = false;
};

/// Mean squared Pearson residual with denominator (total observations - k).
/// Falls back to 1 when the residuals vanish or the denominator is not positive.
double estimate_dispersion(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                           const VectorXd& beta);

/// (Y - mu) / sqrt(phi * v(mu)) per cluster. Throws std::domain_error on a
/// non-positive variance.
std::vector<VectorXd> pearson_residuals(std::span<const ClusterData> clusters,
                                        const MeanModelSpec& model, const VectorXd& beta,
                                        double dispersion);

/// U(beta, alpha) = sum_i D_i' V_i^{-1} (Y_i - mu_i) with V_i = A^{1/2} R_i A^{1/2}.
VectorXd gee_score(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                   const CorrelationSpec& corr, const VectorXd& beta, double dispersion,
                   bool allow_indefinite = false);

/// Least squares on the stacked data for the identity link, zeros otherwise.
VectorXd initial_beta(std::span<const ClusterData> clusters, const MeanModelSpec& model);

/// Fisher scoring for U(beta) = 0 at a fixed working correlation. The
/// dispersion is re-estimated every iteration. A fit that exhausts the
/// iteration cap is returned with converged = false.
GeeFit solve_gee(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                 const CorrelationSpec& corr, const VectorXd& beta_init,
                 const SolverOptions& options = {});

struct Covariances {
    MatrixXd naive;
    MatrixXd sandwich;
};

/// Model-based (Sigma0^{-1}, dispersion included in V) and robust
/// Sigma0^{-1} Sigma1 Sigma0^{-1} covariances at the fitted values.
Covariances sandwich(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                     const GeeFit& fit);

struct Gee15Options {
    int max_rounds = 20;
    std::optional<int> fixed_rounds;  // run exactly this many alpha/beta rounds
    double tolerance = 1e-8;
    SolverOptions solver;
    AlphaSolverOptions alpha;
};

/// Independence fit, then alternate the second-order alpha equation with
/// the first-order beta equation under the ear-frequency structure. When
/// alpha cannot be estimated the fit falls back to a moment-estimated
/// exchangeable correlation and sets `correlation_fallback`.
GeeFit fit_gee15(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                 const Gee15Options& options = {});

struct MomentOptions {
    int max_rounds = 50;
    double tolerance = 1e-8;
    SolverOptions solver;
};

/// Standard GEE with exchangeable or unstructured correlation re-estimated
/// from Pearson residuals between beta updates.
GeeFit fit_gee_moment(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                      CorrelationKind kind, const MomentOptions& options = {});

/// Dispatches on the working correlation kind.
GeeFit fit_gee(std::span<const ClusterData> clusters, const MeanModelSpec& model,
               CorrelationKind kind, const Gee15Options& options = {});

struct WaldInterval {
    double estimate = 0.0;
    double se = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

double normal_quantile(double p);

std::vector<WaldInterval> wald_intervals(const GeeFit& fit, double level, bool use_naive = false);

}  // namespace bgee
