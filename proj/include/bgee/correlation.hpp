#pragma once

#include "bgee/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace bgee {

enum class CorrelationKind { independence, exchangeable, unstructured, ear_freq };

std::string to_string(CorrelationKind kind);
CorrelationKind parse_correlation_kind(const std::string& text);

/// Parameters of the ear-by-frequency structure
///   rho(p1, p2) = 1 - base * ear^[same ear] * freq^[same frequency].
struct EarFreqAlpha {
    double base = 0.5;
    double ear = 0.5;
    double freq = 0.5;
};

/// Working correlation in force for a fit.
///
/// Unstructured matrices are indexed by cell position (see `cell_position`),
/// so clusters with missing cells pick the matching sub-block.
class CorrelationSpec {
public:
    CorrelationSpec() = default;

    static CorrelationSpec independence();
    static CorrelationSpec exchangeable(double rho);
    static CorrelationSpec unstructured(MatrixXd by_position);
    static CorrelationSpec ear_freq(EarFreqAlpha alpha);

    CorrelationKind kind() const { return kind_; }
    double rho() const { return rho_; }
    const MatrixXd& by_position() const { return matrix_; }
    const EarFreqAlpha& alpha() const { return alpha_; }

private:
    CorrelationKind kind_ = CorrelationKind::independence;
    double rho_ = 0.0;
    MatrixXd matrix_;
    EarFreqAlpha alpha_;
};

/// Unconstrained parameterisation alpha_c = logistic(eta_c), ordered
/// (base, ear, freq).
struct AlphaTransformed {
    Eigen::Vector3d eta = Eigen::Vector3d::Zero();

    static AlphaTransformed from_alpha(const EarFreqAlpha& alpha);
    EarFreqAlpha alpha() const;
};

double logistic(double eta);

/// Working correlation matrix for one cluster's cells. Throws
/// std::domain_error when the result has an eigenvalue below -1e-8.
MatrixXd materialize(const CorrelationSpec& spec, const VectorXi& ear_index,
                     const VectorXi& freq_index);

/// Same as materialize without the eigenvalue check.
MatrixXd materialize_unchecked(const CorrelationSpec& spec, const VectorXi& ear_index,
                               const VectorXi& freq_index);

double min_eigenvalue(const MatrixXd& symmetric);

/// Method-of-moments correlation from Pearson residuals.
///
/// `positions` gives each cluster's cell positions; when empty, cluster i's
/// entries are taken to sit at positions 0..N_i-1. Exchangeable divides the
/// summed within-cluster cross-products by (N* - k) with N* the number of
/// within-cluster pairs; unstructured divides each position pair's sum by
/// (clusters observing that pair - k). Throws std::invalid_argument when a
/// denominator is not positive.
CorrelationSpec moment_estimate(std::span<const VectorXd> pearson_residuals,
                                CorrelationKind kind, int k,
                                std::span<const VectorXi> positions = {});

struct RhoJacobian {
    VectorXd rho;       // one entry per pair p1 < p2, row-major
    MatrixXd jacobian;  // d rho / d eta, pairs x 3
};

RhoJacobian rho_vector_and_jacobian(const AlphaTransformed& alpha, const VectorXi& ear_index,
                                    const VectorXi& freq_index);

struct AlphaSolverOptions {
    int max_iterations = 100;
    double tolerance = 1e-10;
    // Bounds keep alpha strictly inside (0, 1) when the moments push toward
    // an edge of the parameter space.
    double eta_bound = 20.0;
    // Weight the cross-product residuals by the inverse pooled covariance
    // of Z instead of the identity.
    bool pooled_z_covariance = false;
};

struct AlphaSolveResult {
    CorrelationSpec correlation;
    AlphaTransformed eta;
    int iterations = 0;
    bool converged = false;
    double score_norm = 0.0;
    std::string message;
};

/// Solves sum_i J_i' W (Z_i - rho_i(eta)) = 0 for the ear-frequency
/// structure, where Z_i are products of Pearson residuals at `beta_hat`
/// (dispersion included) and J_i = d rho_i / d eta.
AlphaSolveResult solve_alpha(std::span<const ClusterData> clusters, const VectorXd& beta_hat,
                             const MeanModelSpec& model, const AlphaTransformed& init,
                             const AlphaSolverOptions& options = {});

}  // namespace bgee
