#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace bgee {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

enum class Link { identity, logit };

// Variance of one observation as a function of its mean, up to the
// dispersion factor.
enum class VarianceFunction { constant, binomial };

/// Position of an (ear, frequency) cell within a complete bilateral cluster,
/// zero based: (ear 1, freq 1), (ear 2, freq 1), (ear 1, freq 2), ...
inline int cell_position(int ear, int freq) { return 2 * (freq - 1) + (ear - 1); }

/// One participant's measurements.
///
/// Rows are stored in canonical order (frequency, then ear) no matter how
/// they were supplied. `x` holds the expanded design, one row per
/// measurement. Each (ear, frequency) cell may appear at most once; a cluster
/// need not be complete, but `is_complete` tells whether it holds all 2Q cells.
class ClusterData {
public:
    ClusterData(std::string participant_id, VectorXd y, MatrixXd x,
                VectorXi ear_index, VectorXi freq_index);

    const std::string& participant_id() const { return id_; }
    const VectorXd& y() const { return y_; }
    const MatrixXd& x() const { return x_; }
    const VectorXi& ear_index() const { return ear_; }
    const VectorXi& freq_index() const { return freq_; }
    int size() const { return static_cast<int>(y_.size()); }
    int n_columns() const { return static_cast<int>(x_.cols()); }

    bool is_complete(int freq_levels) const;

    /// Same cluster with a different outcome vector (rows in canonical order).
    ClusterData with_outcome(VectorXd y) const;

private:
    std::string id_;
    VectorXd y_;
    MatrixXd x_;
    VectorXi ear_;
    VectorXi freq_;
};

struct Covariate {
    std::string name;
    bool interact_with_frequency = false;
    bool ear_level = false;
};

struct MeanModelSpec {
    Link link = Link::identity;
    VarianceFunction variance = VarianceFunction::constant;
    int freq_levels = 2;
    std::vector<Covariate> covariates;

    /// Gaussian identity model, or logit with binomial variance.
    static MeanModelSpec for_link(Link link, int freq_levels,
                                  std::vector<Covariate> covariates);

    int n_columns() const;
    std::vector<std::string> column_names() const;
};

/// Builds the mean-model design: intercept, indicators for frequencies
/// 2..Q, the base covariates, then one interaction column per flagged
/// covariate per non-reference frequency (covariate-major, in declaration
/// order). Throws std::invalid_argument naming the row on a frequency outside
/// 1..Q or a column count mismatch.
MatrixXd expand_design(const MatrixXd& raw_covariates, const VectorXi& freq_index,
                       const MeanModelSpec& spec);

struct MeanDerivative {
    double mu = 0.0;
    VectorXd dmu_dbeta;
};

MeanDerivative mean_and_derivative(const Eigen::Ref<const VectorXd>& design_row,
                                   const Eigen::Ref<const VectorXd>& beta, Link link);

double variance_function(double mu, VarianceFunction variance);

std::string to_string(Link link);

}  // namespace bgee
