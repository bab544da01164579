#include "bgee/estimator.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace bgee {

namespace {

std::vector<int> layout_key(const ClusterData& cl) {
    std::vector<int> key(static_cast<std::size_t>(cl.size()));
    for (int p = 0; p < cl.size(); ++p) {
        key[static_cast<std::size_t>(p)] = cell_position(cl.ear_index()(p), cl.freq_index()(p));
    }
    return key;
}

// Cholesky factors of R_i, one per distinct cell layout. A 1e-10 ridge is
// added when R is numerically singular. With allow_indefinite, R is factored
// by pivoted LU instead.
class CorrelationFactors {
public:
    CorrelationFactors(std::span<const ClusterData> clusters, const CorrelationSpec& corr,
                       bool allow_indefinite = false)
        : independent_(corr.kind() == CorrelationKind::independence),
          indefinite_(allow_indefinite) {
        if (independent_) return;
        index_.reserve(clusters.size());
        for (const auto& cl : clusters) {
            auto [it, inserted] = lookup_.emplace(layout_key(cl), index_of_new());
            if (inserted) {
                if (indefinite_) {
                    add_lu(materialize_unchecked(corr, cl.ear_index(), cl.freq_index()), cl);
                } else {
                    add_llt(materialize(corr, cl.ear_index(), cl.freq_index()), cl);
                }
            }
            index_.push_back(it->second);
        }
    }

    // Replaces `m` with R_i^{-1} m.
    template <typename Derived>
    void solve_in_place(std::size_t cluster, Eigen::MatrixBase<Derived>& m) const {
        if (independent_) return;
        if (indefinite_) {
            m = lu_[index_[cluster]].solve(m);
        } else {
            llt_[index_[cluster]].solveInPlace(m);
        }
    }

private:
    std::size_t index_of_new() const { return indefinite_ ? lu_.size() : llt_.size(); }

    void add_llt(MatrixXd r, const ClusterData& cl) {
        Eigen::LLT<MatrixXd> llt(r);
        if (llt.info() != Eigen::Success) {
            r.diagonal().array() += 1e-10;
            llt.compute(r);
            if (llt.info() != Eigen::Success) singular(cl);
        }
        llt_.push_back(std::move(llt));
    }

    void add_lu(const MatrixXd& r, const ClusterData& cl) {
        Eigen::PartialPivLU<MatrixXd> lu(r);
        const VectorXd d = lu.matrixLU().diagonal().cwiseAbs();
        if (!(d.minCoeff() > 1e-12 * std::max(1.0, d.maxCoeff()))) singular(cl);
        lu_.push_back(std::move(lu));
    }

    [[noreturn]] static void singular(const ClusterData& cl) {
        throw std::domain_error("working correlation is singular for cluster " + cl.participant_id());
    }

    bool independent_;
    bool indefinite_;
    std::map<std::vector<int>, std::size_t> lookup_;
    std::vector<Eigen::LLT<MatrixXd>> llt_;
    std::vector<Eigen::PartialPivLU<MatrixXd>> lu_;
    std::vector<std::size_t> index_;
};

// Standardised pieces of one cluster: D and Y - mu scaled by A^{-1/2}.
struct StandardisedCluster {
    MatrixXd d;
    VectorXd r;
};

StandardisedCluster standardise(const ClusterData& cl, const MeanModelSpec& model,
                                const VectorXd& beta, double dispersion) {
    const int n = cl.size();
    StandardisedCluster out{MatrixXd(n, beta.size()), VectorXd(n)};
    for (int p = 0; p < n; ++p) {
        const MeanDerivative md = mean_and_derivative(cl.x().row(p).transpose(), beta, model.link);
        const double v = dispersion * variance_function(md.mu, model.variance);
        if (!(v > 0.0)) {
            throw std::domain_error("non-positive variance in cluster " + cl.participant_id());
        }
        const double scale = 1.0 / std::sqrt(v);
        out.d.row(p) = scale * md.dmu_dbeta.transpose();
        out.r(p) = scale * (cl.y()(p) - md.mu);
    }
    return out;
}

struct Accumulated {
    MatrixXd information;  // Sigma0
    VectorXd score;        // U
    MatrixXd meat;         // Sigma1
};

Accumulated accumulate(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                       const CorrelationFactors& factors, const VectorXd& beta,
                       double dispersion, bool with_meat) {
    const auto k = beta.size();
    Accumulated acc{MatrixXd::Zero(k, k), VectorXd::Zero(k),
                    with_meat ? MatrixXd::Zero(k, k) : MatrixXd()};
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        StandardisedCluster sc = standardise(clusters[i], model, beta, dispersion);
        MatrixXd w = sc.d;
        factors.solve_in_place(i, w);
        acc.information.noalias() += sc.d.transpose() * w;
        const VectorXd u = w.transpose() * sc.r;
        acc.score += u;
        if (with_meat) acc.meat.noalias() += u * u.transpose();
    }
    acc.information = 0.5 * (acc.information + acc.information.transpose());
    return acc;
}

// With `indefinite`, the information matrix only needs to be invertible.
void check_rank(const MatrixXd& information, const std::vector<std::string>& names,
                bool indefinite = false) {
    const auto k = information.rows();
    VectorXd scale(k);
    std::vector<int> zero_columns;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double d = indefinite ? std::abs(information(j, j)) : information(j, j);
        if (!(d > 0.0) || !std::isfinite(d)) zero_columns.push_back(static_cast<int>(j));
        scale(j) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    auto column_label = [&](int j) {
        return j < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                  : "column " + std::to_string(j);
    };
    auto fail = [&](std::vector<int> cols, const std::string& what) {
        std::ostringstream os;
        os << what << ":";
        for (int c : cols) os << " " << column_label(c);
        throw RankDeficientError(os.str(), std::move(cols));
    };
    if (!zero_columns.empty()) fail(zero_columns, "design has columns with no information");

    const MatrixXd scaled = scale.asDiagonal() * information * scale.asDiagonal();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(scaled);
    Eigen::Index at = 0;
    const double lo = indefinite ? eig.eigenvalues().cwiseAbs().minCoeff(&at) : eig.eigenvalues()(0);
    const double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (lo < 1e-12 * std::max(1.0, hi)) {
        const VectorXd v = eig.eigenvectors().col(at);
        std::vector<int> cols;
        for (Eigen::Index j = 0; j < k; ++j)
            if (std::abs(v(j)) > 0.1) cols.push_back(static_cast<int>(j));
        fail(cols, "information matrix is singular; near-collinear columns");
    }
}

MatrixXd symmetric_inverse(const MatrixXd& m) {
    const MatrixXd inv = m.ldlt().solve(MatrixXd::Identity(m.rows(), m.cols()));
    return 0.5 * (inv + inv.transpose());
}

int total_observations(std::span<const ClusterData> clusters) {
    int total = 0;
    for (const auto& cl : clusters) total += cl.size();
    return total;
}

void require_columns(std::span<const ClusterData> clusters, Eigen::Index k) {
    if (clusters.empty()) throw std::invalid_argument("no clusters to fit");
    for (const auto& cl : clusters) {
        if (cl.n_columns() != k) {
            throw std::invalid_argument("cluster " + cl.participant_id() + " has " +
                                        std::to_string(cl.n_columns()) +
                                        " design columns, expected " + std::to_string(k));
        }
    }
}

}  // namespace

double estimate_dispersion(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                           const VectorXd& beta) {
    double sum = 0.0;
    for (const auto& r : pearson_residuals(clusters, model, beta, 1.0)) sum += r.squaredNorm();
    const double dof = total_observations(clusters) - static_cast<double>(beta.size());
    if (dof <= 0.0 || !(sum > 0.0)) return 1.0;
    return sum / dof;
}

std::vector<VectorXd> pearson_residuals(std::span<const ClusterData> clusters,
                                        const MeanModelSpec& model, const VectorXd& beta,
                                        double dispersion) {
    if (!(dispersion > 0.0)) throw std::domain_error("dispersion must be positive");
    std::vector<VectorXd> out;
    out.reserve(clusters.size());
    for (const auto& cl : clusters) out.push_back(standardise(cl, model, beta, dispersion).r);
    return out;
}

VectorXd gee_score(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                   const CorrelationSpec& corr, const VectorXd& beta, double dispersion,
                   bool allow_indefinite) {
    require_columns(clusters, beta.size());
    const CorrelationFactors factors(clusters, corr, allow_indefinite);
    return accumulate(clusters, model, factors, beta, dispersion, false).score;
}

VectorXd initial_beta(std::span<const ClusterData> clusters, const MeanModelSpec& model) {
    if (clusters.empty()) throw std::invalid_argument("no clusters to fit");
    const auto k = clusters.front().n_columns();
    if (model.link != Link::identity) return VectorXd::Zero(k);
    MatrixXd xtx = MatrixXd::Zero(k, k);
    VectorXd xty = VectorXd::Zero(k);
    for (const auto& cl : clusters) {
        xtx.noalias() += cl.x().transpose() * cl.x();
        xty.noalias() += cl.x().transpose() * cl.y();
    }
    Eigen::LDLT<MatrixXd> ldlt(xtx);
    if (ldlt.info() != Eigen::Success) return VectorXd::Zero(k);
    return ldlt.solve(xty);
}

GeeFit solve_gee(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                 const CorrelationSpec& corr, const VectorXd& beta_init,
                 const SolverOptions& options) {
    require_columns(clusters, beta_init.size());
    const CorrelationFactors factors(clusters, corr, options.allow_indefinite);

    GeeFit fit;
    fit.correlation = corr;
    fit.indefinite_correlation = options.allow_indefinite;
    fit.n_clusters = static_cast<int>(clusters.size());
    fit.beta = beta_init;

    Accumulated acc;
    for (int iter = 0;; ++iter) {
        fit.dispersion = estimate_dispersion(clusters, model, fit.beta);
        acc = accumulate(clusters, model, factors, fit.beta, fit.dispersion, false);
        fit.score_norm = acc.score.lpNorm<Eigen::Infinity>();
        fit.iterations = iter;
        if (fit.score_norm < options.tolerance) {
            fit.converged = true;
            break;
        }
        if (iter == options.max_iterations) break;
        check_rank(acc.information, options.column_names, options.allow_indefinite);
        fit.beta += acc.information.ldlt().solve(acc.score);
        if (!fit.beta.allFinite()) {
            fit.warnings.push_back("coefficients diverged");
            break;
        }
    }

    if (fit.beta.allFinite()) {
        check_rank(acc.information, options.column_names, options.allow_indefinite);
        const Covariances cov = sandwich(clusters, model, fit);
        fit.naive_cov = cov.naive;
        fit.sandwich_cov = cov.sandwich;
    }
    return fit;
}

Covariances sandwich(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                     const GeeFit& fit) {
    require_columns(clusters, fit.beta.size());
    const CorrelationFactors factors(clusters, fit.correlation, fit.indefinite_correlation);
    const Accumulated acc = accumulate(clusters, model, factors, fit.beta, fit.dispersion, true);
    Eigen::LDLT<MatrixXd> ldlt(acc.information);
    const bool invertible = fit.indefinite_correlation
                                ? (ldlt.vectorD().array() != 0.0).all()
                                : (ldlt.vectorD().array() > 0.0).all();
    if (ldlt.info() != Eigen::Success || !invertible) {
        throw RankDeficientError("Sigma0 is singular", {});
    }
    Covariances out;
    out.naive = symmetric_inverse(acc.information);
    const MatrixXd s = out.naive * acc.meat * out.naive;
    out.sandwich = 0.5 * (s + s.transpose());
    return out;
}

GeeFit fit_gee_moment(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                      CorrelationKind kind, const MomentOptions& options) {
    if (kind != CorrelationKind::exchangeable && kind != CorrelationKind::unstructured) {
        throw std::invalid_argument("moment iteration needs exchangeable or unstructured");
    }
    std::vector<VectorXi> positions;
    positions.reserve(clusters.size());
    for (const auto& cl : clusters) {
        VectorXi pos(cl.size());
        for (int p = 0; p < cl.size(); ++p) pos(p) = cell_position(cl.ear_index()(p), cl.freq_index()(p));
        positions.push_back(std::move(pos));
    }

    GeeFit fit = solve_gee(clusters, model, CorrelationSpec::independence(),
                           initial_beta(clusters, model), options.solver);
    const int k = static_cast<int>(fit.beta.size());
    bool settled = false;
    bool flagged = false;
    int rounds = 0;
    std::vector<std::string> notes;
    while (rounds < options.max_rounds) {
        ++rounds;
        const auto residuals = pearson_residuals(clusters, model, fit.beta, fit.dispersion);
        const CorrelationSpec corr = moment_estimate(residuals, kind, k, positions);
        if (options.solver.allow_indefinite && !flagged && kind == CorrelationKind::unstructured &&
            min_eigenvalue(corr.by_position()) < -1e-8) {
            notes.push_back("moment-estimated correlation is not positive semi-definite");
            flagged = true;
        }
        const VectorXd previous = fit.beta;
        fit = solve_gee(clusters, model, corr, previous, options.solver);
        if (!fit.converged) break;
        if ((fit.beta - previous).lpNorm<Eigen::Infinity>() < options.tolerance) {
            settled = true;
            break;
        }
    }
    fit.rounds = rounds;
    fit.warnings.insert(fit.warnings.begin(), notes.begin(), notes.end());
    if (!settled) {
        fit.warnings.push_back("correlation/coefficient alternation did not settle");
        fit.converged = false;
    }
    return fit;
}

GeeFit fit_gee15(std::span<const ClusterData> clusters, const MeanModelSpec& model,
                 const Gee15Options& options) {
    if (clusters.size() < 2) throw std::invalid_argument("GEE1.5 needs at least two clusters");

    GeeFit fit = solve_gee(clusters, model, CorrelationSpec::independence(),
                           initial_beta(clusters, model), options.solver);
    if (!fit.converged) {
        fit.warnings.push_back("independence starting fit did not converge");
        return fit;
    }

    const int cap = options.fixed_rounds.value_or(options.max_rounds);
    AlphaTransformed eta;  // alpha = 0.5 per component
    int alpha_iterations = 0;
    bool settled = options.fixed_rounds.has_value();
    int rounds = 0;
    for (; rounds < cap; ++rounds) {
        std::string failure;
        AlphaSolveResult alpha;
        try {
            alpha = solve_alpha(clusters, fit.beta, model, eta, options.alpha);
            alpha_iterations += alpha.iterations;
            if (!alpha.converged) failure = alpha.message;
        } catch (const std::exception& e) {
            failure = e.what();
        }
        GeeFit next;
        if (failure.empty()) {
            try {
                next = solve_gee(clusters, model, alpha.correlation, fit.beta, options.solver);
            } catch (const std::domain_error& e) {
                failure = e.what();
            }
        }
        if (!failure.empty()) {
            GeeFit fallback = fit_gee_moment(clusters, model, CorrelationKind::exchangeable,
                                             {.solver = options.solver});
            fallback.correlation_fallback = true;
            fallback.warnings.push_back("ear-frequency correlation unavailable (" + failure +
                                        "); fell back to exchangeable");
            fallback.alpha_iterations = alpha_iterations;
            return fallback;
        }
        eta = alpha.eta;
        const double change = (next.beta - fit.beta).lpNorm<Eigen::Infinity>();
        fit = std::move(next);
        if (!fit.converged) break;
        if (!options.fixed_rounds && change < options.tolerance) {
            settled = true;
            ++rounds;
            break;
        }
    }
    fit.rounds = rounds;
    fit.alpha_iterations = alpha_iterations;
    if (!settled && fit.converged) {
        fit.warnings.push_back("GEE1.5 rounds stopped at the cap of " + std::to_string(cap));
    }
    return fit;
}

GeeFit fit_gee(std::span<const ClusterData> clusters, const MeanModelSpec& model,
               CorrelationKind kind, const Gee15Options& options) {
    switch (kind) {
    case CorrelationKind::independence:
        return solve_gee(clusters, model, CorrelationSpec::independence(),
                         initial_beta(clusters, model), options.solver);
    case CorrelationKind::exchangeable:
    case CorrelationKind::unstructured:
        return fit_gee_moment(clusters, model, kind, {.solver = options.solver});
    case CorrelationKind::ear_freq: return fit_gee15(clusters, model, options);
    }
    throw std::invalid_argument("unknown correlation kind");
}

double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

std::vector<WaldInterval> wald_intervals(const GeeFit& fit, double level, bool use_naive) {
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
    const MatrixXd& cov = use_naive ? fit.naive_cov : fit.sandwich_cov;
    const double z = normal_quantile(0.5 * (1.0 + level));
    std::vector<WaldInterval> out;
    for (Eigen::Index j = 0; j < fit.beta.size(); ++j) {
        WaldInterval w;
        w.estimate = fit.beta(j);
        w.se = std::sqrt(std::max(0.0, cov(j, j)));
        w.lower = w.estimate - z * w.se;
        w.upper = w.estimate + z * w.se;
        out.push_back(w);
    }
    return out;
}

}  // namespace bgee
