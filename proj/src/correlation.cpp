#include "bgee/correlation.hpp"

#include "bgee/estimator.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace bgee {

std::string to_string(CorrelationKind kind) {
    switch (kind) {
    case CorrelationKind::independence: return "independence";
    case CorrelationKind::exchangeable: return "exchangeable";
    case CorrelationKind::unstructured: return "unstructured";
    case CorrelationKind::ear_freq: return "ear-freq";
    }
    return "unknown";
}

CorrelationKind parse_correlation_kind(const std::string& text) {
    if (text == "independence" || text == "ind") return CorrelationKind::independence;
    if (text == "exchangeable" || text == "exch") return CorrelationKind::exchangeable;
    if (text == "unstructured" || text == "uns") return CorrelationKind::unstructured;
    if (text == "ear-freq" || text == "ear_freq") return CorrelationKind::ear_freq;
    throw std::invalid_argument("unknown correlation structure '" + text + "'");
}

CorrelationSpec CorrelationSpec::independence() { return {}; }

CorrelationSpec CorrelationSpec::exchangeable(double rho) {
    CorrelationSpec spec;
    spec.kind_ = CorrelationKind::exchangeable;
    spec.rho_ = rho;
    return spec;
}

CorrelationSpec CorrelationSpec::unstructured(MatrixXd by_position) {
    if (by_position.rows() != by_position.cols()) {
        throw std::invalid_argument("unstructured correlation must be square");
    }
    CorrelationSpec spec;
    spec.kind_ = CorrelationKind::unstructured;
    spec.matrix_ = 0.5 * (by_position + by_position.transpose());
    spec.matrix_.diagonal().setOnes();
    return spec;
}

CorrelationSpec CorrelationSpec::ear_freq(EarFreqAlpha alpha) {
    for (double a : {alpha.base, alpha.ear, alpha.freq}) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw std::invalid_argument("ear-frequency parameters must lie in [0, 1]");
        }
    }
    CorrelationSpec spec;
    spec.kind_ = CorrelationKind::ear_freq;
    spec.alpha_ = alpha;
    return spec;
}

double logistic(double eta) {
    return eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

AlphaTransformed AlphaTransformed::from_alpha(const EarFreqAlpha& alpha) {
    AlphaTransformed out;
    const double values[3] = {alpha.base, alpha.ear, alpha.freq};
    for (int c = 0; c < 3; ++c) {
        const double a = values[c];
        if (!(a > 0.0 && a < 1.0)) {
            throw std::invalid_argument("alpha must lie strictly inside (0, 1) to transform");
        }
        out.eta(c) = std::log(a / (1.0 - a));
    }
    return out;
}

EarFreqAlpha AlphaTransformed::alpha() const {
    return {logistic(eta(0)), logistic(eta(1)), logistic(eta(2))};
}

namespace {

double ear_freq_rho(const EarFreqAlpha& a, bool same_ear, bool same_freq) {
    double factor = a.base;
    if (same_ear) factor *= a.ear;
    if (same_freq) factor *= a.freq;
    return 1.0 - factor;
}

std::string describe(const CorrelationSpec& spec) {
    std::ostringstream os;
    os << to_string(spec.kind());
    switch (spec.kind()) {
    case CorrelationKind::exchangeable: os << "(rho=" << spec.rho() << ")"; break;
    case CorrelationKind::ear_freq:
        os << "(alpha0=" << spec.alpha().base << ", alpha_e=" << spec.alpha().ear
           << ", alpha_f=" << spec.alpha().freq << ")";
        break;
    default: break;
    }
    return os.str();
}

}  // namespace

MatrixXd materialize_unchecked(const CorrelationSpec& spec, const VectorXi& ear_index,
                               const VectorXi& freq_index) {
    if (ear_index.size() != freq_index.size()) {
        throw std::invalid_argument("ear and frequency index lengths differ");
    }
    const auto n = ear_index.size();
    MatrixXd r = MatrixXd::Identity(n, n);
    switch (spec.kind()) {
    case CorrelationKind::independence: break;
    case CorrelationKind::exchangeable:
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b)
                if (a != b) r(a, b) = spec.rho();
        break;
    case CorrelationKind::unstructured: {
        const MatrixXd& m = spec.by_position();
        for (Eigen::Index a = 0; a < n; ++a) {
            const int pa = cell_position(ear_index(a), freq_index(a));
            if (pa < 0 || pa >= m.rows()) {
                throw std::invalid_argument("cell outside the unstructured correlation matrix");
            }
            for (Eigen::Index b = 0; b < n; ++b) {
                if (a == b) continue;
                r(a, b) = m(pa, cell_position(ear_index(b), freq_index(b)));
            }
        }
        break;
    }
    case CorrelationKind::ear_freq:
        for (Eigen::Index a = 0; a < n; ++a)
            for (Eigen::Index b = 0; b < n; ++b)
                if (a != b)
                    r(a, b) = ear_freq_rho(spec.alpha(), ear_index(a) == ear_index(b),
                                           freq_index(a) == freq_index(b));
        break;
    }
    return r;
}

double min_eigenvalue(const MatrixXd& symmetric) {
    if (symmetric.size() == 0) return 1.0;
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

MatrixXd materialize(const CorrelationSpec& spec, const VectorXi& ear_index,
                     const VectorXi& freq_index) {
    MatrixXd r = materialize_unchecked(spec, ear_index, freq_index);
    if (spec.kind() != CorrelationKind::independence) {
        const double lambda = min_eigenvalue(r);
        if (lambda < -1e-8) {
            std::ostringstream os;
            os << "working correlation " << describe(spec)
               << " is not positive semi-definite (min eigenvalue " << lambda << ")";
            throw std::domain_error(os.str());
        }
    }
    return r;
}

CorrelationSpec moment_estimate(std::span<const VectorXd> pearson_residuals,
                                CorrelationKind kind, int k,
                                std::span<const VectorXi> positions) {
    if (!positions.empty() && positions.size() != pearson_residuals.size()) {
        throw std::invalid_argument("positions must be given for every cluster");
    }
    auto position_of = [&](std::size_t i, Eigen::Index p) {
        return positions.empty() ? static_cast<int>(p) : positions[i](p);
    };

    if (kind == CorrelationKind::exchangeable) {
        double numerator = 0.0;
        double n_pairs = 0.0;
        for (const auto& r : pearson_residuals) {
            const auto n = r.size();
            for (Eigen::Index a = 0; a < n; ++a)
                for (Eigen::Index b = a + 1; b < n; ++b) numerator += r(a) * r(b);
            n_pairs += 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
        }
        if (n_pairs <= k) {
            throw std::invalid_argument("exchangeable moment estimate needs more pairs (" +
                                        std::to_string(static_cast<long long>(n_pairs)) +
                                        ") than mean parameters (" + std::to_string(k) + ")");
        }
        return CorrelationSpec::exchangeable(numerator / (n_pairs - k));
    }

    if (kind == CorrelationKind::unstructured) {
        int dim = 0;
        for (std::size_t i = 0; i < pearson_residuals.size(); ++i)
            for (Eigen::Index p = 0; p < pearson_residuals[i].size(); ++p)
                dim = std::max(dim, position_of(i, p) + 1);
        MatrixXd sums = MatrixXd::Zero(dim, dim);
        MatrixXd counts = MatrixXd::Zero(dim, dim);
        for (std::size_t i = 0; i < pearson_residuals.size(); ++i) {
            const VectorXd& r = pearson_residuals[i];
            for (Eigen::Index a = 0; a < r.size(); ++a) {
                for (Eigen::Index b = a + 1; b < r.size(); ++b) {
                    const int pa = position_of(i, a);
                    const int pb = position_of(i, b);
                    sums(pa, pb) += r(a) * r(b);
                    counts(pa, pb) += 1.0;
                }
            }
        }
        MatrixXd rho = MatrixXd::Identity(dim, dim);
        bool any_pair = false;
        for (int a = 0; a < dim; ++a) {
            for (int b = 0; b < dim; ++b) {
                if (a == b) continue;
                const double c = counts(a, b) + counts(b, a);
                if (c == 0.0) continue;
                if (c <= k) {
                    throw std::invalid_argument(
                        "unstructured moment estimate: cell pair (" + std::to_string(a) + ", " +
                        std::to_string(b) + ") observed in " + std::to_string(static_cast<int>(c)) +
                        " clusters, not more than k=" + std::to_string(k));
                }
                rho(a, b) = (sums(a, b) + sums(b, a)) / (c - k);
                any_pair = true;
            }
        }
        if (!any_pair) {
            throw std::invalid_argument("unstructured moment estimate: no within-cluster pairs");
        }
        return CorrelationSpec::unstructured(rho);
    }

    throw std::invalid_argument("moment estimation supports exchangeable and unstructured only");
}

RhoJacobian rho_vector_and_jacobian(const AlphaTransformed& alpha, const VectorXi& ear_index,
                                    const VectorXi& freq_index) {
    if (ear_index.size() != freq_index.size()) {
        throw std::invalid_argument("ear and frequency index lengths differ");
    }
    const EarFreqAlpha a = alpha.alpha();
    const Eigen::Vector3d chain(a.base * (1.0 - a.base), a.ear * (1.0 - a.ear),
                                a.freq * (1.0 - a.freq));
    const auto n = ear_index.size();
    const auto n_pairs = n * (n - 1) / 2;
    RhoJacobian out{VectorXd(n_pairs), MatrixXd(n_pairs, 3)};
    Eigen::Index pair = 0;
    for (Eigen::Index p1 = 0; p1 < n; ++p1) {
        for (Eigen::Index p2 = p1 + 1; p2 < n; ++p2, ++pair) {
            const bool same_ear = ear_index(p1) == ear_index(p2);
            const bool same_freq = freq_index(p1) == freq_index(p2);
            const double ear_factor = same_ear ? a.ear : 1.0;
            const double freq_factor = same_freq ? a.freq : 1.0;
            out.rho(pair) = 1.0 - a.base * ear_factor * freq_factor;
            out.jacobian(pair, 0) = -ear_factor * freq_factor * chain(0);
            out.jacobian(pair, 1) = same_ear ? -a.base * freq_factor * chain(1) : 0.0;
            out.jacobian(pair, 2) = same_freq ? -a.base * ear_factor * chain(2) : 0.0;
        }
    }
    return out;
}

namespace {

// Clusters sharing one cell layout share rho(eta) and its Jacobian, so the
// estimating equation only needs per-layout sums of the cross-products.
struct LayoutMoments {
    VectorXi ear;
    VectorXi freq;
    double count = 0.0;
    VectorXd z_sum;
    std::vector<VectorXd> z_all;  // kept only for the pooled-covariance option
    MatrixXd weight;              // identity unless pooled covariance is requested
};

struct AlphaEquation {
    Eigen::Vector3d score = Eigen::Vector3d::Zero();
    Eigen::Matrix3d information = Eigen::Matrix3d::Zero();
};

AlphaEquation evaluate_alpha_equation(const std::vector<LayoutMoments>& layouts,
                                      const Eigen::Vector3d& eta) {
    AlphaEquation eq;
    AlphaTransformed at{eta};
    for (const auto& layout : layouts) {
        const RhoJacobian rj = rho_vector_and_jacobian(at, layout.ear, layout.freq);
        const MatrixXd wj = layout.weight.size() ? MatrixXd(layout.weight * rj.jacobian)
                                                 : rj.jacobian;
        eq.score += wj.transpose() * (layout.z_sum - layout.count * rj.rho);
        eq.information += layout.count * (rj.jacobian.transpose() * wj);
    }
    return eq;
}

// Components pinned at a bound with the score pushing outward are inactive.
std::array<bool, 3> free_components(const Eigen::Vector3d& eta, const Eigen::Vector3d& score,
                                    double bound) {
    std::array<bool, 3> free{};
    for (int c = 0; c < 3; ++c) {
        const bool pinned_high = eta(c) >= bound && score(c) > 0.0;
        const bool pinned_low = eta(c) <= -bound && score(c) < 0.0;
        free[static_cast<std::size_t>(c)] = !(pinned_high || pinned_low);
    }
    return free;
}

double projected_norm(const Eigen::Vector3d& eta, const Eigen::Vector3d& score, double bound) {
    const auto free = free_components(eta, score, bound);
    double norm = 0.0;
    for (int c = 0; c < 3; ++c)
        if (free[static_cast<std::size_t>(c)]) norm = std::max(norm, std::abs(score(c)));
    return norm;
}

}  // namespace

AlphaSolveResult solve_alpha(std::span<const ClusterData> clusters, const VectorXd& beta_hat,
                             const MeanModelSpec& model, const AlphaTransformed& init,
                             const AlphaSolverOptions& options) {
    const double phi = estimate_dispersion(clusters, model, beta_hat);
    const std::vector<VectorXd> residuals = pearson_residuals(clusters, model, beta_hat, phi);

    std::map<std::vector<int>, std::size_t> layout_lookup;
    std::vector<LayoutMoments> layouts;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        const ClusterData& cl = clusters[i];
        const int n = cl.size();
        if (n < 2) continue;
        std::vector<int> key;
        for (int p = 0; p < n; ++p) key.push_back(cell_position(cl.ear_index()(p), cl.freq_index()(p)));
        auto [it, inserted] = layout_lookup.emplace(key, layouts.size());
        if (inserted) {
            LayoutMoments lm;
            lm.ear = cl.ear_index();
            lm.freq = cl.freq_index();
            lm.z_sum = VectorXd::Zero(n * (n - 1) / 2);
            layouts.push_back(std::move(lm));
        }
        LayoutMoments& lm = layouts[it->second];
        const VectorXd& r = residuals[i];
        VectorXd z(n * (n - 1) / 2);
        Eigen::Index pair = 0;
        for (int a = 0; a < n; ++a)
            for (int b = a + 1; b < n; ++b) z(pair++) = r(a) * r(b);
        lm.z_sum += z;
        lm.count += 1.0;
        if (options.pooled_z_covariance) lm.z_all.push_back(std::move(z));
    }
    if (layouts.empty()) {
        throw std::invalid_argument("no cluster has two or more observations; alpha is not estimable");
    }
    if (options.pooled_z_covariance) {
        for (auto& lm : layouts) {
            const auto m = lm.z_sum.size();
            if (lm.count <= static_cast<double>(m)) {
                throw std::invalid_argument("pooled cross-product covariance needs more clusters "
                                            "per layout than cell pairs");
            }
            const VectorXd mean = lm.z_sum / lm.count;
            MatrixXd cov = MatrixXd::Zero(m, m);
            for (const auto& z : lm.z_all) cov += (z - mean) * (z - mean).transpose();
            cov /= (lm.count - 1.0);
            cov.diagonal().array() += 1e-10;
            lm.weight = cov.ldlt().solve(MatrixXd::Identity(m, m));
            lm.z_all.clear();
        }
    }

    const double bound = options.eta_bound;
    Eigen::Vector3d eta = init.eta.cwiseMax(-bound).cwiseMin(bound);
    AlphaEquation eq = evaluate_alpha_equation(layouts, eta);
    double norm = projected_norm(eta, eq.score, bound);

    AlphaSolveResult result;
    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        result.iterations = iter;
        const auto free = free_components(eta, eq.score, bound);
        std::vector<int> idx;
        for (int c = 0; c < 3; ++c)
            if (free[static_cast<std::size_t>(c)]) idx.push_back(c);
        if (idx.empty()) {
            result.converged = true;
            break;
        }
        const auto m = static_cast<Eigen::Index>(idx.size());
        MatrixXd h(m, m);
        VectorXd g(m);
        for (Eigen::Index a = 0; a < m; ++a) {
            g(a) = eq.score(idx[static_cast<std::size_t>(a)]);
            for (Eigen::Index b = 0; b < m; ++b)
                h(a, b) = eq.information(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        }
        Eigen::LDLT<MatrixXd> ldlt(h);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-300).all()) {
            result.message = "singular information for alpha";
            break;
        }
        const VectorXd delta_free = ldlt.solve(g);
        Eigen::Vector3d delta = Eigen::Vector3d::Zero();
        for (Eigen::Index a = 0; a < m; ++a) delta(idx[static_cast<std::size_t>(a)]) = delta_free(a);

        double step = 1.0;
        bool accepted = false;
        Eigen::Vector3d candidate;
        AlphaEquation cand_eq;
        double cand_norm = 0.0;
        for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
            candidate = (eta + step * delta).cwiseMax(-bound).cwiseMin(bound);
            cand_eq = evaluate_alpha_equation(layouts, candidate);
            cand_norm = projected_norm(candidate, cand_eq.score, bound);
            if (cand_norm <= norm) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // No descent left: we are at the root to working precision when the
            // full scoring step is already negligible.
            result.converged = delta.lpNorm<Eigen::Infinity>() < 1e-6;
            if (!result.converged) result.message = "step halving failed to reduce the score";
            break;
        }
        const double update = (candidate - eta).lpNorm<Eigen::Infinity>();
        eta = candidate;
        eq = cand_eq;
        norm = cand_norm;
        if (update < options.tolerance) {
            result.converged = true;
            break;
        }
    }
    if (!result.converged && result.message.empty()) {
        std::ostringstream os;
        os << "alpha solver did not converge in " << options.max_iterations
           << " iterations (score norm " << norm << ")";
        result.message = os.str();
    }
    result.eta.eta = eta;
    result.score_norm = norm;
    result.correlation = CorrelationSpec::ear_freq(result.eta.alpha());
    return result;
}

}  // namespace bgee
