#include "bgee/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

namespace bgee {

ClusterData::ClusterData(std::string participant_id, VectorXd y, MatrixXd x,
                         VectorXi ear_index, VectorXi freq_index)
    : id_(std::move(participant_id)) {
    const auto n = y.size();
    if (x.rows() != n || ear_index.size() != n || freq_index.size() != n) {
        throw std::invalid_argument("cluster " + id_ +
                                    ": y, x, ear and frequency lengths differ");
    }
    if (n == 0) {
        throw std::invalid_argument("cluster " + id_ + " has no observations");
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::set<std::pair<int, int>> seen;
    for (int i = 0; i < n; ++i) {
        if (ear_index(i) != 1 && ear_index(i) != 2) {
            throw std::invalid_argument("cluster " + id_ + ": ear must be 1 or 2, got " +
                                        std::to_string(ear_index(i)));
        }
        if (freq_index(i) < 1) {
            throw std::invalid_argument("cluster " + id_ + ": frequency must be >= 1, got " +
                                        std::to_string(freq_index(i)));
        }
        if (!seen.emplace(freq_index(i), ear_index(i)).second) {
            throw std::invalid_argument("cluster " + id_ + ": duplicate cell (ear " +
                                        std::to_string(ear_index(i)) + ", frequency " +
                                        std::to_string(freq_index(i)) + ")");
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::pair(freq_index(a), ear_index(a)) < std::pair(freq_index(b), ear_index(b));
    });

    y_.resize(n);
    x_.resize(n, x.cols());
    ear_.resize(n);
    freq_.resize(n);
    for (int i = 0; i < n; ++i) {
        const int src = order[static_cast<std::size_t>(i)];
        y_(i) = y(src);
        x_.row(i) = x.row(src);
        ear_(i) = ear_index(src);
        freq_(i) = freq_index(src);
    }
}

bool ClusterData::is_complete(int freq_levels) const {
    if (size() != 2 * freq_levels) return false;
    for (int i = 0; i < size(); ++i) {
        if (cell_position(ear_(i), freq_(i)) != i) return false;
    }
    return true;
}

ClusterData ClusterData::with_outcome(VectorXd y) const {
    if (y.size() != y_.size()) {
        throw std::invalid_argument("cluster " + id_ + ": replacement outcome has wrong length");
    }
    ClusterData copy = *this;
    copy.y_ = std::move(y);
    return copy;
}

MeanModelSpec MeanModelSpec::for_link(Link link, int freq_levels,
                                      std::vector<Covariate> covariates) {
    MeanModelSpec spec;
    spec.link = link;
    spec.variance = link == Link::logit ? VarianceFunction::binomial : VarianceFunction::constant;
    spec.freq_levels = freq_levels;
    spec.covariates = std::move(covariates);
    return spec;
}

int MeanModelSpec::n_columns() const {
    const int q = freq_levels;
    const auto flagged = std::count_if(covariates.begin(), covariates.end(),
                                       [](const Covariate& c) { return c.interact_with_frequency; });
    return 1 + (q - 1) + static_cast<int>(covariates.size()) + static_cast<int>(flagged) * (q - 1);
}

std::vector<std::string> MeanModelSpec::column_names() const {
    std::vector<std::string> names{"(Intercept)"};
    for (int q = 2; q <= freq_levels; ++q) names.push_back("freq" + std::to_string(q));
    for (const auto& c : covariates) names.push_back(c.name);
    for (const auto& c : covariates) {
        if (!c.interact_with_frequency) continue;
        for (int q = 2; q <= freq_levels; ++q) {
            names.push_back(c.name + ":freq" + std::to_string(q));
        }
    }
    return names;
}

MatrixXd expand_design(const MatrixXd& raw_covariates, const VectorXi& freq_index,
                       const MeanModelSpec& spec) {
    const int q_levels = spec.freq_levels;
    if (q_levels < 1) throw std::invalid_argument("frequency levels must be >= 1");
    const int n_cov = static_cast<int>(spec.covariates.size());
    if (raw_covariates.cols() != n_cov) {
        throw std::invalid_argument("expected " + std::to_string(n_cov) +
                                    " covariate columns, got " +
                                    std::to_string(raw_covariates.cols()));
    }
    if (raw_covariates.rows() != freq_index.size()) {
        throw std::invalid_argument("covariate rows and frequency index lengths differ");
    }

    const auto rows = raw_covariates.rows();
    MatrixXd design = MatrixXd::Zero(rows, spec.n_columns());
    for (Eigen::Index r = 0; r < rows; ++r) {
        const int q = freq_index(r);
        if (q < 1 || q > q_levels) {
            throw std::invalid_argument("row " + std::to_string(r) + ": frequency index " +
                                        std::to_string(q) + " outside 1.." +
                                        std::to_string(q_levels));
        }
        int col = 0;
        design(r, col++) = 1.0;
        for (int level = 2; level <= q_levels; ++level) {
            design(r, col++) = q == level ? 1.0 : 0.0;
        }
        for (int c = 0; c < n_cov; ++c) design(r, col++) = raw_covariates(r, c);
        for (int c = 0; c < n_cov; ++c) {
            if (!spec.covariates[static_cast<std::size_t>(c)].interact_with_frequency) continue;
            for (int level = 2; level <= q_levels; ++level) {
                design(r, col++) = q == level ? raw_covariates(r, c) : 0.0;
            }
        }
    }
    return design;
}

MeanDerivative mean_and_derivative(const Eigen::Ref<const VectorXd>& design_row,
                                   const Eigen::Ref<const VectorXd>& beta, Link link) {
    if (design_row.size() != beta.size()) {
        throw std::invalid_argument("design row and coefficient lengths differ");
    }
    const double eta = design_row.dot(beta);
    MeanDerivative out;
    switch (link) {
    case Link::identity:
        out.mu = eta;
        out.dmu_dbeta = design_row;
        break;
    case Link::logit: {
        // Split by sign so exp never overflows.
        const double mu = eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta))
                                     : std::exp(eta) / (1.0 + std::exp(eta));
        out.mu = mu;
        out.dmu_dbeta = mu * (1.0 - mu) * design_row;
        break;
    }
    }
    return out;
}

double variance_function(double mu, VarianceFunction variance) {
    switch (variance) {
    case VarianceFunction::constant: return 1.0;
    case VarianceFunction::binomial: return mu * (1.0 - mu);
    }
    return 1.0;
}

std::string to_string(Link link) {
    return link == Link::identity ? "identity" : "logit";
}

}  // namespace bgee
