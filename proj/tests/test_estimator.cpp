#include "bgee/estimator.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace bgee;
using namespace bgee::testing;

namespace {

std::vector<ClusterData> singleton_clusters(Rng& rng, int n, int q, int p, MeanModelSpec& spec) {
    spec = MeanModelSpec::for_link(Link::identity, q, {});
    for (int j = 0; j < p; ++j) spec.covariates.push_back({"v" + std::to_string(j), j == 0, false});
    std::vector<ClusterData> out;
    for (int i = 0; i < n; ++i) {
        MatrixXd raw(1, p);
        for (int j = 0; j < p; ++j) raw(0, j) = normal_draw(rng);
        VectorXi freq(1), ear(1);
        freq << 1 + i % q;
        ear << 1;
        const MatrixXd x = expand_design(raw, freq, spec);
        VectorXd y(1);
        y << x.row(0).sum() + (1.0 + std::abs(raw.sum())) * normal_draw(rng);
        out.emplace_back(std::to_string(i), y, x, ear, freq);
    }
    return out;
}

double max_abs(const VectorXd& v) { return v.cwiseAbs().maxCoeff(); }

std::vector<ClusterData> ear_swapped(const std::vector<ClusterData>& clusters) {
    std::vector<ClusterData> out;
    for (const auto& cl : clusters) {
        VectorXi ear = cl.ear_index();
        for (Eigen::Index p = 0; p < ear.size(); ++p) ear(p) = 3 - ear(p);
        out.emplace_back(cl.participant_id(), cl.y(), cl.x(), ear, cl.freq_index());
    }
    return out;
}

}  // namespace

TEST_CASE("independence fit equals least squares and the sandwich equals HC0") {
    Rng rng(101);
    double worst_beta = 0.0, worst_cov = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const int q = 1 + trial % 3, p = 1 + trial % 4, n = 60 + 7 * trial;
        MeanModelSpec spec;
        const auto clusters = singleton_clusters(rng, n, q, p, spec);
        MatrixXd x;
        VectorXd y;
        stack(clusters, x, y);
        const GeeFit fit = fit_gee(clusters, spec, CorrelationKind::independence);
        REQUIRE(fit.converged);
        worst_beta = std::max(worst_beta, max_abs(fit.beta - ols(x, y)));
        worst_cov = std::max(worst_cov, (fit.sandwich_cov - hc0(x, y)).cwiseAbs().maxCoeff());
    }
    CHECK(worst_beta < 1e-8);
    CHECK(worst_cov < 1e-8);
}

TEST_CASE("fixed working correlation reproduces generalised least squares") {
    Rng rng(7);
    const int q = 3;
    const MeanModelSpec spec = random_model(q, 3);
    VectorXd beta = VectorXd::LinSpaced(spec.n_columns(), -1.0, 1.0);
    const MatrixXd r = ear_freq_oracle(0.4, 0.5, 0.6, q);
    const auto clusters = random_clusters(rng, 150, q, 3, spec, beta, r);

    const GeeFit ef = solve_gee(clusters, spec, CorrelationSpec::ear_freq({0.4, 0.5, 0.6}), initial_beta(clusters, spec));
    REQUIRE(ef.converged);
    CHECK(max_abs(ef.beta - gls(clusters, r)) < 1e-9);

    const GeeFit ex = solve_gee(clusters, spec, CorrelationSpec::exchangeable(0.35), initial_beta(clusters, spec));
    CHECK(max_abs(ex.beta - gls(clusters, MatrixXd::Constant(2 * q, 2 * q, 0.35) +
                                              0.65 * MatrixXd::Identity(2 * q, 2 * q))) < 1e-9);

    const GeeFit zero = solve_gee(clusters, spec, CorrelationSpec::exchangeable(0.0), initial_beta(clusters, spec));
    const GeeFit ind = solve_gee(clusters, spec, CorrelationSpec::independence(), initial_beta(clusters, spec));
    CHECK(max_abs(zero.beta - ind.beta) < 1e-10);
}

TEST_CASE("indefinite working correlation is refused unless allowed") {
    Rng rng(8);
    const int q = 2;
    const MeanModelSpec spec = random_model(q, 2);
    const VectorXd beta = VectorXd::Ones(spec.n_columns());
    const auto clusters = random_clusters(rng, 120, q, 2, spec, beta);
    MatrixXd r = MatrixXd::Identity(4, 4);
    r(0, 1) = r(1, 0) = 0.95;
    r(0, 2) = r(2, 0) = 0.95;
    r(1, 2) = r(2, 1) = -0.5;
    REQUIRE(min_eigenvalue(r) < -1e-8);
    const auto spec_r = CorrelationSpec::unstructured(r);
    CHECK_THROWS_AS(solve_gee(clusters, spec, spec_r, initial_beta(clusters, spec)), std::domain_error);

    SolverOptions relaxed;
    relaxed.allow_indefinite = true;
    const GeeFit fit = solve_gee(clusters, spec, spec_r, initial_beta(clusters, spec), relaxed);
    REQUIRE(fit.converged);
    CHECK(fit.indefinite_correlation);
    CHECK(max_abs(fit.beta - gls(clusters, r)) < 1e-9);
    CHECK(max_abs(gee_score(clusters, spec, spec_r, fit.beta, fit.dispersion, true)) < 1e-8);
    CHECK((fit.sandwich_cov - fit.sandwich_cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("converged fits satisfy the estimating equations") {
    Rng rng(9);
    const int q = 2;
    const MeanModelSpec spec = random_model(q, 2);
    const VectorXd beta = VectorXd::LinSpaced(spec.n_columns(), 0.5, -0.5);
    const auto clusters = random_clusters(rng, 300, q, 2, spec, beta, ear_freq_oracle(0.3, 0.5, 0.8, q), 2.0);
    for (auto kind : {CorrelationKind::independence, CorrelationKind::exchangeable, CorrelationKind::unstructured,
                      CorrelationKind::ear_freq}) {
        const GeeFit fit = fit_gee(clusters, spec, kind);
        REQUIRE(fit.converged);
        CHECK(fit.score_norm < 1e-8);
        CHECK(max_abs(gee_score(clusters, spec, fit.correlation, fit.beta, fit.dispersion)) < 1e-8);
        const MatrixXd& s = fit.sandwich_cov;
        CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(min_eigenvalue(s) > -1e-8);
        CHECK(min_eigenvalue(fit.naive_cov) > -1e-8);
    }
}

TEST_CASE("ear-frequency fit recovers the working structure and coefficients") {
    Rng rng(10);
    const int q = 2;
    const MeanModelSpec spec = random_model(q, 2);
    const VectorXd beta = VectorXd::LinSpaced(spec.n_columns(), 1.0, -1.0);
    const auto clusters = random_clusters(rng, 4000, q, 2, spec, beta, ear_freq_oracle(0.5, 0.6, 0.7, q), 1.0);
    const GeeFit fit = fit_gee15(clusters, spec);
    REQUIRE(fit.converged);
    CHECK_FALSE(fit.correlation_fallback);
    CHECK(std::abs(fit.correlation.alpha().base - 0.5) < 0.05);
    CHECK(std::abs(fit.correlation.alpha().ear - 0.6) < 0.05);
    CHECK(std::abs(fit.correlation.alpha().freq - 0.7) < 0.05);
    CHECK(std::abs(fit.dispersion - 1.0) < 0.05);
    const VectorXd se = fit.sandwich_cov.diagonal().cwiseSqrt();
    CHECK(((fit.beta - beta).cwiseAbs().array() < 4.0 * se.array()).all());

    Gee15Options fixed;
    fixed.fixed_rounds = 1;
    const GeeFit one = fit_gee15(clusters, spec, fixed);
    CHECK(one.rounds == 1);
    CHECK(one.converged);
}

TEST_CASE("ear labels can be swapped without changing the fit") {
    Rng rng(12);
    const int q = 2;
    const MeanModelSpec spec = random_model(q, 2);
    const VectorXd beta = VectorXd::LinSpaced(spec.n_columns(), 1.0, 2.0);
    const auto clusters = random_clusters(rng, 200, q, 2, spec, beta, ear_freq_oracle(0.4, 0.5, 0.7, q));
    const auto swapped = ear_swapped(clusters);
    for (auto kind : {CorrelationKind::independence, CorrelationKind::exchangeable, CorrelationKind::ear_freq}) {
        const GeeFit a = fit_gee(clusters, spec, kind);
        const GeeFit b = fit_gee(swapped, spec, kind);
        CHECK(max_abs(a.beta - b.beta) < 1e-7);
        CHECK((a.sandwich_cov - b.sandwich_cov).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("rescaling the outcome rescales the fit") {
    Rng rng(13);
    const int q = 2;
    const MeanModelSpec spec = random_model(q, 2);
    const VectorXd beta = VectorXd::LinSpaced(spec.n_columns(), -1.0, 1.0);
    const auto clusters = random_clusters(rng, 250, q, 2, spec, beta, ear_freq_oracle(0.3, 0.6, 0.6, q));
    const double c = 3.5;
    std::vector<ClusterData> scaled;
    for (const auto& cl : clusters) scaled.push_back(cl.with_outcome(c * cl.y()));
    for (auto kind : {CorrelationKind::exchangeable, CorrelationKind::ear_freq}) {
        const GeeFit a = fit_gee(clusters, spec, kind);
        const GeeFit b = fit_gee(scaled, spec, kind);
        REQUIRE(a.converged);
        REQUIRE(b.converged);
        CHECK(max_abs(b.beta - c * a.beta) < 1e-6);
        CHECK(b.dispersion == doctest::Approx(c * c * a.dispersion).epsilon(1e-6));
        CHECK((b.sandwich_cov - c * c * a.sandwich_cov).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("dispersion estimate and its fallback") {
    const MeanModelSpec spec = MeanModelSpec::for_link(Link::identity, 1, {});
    std::vector<ClusterData> clusters;
    VectorXi ear(2), freq(2);
    ear << 1, 2;
    freq << 1, 1;
    VectorXd y(2);
    y << 1.0, 3.0;
    clusters.emplace_back("a", y, MatrixXd::Ones(2, 1), ear, freq);
    y << 2.0, 6.0;
    clusters.emplace_back("b", y, MatrixXd::Ones(2, 1), ear, freq);
    VectorXd beta(1);
    beta << 3.0;
    // residuals -2, 0, -1, 3: sum of squares 14 over 4 - 1
    CHECK(estimate_dispersion(clusters, spec, beta) == doctest::Approx(14.0 / 3.0));
    beta << 0.0;
    std::vector<ClusterData> flat;
    for (const auto& cl : clusters) flat.push_back(cl.with_outcome(VectorXd::Zero(2)));
    CHECK(estimate_dispersion(flat, spec, beta) == 1.0);
}

TEST_CASE("two-cluster minimal data set fits end to end") {
    const MeanModelSpec spec = MeanModelSpec::for_link(Link::identity, 2, {});
    std::vector<ClusterData> clusters;
    VectorXi ear(4), freq(4);
    ear << 1, 2, 1, 2;
    freq << 1, 1, 2, 2;
    VectorXi f = freq;
    const MatrixXd x = expand_design(MatrixXd(4, 0), f, spec);
    VectorXd y(4);
    y << 1.0, 1.4, 2.1, 2.6;
    clusters.emplace_back("1", y, x, ear, freq);
    y << 0.7, 1.1, 2.0, 1.9;
    clusters.emplace_back("2", y, x, ear, freq);
    for (auto kind : {CorrelationKind::independence, CorrelationKind::exchangeable, CorrelationKind::ear_freq}) {
        const GeeFit fit = fit_gee(clusters, spec, kind);
        CHECK(fit.beta.allFinite());
        CHECK(fit.n_clusters == 2);
    }
}

TEST_CASE("collinear designs are reported by column") {
    Rng rng(14);
    const MeanModelSpec spec = MeanModelSpec::for_link(Link::identity, 1, {{"a", false, false}, {"b", false, false}});
    std::vector<ClusterData> clusters;
    for (int i = 0; i < 30; ++i) {
        MatrixXd x(2, 3);
        const double a = normal_draw(rng);
        x << 1.0, a, 2.0 * a, 1.0, a, 2.0 * a;
        VectorXi ear(2), freq(2);
        ear << 1, 2;
        freq << 1, 1;
        VectorXd y(2);
        y << normal_draw(rng), normal_draw(rng);
        clusters.emplace_back(std::to_string(i), y, x, ear, freq);
    }
    SolverOptions opts;
    opts.column_names = spec.column_names();
    try {
        solve_gee(clusters, spec, CorrelationSpec::independence(), VectorXd::Zero(3), opts);
        FAIL("expected a rank-deficiency error");
    } catch (const RankDeficientError& e) {
        CHECK(std::string(e.what()).find("a") != std::string::npos);
        CHECK(e.columns() == std::vector<int>{1, 2});
    }
}

TEST_CASE("logit link fit matches a Newton-Raphson logistic oracle") {
    Rng rng(15);
    const MeanModelSpec spec = MeanModelSpec::for_link(Link::logit, 2, {{"a", false, true}});
    std::vector<ClusterData> clusters;
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < 400; ++i) {
        VectorXi ear(4), freq(4);
        ear << 1, 2, 1, 2;
        freq << 1, 1, 2, 2;
        MatrixXd raw(4, 1);
        for (int c = 0; c < 4; ++c) raw(c, 0) = normal_draw(rng);
        const MatrixXd x = expand_design(raw, freq, spec);
        VectorXd y(4);
        for (int c = 0; c < 4; ++c) {
            const double eta = -0.3 + 0.5 * x(c, 1) + 0.8 * x(c, 2);
            y(c) = std::bernoulli_distribution(1.0 / (1.0 + std::exp(-eta)))(rng) ? 1.0 : 0.0;
        }
        clusters.emplace_back(std::to_string(i), y, x, ear, freq);
    }
    MatrixXd x;
    VectorXd y;
    stack(clusters, x, y);
    VectorXd b = VectorXd::Zero(3);
    for (int it = 0; it < 50; ++it) {
        VectorXd p(y.size());
        for (Eigen::Index r = 0; r < y.size(); ++r) p(r) = 1.0 / (1.0 + std::exp(-x.row(r).dot(b)));
        const VectorXd w = p.array() * (1.0 - p.array());
        b += (x.transpose() * w.asDiagonal() * x).ldlt().solve(x.transpose() * (y - p));
    }
    const GeeFit fit = fit_gee(clusters, spec, CorrelationKind::independence);
    REQUIRE(fit.converged);
    CHECK(max_abs(fit.beta - b) < 1e-7);
    const GeeFit ef = fit_gee(clusters, spec, CorrelationKind::ear_freq);
    CHECK(ef.converged);
    CHECK(max_abs(gee_score(clusters, spec, ef.correlation, ef.beta, ef.dispersion)) < 1e-8);
}

TEST_CASE("normal quantile matches an erfc bisection oracle") {
    for (double p : {0.5, 0.6, 0.8, 0.9, 0.95, 0.975, 0.995, 0.9995, 0.025, 1e-6}) {
        CHECK(normal_quantile(p) == doctest::Approx(normal_quantile_bisect(p)).epsilon(1e-10));
    }
    CHECK_THROWS(normal_quantile(1.0));
}

TEST_CASE("Wald intervals are symmetric with the requested coverage multiplier") {
    Rng rng(16);
    MeanModelSpec spec;
    const auto clusters = singleton_clusters(rng, 80, 2, 2, spec);
    const GeeFit fit = fit_gee(clusters, spec, CorrelationKind::independence);
    const auto ci = wald_intervals(fit, 0.9);
    const auto naive = wald_intervals(fit, 0.9, true);
    const double z = normal_quantile_bisect(0.95);
    REQUIRE(ci.size() == static_cast<std::size_t>(fit.beta.size()));
    for (std::size_t j = 0; j < ci.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        CHECK(ci[j].se == doctest::Approx(std::sqrt(fit.sandwich_cov(jj, jj))));
        CHECK(naive[j].se == doctest::Approx(std::sqrt(fit.naive_cov(jj, jj))));
        CHECK(ci[j].upper - ci[j].estimate == doctest::Approx(z * ci[j].se).epsilon(1e-10));
        CHECK(ci[j].estimate - ci[j].lower == doctest::Approx(z * ci[j].se).epsilon(1e-10));
    }
    CHECK_THROWS_AS(wald_intervals(fit, 1.5), std::invalid_argument);
}
