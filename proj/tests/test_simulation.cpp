#include "bgee/simulation.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <array>

using namespace bgee;
using namespace bgee::testing;

namespace {

// Printed correlation matrices of the four scenarios (upper triangle,
// row-major: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)).
const std::array<std::array<double, 6>, 4> printed_table{{
    {0.94, 0.89, 0.80, 0.80, 0.89, 0.86},
    {0.68, 0.76, 0.60, 0.60, 0.76, 0.64},
    {0.52, 0.61, 0.40, 0.40, 0.61, 0.46},
    {0.36, 0.36, 0.20, 0.20, 0.36, 0.28},
}};

Eigen::Matrix4d empirical_covariance(const std::vector<Eigen::Vector4d>& draws) {
    Eigen::Vector4d mean = Eigen::Vector4d::Zero();
    for (const auto& d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
    for (const auto& d : draws) cov += (d - mean) * (d - mean).transpose();
    return cov / static_cast<double>(draws.size() - 1);
}

Eigen::Matrix4d to_correlation(const Eigen::Matrix4d& cov) {
    const Eigen::Vector4d inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
    return inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
}

double mean_part(const SimulationScenario& s, const ClusterData& cl, int p) {
    const double x = cl.x()(p, 2);
    const double f2 = cl.freq_index()(p) == 2 ? 1.0 : 0.0;
    const auto& b = s.beta_true;
    return b(0) + b(1) * f2 + b(2) * x + b(3) * x * f2;
}

}  // namespace

TEST_CASE("scenario correlation matrices reproduce the printed table") {
    for (int id = 1; id <= 4; ++id) {
        const Eigen::Matrix4d r = dgp_correlation(SimulationScenario::preset(id).alpha);
        const auto& printed = printed_table[static_cast<std::size_t>(id - 1)];
        int k = 0;
        for (int a = 0; a < 4; ++a) {
            for (int b = a + 1; b < 4; ++b) {
                CHECK(std::round(100.0 * r(a, b)) / 100.0 == doctest::Approx(printed[static_cast<std::size_t>(k)]));
                CHECK(r(a, b) == r(b, a));
                ++k;
            }
        }
    }
}

TEST_CASE("scenario correlation edge cases") {
    CHECK(dgp_correlation({1.0, 1.0, 1.0, 1.0}).isIdentity(0.0));
    CHECK_THROWS_AS(dgp_correlation({1.2, 0.5, 0.5, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(dgp_correlation({1.0, 0.0, 0.0, 0.0}), std::domain_error);
    CHECK_THROWS_AS(SimulationScenario::preset(5), std::invalid_argument);
}

TEST_CASE("scenario defaults") {
    const SimulationScenario s = SimulationScenario::preset(1);
    CHECK(s.beta_true(2) == -1.2);
    CHECK(s.theta_mean == -0.8);
    CHECK(s.sigma_eps == s.sigma_eps.transpose());
    CHECK(min_eigenvalue(s.sigma_eps) > 0.0);
    const Eigen::Matrix4d st = s.sigma_theta();
    CHECK(st(1, 1) == doctest::Approx(1.9 * 1.9));
    CHECK(st(0, 3) == doctest::Approx(0.8 * 2.5 * 0.80));
    const VectorXd truth = simulation_truth(s);
    CHECK(truth(3) == -0.8);
    CHECK(truth(4) == 0.9);
    CHECK(simulation_coefficient_names() == std::vector<std::string>{"beta0", "beta1", "beta2", "theta", "beta3"});
    CHECK(simulation_model().column_names() ==
          std::vector<std::string>{"(Intercept)", "freq2", "X", "Z", "X:freq2"});
}

TEST_CASE("noise-free scenario yields the mean exactly") {
    SimulationScenario s = SimulationScenario::preset(2);
    s.sigma_eps.setZero();
    s.theta_scale.setZero();
    s.covariates = CovariateLaw::standard();
    s.covariates.z_sd = 0.0;
    Engine rng = replicate_stream(3, 0);
    const ClusterSampler sampler(s);
    for (int i = 0; i < 50; ++i) {
        const ClusterData cl = sampler.draw(rng, "p");
        REQUIRE(cl.is_complete(2));
        for (int p = 0; p < 4; ++p) {
            CHECK(cl.x()(p, 3) == 0.0);
            CHECK(cl.y()(p) == doctest::Approx(mean_part(s, cl, p)).epsilon(1e-14));
        }
    }
}

TEST_CASE("residual covariance matches sigma_eps over a million draws") {
    SimulationScenario s = SimulationScenario::preset(1);
    s.theta_scale.setZero();
    s.covariates = CovariateLaw::standard();
    s.covariates.z_sd = 0.0;
    Engine rng = replicate_stream(4, 0);
    const ClusterSampler sampler(s);
    std::vector<Eigen::Vector4d> eps;
    eps.reserve(1000000);
    for (int i = 0; i < 1000000; ++i) {
        const ClusterData cl = sampler.draw(rng, "p");
        Eigen::Vector4d e;
        for (int p = 0; p < 4; ++p) e(p) = cl.y()(p) - mean_part(s, cl, p);
        eps.push_back(e);
    }
    CHECK((empirical_covariance(eps) - s.sigma_eps).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("slope correlation matches the scenario matrix over a million draws") {
    for (int id : {1, 4}) {
        SimulationScenario s = SimulationScenario::preset(id);
        s.sigma_eps.setZero();
        s.covariates = CovariateLaw::standard();
        s.covariates.z_mean = 1.0;
        s.covariates.z_sd = 0.0;
        Engine rng = replicate_stream(5, static_cast<std::uint64_t>(id));
        const ClusterSampler sampler(s);
        std::vector<Eigen::Vector4d> theta;
        theta.reserve(1000000);
        Eigen::Vector4d sum = Eigen::Vector4d::Zero();
        for (int i = 0; i < 1000000; ++i) {
            const ClusterData cl = sampler.draw(rng, "p");
            Eigen::Vector4d t;
            for (int p = 0; p < 4; ++p) t(p) = cl.y()(p) - mean_part(s, cl, p);
            sum += t;
            theta.push_back(t);
        }
        const Eigen::Matrix4d corr = to_correlation(empirical_covariance(theta));
        CHECK((corr - dgp_correlation(s.alpha)).cwiseAbs().maxCoeff() < 0.01);
        CHECK((sum / 1e6 - Eigen::Vector4d::Constant(-0.8)).cwiseAbs().maxCoeff() < 0.01);
    }
}

TEST_CASE("covariate law moments") {
    SimulationScenario s = SimulationScenario::preset(1);
    Engine rng = replicate_stream(6, 0);
    const ClusterSampler sampler(s);
    const CovariateLaw law = s.covariates;
    std::vector<Eigen::Vector4d> z;
    double x_sum = 0.0, x_sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const ClusterData cl = sampler.draw(rng, "p");
        Eigen::Vector4d v;
        for (int p = 0; p < 4; ++p) {
            v(p) = cl.x()(p, 3);
            CHECK(cl.x()(p, 2) == cl.x()(0, 2));
        }
        z.push_back(v);
        x_sum += cl.x()(0, 2);
        x_sq += cl.x()(0, 2) * cl.x()(0, 2);
    }
    const Eigen::Matrix4d cov = empirical_covariance(z);
    const Eigen::Matrix4d corr = to_correlation(cov);
    for (int a = 0; a < 4; ++a) {
        CHECK(std::sqrt(cov(a, a)) == doctest::Approx(law.z_sd).epsilon(0.01));
        for (int b = a + 1; b < 4; ++b) CHECK(std::abs(corr(a, b) - law.z_correlation) < 0.01);
    }
    const double x_mean = x_sum / n;
    CHECK(std::abs(x_mean - law.x_mean) < 0.01 * law.x_sd);
    CHECK(std::sqrt(x_sq / n - x_mean * x_mean) == doctest::Approx(law.x_sd).epsilon(0.01));
}

TEST_CASE("replicate streams are reproducible and distinct") {
    const SimulationScenario s = SimulationScenario::preset(3);
    const ClusterSampler sampler(s);
    Engine a = replicate_stream(42, 7), b = replicate_stream(42, 7), c = replicate_stream(42, 8),
           d = replicate_stream(43, 7);
    const ClusterData ca = sampler.draw(a, "1"), cb = sampler.draw(b, "1"), cc = sampler.draw(c, "1"),
                      cd = sampler.draw(d, "1");
    CHECK(ca.y() == cb.y());
    CHECK(ca.y() != cc.y());
    CHECK(ca.y() != cd.y());
    CHECK(replicate_stream(1, 0)() != replicate_stream(0, 1)());
}

TEST_CASE("method names") {
    for (Method m : all_methods()) CHECK(parse_method(to_string(m)) == m);
    CHECK(all_methods().size() == 6);
    CHECK(display_name(Method::both_exch) == "Both-ear (exch.)");
    CHECK_THROWS_AS(parse_method("both-ar1"), std::invalid_argument);
}

TEST_CASE("summaries of perfect estimates") {
    VectorXd truth(2);
    truth << 2.0, -1.0;
    std::vector<ReplicateRecord> recs(5);
    for (auto& r : recs) {
        r.ok = true;
        r.beta = truth;
        r.se = VectorXd::Constant(2, 0.1);
        r.covered = {true, true};
    }
    const auto out = summarize(recs, truth, {"a", "b"});
    for (const auto& c : out) {
        CHECK(*c.rel_bias_pct == 0.0);
        CHECK(c.ese == 0.0);
        CHECK(c.coverage_pct == 100.0);
        CHECK(c.mean_se == doctest::Approx(0.1));
    }
}

TEST_CASE("summaries match direct formulas") {
    Rng rng(31);
    VectorXd truth(2);
    truth << 1.5, 0.0;
    std::vector<ReplicateRecord> recs(40);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        auto& r = recs[i];
        r.ok = i % 7 != 3;
        r.beta = truth + 0.3 * VectorXd::Constant(2, normal_draw(rng));
        r.se = VectorXd::Constant(2, 0.2 + 0.01 * static_cast<double>(i));
        r.covered = {i % 2 == 0, i % 3 == 0};
    }
    double rb = 0.0, m = 0.0, cov = 0.0, se = 0.0;
    int s = 0;
    for (const auto& r : recs) {
        if (!r.ok) continue;
        ++s;
        rb += (r.beta(0) - truth(0)) / truth(0);
        m += r.beta(0);
        cov += r.covered[0] ? 1.0 : 0.0;
        se += r.se(0);
    }
    m /= s;
    double ss = 0.0;
    for (const auto& r : recs)
        if (r.ok) ss += (r.beta(0) - m) * (r.beta(0) - m);
    const auto out = summarize(recs, truth, {"a", "b"});
    CHECK(*out[0].rel_bias_pct == doctest::Approx(100.0 * rb / s));
    CHECK(out[0].mean_estimate == doctest::Approx(m));
    CHECK(out[0].ese == doctest::Approx(std::sqrt(ss / (s - 1))));
    CHECK(out[0].coverage_pct == doctest::Approx(100.0 * cov / s));
    CHECK(out[0].mean_se == doctest::Approx(se / s));
    CHECK_FALSE(out[1].rel_bias_pct.has_value());
}

TEST_CASE("scenario runs do not depend on the thread count") {
    SimulationScenario s = SimulationScenario::preset(2);
    s.n_participants = 60;
    s.n_replicates = 7;
    s.base_seed = 99;
    const auto methods = all_methods();
    RunOptions one, many;
    one.threads = 1;
    many.threads = 3;
    const ScenarioReport a = run_scenario(s, methods, one);
    const ScenarioReport b = run_scenario(s, methods, many);
    REQUIRE(a.records.size() == methods.size());
    for (std::size_t m = 0; m < methods.size(); ++m) {
        for (std::size_t r = 0; r < a.records[m].size(); ++r) {
            CHECK(a.records[m][r].ok == b.records[m][r].ok);
            if (a.records[m][r].ok) {
                CHECK(a.records[m][r].beta == b.records[m][r].beta);
                CHECK(a.records[m][r].se == b.records[m][r].se);
            }
        }
    }
    REQUIRE(a.reference.has_value());
    CHECK(*a.reference == Method::proposed);
}

TEST_CASE("methods are paired on identical data") {
    SimulationScenario s = SimulationScenario::preset(1);
    s.n_participants = 80;
    Engine rng = replicate_stream(s.base_seed, 0);
    const auto data = ClusterSampler(s).draw_dataset(rng);
    const GeeFit direct = fit_gee(data, simulation_model(), CorrelationKind::independence);

    s.n_replicates = 1;
    const std::vector<Method> methods{Method::both_ind};
    const ScenarioReport report = run_scenario(s, methods);
    REQUIRE(report.records[0][0].ok);
    CHECK(report.records[0][0].beta == direct.beta);
    CHECK_FALSE(report.warnings.empty());
    CHECK(report.summaries[0].coefficients[0].ese == 0.0);
}
