#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "survhte/dgp.hpp"

using namespace survhte;
using namespace survhte::dgp;

namespace {

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0,1).
double ks_uniform(std::vector<double> u) {
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - u[i], u[i] - static_cast<double>(i) / n});
    return d;
}

// Asymptotic critical value of sqrt(n) D at alpha = 0.001.
constexpr double kKsCritical = 1.9495;

constexpr std::size_t kDraws = 100000;

std::vector<SubjectDraw> draws(double beta, double r, std::size_t d = 10, std::uint64_t seed = 17) {
    std::vector<SubjectDraw> out;
    out.reserve(kDraws);
    for (std::size_t i = 0; i < kDraws; ++i) out.push_back(draw_subject(seed, i, d, beta, r));
    return out;
}

}  // namespace

TEST(Tau, Examples) {
    const std::vector<double> zero(10, 0.0);
    EXPECT_DOUBLE_EQ(tau(0, zero, 7.0), 0.0);
    EXPECT_DOUBLE_EQ(tau(1, zero, 10.0), 0.1);
    std::vector<double> x(10, 0.0);
    x[0] = 1;
    x[4] = 1;
    x[1] = 1.0 / 3.0;
    x[2] = x[3] = 1;
    EXPECT_NEAR(tau(1, x, 1.0), 1 + 3 + 0 + 1 + (1 + 1.0 / 3.0 + 1 + 1 + 1), 1e-12);
    EXPECT_THROW(tau(1, std::vector<double>(4, 0.0), 1.0), DimensionError);
}

TEST(TrueSurvival, Examples) {
    const std::vector<double> zero(10, 0.0);
    EXPECT_DOUBLE_EQ(true_survival(0, zero, 12, 10.0), 1.0);
    EXPECT_NEAR(true_survival(1, zero, 1, 10.0), 0.904837418, 1e-9);
    EXPECT_NEAR(true_ite(zero, 1, 10.0), std::exp(-0.1) - 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(true_ite(zero, 0, 10.0), 0.0);
}

TEST(TrueSurvival, MonotoneAndIteNonPositive) {
    for (std::size_t i = 0; i < 2000; ++i) {
        const auto s = draw_subject(3, i, 10, 0.5, 600.0);
        for (int t = 0; t < 24; ++t) {
            for (int a : {0, 1}) EXPECT_LE(true_survival(a, s.x, t + 1, 600.0), true_survival(a, s.x, t, 600.0));
            EXPECT_LE(true_ite(s.x, t, 600.0), 0.0);
        }
    }
}

TEST(Propensity, Examples) {
    std::vector<double> x(10, 0.3);
    EXPECT_DOUBLE_EQ(true_propensity(x, 0.0), 0.2);
    x[0] = x[1] = 1.0;
    EXPECT_NEAR(true_propensity(x, 0.5), 1.25 / 2.25, 1e-12);
    EXPECT_NEAR(true_propensity(x, 2.0), 4.25 / 5.25, 1e-12);
}

TEST(GenerateCohort, Deterministic) {
    DgpParams p;
    p.n = 500;
    p.r = 600;
    p.seed = 42;
    const auto [a, ta] = generate_cohort(p);
    const auto [b, tb] = generate_cohort(p);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.subjects[i].x, b.subjects[i].x);
        EXPECT_EQ(a.subjects[i].a, b.subjects[i].a);
        EXPECT_EQ(a.subjects[i].t_obs, b.subjects[i].t_obs);
        EXPECT_EQ(a.subjects[i].y, b.subjects[i].y);
    }
    p.seed = 43;
    const auto [c, tc] = generate_cohort(p);
    EXPECT_NE(a.subjects[0].x, c.subjects[0].x);
}

TEST(GenerateCohort, ObservedTimeIsCeilOfMinimum) {
    DgpParams p;
    p.n = 2000;
    p.r = 300;
    const auto [c, truth] = generate_cohort(p);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto& l = truth.latent[i];
        const auto& s = c.subjects[i];
        EXPECT_EQ(s.t_obs, std::max(1, static_cast<int>(std::ceil(std::min(l.t_event, l.t_censor)))));
        EXPECT_EQ(s.y, l.t_event <= l.t_censor ? 1 : 0);
    }
}

TEST(GenerateCohort, TreatedFractionAtZeroConfounding) {
    DgpParams p;
    p.n = kDraws;
    p.beta = 0.0;
    p.r = 600;
    const auto [c, truth] = generate_cohort(p);
    const double frac = static_cast<double>(c.count_arm(1)) / static_cast<double>(c.size());
    const double se = std::sqrt(0.2 * 0.8 / static_cast<double>(c.size()));
    EXPECT_NEAR(frac, 0.2, 3 * se);
}

TEST(GenerateCohort, CovariateMarginals) {
    const auto ds = draws(0.5, 600.0);
    for (std::size_t j : {0u, 1u, 2u, 4u, 9u}) {
        std::vector<double> u;
        for (const auto& s : ds) u.push_back(s.x[j]);
        EXPECT_LT(std::sqrt(static_cast<double>(kDraws)) * ks_uniform(u), kKsCritical) << "x" << j + 1;
    }
    double ones = 0;
    for (const auto& s : ds) ones += s.x[3];
    EXPECT_NEAR(ones / kDraws, 0.5, 3 * std::sqrt(0.25 / kDraws));
}

TEST(GenerateCohort, TreatmentFollowsPropensity) {
    const auto ds = draws(2.0, 600.0);
    // Sum of (A - g) is mean-zero with variance sum g(1-g).
    double resid = 0, var = 0;
    for (const auto& s : ds) {
        const double g = true_propensity(s.x, 2.0);
        resid += s.a - g;
        var += g * (1 - g);
    }
    EXPECT_LT(std::abs(resid), 3.5 * std::sqrt(var));
}

TEST(GenerateCohort, EventTimesExponential) {
    // Probability integral transform: 1 - exp(-tau T) is uniform.
    const auto ds = draws(0.5, 600.0);
    std::vector<double> u;
    for (const auto& s : ds) u.push_back(-std::expm1(-tau(s.a, s.x, 600.0) * s.latent.t_event));
    EXPECT_LT(std::sqrt(static_cast<double>(kDraws)) * ks_uniform(u), kKsCritical);
}

TEST(GenerateCohort, CensoringWeibullShapeThenScale) {
    const auto ds = draws(0.5, 600.0);
    std::vector<double> u;
    for (const auto& s : ds) u.push_back(1.0 - true_censor_survival(s.x, s.latent.t_censor));
    EXPECT_LT(std::sqrt(static_cast<double>(kDraws)) * ks_uniform(u), kKsCritical);
    // Censoring depends on X1 only: the transform ignoring other covariates is still uniform.
    std::vector<double> v;
    for (const auto& s : ds) {
        std::vector<double> x1_only(10, 0.0);
        x1_only[0] = s.x[0];
        v.push_back(1.0 - true_censor_survival(x1_only, s.latent.t_censor));
    }
    EXPECT_LT(std::sqrt(static_cast<double>(kDraws)) * ks_uniform(v), kKsCritical);
}

TEST(Calibration, SelfConsistent) {
    const double r = calibrate_rate(0.10, 10, 0.5, 12);
    DgpParams p;
    p.n = kDraws;
    p.r = r;
    p.seed = 99;
    const auto [c, truth] = generate_cohort(p);
    EXPECT_NEAR(event_rate(c), 0.10, 0.01);
}

TEST(Calibration, LowerRateNeedsLargerR) {
    EXPECT_GT(calibrate_rate(0.025, 10, 0.5, 12), calibrate_rate(0.20, 10, 0.5, 12));
}

TEST(Calibration, UnreachableRate) {
    EXPECT_THROW(calibrate_rate(0.9999, 10, 0.5, 12), CalibrationError);
    EXPECT_THROW(calibrate_rate(0.0, 10, 0.5, 12), CalibrationError);
}

TEST(Params, Validation) {
    DgpParams p;
    p.r = 100;
    p.d = 5;
    EXPECT_THROW(p.validate(), ConfigError);
    p.d = 6;
    EXPECT_NO_THROW(p.validate());
    p.r = 0;
    EXPECT_THROW(p.validate(), ConfigError);
    p.target_rate = 1.0;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Truth, SampleAteMatchesMatrix) {
    DgpParams p;
    p.n = 300;
    p.r = 600;
    const auto [c, truth] = generate_cohort(p);
    const auto m = truth.ite_matrix(c);
    double s = 0;
    for (std::size_t i = 0; i < c.size(); ++i) s += m[i * 12 + 11];
    EXPECT_NEAR(s / 300.0, truth.sample_ate(c, 12), 1e-14);
    const auto mc = monte_carlo_ate(10, 0.5, 600, 12, 20000, 5);
    for (int t = 1; t < 12; ++t) EXPECT_LT(mc[t], mc[t - 1]);
}
