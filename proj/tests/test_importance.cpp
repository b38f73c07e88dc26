#include <gtest/gtest.h>

#include <random>

#include "survhte/dgp.hpp"
#include "survhte/importance/scorers.hpp"
#include "survhte/importance/stability.hpp"

using namespace survhte;
using namespace survhte::importance;

namespace {

Cohort uniform_cohort(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<RawRow> rows;
    for (std::size_t i = 0; i < n; ++i) {
        RawRow r{std::to_string(i + 1), 5, 0, static_cast<long long>(i % 2), {}};
        for (std::size_t j = 0; j < d; ++j) r.x.push_back(u(gen));
        rows.push_back(std::move(r));
    }
    return validate_cohort(rows, 12);
}

/// DGP cohort with the true horizon ITE plus Gaussian noise.
std::pair<Cohort, std::vector<double>> dgp_ite(std::size_t n, std::size_t d, std::uint64_t seed, double noise) {
    dgp::DgpParams p;
    p.n = n;
    p.d = d;
    p.r = 600;
    p.seed = seed;
    auto [c, truth] = dgp::generate_cohort(p);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> e(0.0, noise);
    std::vector<double> psi;
    for (const auto& s : c.subjects) psi.push_back(truth.ite(s, 12) + e(gen));
    return {std::move(c), std::move(psi)};
}

ScorerOptions fast_scorers() {
    ScorerOptions o;
    o.forest.trees = 200;
    o.bart.trees = 50;
    o.bart.burn_in = 100;
    o.bart.iterations = 300;
    return o;
}

}  // namespace

TEST(Curve, RanksArePermutationWithIndexTieBreak) {
    const auto c = make_curve("m", {0.5, 2.0, 0.5, 1.0});
    EXPECT_EQ(c.ranks, (std::vector<std::size_t>{3, 1, 4, 2}));
    EXPECT_EQ(c.order, (std::vector<std::size_t>{1, 3, 0, 2}));
    EXPECT_EQ(c.sorted_scores(), (std::vector<double>{2.0, 1.0, 0.5, 0.5}));
    EXPECT_THROW(make_curve("m", {1.0, -0.1, 0.0}), FitError);
    EXPECT_THROW(make_curve("m", {1.0, std::nan(""), 0.0}), FitError);
}

TEST(Kneedle, HandDerivedExample) {
    // Min-max normalized difference curve peaks at rank 4 (score 2); the three
    // scores strictly above it are selected.
    const std::vector<double> s{10, 9.5, 9, 2, 1.8, 1.6};
    const auto k = kneedle(s);
    ASSERT_TRUE(k.knee_rank);
    EXPECT_EQ(*k.knee_rank, 4u);
    const auto sel = select_features(make_curve("m", {1.6, 9.0, 2.0, 10.0, 1.8, 9.5}));
    EXPECT_EQ(sel.selected, (std::vector<std::size_t>{3, 5, 1}));
    EXPECT_FALSE(sel.no_knee);
}

TEST(Kneedle, ConvexCurve) {
    const std::vector<double> s{10, 4, 2, 1.5, 1.2, 1.0, 0.9};
    const auto k = kneedle(s);
    ASSERT_TRUE(k.knee_rank);
    EXPECT_TRUE(k.convex);
    EXPECT_EQ(*k.knee_rank, 3u);
}

TEST(Kneedle, StraightLineHasNoKnee) {
    const std::vector<double> s{6, 5, 4, 3, 2, 1};
    EXPECT_FALSE(kneedle(s).knee_rank);
    const auto sel = select_features(make_curve("m", {1, 2, 3, 4, 5, 6}));
    EXPECT_TRUE(sel.no_knee);
    EXPECT_TRUE(sel.selected.empty());
}

TEST(Kneedle, AllZeroScores) {
    const auto sel = select_features(make_curve("m", std::vector<double>(8, 0.0)));
    EXPECT_TRUE(sel.no_knee);
    EXPECT_TRUE(sel.selected.empty());
}

TEST(Kneedle, Preconditions) {
    EXPECT_THROW(kneedle(std::vector<double>{2, 1}), DimensionError);
    EXPECT_THROW(kneedle(std::vector<double>{1, 2, 0}), ValidationError);
}

TEST(Kneedle, AffineInvariance) {
    std::mt19937_64 gen(1);
    std::exponential_distribution<double> e(1.0);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> s(10);
        for (auto& v : s) v = e(gen);
        std::sort(s.begin(), s.end(), std::greater<>());
        const double c = u(gen), b = u(gen);
        std::vector<double> t;
        for (double v : s) t.push_back(c * v + b);
        EXPECT_EQ(kneedle(s).knee_rank, kneedle(t).knee_rank);
    }
}

TEST(Kneedle, SelectionIsStrictlyAboveKnee) {
    std::mt19937_64 gen(2);
    std::exponential_distribution<double> e(1.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> s(10);
        for (auto& v : s) v = e(gen);
        const auto sel = select_features(make_curve("m", s));
        if (sel.no_knee) continue;
        const double cut = sel.curve.sorted_scores()[*sel.knee_rank - 1];
        std::size_t above = 0;
        for (double v : s) above += v > cut;
        EXPECT_EQ(sel.selected.size(), above);
        for (std::size_t j : sel.selected) EXPECT_GT(s[j], cut);
    }
}

TEST(PpvTpr, Examples) {
    const std::vector<std::size_t> truth{0, 1, 2, 3, 4};
    const std::vector<std::size_t> sel{0, 1, 5};
    const auto a = ppv_tpr(sel, truth);
    EXPECT_DOUBLE_EQ(a.ppv, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(a.tpr, 2.0 / 5.0);
    EXPECT_EQ(a.hits, (std::vector<int>{1, 1, 0, 0, 0}));
    EXPECT_EQ(a.true_positives + a.false_positives, sel.size());
    const auto none = ppv_tpr(std::vector<std::size_t>{}, truth);
    EXPECT_EQ(none.ppv, 0.0);
    EXPECT_EQ(none.tpr, 0.0);
    const auto all = ppv_tpr(truth, truth);
    EXPECT_EQ(all.ppv, 1.0);
    EXPECT_EQ(all.tpr, 1.0);
}

TEST(Scorers, SingleStrongFeatureRanksFirst) {
    const Cohort c = uniform_cohort(500, 8, 3);
    std::mt19937_64 gen(4);
    std::normal_distribution<double> e(0.0, 0.01);
    std::vector<double> psi;
    for (const auto& s : c.subjects) psi.push_back(3.0 * s.x[4] + e(gen));
    for (Method m : all_methods()) {
        const auto curve = score_features(psi, c, m, 5, fast_scorers());
        EXPECT_EQ(curve.order.front(), 4u) << to_string(m);
        EXPECT_EQ(curve.scores.size(), 8u);
        for (double v : curve.scores) EXPECT_GE(v, 0.0);
    }
}

TEST(Scorers, ConstantIteGivesZeroScores) {
    const Cohort c = uniform_cohort(300, 6, 6);
    const std::vector<double> psi(300, -0.05);
    for (Method m : all_methods()) {
        const auto curve = score_features(psi, c, m, 7, fast_scorers());
        for (double v : curve.scores) EXPECT_NEAR(v, 0.0, 1e-12) << to_string(m);
    }
    const auto lasso = score_features(psi, c, Method::adaptive_lasso, 7);
    for (double v : lasso.scores) EXPECT_EQ(v, 0.0);
}

TEST(Scorers, TreeMethodsRankModifiersAboveNoiseOnDgp) {
    const auto [c, psi] = dgp_ite(3000, 10, 8, 0.0);
    for (Method m : {Method::regression_forest, Method::bayes_tree_ensemble}) {
        const auto curve = score_features(psi, c, m, 9);
        for (std::size_t noise = 5; noise < 10; ++noise) {
            EXPECT_LT(curve.ranks[1], curve.ranks[noise]) << to_string(m);
            EXPECT_LT(curve.ranks[4], curve.ranks[noise]) << to_string(m);
        }
    }
}

TEST(Scorers, DeterministicGivenSeed) {
    const auto [c, psi] = dgp_ite(800, 10, 10, 0.01);
    for (Method m : all_methods()) {
        const auto a = score_features(psi, c, m, 11, fast_scorers());
        const auto b = score_features(psi, c, m, 11, fast_scorers());
        EXPECT_EQ(a.scores, b.scores) << to_string(m);
    }
}

TEST(Scorers, RejectsMismatchedInput) {
    const Cohort c = uniform_cohort(100, 6, 1);
    EXPECT_THROW(score_features(std::vector<double>(99, 0.0), c, Method::elastic_net, 1), DimensionError);
    EXPECT_THROW(method_from_string("lasso"), ConfigError);
    EXPECT_EQ(method_from_string("bayes_tree_ensemble"), Method::bayes_tree_ensemble);
}

namespace {

/// Mean TPR over ten seeded replicates, without and with ten appended
/// covariates that play no part in the outcome. (The DGP's own X6..XD enter
/// the baseline rate, so they are not pure noise on the ITE scale.)
std::pair<double, double> tpr_with_appended_noise(Method m) {
    double base = 0, wide_tpr = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto [c, psi] = dgp_ite(1500, 10, seed, 0.02);
        Cohort wide = c;
        std::mt19937_64 gen(seed + 100);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& s : wide.subjects)
            for (int k = 0; k < 10; ++k) s.x.push_back(u(gen));
        wide.dim = 20;
        for (int k = 11; k <= 20; ++k) wide.feature_names.push_back("x" + std::to_string(k));
        base += ppv_tpr(select_features(score_features(psi, c, m, seed, fast_scorers())).selected, dgp::true_features()).tpr;
        wide_tpr += ppv_tpr(select_features(score_features(psi, wide, m, seed, fast_scorers())).selected,
                            dgp::true_features()).tpr;
    }
    return {base / 10.0, wide_tpr / 10.0};
}

}  // namespace

TEST(Scorers, NoiseFeaturesDoNotRaiseTprForForest) {
    const auto [base, wide] = tpr_with_appended_noise(Method::regression_forest);
    EXPECT_LE(wide, base + 0.05);
}

TEST(Scorers, NoiseTailMovesKneeForOtherScorers) {
    // Known deviation from the no-gain property: the extra near-zero scores
    // stretch the normalized rank axis, the knee moves out, and more of the
    // weaker modifiers clear it. Pinned so a change in this behavior is seen.
    for (Method m : {Method::elastic_net, Method::adaptive_lasso, Method::bayes_tree_ensemble}) {
        const auto [base, wide] = tpr_with_appended_noise(m);
        EXPECT_GT(wide, base) << to_string(m);
    }
}

TEST(Stability, SingleReplicateCountsAreBinary) {
    dgp::DgpParams p;
    p.n = 1200;
    p.r = 307;
    p.seed = 12;
    const auto [c, truth] = dgp::generate_cohort(p);
    const auto s = bootstrap_stability(c, {Method::elastic_net}, 1, 800, 13, learners::default_library());
    EXPECT_EQ(s.completed, 1u);
    for (auto v : s.counts.at("elastic_net")) EXPECT_LE(v, 1u);
    EXPECT_THROW(bootstrap_stability(c, {Method::elastic_net}, 0, 800, 13, learners::default_library()), ConfigError);
    EXPECT_THROW(bootstrap_stability(c, {Method::elastic_net}, 1, 5000, 13, learners::default_library()), ConfigError);
}

TEST(Stability, ModifierSelectedAtLeastAsOftenAsNoise) {
    dgp::DgpParams p;
    p.n = 3000;
    p.r = 307;
    p.seed = 14;
    const auto [c, truth] = dgp::generate_cohort(p);
    const auto s = bootstrap_stability(c, {Method::regression_forest, Method::bayes_tree_ensemble}, 10, 1500, 15,
                                       learners::default_library(), fast_scorers());
    EXPECT_EQ(s.completed, 10u);
    for (const auto& [name, counts] : s.counts) {
        EXPECT_GE(counts[1], counts[9]) << name;
        for (auto v : counts) EXPECT_LE(v, 10u);
    }
}
