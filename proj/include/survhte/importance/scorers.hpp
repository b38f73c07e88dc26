#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/core_data.hpp"
#include "survhte/importance/bart.hpp"
#include "survhte/importance/forest.hpp"
#include "survhte/importance/kneedle.hpp"
#include "survhte/learners/base_learners.hpp"
#include "survhte/learners/glm.hpp"

namespace survhte::importance {

enum class Method { adaptive_lasso, elastic_net, regression_forest, bayes_tree_ensemble };

inline const std::vector<Method>& all_methods() {
    static const std::vector<Method> m{Method::adaptive_lasso, Method::elastic_net, Method::regression_forest,
                                       Method::bayes_tree_ensemble};
    return m;
}

inline std::string to_string(Method m) {
    switch (m) {
        case Method::adaptive_lasso: return "adaptive_lasso";
        case Method::elastic_net: return "elastic_net";
        case Method::regression_forest: return "regression_forest";
        case Method::bayes_tree_ensemble: return "bayes_tree_ensemble";
    }
    return "unknown";
}

inline Method method_from_string(const std::string& s) {
    for (Method m : all_methods())
        if (to_string(m) == s) return m;
    throw ConfigError("unknown importance method '" + s + "'");
}

struct ScorerOptions {
    std::size_t folds = 10;
    double en_alpha = 0.5;
    ForestOptions forest;
    BartOptions bart;
};

namespace detail {

/// Gaussian penalized regression with lambda picked by K-fold CV MSE; returns
/// |standardized coefficient| per column.
inline std::vector<double> cv_penalized_scores(const double* x, std::size_t n, std::size_t p, std::span<const double> y,
                                               double alpha, bool adaptive, std::size_t folds, std::uint64_t seed) {
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    if (!(*hi - *lo > 1e-12 * std::max(1.0, std::abs(*hi)))) return std::vector<double>(p, 0.0);
    const learners::GlmDesign design{n, p, x, nullptr, 0, 0};
    const auto rows = learners::all_rows(n);
    auto options = [&](std::span<const std::size_t> fit_rows) {
        learners::GlmOptions opt;
        opt.family = learners::Family::gaussian;
        opt.alpha = adaptive ? 1.0 : alpha;
        if (!adaptive) return opt;
        learners::GlmOptions probe = opt;
        learners::GlmPathSolver probe_solver(design, y, fit_rows, probe);
        learners::GlmOptions ridge = opt;
        ridge.alpha = 0.0;
        learners::GlmPathSolver init(design, y, fit_rows, ridge);
        const auto c = init.fit_single(1e-3 * probe_solver.lambda_max());
        constexpr double kMaxWeight = 1e4;
        opt.penalty_factor.resize(p);
        double total = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            const double a = std::abs(c.beta_std[j]);
            opt.penalty_factor[j] = a > 1.0 / kMaxWeight ? 1.0 / a : kMaxWeight;
            total += opt.penalty_factor[j];
        }
        for (double& w : opt.penalty_factor) w *= static_cast<double>(p) / total;
        return opt;
    };
    learners::GlmPathSolver full(design, y, rows, options(rows));
    const auto lambdas = learners::lambda_grid(full.lambda_max(), 50, 1e-4);
    const std::size_t K = std::min(folds, n);
    const auto label = learners::fold_labels(n, K, seed);
    std::vector<double> mse(lambdas.size(), 0.0);
    for (std::size_t f = 0; f < K; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < n; ++i) (label[i] == f ? test : train).push_back(i);
        learners::GlmPathSolver solver(design, y, train, options(train));
        const auto path = solver.fit(lambdas);
        for (std::size_t k = 0; k < path.size(); ++k)
            for (std::size_t i : test) {
                const double e = y[i] - path[k].linear_predictor(design, i);
                mse[k] += e * e;
            }
    }
    const auto best = static_cast<std::size_t>(std::min_element(mse.begin(), mse.end()) - mse.begin());
    const auto path = full.fit(std::span<const double>(lambdas.data(), best + 1));
    std::vector<double> s(p);
    for (std::size_t j = 0; j < p; ++j) s[j] = std::abs(path.back().beta_std[j]);
    return s;
}

}  // namespace detail

/// Importance scores from regressing the horizon ITE on the covariates.
inline ImportanceCurve score_features(std::span<const double> psi_at_horizon, const Cohort& cohort, Method method,
                                      std::uint64_t seed, const ScorerOptions& opt = {}) {
    const std::size_t n = cohort.size(), p = cohort.dim;
    if (psi_at_horizon.size() != n) throw DimensionError("score_features: ITE length does not match cohort");
    if (p < 3) throw DimensionError("score_features: need at least 3 covariates");
    std::vector<double> x(n * p);
    for (std::size_t i = 0; i < n; ++i) std::copy(cohort.subjects[i].x.begin(), cohort.subjects[i].x.end(), x.begin() + static_cast<long>(i * p));
    std::vector<double> scores;
    try {
        switch (method) {
            case Method::adaptive_lasso:
                scores = detail::cv_penalized_scores(x.data(), n, p, psi_at_horizon, 1.0, true, opt.folds, seed);
                break;
            case Method::elastic_net:
                scores = detail::cv_penalized_scores(x.data(), n, p, psi_at_horizon, opt.en_alpha, false, opt.folds, seed);
                break;
            case Method::regression_forest:
                scores = forest_importance(x.data(), n, p, psi_at_horizon, opt.forest, seed);
                break;
            case Method::bayes_tree_ensemble:
                scores = bart_inclusion(x.data(), n, p, psi_at_horizon, opt.bart, seed);
                break;
        }
    } catch (const FitError&) {
        throw;
    } catch (const std::exception& e) {
        throw FitError(to_string(method) + ": " + e.what());
    }
    return make_curve(to_string(method), std::move(scores));
}

}  // namespace survhte::importance
