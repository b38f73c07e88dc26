#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/core_data.hpp"
#include "survhte/learners/super_learner.hpp"

namespace survhte {

/// Hazard design for person-period rows: covariates, then the linear period
/// column; the period also enters categorically (level t-1).
inline learners::FeatureMatrix hazard_features(const Cohort& cohort, const PersonPeriodTable& table) {
    learners::FeatureMatrix m;
    m.rows = table.rows.size();
    m.cols = cohort.dim + 1;
    m.values.resize(m.rows * m.cols);
    m.period.resize(m.rows);
    m.periods = table.horizon;
    m.time_col = static_cast<long>(cohort.dim);
    m.names = cohort.feature_names;
    m.names.resize(cohort.dim);
    m.names.push_back("t");
    for (std::size_t k = 0; k < m.rows; ++k) {
        const auto& r = table.rows[k];
        const auto& x = cohort.subjects[r.subject].x;
        std::copy(x.begin(), x.end(), m.values.begin() + static_cast<long>(k * m.cols));
        m.values[k * m.cols + cohort.dim] = r.t;
        m.period[k] = r.t - 1;
    }
    return m;
}

/// Design with one row per (subject, t) for t = 1..horizon, subject-major.
inline learners::FeatureMatrix grid_features(std::span<const std::vector<double>> xs, std::size_t dim, int horizon,
                                             std::vector<std::string> names = {}) {
    learners::FeatureMatrix m;
    const auto H = static_cast<std::size_t>(horizon);
    m.rows = xs.size() * H;
    m.cols = dim + 1;
    m.values.resize(m.rows * m.cols);
    m.period.resize(m.rows);
    m.periods = horizon;
    m.time_col = static_cast<long>(dim);
    names.resize(dim);
    m.names = std::move(names);
    m.names.push_back("t");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].size() != dim) throw DimensionError("covariate row has wrong length");
        for (std::size_t t = 0; t < H; ++t) {
            const std::size_t k = i * H + t;
            std::copy(xs[i].begin(), xs[i].end(), m.values.begin() + static_cast<long>(k * m.cols));
            m.values[k * m.cols + dim] = static_cast<double>(t + 1);
            m.period[k] = static_cast<int>(t);
        }
    }
    return m;
}

struct OutcomeModels {
    std::shared_ptr<const learners::StackedModel> model_treated;
    std::shared_ptr<const learners::StackedModel> model_control;
    int horizon = 1;
    std::size_t dim = 0;

    const learners::StackedModel& arm(int a) const { return a == 1 ? *model_treated : *model_control; }
};

/// Fits one stacked hazard model on the person-period rows of `subjects`.
inline learners::StackedModel fit_hazard_stack(const Cohort& cohort, const PersonPeriodTable& table,
                                               const std::vector<learners::BaseLearnerSpec>& library,
                                               const learners::StackOptions& options) {
    const auto x = hazard_features(cohort, table);
    std::vector<double> y(table.rows.size());
    std::vector<std::size_t> groups(table.rows.size());
    for (std::size_t k = 0; k < table.rows.size(); ++k) {
        y[k] = table.rows[k].event;
        groups[k] = table.rows[k].subject;
    }
    return learners::fit_super_learner(library, x, y, groups, options);
}

/// Two-model approach: separate hazard stacks for the treated and control arms.
inline OutcomeModels fit_outcome_models(const Cohort& cohort, const std::vector<learners::BaseLearnerSpec>& library,
                                        std::uint64_t seed, unsigned threads = 1, std::size_t folds = 10) {
    OutcomeModels out;
    out.horizon = cohort.horizon;
    out.dim = cohort.dim;
    for (int a : {1, 0}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < cohort.size(); ++i)
            if (cohort.subjects[i].a == a) idx.push_back(i);
        const std::string arm = a == 1 ? "treated" : "control";
        if (idx.empty()) throw EmptyArmError("no " + arm + " subjects");
        const auto table = expand_counting_process(cohort, cohort.horizon, idx);
        bool any_event = false;
        for (const auto& r : table.rows) any_event = any_event || r.event == 1;
        if (!any_event) throw NoEventsError("no events in the " + arm + " arm by the horizon");
        learners::StackOptions opt;
        opt.folds = folds;
        opt.threads = threads;
        opt.seed = derive_seed(seed, static_cast<std::uint64_t>(a));
        auto stack = std::make_shared<learners::StackedModel>(fit_hazard_stack(cohort, table, library, opt));
        (a == 1 ? out.model_treated : out.model_control) = std::move(stack);
    }
    return out;
}

/// Chain rule on clamped hazards: S(t) = prod_{s<=t} (1 - h(s)).
inline std::vector<double> chain_rule(std::span<const double> hazards) {
    std::vector<double> s(hazards.size());
    double acc = 1.0;
    for (std::size_t t = 0; t < hazards.size(); ++t) {
        acc *= 1.0 - clamp_probability(hazards[t]);
        s[t] = acc;
    }
    return s;
}

/// n x horizon hazard predictions (row-major) of `model` at each subject's x.
inline std::vector<double> hazard_matrix(const learners::FittedModel& model, const Cohort& cohort, int horizon) {
    std::vector<std::vector<double>> xs;
    xs.reserve(cohort.size());
    for (const auto& s : cohort.subjects) xs.push_back(s.x);
    const auto grid = grid_features(xs, cohort.dim, horizon, cohort.feature_names);
    grid.check_row_dimension(model.input_cols());
    std::vector<double> h(grid.rows);
    for (std::size_t k = 0; k < grid.rows; ++k) h[k] = learners::predict_probability(model, grid, k);
    return h;
}

inline std::vector<double> survival_curve(const learners::FittedModel& model, std::span<const double> x, int horizon) {
    const std::vector<std::vector<double>> xs{std::vector<double>(x.begin(), x.end())};
    const auto grid = grid_features(xs, x.size(), horizon);
    grid.check_row_dimension(model.input_cols());
    std::vector<double> h(grid.rows);
    for (std::size_t k = 0; k < grid.rows; ++k) h[k] = learners::predict_probability(model, grid, k);
    return chain_rule(h);
}

/// Potential survival curves and ITEs, n x horizon row-major.
struct EffectSurface {
    std::size_t n = 0;
    int horizon = 1;
    std::vector<std::string> ids;
    std::vector<double> s1;
    std::vector<double> s0;
    std::vector<double> psi_hat;

    std::size_t index(std::size_t i, int t) const { return i * static_cast<std::size_t>(horizon) + static_cast<std::size_t>(t - 1); }
    double psi(std::size_t i, int t) const { return psi_hat[index(i, t)]; }

    /// Column of psi_hat at period t.
    std::vector<double> column(int t) const {
        std::vector<double> c(n);
        for (std::size_t i = 0; i < n; ++i) c[i] = psi(i, t);
        return c;
    }
};

inline std::vector<double> survival_from_hazards(const std::vector<double>& h, std::size_t n, int horizon) {
    const auto H = static_cast<std::size_t>(horizon);
    std::vector<double> s(n * H);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = chain_rule(std::span<const double>(h.data() + i * H, H));
        std::copy(c.begin(), c.end(), s.begin() + static_cast<long>(i * H));
    }
    return s;
}

inline EffectSurface estimate_ite(const OutcomeModels& models, const Cohort& cohort) {
    if (cohort.dim != models.dim) throw DimensionError("cohort dimension does not match fitted models");
    EffectSurface e;
    e.n = cohort.size();
    e.horizon = models.horizon;
    for (const auto& s : cohort.subjects) e.ids.push_back(s.id);
    e.s1 = survival_from_hazards(hazard_matrix(*models.model_treated, cohort, e.horizon), e.n, e.horizon);
    e.s0 = survival_from_hazards(hazard_matrix(*models.model_control, cohort, e.horizon), e.n, e.horizon);
    e.psi_hat.resize(e.s1.size());
    for (std::size_t k = 0; k < e.s1.size(); ++k) e.psi_hat[k] = e.s1[k] - e.s0[k];
    return e;
}

/// Root-mean-square error normalized by the magnitude of the mean estimate.
inline double nrmse(std::span<const double> psi_hat, std::span<const double> psi_true) {
    if (psi_hat.size() != psi_true.size() || psi_hat.empty()) throw DimensionError("nrmse: length mismatch");
    double se = 0.0, m = 0.0;
    for (std::size_t i = 0; i < psi_hat.size(); ++i) {
        const double d = psi_hat[i] - psi_true[i];
        se += d * d;
        m += psi_hat[i];
    }
    const double n = static_cast<double>(psi_hat.size());
    m /= n;
    if (std::abs(m) < 1e-12) throw DegenerateNormalizer("nrmse: mean estimated effect is zero");
    return std::sqrt(se / n) / std::abs(m);
}

/// Discrete life-table (Kaplan-Meier on the period grid) survival for the
/// subjects of arm `a` (or all subjects when a < 0).
inline std::vector<double> life_table(const Cohort& cohort, int horizon, int a = -1) {
    std::vector<double> at_risk(static_cast<std::size_t>(horizon), 0.0), events(static_cast<std::size_t>(horizon), 0.0);
    for (const auto& s : cohort.subjects) {
        if (a >= 0 && s.a != a) continue;
        const int last = periods_at_risk(s, horizon);
        for (int t = 1; t <= last; ++t) at_risk[static_cast<std::size_t>(t - 1)] += 1.0;
        if (event_within(s, horizon)) events[static_cast<std::size_t>(last - 1)] += 1.0;
    }
    std::vector<double> surv(static_cast<std::size_t>(horizon));
    double acc = 1.0;
    for (std::size_t t = 0; t < surv.size(); ++t) {
        if (at_risk[t] > 0.0) acc *= 1.0 - events[t] / at_risk[t];
        surv[t] = acc;
    }
    return surv;
}

}  // namespace survhte
