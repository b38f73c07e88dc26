#pragma once

// Simulation experiments over a scenario grid. Experiment 1 scores Step 1
// and Step 2 against the DGP truth; Experiment 2 adds the targeting step and
// the %Bias of the ATE and of one designated stratum.
//
// Seeds form a tree: master -> scenario -> replicate -> module, so every
// replicate is reproducible on its own and thread count never changes output.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include "survhte/cate.hpp"
#include "survhte/common.hpp"
#include "survhte/dgp.hpp"
#include "survhte/harness/config.hpp"
#include "survhte/importance/scorers.hpp"
#include "survhte/survival_ite.hpp"
#include "survhte/tmle.hpp"

namespace survhte::harness {

struct Scenario {
    std::size_t n = 3000;
    std::size_t d = 10;
    double beta = 0.5;
    double rate = 0.10;
    std::size_t strata = 10;
};

/// Cartesian product of the grid, in n, d, beta, rate, strata order.
inline std::vector<Scenario> expand_grid(const RunConfig& c) {
    std::vector<Scenario> out;
    for (auto n : c.n)
        for (auto d : c.d)
            for (auto b : c.beta)
                for (auto r : c.rate)
                    for (auto m : c.strata) out.push_back({n, d, b, r, m});
    return out;
}

// Module slots under a replicate seed.
enum ModuleSeed : std::uint64_t { kSeedCohort = 0, kSeedOutcome = 1, kSeedImportance = 2, kSeedNuisance = 3, kSeedBand = 4 };

inline std::uint64_t scenario_seed(std::uint64_t master, std::size_t scenario) { return derive_seed(master, scenario); }
inline std::uint64_t replicate_seed(std::uint64_t master, std::size_t scenario, std::size_t replicate) {
    return derive_seed(scenario_seed(master, scenario), replicate);
}

struct MethodResult {
    std::string method;
    std::vector<std::size_t> selected;
    std::optional<std::size_t> knee_rank;
    double ppv = 0.0;
    double tpr = 0.0;
    std::vector<int> hits;  // one per feature: selected or not
};

struct StratumResult {
    std::size_t label = 0;
    std::size_t size = 0;
    double lower = 0.0, upper = 0.0;
    std::vector<double> truth;         // mean true ITE over members
    std::vector<double> initial;       // mean initial estimate
    std::vector<double> global;        // MCATE from the whole-cohort targeted fit
    std::vector<double> targeted;      // stratum-targeted MCATE
    std::vector<double> half_width;    // simultaneous band of the stratum-targeted estimate
    std::vector<double> bias_initial, bias_global, bias_targeted;
    bool max_steps_reached = false;
};

struct ReplicateResult {
    std::size_t replicate = 0;  // 1-based
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double event_rate = 0.0;

    // Step 1
    std::vector<double> nrmse;      // t = 1..H
    std::vector<double> psi_var;    // variance of the estimated ITE
    std::vector<double> ate_truth;  // sample mean of the true ITE
    std::vector<double> ate_initial;
    std::vector<double> bias_initial;  // unadjusted ATE %bias

    // Step 2 (experiment 1)
    std::vector<MethodResult> methods;

    // Step 3 (experiment 2)
    std::vector<double> ate_targeted;
    std::vector<double> bias_targeted;
    std::optional<StratumResult> stratum;
    bool targeting_converged = false;  // both arms met the stopping rule
    bool max_steps_reached = false;
    bool monotone = false;
    double partition_gap = 0.0;  // max_t |sum_q w_q MCATE_q - ATE|
    std::vector<std::string> warnings;
};

struct ScenarioResult {
    std::size_t index = 0;
    Scenario scenario;
    double r = 0.0;
    std::vector<ReplicateResult> replicates;
    std::size_t completed() const {
        return static_cast<std::size_t>(std::count_if(replicates.begin(), replicates.end(), [](const auto& x) { return x.ok; }));
    }
};

struct ExperimentReport {
    std::string experiment;  // "exp1" or "exp2"
    std::string config_hash;
    RunConfig config;
    std::vector<ScenarioResult> scenarios;
};

namespace detail {

inline std::vector<double> mean_over_ok(const std::vector<ReplicateResult>& reps,
                                        const std::function<const std::vector<double>&(const ReplicateResult&)>& get) {
    std::vector<double> acc;
    std::size_t k = 0;
    for (const auto& r : reps) {
        if (!r.ok) continue;
        const auto& v = get(r);
        if (acc.empty()) acc.assign(v.size(), 0.0);
        for (std::size_t t = 0; t < v.size() && t < acc.size(); ++t) acc[t] += v[t];
        ++k;
    }
    for (double& v : acc) v /= static_cast<double>(k);
    return acc;
}

inline std::vector<double> pct_bias_curve(const std::vector<double>& est, const std::vector<double>& truth) {
    std::vector<double> b(est.size());
    for (std::size_t t = 0; t < est.size(); ++t) b[t] = pct_bias(est[t], truth[t]);
    return b;
}

inline double mean_of_members(std::span<const double> v, const std::vector<std::size_t>& members) {
    double s = 0.0;
    for (std::size_t i : members) s += v[i];
    return s / static_cast<double>(members.size());
}

/// Step 1 plus its truth metrics.
inline EffectSurface step_one(const Cohort& cohort, const dgp::TruthHandle& truth, const RunConfig& c,
                              std::uint64_t seed, ReplicateResult& out) {
    const auto models = fit_outcome_models(cohort, c.library, derive_seed(seed, kSeedOutcome), 1, c.folds);
    for (const auto* m : {models.model_treated.get(), models.model_control.get()})
        for (const auto& w : m->warnings()) out.warnings.push_back(w);
    EffectSurface surface = estimate_ite(models, cohort);
    const int H = cohort.horizon;
    for (int t = 1; t <= H; ++t) {
        const auto col = surface.column(t);
        std::vector<double> tr(cohort.size());
        for (std::size_t i = 0; i < cohort.size(); ++i) tr[i] = truth.ite(cohort.subjects[i], t);
        out.nrmse.push_back(nrmse(col, tr));
        out.psi_var.push_back(variance(col));
        out.ate_truth.push_back(mean(tr));
        out.ate_initial.push_back(mean(col));
    }
    out.bias_initial = pct_bias_curve(out.ate_initial, out.ate_truth);
    return surface;
}

}  // namespace detail

/// One Experiment 1 replicate: cohort, Step 1, Step 2 for each method.
inline ReplicateResult run_exp1_replicate(const Scenario& sc, double r, const RunConfig& c, std::size_t rep,
                                          std::uint64_t seed) {
    ReplicateResult out;
    out.replicate = rep + 1;
    out.seed = seed;
    try {
        dgp::DgpParams p;
        p.n = sc.n;
        p.d = sc.d;
        p.beta = sc.beta;
        p.r = r;
        p.horizon = c.horizon;
        p.seed = derive_seed(seed, kSeedCohort);
        const auto [cohort, truth] = dgp::generate_cohort(p, r);
        out.event_rate = dgp::event_rate(cohort);
        const auto surface = detail::step_one(cohort, truth, c, seed, out);
        const auto psi = surface.column(c.horizon);
        for (importance::Method m : c.methods) {
            const auto curve = importance::score_features(psi, cohort, m, derive_seed(seed, kSeedImportance), c.scorer);
            const auto sel = importance::select_features(curve);
            const auto acc = importance::ppv_tpr(sel.selected, dgp::true_features());
            MethodResult mr;
            mr.method = importance::to_string(m);
            mr.selected = sel.selected;
            mr.knee_rank = sel.knee_rank;
            mr.ppv = acc.ppv;
            mr.tpr = acc.tpr;
            mr.hits.assign(sc.d, 0);
            for (std::size_t j : sel.selected) mr.hits[j] = 1;
            out.methods.push_back(std::move(mr));
        }
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

/// One Experiment 2 replicate: cohort, Step 1, nuisances, whole-cohort and
/// designated-stratum targeting.
inline ReplicateResult run_exp2_replicate(const Scenario& sc, double r, const RunConfig& c, std::size_t rep,
                                          std::uint64_t seed) {
    ReplicateResult out;
    out.replicate = rep + 1;
    out.seed = seed;
    try {
        dgp::DgpParams p;
        p.n = sc.n;
        p.d = sc.d;
        p.beta = sc.beta;
        p.r = r;
        p.horizon = c.horizon;
        p.seed = derive_seed(seed, kSeedCohort);
        const auto [cohort, truth] = dgp::generate_cohort(p, r);
        out.event_rate = dgp::event_rate(cohort);
        const auto surface = detail::step_one(cohort, truth, c, seed, out);
        const int H = c.horizon;

        const auto fits = fit_nuisances(cohort, c.library, derive_seed(seed, kSeedNuisance), 1, c.folds);
        for (const auto& w : fits.warnings) out.warnings.push_back(w);
        TargetOptions topt;
        topt.epsilon = c.epsilon;
        topt.max_steps = c.max_steps;
        const auto global = one_step_target(cohort, fits, surface, {}, topt);
        for (int t = 1; t <= H; ++t) out.ate_targeted.push_back(global.ate(t));
        out.bias_targeted = detail::pct_bias_curve(out.ate_targeted, out.ate_truth);
        out.targeting_converged = global.arm1.converged() && global.arm0.converged();
        out.max_steps_reached = global.max_steps_reached();
        out.monotone = true;
        for (const ArmTarget* arm : {&global.arm1, &global.arm0})
            for (std::size_t k = 0; k < global.size(); ++k)
                for (int t = 2; t <= H; ++t)
                    if (arm->curves.S(k, t) > arm->curves.S(k, t - 1)) out.monotone = false;

        const auto feature = cohort.feature_index(c.cate_feature);
        if (!feature) throw ConfigError("cate.feature '" + c.cate_feature + "' is not a cohort column");
        StratifyOptions so;
        so.groups = sc.strata;
        so.binning = c.binning;
        so.breaks = c.breaks;
        const auto strat = stratify(cohort, *feature, so);
        for (const auto& w : strat.warnings) out.warnings.push_back(w);
        for (int t = 1; t <= H; ++t) {
            double recon = 0.0;
            for (const auto& s : strat.strata)
                recon += static_cast<double>(s.size()) / static_cast<double>(cohort.size()) * mcate(global, s, t);
            out.partition_gap = std::max(out.partition_gap, std::abs(recon - global.ate(t)));
        }

        const auto it = std::find_if(strat.strata.begin(), strat.strata.end(),
                                     [&](const Stratum& s) { return s.label == c.cate_stratum; });
        if (it == strat.strata.end())
            throw EmptyStratum("designated stratum " + std::to_string(c.cate_stratum) + " is empty or out of range");
        const auto cate = estimate_cate(cohort, fits, surface, {*it}, topt, c.level, derive_seed(seed, kSeedBand));
        StratumResult sr;
        sr.label = it->label;
        sr.size = it->size();
        sr.lower = it->lower;
        sr.upper = it->upper;
        sr.targeted = cate.front().psi;
        sr.half_width = cate.front().half_width;
        sr.max_steps_reached = cate.front().max_steps_reached;
        for (const auto& w : cate.front().warnings) out.warnings.push_back(w);
        for (int t = 1; t <= H; ++t) {
            std::vector<double> tr(cohort.size());
            for (std::size_t i : it->members) tr[i] = truth.ite(cohort.subjects[i], t);
            sr.truth.push_back(detail::mean_of_members(tr, it->members));
            sr.initial.push_back(detail::mean_of_members(surface.column(t), it->members));
            sr.global.push_back(mcate(global, *it, t));
        }
        sr.bias_initial = detail::pct_bias_curve(sr.initial, sr.truth);
        sr.bias_global = detail::pct_bias_curve(sr.global, sr.truth);
        sr.bias_targeted = detail::pct_bias_curve(sr.targeted, sr.truth);
        out.stratum = std::move(sr);
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

namespace detail {

inline ExperimentReport run_grid(const std::string& name, const RunConfig& c,
                                 ReplicateResult (*one)(const Scenario&, double, const RunConfig&, std::size_t, std::uint64_t)) {
    c.validate();
    ExperimentReport rep;
    rep.experiment = name;
    rep.config_hash = config_hash(c);
    rep.config = c;
    const auto grid = expand_grid(c);
    std::map<std::tuple<std::size_t, double, double>, double> rates;  // (d, beta, rate) -> r
    for (std::size_t s = 0; s < grid.size(); ++s) {
        ScenarioResult sr;
        sr.index = s;
        sr.scenario = grid[s];
        const auto key = std::make_tuple(grid[s].d, grid[s].beta, grid[s].rate);
        if (!rates.count(key)) rates[key] = dgp::calibrate_rate(grid[s].rate, grid[s].d, grid[s].beta, c.horizon);
        sr.r = rates[key];
        sr.replicates.resize(c.replicates);
        rep.scenarios.push_back(std::move(sr));
    }
    // Flatten scenario x replicate so threads balance across the grid.
    const std::size_t total = grid.size() * c.replicates;
    parallel_for(total, c.threads, [&](std::size_t k) {
        const std::size_t s = k / c.replicates, b = k % c.replicates;
        auto& sr = rep.scenarios[s];
        sr.replicates[b] = one(sr.scenario, sr.r, c, b, replicate_seed(c.seed, s, b));
    });
    return rep;
}

}  // namespace detail

inline ExperimentReport run_experiment1(const RunConfig& c) { return detail::run_grid("exp1", c, &run_exp1_replicate); }
inline ExperimentReport run_experiment2(const RunConfig& c) { return detail::run_grid("exp2", c, &run_exp2_replicate); }

// ---------------------------------------------------------------------------
// Aggregates. Each is a pure function of the replicate rows.
// ---------------------------------------------------------------------------

struct MethodAggregate {
    std::string method;
    double ppv = 0.0;
    double tpr = 0.0;
    std::vector<double> hit_rate;  // per feature
};

struct ScenarioAggregate {
    std::size_t completed = 0;
    std::size_t failed = 0;
    std::vector<double> nrmse, psi_var, bias_initial, bias_targeted;
    std::vector<double> stratum_bias_initial, stratum_bias_global, stratum_bias_targeted;
    std::vector<MethodAggregate> methods;
};

inline ScenarioAggregate aggregate(const ScenarioResult& s) {
    ScenarioAggregate a;
    a.completed = s.completed();
    a.failed = s.replicates.size() - a.completed;
    if (a.completed == 0) return a;
    const auto& reps = s.replicates;
    a.nrmse = detail::mean_over_ok(reps, [](const ReplicateResult& r) -> const std::vector<double>& { return r.nrmse; });
    a.psi_var = detail::mean_over_ok(reps, [](const ReplicateResult& r) -> const std::vector<double>& { return r.psi_var; });
    a.bias_initial = detail::mean_over_ok(reps, [](const ReplicateResult& r) -> const std::vector<double>& { return r.bias_initial; });
    a.bias_targeted = detail::mean_over_ok(reps, [](const ReplicateResult& r) -> const std::vector<double>& { return r.bias_targeted; });
    const bool has_stratum = std::any_of(reps.begin(), reps.end(), [](const auto& r) { return r.ok && r.stratum; });
    if (has_stratum) {
        a.stratum_bias_initial =
            detail::mean_over_ok(reps, [](const ReplicateResult& r) -> const std::vector<double>& { return r.stratum->bias_initial; });
        a.stratum_bias_global =
            detail::mean_over_ok(reps, [](const ReplicateResult& r) -> const std::vector<double>& { return r.stratum->bias_global; });
        a.stratum_bias_targeted =
            detail::mean_over_ok(reps, [](const ReplicateResult& r) -> const std::vector<double>& { return r.stratum->bias_targeted; });
    }
    std::map<std::string, std::size_t> slot;
    for (const auto& r : reps) {
        if (!r.ok) continue;
        for (const auto& m : r.methods) {
            if (!slot.count(m.method)) {
                slot[m.method] = a.methods.size();
                a.methods.push_back({m.method, 0.0, 0.0, std::vector<double>(m.hits.size(), 0.0)});
            }
            auto& agg = a.methods[slot[m.method]];
            agg.ppv += m.ppv;
            agg.tpr += m.tpr;
            for (std::size_t j = 0; j < m.hits.size(); ++j) agg.hit_rate[j] += m.hits[j];
        }
    }
    const double k = static_cast<double>(a.completed);
    for (auto& m : a.methods) {
        m.ppv /= k;
        m.tpr /= k;
        for (double& h : m.hit_rate) h /= k;
    }
    return a;
}

}  // namespace survhte::harness
