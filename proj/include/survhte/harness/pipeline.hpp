#pragma once

// Steps 1-3 on an ingested cohort, without any truth-dependent metric. The
// building blocks double as the payloads of the single-step CLI commands.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "survhte/cate.hpp"
#include "survhte/harness/config.hpp"
#include "survhte/harness/io.hpp"
#include "survhte/importance/scorers.hpp"
#include "survhte/importance/stability.hpp"
#include "survhte/survival_ite.hpp"
#include "survhte/tmle.hpp"

namespace survhte::harness {

using Json = nlohmann::ordered_json;

inline Json stack_json(const learners::StackedModel& m) {
    Json members = Json::array();
    for (const auto& s : m.members())
        members.push_back(Json{{"learner", s.name}, {"weight", s.weight}, {"cv_risk", s.cv_risk}, {"path_index", s.path_index}});
    return Json{{"members", std::move(members)}, {"warnings", m.warnings()}};
}

inline Json curve_json(const std::vector<double>& v) { return Json(v); }

inline std::vector<double> mean_curve(const EffectSurface& s) {
    std::vector<double> out;
    for (int t = 1; t <= s.horizon; ++t) out.push_back(mean(s.column(t)));
    return out;
}

/// Step 2 for each method on the horizon column of the surface.
inline std::vector<importance::SelectionResult> run_importance(const Cohort& cohort, const EffectSurface& surface,
                                                               const RunConfig& c, std::uint64_t seed) {
    if (surface.n != cohort.size()) throw DimensionError("importance: surface does not match cohort");
    const auto psi = surface.column(surface.horizon);
    std::vector<importance::SelectionResult> out(c.methods.size());
    parallel_for(c.methods.size(), c.threads, [&](std::size_t k) {
        const auto curve = importance::score_features(psi, cohort, c.methods[k], seed, c.scorer);
        out[k] = importance::select_features(curve);
    });
    return out;
}

inline Json selection_json(const importance::SelectionResult& s, const Cohort& cohort,
                           const std::vector<std::size_t>* truth = nullptr) {
    Json scores = Json::object();
    for (std::size_t j = 0; j < s.curve.scores.size(); ++j) scores[cohort.feature_names[j]] = s.curve.scores[j];
    Json order = Json::array();
    for (std::size_t j : s.curve.order) order.push_back(cohort.feature_names[j]);
    Json selected = Json::array();
    for (std::size_t j : s.selected) selected.push_back(cohort.feature_names[j]);
    Json j{{"method", s.method}, {"scores", std::move(scores)}, {"order", std::move(order)}};
    j["knee_rank"] = s.knee_rank ? Json(*s.knee_rank) : Json(nullptr);
    j["no_knee"] = s.no_knee;
    j["selected"] = std::move(selected);
    if (truth) {
        const auto acc = importance::ppv_tpr(s.selected, *truth);
        j["ppv"] = acc.ppv;
        j["tpr"] = acc.tpr;
        j["true_positives"] = acc.true_positives;
        j["false_positives"] = acc.false_positives;
    }
    return j;
}

struct TargetResult {
    NuisanceFits fits;
    TargetedFit fit;
    Band band;
};

inline TargetOptions target_options(const RunConfig& c) {
    TargetOptions t;
    t.epsilon = c.epsilon;
    t.max_steps = c.max_steps;
    return t;
}

inline TargetResult run_target(const Cohort& cohort, const EffectSurface& surface, const RunConfig& c, std::uint64_t seed) {
    TargetResult r{fit_nuisances(cohort, c.library, derive_seed(seed, 0), c.threads, c.folds), {}, {}};
    r.fit = one_step_target(cohort, r.fits, surface, {}, target_options(c), c.threads);
    r.band = simultaneous_band(r.fit.effect_eic(), r.fit.size(), r.fit.horizon, c.level, 10000, derive_seed(seed, 1));
    return r;
}

inline Json arm_json(const ArmTarget& a) {
    return Json{{"steps", a.steps},
                {"halvings", a.halvings},
                {"converged", a.converged()},
                {"max_steps_reached", a.max_steps_reached},
                {"final_max_abs_pn_eic", a.final_max_abs},
                {"tolerance", a.tolerance}};
}

inline Json target_json(const TargetResult& r, const EffectSurface& initial) {
    std::vector<double> ate, lower, upper;
    for (int t = 1; t <= r.fit.horizon; ++t) {
        const double v = r.fit.ate(t);
        const double h = r.band.half_width[static_cast<std::size_t>(t - 1)];
        ate.push_back(v);
        lower.push_back(v - h);
        upper.push_back(v + h);
    }
    Json j;
    j["ate_initial"] = mean_curve(initial);
    j["ate_targeted"] = ate;
    j["lower"] = lower;
    j["upper"] = upper;
    // CI* is the distance from the estimate to the upper band limit.
    j["ci_star"] = r.band.half_width;
    j["band_multiplier"] = r.band.multiplier;
    j["band_warnings"] = r.band.warnings;
    j["treated"] = arm_json(r.fit.arm1);
    j["control"] = arm_json(r.fit.arm0);
    j["nuisance_warnings"] = r.fits.warnings;
    j["propensity"] = stack_json(*r.fits.g_model);
    if (r.fits.hc_model) j["censoring"] = stack_json(*r.fits.hc_model);
    return j;
}

/// Stratification of the configured feature. Equal-width bins span the
/// observed range unless explicit breaks are given.
inline Stratification configured_strata(const Cohort& cohort, const RunConfig& c, const std::string& feature,
                                        std::size_t groups) {
    const auto j = cohort.feature_index(feature);
    if (!j) throw ConfigError("cate: unknown feature '" + feature + "'");
    StratifyOptions so;
    so.groups = groups;
    so.binning = c.binning;
    so.breaks = c.breaks;
    double lo = cohort.subjects.front().x[*j], hi = lo;
    for (const auto& s : cohort.subjects) {
        lo = std::min(lo, s.x[*j]);
        hi = std::max(hi, s.x[*j]);
    }
    so.range_lo = lo;
    so.range_hi = hi > lo ? hi : lo + 1.0;
    return stratify(cohort, *j, so);
}

inline Json cate_json(const std::vector<CateEstimate>& est, const Cohort& cohort, const std::vector<std::string>& warnings) {
    Json strata = Json::array();
    for (const auto& e : est) {
        std::vector<double> lower, upper;
        for (std::size_t t = 0; t < e.psi.size(); ++t) {
            lower.push_back(e.psi[t] - e.half_width[t]);
            upper.push_back(e.psi[t] + e.half_width[t]);
        }
        Json s{{"feature", cohort.feature_names[e.stratum.feature]},
               {"stratum", e.stratum.label},
               {"size", e.stratum.size()},
               {"lower_bound", e.stratum.lower},
               {"upper_bound", e.stratum.upper}};
        s["estimate"] = e.psi;
        s["lower"] = lower;
        s["upper"] = upper;
        s["band_multiplier"] = e.multiplier;
        s["steps"] = Json{{"treated", e.steps1}, {"control", e.steps0}};
        s["max_steps_reached"] = e.max_steps_reached;
        s["warnings"] = e.warnings;
        strata.push_back(std::move(s));
    }
    return Json{{"strata", std::move(strata)}, {"warnings", warnings}};
}

/// Long format: feature,stratum,t,estimate,lower,upper,h_q.
inline std::string cate_csv(const std::vector<CateEstimate>& est, const Cohort& cohort) {
    std::string out = "feature,stratum,t,estimate,lower,upper,h_q\n";
    for (const auto& e : est)
        for (std::size_t t = 0; t < e.psi.size(); ++t)
            out += cohort.feature_names[e.stratum.feature] + "," + std::to_string(e.stratum.label) + "," + std::to_string(t + 1) +
                   "," + format_double(e.psi[t]) + "," + format_double(e.psi[t] - e.half_width[t]) + "," +
                   format_double(e.psi[t] + e.half_width[t]) + "," + std::to_string(e.stratum.size()) + "\n";
    return out;
}

struct PipelineResult {
    OutcomeModels models;
    EffectSurface surface;
    std::vector<importance::SelectionResult> selections;
    TargetResult target;
    std::vector<CateEstimate> cate;
    Stratification strata;
    std::optional<importance::StabilityResult> stability;
};

/// Steps 1-3 end to end; bootstrap stability when configured.
inline PipelineResult run_pipeline(const Cohort& cohort, const RunConfig& c) {
    c.validate();
    PipelineResult r;
    const std::uint64_t seed = c.seed;
    r.models = fit_outcome_models(cohort, c.library, derive_seed(seed, 1), c.threads, c.folds);
    r.surface = estimate_ite(r.models, cohort);
    r.selections = run_importance(cohort, r.surface, c, derive_seed(seed, 2));
    r.target = run_target(cohort, r.surface, c, derive_seed(seed, 3));
    r.strata = configured_strata(cohort, c, c.cate_feature, c.strata.front());
    r.cate = estimate_cate(cohort, r.target.fits, r.surface, r.strata.strata, target_options(c), c.level, derive_seed(seed, 4),
                           c.threads);
    if (c.bootstrap_replicates > 0) {
        const std::size_t m = std::min(c.bootstrap_size, cohort.size());
        r.stability = importance::bootstrap_stability(cohort, c.methods, c.bootstrap_replicates, m, derive_seed(seed, 5),
                                                      c.library, c.scorer, c.threads);
    }
    return r;
}

inline Json stability_json(const importance::StabilityResult& s, const Cohort& cohort) {
    Json counts = Json::object();
    for (const auto& [method, v] : s.counts) {
        Json per = Json::object();
        for (std::size_t j = 0; j < v.size(); ++j) per[cohort.feature_names[j]] = v[j];
        counts[method] = std::move(per);
    }
    return Json{{"replicates", s.replicates}, {"completed", s.completed}, {"counts", std::move(counts)}, {"failures", s.failures}};
}

inline Json pipeline_json(const PipelineResult& r, const Cohort& cohort, const RunConfig& c) {
    Json j{{"config_hash", config_hash(c)}, {"n", cohort.size()}, {"d", cohort.dim}, {"horizon", cohort.horizon}};
    j["outcome_models"] = Json{{"treated", stack_json(*r.models.model_treated)}, {"control", stack_json(*r.models.model_control)}};
    Json sel = Json::array();
    for (const auto& s : r.selections) sel.push_back(selection_json(s, cohort));
    j["importance"] = std::move(sel);
    j["target"] = target_json(r.target, r.surface);
    j["cate"] = cate_json(r.cate, cohort, r.strata.warnings);
    if (r.stability) j["stability"] = stability_json(*r.stability, cohort);
    return j;
}

}  // namespace survhte::harness
