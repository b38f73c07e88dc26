#pragma once

// One-step targeting of treatment-specific survival curves along the
// universal least-favorable direction, plus simultaneous confidence bands.

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/random/sobol.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/core_data.hpp"
#include "survhte/learners/super_learner.hpp"
#include "survhte/survival_ite.hpp"

namespace survhte {

inline constexpr double kPositivityLo = 0.01;
inline constexpr double kPositivityHi = 0.99;
inline constexpr double kCensorSurvivalFloor = 0.01;

/// Nuisance predictions for every cohort subject. Censoring quantities are
/// evaluated at both treatment values; `gc_a[i*H + t-1]` is the probability
/// of remaining uncensored through period t.
struct NuisanceFits {
    std::size_t n = 0;
    int horizon = 1;
    std::vector<double> g;  // P(A=1|x), clamped
    std::vector<double> hc1, hc0;
    std::vector<double> gc1, gc0;
    std::shared_ptr<const learners::StackedModel> g_model;
    std::shared_ptr<const learners::StackedModel> hc_model;  // null when nobody is censored
    std::vector<std::string> warnings;

    double g_arm(std::size_t i, int a) const { return a == 1 ? g[i] : 1.0 - g[i]; }
    /// Censoring survivor through period s (s = 0 gives 1).
    double gc(std::size_t i, int a, int s) const {
        if (s <= 0) return 1.0;
        const auto& v = a == 1 ? gc1 : gc0;
        return v[i * static_cast<std::size_t>(horizon) + static_cast<std::size_t>(s - 1)];
    }
};

inline learners::FeatureMatrix covariate_features(const Cohort& cohort) {
    std::vector<std::vector<double>> xs;
    xs.reserve(cohort.size());
    for (const auto& s : cohort.subjects) xs.push_back(s.x);
    return learners::make_features(xs, cohort.feature_names.empty() ? std::vector<std::string>{} : cohort.feature_names);
}

/// Censoring design: covariates, treatment, linear period, plus categorical period.
inline learners::FeatureMatrix censoring_features(const Cohort& cohort, const PersonPeriodTable& table,
                                                  std::span<const int> arm_override = {}) {
    learners::FeatureMatrix m;
    const std::size_t d = cohort.dim;
    m.rows = table.rows.size();
    m.cols = d + 2;
    m.values.resize(m.rows * m.cols);
    m.period.resize(m.rows);
    m.periods = table.horizon;
    m.time_col = static_cast<long>(d + 1);
    m.names = cohort.feature_names;
    m.names.resize(d);
    m.names.push_back("a");
    m.names.push_back("t");
    for (std::size_t k = 0; k < m.rows; ++k) {
        const auto& r = table.rows[k];
        const auto& x = cohort.subjects[r.subject].x;
        std::copy(x.begin(), x.end(), m.values.begin() + static_cast<long>(k * m.cols));
        m.values[k * m.cols + d] = arm_override.empty() ? r.a : arm_override[k];
        m.values[k * m.cols + d + 1] = r.t;
        m.period[k] = r.t - 1;
    }
    return m;
}

inline NuisanceFits fit_nuisances(const Cohort& cohort, const std::vector<learners::BaseLearnerSpec>& library,
                                  std::uint64_t seed, unsigned threads = 1, std::size_t folds = 10) {
    const std::size_t n = cohort.size();
    const int H = cohort.horizon;
    const auto HH = static_cast<std::size_t>(H);
    if (cohort.count_arm(1) == 0) throw EmptyArmError("no treated subjects");
    if (cohort.count_arm(0) == 0) throw EmptyArmError("no control subjects");
    NuisanceFits f;
    f.n = n;
    f.horizon = H;

    // Propensity.
    const auto xg = covariate_features(cohort);
    std::vector<double> a(n);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = cohort.subjects[i].a;
        ids[i] = i;
    }
    learners::StackOptions gopt;
    gopt.folds = folds;
    gopt.threads = threads;
    gopt.seed = derive_seed(seed, 11);
    auto g_model = std::make_shared<learners::StackedModel>(learners::fit_super_learner(library, xg, a, ids, gopt));
    f.g.resize(n);
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double raw = learners::predict_probability(*g_model, xg, i);
        if (raw < kPositivityLo || raw > kPositivityHi) ++clamped;
        f.g[i] = std::clamp(raw, kPositivityLo, kPositivityHi);
    }
    if (static_cast<double>(clamped) > 0.05 * static_cast<double>(n))
        f.warnings.push_back("positivity: " + std::to_string(clamped) + " of " + std::to_string(n) +
                             " propensity predictions clamped to [0.01, 0.99]");
    f.g_model = std::move(g_model);

    // Censoring hazard on the censoring counting process, conditioning on (A, X).
    const auto table = expand_censoring_process(cohort, H);
    bool any_censored = false;
    for (const auto& r : table.rows) any_censored = any_censored || r.event == 1;
    f.hc1.assign(n * HH, kProbFloor);
    f.hc0.assign(n * HH, kProbFloor);
    if (any_censored) {
        const auto xc = censoring_features(cohort, table);
        std::vector<double> y(table.rows.size());
        std::vector<std::size_t> groups(table.rows.size());
        for (std::size_t k = 0; k < table.rows.size(); ++k) {
            y[k] = table.rows[k].event;
            groups[k] = table.rows[k].subject;
        }
        learners::StackOptions copt = gopt;
        copt.seed = derive_seed(seed, 12);
        auto hc_model = std::make_shared<learners::StackedModel>(learners::fit_super_learner(library, xc, y, groups, copt));
        PersonPeriodTable grid;
        grid.horizon = H;
        for (std::size_t i = 0; i < n; ++i)
            for (int t = 1; t <= H; ++t) grid.rows.push_back({i, t, 0, 0});
        for (int arm : {1, 0}) {
            const std::vector<int> arms(grid.rows.size(), arm);
            const auto xa = censoring_features(cohort, grid, arms);
            auto& dst = arm == 1 ? f.hc1 : f.hc0;
            for (std::size_t k = 0; k < grid.rows.size(); ++k)
                dst[k] = std::clamp(learners::predict_probability(*hc_model, xa, k), kProbFloor, kPositivityHi);
        }
        f.hc_model = std::move(hc_model);
    }
    for (int arm : {1, 0}) {
        const auto& hc = arm == 1 ? f.hc1 : f.hc0;
        auto& gc = arm == 1 ? f.gc1 : f.gc0;
        gc.resize(n * HH);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 1.0;
            for (std::size_t t = 0; t < HH; ++t) {
                acc *= 1.0 - hc[i * HH + t];
                gc[i * HH + t] = std::max(acc, kCensorSurvivalFloor);
            }
        }
    }
    return f;
}

/// H_{a,t}(s) for subject i with observed arm a_obs. Zero when a_obs != a or s > t.
inline double clever_covariate(int s, int t, int a, int a_obs, double g_a, double gc_prev, double surv_t, double surv_s) {
    if (a_obs != a || s > t) return 0.0;
    return -1.0 / (g_a * gc_prev) * surv_t / surv_s;
}

/// Hazards and survival curves of one arm for a set of subjects (m x H).
struct ArmCurves {
    int arm = 1;
    int horizon = 1;
    std::vector<std::size_t> members;  // cohort indices
    std::vector<double> hazard;
    std::vector<double> survival;

    std::size_t size() const { return members.size(); }
    double h(std::size_t k, int s) const { return hazard[k * static_cast<std::size_t>(horizon) + static_cast<std::size_t>(s - 1)]; }
    double S(std::size_t k, int t) const { return survival[k * static_cast<std::size_t>(horizon) + static_cast<std::size_t>(t - 1)]; }
    void refresh_survival() {
        const auto H = static_cast<std::size_t>(horizon);
        survival.resize(hazard.size());
        for (std::size_t k = 0; k < members.size(); ++k) {
            double acc = 1.0;
            for (std::size_t t = 0; t < H; ++t) {
                acc *= 1.0 - hazard[k * H + t];
                survival[k * H + t] = acc;
            }
        }
    }
};

inline ArmCurves arm_curves(const EffectSurface& surface, int a, std::span<const std::size_t> members) {
    ArmCurves c;
    c.arm = a;
    c.horizon = surface.horizon;
    c.members.assign(members.begin(), members.end());
    const auto H = static_cast<std::size_t>(surface.horizon);
    const auto& s = a == 1 ? surface.s1 : surface.s0;
    c.hazard.resize(members.size() * H);
    for (std::size_t k = 0; k < members.size(); ++k) {
        double prev = 1.0;
        for (std::size_t t = 0; t < H; ++t) {
            const double cur = s[members[k] * H + t];
            c.hazard[k * H + t] = clamp_probability(1.0 - cur / prev);
            prev = cur;
        }
    }
    c.refresh_survival();
    return c;
}

/// EIC of the arm-a survival curve, m x H row-major.
inline std::vector<double> eic_matrix(const Cohort& cohort, const NuisanceFits& fits, const ArmCurves& c) {
    const int H = c.horizon;
    const auto HH = static_cast<std::size_t>(H);
    if (fits.horizon != H || fits.n != cohort.size()) throw DimensionError("eic: nuisance fits do not match cohort");
    const std::size_t m = c.size();
    std::vector<double> psi(HH, 0.0);
    for (std::size_t k = 0; k < m; ++k)
        for (int t = 1; t <= H; ++t) psi[static_cast<std::size_t>(t - 1)] += c.S(k, t);
    for (double& v : psi) v /= static_cast<double>(m);
    std::vector<double> d(m * HH, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = c.members[k];
        const Subject& sub = cohort.subjects[i];
        if (sub.a == c.arm) {
            const double ga = fits.g_arm(i, c.arm);
            const int last = std::min(sub.t_obs, H);
            const int ev = event_within(sub, H);
            // r(s) = (dN(s) - h(s)) / (g Gc(s-1) S(s)) for at-risk s; then
            // D_t = -S(t) * sum_{s<=t} r(s).
            double cum = 0.0;
            for (int t = 1; t <= H; ++t) {
                if (t <= last) {
                    const double dn = (t == last && ev) ? 1.0 : 0.0;
                    cum += (dn - c.h(k, t)) / (ga * fits.gc(i, c.arm, t - 1) * c.S(k, t));
                }
                d[k * HH + static_cast<std::size_t>(t - 1)] = -c.S(k, t) * cum;
            }
        }
        for (int t = 1; t <= H; ++t) d[k * HH + static_cast<std::size_t>(t - 1)] += c.S(k, t) - psi[static_cast<std::size_t>(t - 1)];
    }
    return d;
}

struct ArmTarget {
    ArmCurves curves;
    std::vector<double> eic;
    std::vector<double> pn_eic;   // P_n D_t
    std::vector<double> sd_eic;   // sd of D_t
    std::vector<double> tolerance;  // sd_t / (sqrt(m) log m)
    int steps = 0;
    int halvings = 0;
    bool max_steps_reached = false;
    double final_max_abs = 0.0;

    bool converged() const {
        for (std::size_t t = 0; t < pn_eic.size(); ++t)
            if (std::abs(pn_eic[t]) > tolerance[t]) return false;
        return true;
    }
};

struct TargetOptions {
    double epsilon = 1e-3;
    int max_steps = 5000;
};

namespace detail {

inline void eic_summary(ArmTarget& r, std::size_t m, int H) {
    const auto HH = static_cast<std::size_t>(H);
    r.pn_eic.assign(HH, 0.0);
    r.sd_eic.assign(HH, 0.0);
    r.tolerance.assign(HH, 0.0);
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t t = 0; t < HH; ++t) r.pn_eic[t] += r.eic[k * HH + t];
    for (double& v : r.pn_eic) v /= static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t t = 0; t < HH; ++t) {
            const double e = r.eic[k * HH + t] - r.pn_eic[t];
            r.sd_eic[t] += e * e;
        }
    const double md = static_cast<double>(m);
    const double scale = std::sqrt(md) * std::log(std::max(md, 3.0));
    for (std::size_t t = 0; t < HH; ++t) {
        r.sd_eic[t] = m > 1 ? std::sqrt(r.sd_eic[t] / (md - 1.0)) : 0.0;
        r.tolerance[t] = r.sd_eic[t] / scale;
    }
    r.final_max_abs = 0.0;
    for (double v : r.pn_eic) r.final_max_abs = std::max(r.final_max_abs, std::abs(v));
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

}  // namespace detail

/// Targets one arm's curves for the given members. Each step moves
/// logit h(s|a,x) by eps * sum_t H_{a,t}(s) P_n D_t / ||P_n D||, with H
/// evaluated at A = a for every member; a step that increases ||P_n D|| is
/// undone and retried with half the step size.
inline ArmTarget target_arm(const Cohort& cohort, const NuisanceFits& fits, ArmCurves curves, const TargetOptions& opt = {}) {
    if (!(opt.epsilon > 0.0)) throw ConfigError("targeting: epsilon must be > 0");
    if (opt.max_steps < 0) throw ConfigError("targeting: max_steps must be >= 0");
    const int H = curves.horizon;
    const auto HH = static_cast<std::size_t>(H);
    const std::size_t m = curves.size();
    if (m == 0) throw EmptyStratum("targeting: no members");
    ArmTarget r;
    r.curves = std::move(curves);
    r.eic = eic_matrix(cohort, fits, r.curves);
    detail::eic_summary(r, m, H);
    double eps = opt.epsilon;
    std::vector<double> dir(m * HH);
    while (!r.converged()) {
        if (r.steps >= opt.max_steps) {
            r.max_steps_reached = true;
            break;
        }
        const double norm = detail::norm2(r.pn_eic);
        // Direction per (member, s): sum_{t>=s} H_t(s) w_t with w = PnD/||PnD||.
        for (std::size_t k = 0; k < m; ++k) {
            const std::size_t i = r.curves.members[k];
            const double ga = fits.g_arm(i, r.curves.arm);
            double tail = 0.0;  // sum_{t>=s} S(t) w_t
            for (int s = H; s >= 1; --s) {
                tail += r.curves.S(k, s) * r.pn_eic[static_cast<std::size_t>(s - 1)] / norm;
                dir[k * HH + static_cast<std::size_t>(s - 1)] =
                    -tail / (ga * fits.gc(i, r.curves.arm, s - 1) * r.curves.S(k, s));
            }
        }
        const std::vector<double> saved = r.curves.hazard;
        for (;;) {
            for (std::size_t q = 0; q < saved.size(); ++q) {
                const double v = expit(logit(saved[q]) + eps * dir[q]);
                if (!std::isfinite(v)) throw NonFiniteUpdate("targeting: non-finite hazard at step " + std::to_string(r.steps + 1));
                r.curves.hazard[q] = clamp_probability(v);
            }
            r.curves.refresh_survival();
            r.eic = eic_matrix(cohort, fits, r.curves);
            ArmTarget trial = r;
            detail::eic_summary(trial, m, H);
            if (detail::norm2(trial.pn_eic) <= norm || eps < 1e-12) {
                r.pn_eic = std::move(trial.pn_eic);
                r.sd_eic = std::move(trial.sd_eic);
                r.tolerance = std::move(trial.tolerance);
                r.final_max_abs = trial.final_max_abs;
                break;
            }
            eps *= 0.5;
            ++r.halvings;
        }
        ++r.steps;
    }
    return r;
}

/// Targeted fit of both arms over a set of members (a stratum or everyone).
struct TargetedFit {
    int horizon = 1;
    std::vector<std::size_t> members;
    ArmTarget arm1;
    ArmTarget arm0;

    std::size_t size() const { return members.size(); }
    double psi(std::size_t k, int t) const { return arm1.curves.S(k, t) - arm0.curves.S(k, t); }
    /// Mean targeted effect over members at t.
    double ate(int t) const {
        double s = 0.0;
        for (std::size_t k = 0; k < members.size(); ++k) s += psi(k, t);
        return s / static_cast<double>(members.size());
    }
    /// EIC of the effect (arm 1 minus arm 0), m x H.
    std::vector<double> effect_eic() const {
        std::vector<double> d(arm1.eic.size());
        for (std::size_t q = 0; q < d.size(); ++q) d[q] = arm1.eic[q] - arm0.eic[q];
        return d;
    }
    bool max_steps_reached() const { return arm1.max_steps_reached || arm0.max_steps_reached; }
};

inline TargetedFit one_step_target(const Cohort& cohort, const NuisanceFits& fits, const EffectSurface& initial,
                                   std::span<const std::size_t> members = {}, const TargetOptions& opt = {},
                                   unsigned threads = 1) {
    if (initial.n != cohort.size() || initial.horizon != fits.horizon) throw DimensionError("targeting: surface does not match cohort");
    TargetedFit f;
    f.horizon = initial.horizon;
    if (members.empty()) {
        f.members.resize(cohort.size());
        for (std::size_t i = 0; i < cohort.size(); ++i) f.members[i] = i;
    } else {
        f.members.assign(members.begin(), members.end());
    }
    parallel_for(2, threads, [&](std::size_t k) {
        const int a = k == 0 ? 1 : 0;
        auto res = target_arm(cohort, fits, arm_curves(initial, a, f.members), opt);
        (a == 1 ? f.arm1 : f.arm0) = std::move(res);
    });
    return f;
}

// ---------------------------------------------------------------------------
// Simultaneous bands
// ---------------------------------------------------------------------------

struct Band {
    double multiplier = 0.0;
    std::vector<double> sigma;       // sd_t / sqrt(n)
    std::vector<double> half_width;  // multiplier * sigma
    std::vector<std::string> warnings;
};

/// level-quantile of max_t |Z_t| for Z ~ N(0, corr). Points come from a
/// randomly shifted Sobol sequence mapped through the normal quantile.
inline double max_abs_gaussian_quantile(const Eigen::MatrixXd& corr, double level, std::size_t draws = 10000,
                                        std::uint64_t seed = 1) {
    const auto d = static_cast<std::size_t>(corr.rows());
    if (d == 0) return 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt(corr);
    Eigen::MatrixXd L;
    if (llt.info() == Eigen::Success) {
        L = llt.matrixL();
    } else {
        // Near-singular correlation (e.g. perfectly correlated periods):
        // symmetric square root from the eigen decomposition.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
        const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
        L = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    }
    boost::random::sobol qrng(static_cast<unsigned>(d));
    qrng.discard(d);  // skip the origin
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> shift(d);
    for (double& s : shift) s = unif(rng);
    const boost::math::normal stdnorm;
    std::vector<double> maxima(draws);
    Eigen::VectorXd z(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < draws; ++k) {
        for (std::size_t j = 0; j < d; ++j) {
            double u = static_cast<double>(qrng() >> 11) * 0x1.0p-53 + shift[j];
            u -= std::floor(u);
            u = std::clamp(u, 1e-12, 1.0 - 1e-12);
            z(static_cast<Eigen::Index>(j)) = boost::math::quantile(stdnorm, u);
        }
        maxima[k] = (L * z).cwiseAbs().maxCoeff();
    }
    const auto idx = static_cast<std::size_t>(std::ceil(level * static_cast<double>(draws))) - 1;
    std::nth_element(maxima.begin(), maxima.begin() + static_cast<long>(idx), maxima.end());
    return maxima[idx];
}

/// Per-t half-widths for an m x H EIC matrix. Zero-variance columns get
/// width 0 and a warning.
inline Band simultaneous_band(std::span<const double> eic, std::size_t m, int horizon, double level = 0.95,
                              std::size_t draws = 10000, std::uint64_t seed = 1) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("band: level must lie in (0, 1)");
    const auto H = static_cast<std::size_t>(horizon);
    if (eic.size() != m * H || m < 2) throw DimensionError("band: EIC matrix shape mismatch");
    Band b;
    Eigen::MatrixXd D(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(H));
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t t = 0; t < H; ++t) D(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = eic[k * H + t];
    const Eigen::RowVectorXd mu = D.colwise().mean();
    D.rowwise() -= mu;
    const Eigen::MatrixXd cov = D.transpose() * D / static_cast<double>(m - 1);
    std::vector<Eigen::Index> live;
    b.sigma.assign(H, 0.0);
    for (std::size_t t = 0; t < H; ++t) {
        const double v = cov(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t));
        b.sigma[t] = std::sqrt(std::max(v, 0.0) / static_cast<double>(m));
        if (v > 1e-300)
            live.push_back(static_cast<Eigen::Index>(t));
        else
            b.warnings.push_back("degenerate covariance: zero EIC variance at t=" + std::to_string(t + 1));
    }
    Eigen::MatrixXd corr(static_cast<Eigen::Index>(live.size()), static_cast<Eigen::Index>(live.size()));
    for (std::size_t r = 0; r < live.size(); ++r)
        for (std::size_t c = 0; c < live.size(); ++c)
            corr(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                cov(live[r], live[c]) / std::sqrt(cov(live[r], live[r]) * cov(live[c], live[c]));
    b.multiplier = max_abs_gaussian_quantile(corr, level, draws, seed);
    b.half_width.resize(H);
    for (std::size_t t = 0; t < H; ++t) b.half_width[t] = b.multiplier * b.sigma[t];
    return b;
}

}  // namespace survhte
