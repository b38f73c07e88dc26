#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/core_data.hpp"

namespace survhte::dgp {

/// Simulation settings. `r == 0` with a `target_rate` means "calibrate r".
struct DgpParams {
    std::size_t n = 3000;
    std::size_t d = 10;
    double beta = 0.5;
    double r = 0.0;
    std::optional<double> target_rate;
    int horizon = 12;
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1) throw ConfigError("dgp: n must be >= 1");
        if (d < 6) throw ConfigError("dgp: d must be >= 6");
        if (horizon < 1) throw ConfigError("dgp: horizon must be >= 1");
        if (target_rate && !(*target_rate > 0.0 && *target_rate < 1.0))
            throw ConfigError("dgp: target rate must lie in (0, 1)");
        if (!target_rate && !(r > 0.0)) throw ConfigError("dgp: r must be > 0");
    }
};

/// Indices of the covariates that drive effect heterogeneity (X1..X5).
inline const std::vector<std::size_t>& true_features() {
    static const std::vector<std::size_t> idx{0, 1, 2, 3, 4};
    return idx;
}

/// Heterogeneous part of the rate: X1 + 3 X5 + (1 - 3 X2)^2 + X3 X4.
inline double effect_modifier(std::span<const double> x) {
    const double q = 1.0 - 3.0 * x[1];
    return x[0] + 3.0 * x[4] + q * q + x[2] * x[3];
}

inline double baseline_sum(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
}

/// Exponential event rate for arm a.
inline double tau(int a, std::span<const double> x, double r) {
    if (x.size() < 5) throw DimensionError("tau: need at least 5 covariates");
    return ((a == 1 ? effect_modifier(x) : 0.0) + baseline_sum(x)) / r;
}

inline double true_survival(int a, std::span<const double> x, double t, double r) {
    return std::exp(-t * tau(a, x, r));
}

inline double true_ite(std::span<const double> x, double t, double r) {
    return true_survival(1, x, t, r) - true_survival(0, x, t, r);
}

/// Discrete-period hazard implied by the exponential law: 1 - exp(-tau).
inline double true_hazard(int a, std::span<const double> x, double r) { return -std::expm1(-tau(a, x, r)); }

inline double true_propensity(std::span<const double> x, double beta) {
    const double odds = 0.25 + beta * (x[0] + x[1]);
    return odds / (1.0 + odds);
}

/// Censoring law: Weibull with shape 1 + 0.2 X1 and scale 50.
inline double censor_shape(std::span<const double> x) { return 1.0 + 0.2 * x[0]; }
inline constexpr double kCensorScale = 50.0;

/// Probability of remaining uncensored past continuous time t.
inline double true_censor_survival(std::span<const double> x, double t) {
    if (t <= 0) return 1.0;
    return std::exp(-std::pow(t / kCensorScale, censor_shape(x)));
}

struct LatentTimes {
    double t_event;   // +inf when the rate is zero
    double t_censor;
};

/// Draws for subject `i`: covariates use counters 0..d-1, then treatment,
/// event and censoring uniforms. Each subject owns a counter-based stream so
/// the cohort does not depend on generation order.
struct SubjectDraw {
    std::vector<double> x;
    int a;
    LatentTimes latent;
};

inline SubjectDraw draw_subject(std::uint64_t seed, std::size_t i, std::size_t d, double beta, double r) {
    const CounterRng rng(derive_seed(seed, i));
    SubjectDraw s;
    s.x.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double u = rng.uniform(j);
        s.x[j] = (j == 3) ? (u < 0.5 ? 1.0 : 0.0) : u;
    }
    s.a = rng.uniform(d) < true_propensity(s.x, beta) ? 1 : 0;
    const double rate = tau(s.a, s.x, r);
    const double e = -std::log(rng.uniform(d + 1));
    s.latent.t_event = rate > 0.0 ? e / rate : std::numeric_limits<double>::infinity();
    s.latent.t_censor = kCensorScale * std::pow(-std::log(rng.uniform(d + 2)), 1.0 / censor_shape(s.x));
    return s;
}

/// Ground truth kept alongside a simulated cohort.
struct TruthHandle {
    DgpParams params;
    double r = 0.0;
    std::vector<LatentTimes> latent;

    double ite(const Subject& s, int t) const { return true_ite(s.x, t, r); }

    /// n x horizon matrix (row-major) of true ITEs for the given cohort.
    std::vector<double> ite_matrix(const Cohort& cohort) const {
        const int H = cohort.horizon;
        std::vector<double> out(cohort.size() * static_cast<std::size_t>(H));
        for (std::size_t i = 0; i < cohort.size(); ++i)
            for (int t = 1; t <= H; ++t) out[i * H + (t - 1)] = ite(cohort.subjects[i], t);
        return out;
    }

    /// Sample average of true ITEs at t over the given cohort.
    double sample_ate(const Cohort& cohort, int t) const {
        double s = 0.0;
        for (const auto& sub : cohort.subjects) s += ite(sub, t);
        return cohort.size() ? s / static_cast<double>(cohort.size()) : 0.0;
    }
};

inline std::vector<std::string> dgp_feature_names(std::size_t d) {
    std::vector<std::string> names;
    for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
    return names;
}

/// Fraction of subjects with an observed event by the horizon.
inline double event_rate(const Cohort& cohort) {
    std::size_t events = 0;
    for (const auto& s : cohort.subjects) events += static_cast<std::size_t>(event_within(s, cohort.horizon));
    return cohort.size() ? static_cast<double>(events) / static_cast<double>(cohort.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// Calibration of r
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kCalibrationSeed = 0x52a7e0ca11b7a7e5ULL;
inline constexpr std::size_t kCalibrationDraws = 200000;
inline constexpr double kCalibrationTolerance = 0.002;
inline constexpr double kRateLo = 0.1;
inline constexpr double kRateHi = 10000.0;

/// Common-random-number sample used to evaluate the event rate as a function
/// of r. The rate is monotone non-increasing in r for a fixed sample.
class EventRateCurve {
public:
    EventRateCurve(std::size_t d, double beta, int horizon, std::size_t draws = kCalibrationDraws,
                   std::uint64_t seed = kCalibrationSeed)
        : horizon_(horizon) {
        scaled_rate_.resize(draws);
        unit_event_.resize(draws);
        censor_.resize(draws);
        for (std::size_t i = 0; i < draws; ++i) {
            // r = 1 gives tau * r; event time scales linearly in r.
            const SubjectDraw s = draw_subject(seed, i, d, beta, 1.0);
            scaled_rate_[i] = tau(s.a, s.x, 1.0);
            unit_event_[i] = s.latent.t_event * scaled_rate_[i];
            censor_[i] = s.latent.t_censor;
        }
    }

    double operator()(double r) const {
        const double limit = static_cast<double>(horizon_);
        std::size_t events = 0;
        for (std::size_t i = 0; i < censor_.size(); ++i) {
            if (scaled_rate_[i] <= 0.0) continue;
            const double t = unit_event_[i] * r / scaled_rate_[i];
            if (t <= censor_[i] && t <= limit) ++events;
        }
        return static_cast<double>(events) / static_cast<double>(censor_.size());
    }

private:
    int horizon_;
    std::vector<double> scaled_rate_;
    std::vector<double> unit_event_;
    std::vector<double> censor_;
};

/// Bisection (on log r) for the r giving the target event rate.
inline double calibrate_rate(double target_rate, std::size_t d, double beta, int horizon,
                             double tolerance = kCalibrationTolerance, std::size_t draws = kCalibrationDraws) {
    if (!(target_rate > 0.0 && target_rate < 1.0)) throw CalibrationError("target rate must lie in (0, 1)");
    const EventRateCurve rate(d, beta, horizon, draws);
    double lo = kRateLo, hi = kRateHi;
    const double r_lo = rate(lo), r_hi = rate(hi);
    if (target_rate > r_lo + 1e-15 || target_rate < r_hi - 1e-15)
        throw CalibrationError("target event rate " + std::to_string(target_rate) + " outside reachable range [" +
                               std::to_string(r_hi) + ", " + std::to_string(r_lo) + "] for r in [0.1, 10000]");
    for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        const double m = rate(mid);
        if (std::abs(m - target_rate) <= tolerance) return mid;
        if (m > target_rate)
            lo = mid;
        else
            hi = mid;
    }
    throw CalibrationError("bisection did not reach tolerance");
}

inline double calibrate_rate(double target_rate, const DgpParams& params) {
    return calibrate_rate(target_rate, params.d, params.beta, params.horizon);
}

/// Resolves r for the params: explicit r wins, otherwise calibrate.
inline double resolve_rate(const DgpParams& params) {
    params.validate();
    if (params.r > 0.0) return params.r;
    return calibrate_rate(*params.target_rate, params);
}

inline std::pair<Cohort, TruthHandle> generate_cohort(const DgpParams& params, std::optional<double> r_known = {}) {
    params.validate();
    const double r = r_known ? *r_known : resolve_rate(params);
    Cohort cohort;
    cohort.dim = params.d;
    cohort.horizon = params.horizon;
    cohort.feature_names = dgp_feature_names(params.d);
    cohort.subjects.resize(params.n);
    TruthHandle truth;
    truth.params = params;
    truth.params.r = r;
    truth.r = r;
    truth.latent.resize(params.n);
    for (std::size_t i = 0; i < params.n; ++i) {
        SubjectDraw s = draw_subject(params.seed, i, params.d, params.beta, r);
        const double t_min = std::min(s.latent.t_event, s.latent.t_censor);
        Subject& sub = cohort.subjects[i];
        sub.id = std::to_string(i + 1);
        sub.x = std::move(s.x);
        sub.a = s.a;
        sub.y = s.latent.t_event <= s.latent.t_censor ? 1 : 0;
        sub.t_obs = std::max(1, static_cast<int>(std::ceil(t_min)));
        truth.latent[i] = s.latent;
    }
    return {std::move(cohort), std::move(truth)};
}

/// Monte Carlo population ATE at each t = 1..horizon from fresh covariate draws.
inline std::vector<double> monte_carlo_ate(std::size_t d, double beta, double r, int horizon, std::size_t draws,
                                           std::uint64_t seed) {
    std::vector<double> ate(static_cast<std::size_t>(horizon), 0.0);
    for (std::size_t i = 0; i < draws; ++i) {
        const SubjectDraw s = draw_subject(seed, i, d, beta, r);
        const double t0 = tau(0, s.x, r), t1 = tau(1, s.x, r);
        for (int t = 1; t <= horizon; ++t) ate[t - 1] += std::exp(-t * t1) - std::exp(-t * t0);
    }
    for (double& v : ate) v /= static_cast<double>(draws);
    return ate;
}

}  // namespace survhte::dgp
