#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/core_data.hpp"
#include "survhte/tmle.hpp"

namespace survhte {

struct Stratum {
    std::size_t feature = 0;
    std::size_t label = 1;  // 1..Q
    std::vector<std::size_t> members;  // cohort indices
    double lower = 0.0;  // [lower, upper); the last interval is closed
    double upper = 0.0;
    std::optional<double> level;  // binary features

    std::size_t size() const { return members.size(); }
};

enum class Binning { equal_width, quantile };

struct StratifyOptions {
    std::size_t groups = 10;
    Binning binning = Binning::equal_width;
    double range_lo = 0.0;  // equal-width support
    double range_hi = 1.0;
    std::vector<double> breaks;  // explicit breaks override the above
};

struct Stratification {
    std::vector<Stratum> strata;
    std::vector<std::string> warnings;
};

namespace detail {

inline bool is_binary_feature(const Cohort& cohort, std::size_t j) {
    for (const auto& s : cohort.subjects)
        if (s.x[j] != 0.0 && s.x[j] != 1.0) return false;
    return true;
}

inline std::vector<double> quantile_breaks(const Cohort& cohort, std::size_t j, std::size_t groups) {
    std::vector<double> v;
    for (const auto& s : cohort.subjects) v.push_back(s.x[j]);
    std::sort(v.begin(), v.end());
    std::vector<double> b{v.front()};
    for (std::size_t q = 1; q < groups; ++q) {
        const double pos = static_cast<double>(q) / static_cast<double>(groups) * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        const double val = v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
        if (val > b.back()) b.push_back(val);
    }
    if (v.back() > b.back())
        b.push_back(v.back());
    else
        b.push_back(b.back() + 1.0);
    return b;
}

}  // namespace detail

/// Splits the cohort on one feature. Binary features split by level;
/// continuous features use explicit breaks, equal-width bins over
/// [range_lo, range_hi], or sample quantiles.
inline Stratification stratify(const Cohort& cohort, std::size_t feature, const StratifyOptions& opt = {}) {
    if (feature >= cohort.dim) throw DimensionError("stratify: feature index out of range");
    if (cohort.size() == 0) throw EmptyStratum("stratify: empty cohort");
    Stratification out;
    if (opt.groups < 1 && opt.breaks.empty()) throw InvalidBreaks("stratify: need at least one group");

    if (opt.breaks.empty() && detail::is_binary_feature(cohort, feature)) {
        for (double level : {0.0, 1.0}) {
            Stratum s;
            s.feature = feature;
            s.label = out.strata.size() + 1;
            s.level = level;
            s.lower = s.upper = level;
            for (std::size_t i = 0; i < cohort.size(); ++i)
                if (cohort.subjects[i].x[feature] == level) s.members.push_back(i);
            if (s.members.empty()) {
                out.warnings.push_back("stratum with level " + std::to_string(static_cast<int>(level)) + " is empty and dropped");
                continue;
            }
            out.strata.push_back(std::move(s));
        }
        return out;
    }

    std::vector<double> breaks = opt.breaks;
    if (breaks.empty()) {
        if (opt.binning == Binning::quantile) {
            breaks = detail::quantile_breaks(cohort, feature, opt.groups);
        } else {
            if (!(opt.range_hi > opt.range_lo)) throw InvalidBreaks("stratify: empty range");
            for (std::size_t q = 0; q <= opt.groups; ++q)
                breaks.push_back(opt.range_lo + (opt.range_hi - opt.range_lo) * static_cast<double>(q) / static_cast<double>(opt.groups));
        }
    }
    if (breaks.size() < 2) throw InvalidBreaks("stratify: need at least two breaks");
    for (std::size_t k = 1; k < breaks.size(); ++k)
        if (!(breaks[k] > breaks[k - 1])) throw InvalidBreaks("stratify: breaks must be strictly increasing");
    const std::size_t Q = breaks.size() - 1;
    std::vector<Stratum> strata(Q);
    for (std::size_t q = 0; q < Q; ++q) {
        strata[q].feature = feature;
        strata[q].label = q + 1;
        strata[q].lower = breaks[q];
        strata[q].upper = breaks[q + 1];
    }
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const double v = cohort.subjects[i].x[feature];
        if (v < breaks.front() || v > breaks.back())
            throw InvalidBreaks("stratify: value " + std::to_string(v) + " of subject " + cohort.subjects[i].id +
                                " lies outside the breaks");
        auto q = static_cast<std::size_t>(std::upper_bound(breaks.begin(), breaks.end(), v) - breaks.begin());
        q = std::min(q, Q);  // v == last break joins the last interval
        strata[q - 1].members.push_back(i);
    }
    for (auto& s : strata) {
        if (s.members.empty()) {
            out.warnings.push_back("stratum " + std::to_string(s.label) + " is empty and dropped");
            continue;
        }
        out.strata.push_back(std::move(s));
    }
    return out;
}

/// Mean targeted effect over the stratum members at t.
inline double mcate(const TargetedFit& fit, const Stratum& stratum, int t) {
    if (stratum.members.empty()) throw EmptyStratum("mcate: empty stratum");
    std::unordered_map<std::size_t, std::size_t> pos;
    for (std::size_t k = 0; k < fit.members.size(); ++k) pos.emplace(fit.members[k], k);
    double s = 0.0;
    for (std::size_t i : stratum.members) {
        const auto it = pos.find(i);
        if (it == pos.end()) throw DimensionError("mcate: stratum member missing from the targeted fit");
        s += fit.psi(it->second, t);
    }
    return s / static_cast<double>(stratum.members.size());
}

/// |(estimate - truth) / estimate|.
inline double pct_bias(double estimate, double truth) {
    if (std::abs(estimate) <= 1e-12) throw DegenerateDenominator("pct_bias: estimate is zero");
    return std::abs((estimate - truth) / estimate);
}

struct CateEstimate {
    Stratum stratum;
    std::vector<double> psi;         // t = 1..H
    std::vector<double> half_width;  // simultaneous band
    double multiplier = 0.0;
    int steps1 = 0, steps0 = 0;
    bool max_steps_reached = false;
    std::vector<std::string> warnings;
};

/// Targets each stratum separately (nuisances shared) and reports its MCATE
/// curve with a simultaneous band.
inline std::vector<CateEstimate> estimate_cate(const Cohort& cohort, const NuisanceFits& fits, const EffectSurface& initial,
                                               const std::vector<Stratum>& strata, const TargetOptions& topt = {},
                                               double level = 0.95, std::uint64_t seed = 1, unsigned threads = 1) {
    std::vector<CateEstimate> out(strata.size());
    parallel_for(strata.size(), threads, [&](std::size_t q) {
        const Stratum& s = strata[q];
        if (s.members.empty()) throw EmptyStratum("estimate_cate: empty stratum");
        const auto fit = one_step_target(cohort, fits, initial, s.members, topt);
        CateEstimate& e = out[q];
        e.stratum = s;
        for (int t = 1; t <= fit.horizon; ++t) e.psi.push_back(fit.ate(t));
        e.steps1 = fit.arm1.steps;
        e.steps0 = fit.arm0.steps;
        e.max_steps_reached = fit.max_steps_reached();
        if (fit.size() >= 2) {
            const auto band = simultaneous_band(fit.effect_eic(), fit.size(), fit.horizon, level, 10000, derive_seed(seed, q));
            e.half_width = band.half_width;
            e.multiplier = band.multiplier;
            e.warnings = band.warnings;
        } else {
            e.half_width.assign(static_cast<std::size_t>(fit.horizon), 0.0);
            e.warnings.push_back("single-member stratum: band width 0");
        }
    });
    return out;
}

}  // namespace survhte
