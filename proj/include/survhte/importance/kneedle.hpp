#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survhte/common.hpp"

namespace survhte::importance {

/// Scores ordered by rank. `order[k]` is the feature at rank k+1; ties are
/// broken by feature index.
struct ImportanceCurve {
    std::string method;
    std::vector<double> scores;      // per feature
    std::vector<std::size_t> ranks;  // per feature, 1-based
    std::vector<std::size_t> order;  // features by rank

    std::vector<double> sorted_scores() const {
        std::vector<double> s;
        for (std::size_t j : order) s.push_back(scores[j]);
        return s;
    }
};

inline ImportanceCurve make_curve(std::string method, std::vector<double> scores) {
    for (double s : scores)
        if (!std::isfinite(s) || s < 0.0) throw FitError(method + ": importance scores must be finite and >= 0");
    ImportanceCurve c;
    c.method = std::move(method);
    c.scores = std::move(scores);
    c.order.resize(c.scores.size());
    std::iota(c.order.begin(), c.order.end(), std::size_t{0});
    std::stable_sort(c.order.begin(), c.order.end(),
                     [&](std::size_t a, std::size_t b) { return c.scores[a] > c.scores[b]; });
    c.ranks.resize(c.scores.size());
    for (std::size_t k = 0; k < c.order.size(); ++k) c.ranks[c.order[k]] = k + 1;
    return c;
}

struct KneeResult {
    std::optional<std::size_t> knee_rank;  // 1-based; empty means no knee
    std::vector<double> difference;        // normalized difference curve
    bool convex = true;
};

/// Kneedle on a descending score curve (sensitivity S). Both axes are
/// min-max normalized; the curve is classified as convex when it lies mostly
/// below the chord, and the difference curve is taken against the chord in
/// the matching orientation. A local maximum of the difference curve is a
/// knee when the curve later falls below its value minus S/(D-1); among
/// those, the largest wins.
inline KneeResult kneedle(std::span<const double> descending, double sensitivity = 1.0) {
    const std::size_t D = descending.size();
    if (D < 3) throw DimensionError("kneedle: need at least 3 points");
    for (std::size_t k = 1; k < D; ++k)
        if (descending[k] > descending[k - 1]) throw ValidationError(k, "scores sorted by rank", "curve is not descending");
    KneeResult out;
    out.difference.assign(D, 0.0);
    const double hi = descending.front(), lo = descending.back();
    if (!(hi - lo > 0.0)) return out;

    std::vector<double> xn(D), yn(D);
    double above = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
        xn[k] = static_cast<double>(k) / static_cast<double>(D - 1);
        yn[k] = (descending[k] - lo) / (hi - lo);
        above += yn[k] - (1.0 - xn[k]);
    }
    out.convex = above <= 0.0;
    for (std::size_t k = 0; k < D; ++k)
        out.difference[k] = out.convex ? (1.0 - xn[k]) - yn[k] : yn[k] - (1.0 - xn[k]);

    const auto& yd = out.difference;
    const double drop = sensitivity / static_cast<double>(D - 1);
    std::optional<std::size_t> best;
    for (std::size_t k = 1; k + 1 < D; ++k) {
        if (!(yd[k] > 0.0 && yd[k] > yd[k - 1] && yd[k] >= yd[k + 1])) continue;
        const double threshold = yd[k] - drop;
        bool crossed = false;
        for (std::size_t m = k + 1; m < D && !crossed; ++m) crossed = yd[m] < threshold;
        if (!crossed) continue;
        if (!best || yd[k] > yd[*best]) best = k;
    }
    if (best) out.knee_rank = *best + 1;
    return out;
}

struct SelectionResult {
    std::string method;
    std::vector<std::size_t> selected;  // feature indices, by rank
    std::optional<std::size_t> knee_rank;
    bool no_knee = false;
    ImportanceCurve curve;
};

/// Features whose score is strictly above the knee-point score.
inline SelectionResult select_features(const ImportanceCurve& curve, double sensitivity = 1.0) {
    SelectionResult r;
    r.method = curve.method;
    r.curve = curve;
    const auto sorted = curve.sorted_scores();
    const auto knee = kneedle(sorted, sensitivity);
    r.knee_rank = knee.knee_rank;
    r.no_knee = !knee.knee_rank;
    if (r.no_knee) return r;
    const double cut = sorted[*knee.knee_rank - 1];
    for (std::size_t j : curve.order)
        if (curve.scores[j] > cut) r.selected.push_back(j);
    return r;
}

struct SelectionAccuracy {
    double ppv = 0.0;
    double tpr = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::vector<int> hits;  // per true feature, in the order given
};

inline SelectionAccuracy ppv_tpr(std::span<const std::size_t> selected, std::span<const std::size_t> truth) {
    SelectionAccuracy a;
    for (std::size_t j : selected) {
        if (std::find(truth.begin(), truth.end(), j) != truth.end())
            ++a.true_positives;
        else
            ++a.false_positives;
    }
    for (std::size_t t : truth) a.hits.push_back(std::find(selected.begin(), selected.end(), t) != selected.end() ? 1 : 0);
    if (!selected.empty()) a.ppv = static_cast<double>(a.true_positives) / static_cast<double>(selected.size());
    if (!truth.empty()) a.tpr = static_cast<double>(a.true_positives) / static_cast<double>(truth.size());
    return a;
}

}  // namespace survhte::importance
