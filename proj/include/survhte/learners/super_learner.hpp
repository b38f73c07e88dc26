#pragma once

// Stacked ensemble of binary-outcome learners. Folds are grouped (all rows of
// one subject share a fold); the meta-learner is a convex combination of the
// cross-validated base predictions chosen by log loss.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/learners/base_learners.hpp"

namespace survhte::learners {

struct StackOptions {
    std::size_t folds = 10;
    unsigned threads = 1;
    std::uint64_t seed = 1;
};

/// Default hyperparameters per learner kind. The spline learner runs a ridge
/// path; the elastic-net learners mix at 0.5.
inline BaseLearnerSpec default_spec(LearnerKind kind) {
    BaseLearnerSpec s;
    s.kind = kind;
    if (kind == LearnerKind::spline_logistic) s.alpha = 0.0;
    return s;
}

/// Default hazard library.
inline std::vector<BaseLearnerSpec> default_library() {
    return {default_spec(LearnerKind::elastic_net_logistic), default_spec(LearnerKind::spline_logistic),
            default_spec(LearnerKind::hinge_logistic)};
}

struct StackMember {
    std::string name;
    double weight = 0.0;
    double cv_risk = 0.0;  // mean out-of-fold log loss at the selected path point
    std::size_t path_index = 0;
    std::unique_ptr<FittedModel> model;
};

class StackedModel final : public FittedModel {
public:
    StackedModel(std::vector<StackMember> members, std::size_t cols, std::vector<std::string> warnings)
        : members_(std::move(members)), cols_(cols), warnings_(std::move(warnings)) {}

    double predict_raw(const FeatureMatrix& x, std::size_t row) const override {
        double p = 0.0;
        for (const auto& m : members_)
            if (m.weight > 0.0) p += m.weight * clamp_probability(m.model->predict_raw(x, row));
        return p;
    }
    std::size_t input_cols() const override { return cols_; }

    const std::vector<StackMember>& members() const { return members_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    std::vector<double> weights() const {
        std::vector<double> w;
        for (const auto& m : members_) w.push_back(m.weight);
        return w;
    }

private:
    std::vector<StackMember> members_;
    std::size_t cols_;
    std::vector<std::string> warnings_;
};

/// Euclidean projection onto the probability simplex.
inline std::vector<double> project_simplex(std::vector<double> v) {
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        cum += u[k];
        const double t = (cum - 1.0) / static_cast<double>(k + 1);
        if (u[k] - t > 0.0) theta = t;
    }
    for (double& e : v) e = std::max(0.0, e - theta);
    return v;
}

/// Simplex weights minimizing the log loss of sum_k w_k p_k (columns of
/// `preds`, each of length y.size()). Projected gradient with backtracking;
/// falls back to the best single learner if that is no worse.
inline std::vector<double> simplex_log_loss_weights(const std::vector<std::vector<double>>& preds,
                                                    std::span<const double> y, double tol = 1e-8) {
    const std::size_t K = preds.size();
    const std::size_t n = y.size();
    auto loss = [&](const std::vector<double>& w) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double p = 0.0;
            for (std::size_t k = 0; k < K; ++k) p += w[k] * preds[k][i];
            p = clamp_probability(p);
            s -= y[i] > 0.5 ? std::log(p) : std::log(1.0 - p);
        }
        return s / static_cast<double>(n);
    };
    std::vector<double> w(K, 1.0 / static_cast<double>(K));
    double f = loss(w);
    double step = 1.0;
    for (int it = 0; it < 500; ++it) {
        std::vector<double> g(K, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double p = 0.0;
            for (std::size_t k = 0; k < K; ++k) p += w[k] * preds[k][i];
            p = clamp_probability(p);
            const double d = y[i] > 0.5 ? -1.0 / p : 1.0 / (1.0 - p);
            for (std::size_t k = 0; k < K; ++k) g[k] += d * preds[k][i];
        }
        for (double& e : g) e /= static_cast<double>(n);
        bool moved = false;
        for (int bt = 0; bt < 40; ++bt) {
            std::vector<double> cand(K);
            for (std::size_t k = 0; k < K; ++k) cand[k] = w[k] - step * g[k];
            cand = project_simplex(std::move(cand));
            const double fc = loss(cand);
            if (fc < f) {
                const double gain = f - fc;
                w = std::move(cand);
                f = fc;
                moved = true;
                step *= 2.0;
                if (gain < tol) it = 500;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> vertex(K, 0.0);
        vertex[k] = 1.0;
        if (loss(vertex) <= f) {
            f = loss(vertex);
            w = vertex;
        }
    }
    return w;
}

/// Fits the stack on all rows. `groups[i]` is the grouping unit of row i
/// (the subject), so no subject contributes to both sides of a split.
inline StackedModel fit_super_learner(const std::vector<BaseLearnerSpec>& library, const FeatureMatrix& x,
                                      std::span<const double> y, std::span<const std::size_t> groups,
                                      const StackOptions& options = {}) {
    if (library.empty()) throw ConfigError("super learner: empty library");
    if (y.size() != x.rows || groups.size() != x.rows)
        throw DimensionError("super learner: outcome/group length does not match feature rows");
    if (options.folds < 2) throw ConfigError("super learner: folds must be >= 2");
    for (const auto& s : library) s.validate();

    // Group -> fold.
    std::unordered_map<std::size_t, std::size_t> group_index;
    std::vector<std::size_t> row_group(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) row_group[i] = group_index.try_emplace(groups[i], group_index.size()).first->second;
    const std::size_t G = group_index.size();
    const std::size_t K = std::min(options.folds, G);
    if (K < 2) throw FitError("super learner: need at least 2 groups");
    const auto glabel = fold_labels(G, K, options.seed);
    std::vector<std::vector<std::size_t>> train(K), test(K);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const std::size_t f = glabel[row_group[i]];
        test[f].push_back(i);
        for (std::size_t g = 0; g < K; ++g)
            if (g != f) train[g].push_back(i);
    }
    const auto rows = all_rows(x.rows);

    struct Outcome {
        bool ok = false;
        std::string error;
        std::vector<double> oof;
        double risk = 0.0;
        std::size_t index = 0;
        std::unique_ptr<FittedModel> model;
    };
    std::vector<Outcome> results(library.size());
    const std::uint64_t base_seed = derive_seed(options.seed, 0x5eed);

    for (std::size_t l = 0; l < library.size(); ++l) {
        Outcome& out = results[l];
        try {
            auto learner = prepare_learner(library[l], x, y, rows, derive_seed(base_seed, l));
            const std::size_t P = learner->path_size();
            std::vector<std::vector<double>> oof(P, std::vector<double>(x.rows, 0.0));
            parallel_for(K, options.threads, [&](std::size_t f) {
                const auto path = learner->fit_path(train[f]);
                for (std::size_t k = 0; k < path.size(); ++k)
                    for (std::size_t i : test[f]) oof[k][i] = clamp_probability(path[k]->predict_raw(x, i));
            });
            std::vector<double> risk(P);
            for (std::size_t k = 0; k < P; ++k) risk[k] = log_loss(y, oof[k]);
            out.index = static_cast<std::size_t>(std::min_element(risk.begin(), risk.end()) - risk.begin());
            out.risk = risk[out.index];
            if (!std::isfinite(out.risk)) throw NonFiniteUpdate("non-finite cross-validated risk");
            out.oof = std::move(oof[out.index]);
            out.model = learner->fit_at(rows, out.index);
            out.ok = true;
        } catch (const std::exception& e) {
            out.error = e.what();
        }
    }

    std::vector<std::string> warnings;
    std::vector<std::vector<double>> preds;
    std::vector<std::size_t> kept;
    for (std::size_t l = 0; l < library.size(); ++l) {
        if (results[l].ok) {
            kept.push_back(l);
            preds.push_back(std::move(results[l].oof));
        } else {
            warnings.push_back("learner " + library[l].name() + " dropped: " + results[l].error);
        }
    }
    if (kept.empty()) {
        std::string msg = "all learners failed";
        for (const auto& w : warnings) msg += "; " + w;
        throw AllLearnersFailed(msg);
    }
    const auto w = simplex_log_loss_weights(preds, y);
    std::vector<StackMember> members;
    for (std::size_t k = 0; k < kept.size(); ++k) {
        Outcome& o = results[kept[k]];
        members.push_back({library[kept[k]].name(), w[k], o.risk, o.index, std::move(o.model)});
    }
    return StackedModel(std::move(members), x.cols, std::move(warnings));
}

}  // namespace survhte::learners
