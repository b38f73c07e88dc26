#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/learners/feature_matrix.hpp"
#include "survhte/learners/glm.hpp"
#include "survhte/learners/tree.hpp"

namespace survhte::learners {

enum class LearnerKind { elastic_net_logistic, adaptive_lasso_logistic, spline_logistic, hinge_logistic, tree_ensemble };

inline std::string to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::elastic_net_logistic: return "elastic_net_logistic";
        case LearnerKind::adaptive_lasso_logistic: return "adaptive_lasso_logistic";
        case LearnerKind::spline_logistic: return "spline_logistic";
        case LearnerKind::hinge_logistic: return "hinge_logistic";
        case LearnerKind::tree_ensemble: return "tree_ensemble";
    }
    return "unknown";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
    for (auto k : {LearnerKind::elastic_net_logistic, LearnerKind::adaptive_lasso_logistic, LearnerKind::spline_logistic,
                   LearnerKind::hinge_logistic, LearnerKind::tree_ensemble})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown learner kind '" + s + "'");
}

/// Learner configuration. Only the fields relevant to `kind` are read.
struct BaseLearnerSpec {
    LearnerKind kind = LearnerKind::elastic_net_logistic;
    double alpha = 0.5;          // elastic-net mixing
    std::size_t n_lambda = 50;   // penalized learners
    double lambda_ratio = 1e-4;  // lambda_min / lambda_max
    int knots = 4;               // natural-spline knots per continuous feature
    double ridge = 1e-4;         // ridge for spline / hinge final fits
    int max_terms = 11;          // hinge basis functions added in the forward pass
    int hinge_knots = 10;        // candidate knots per feature
    std::size_t forward_rows = 4000;
    int trees = 50;
    int depth = 6;
    std::size_t min_leaf = 20;
    double leaf_prior = 10.0;  // pseudo-count shrinking tree leaves to the base rate
    std::size_t inner_folds = 5;  // lambda selection when fitted outside a stack

    std::string name() const { return to_string(kind); }

    void validate() const {
        auto fail = [&](const std::string& what) { throw ConfigError(name() + ": " + what); };
        if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must be in [0, 1]");
        if (n_lambda < 1 || n_lambda > 500) fail("n_lambda must be in [1, 500]");
        if (!(lambda_ratio > 0.0 && lambda_ratio < 1.0)) fail("lambda_ratio must be in (0, 1)");
        if (knots < 3 || knots > 20) fail("knots must be in [3, 20]");
        if (!(ridge >= 0.0)) fail("ridge must be >= 0");
        if (max_terms < 1 || max_terms > 100) fail("max_terms must be in [1, 100]");
        if (hinge_knots < 1 || hinge_knots > 100) fail("hinge_knots must be in [1, 100]");
        if (trees < 1 || trees > 5000) fail("trees must be in [1, 5000]");
        if (depth < 1 || depth > 30) fail("depth must be in [1, 30]");
        if (min_leaf < 1) fail("min_leaf must be >= 1");
        if (inner_folds < 2) fail("inner_folds must be >= 2");
    }
};

/// A fitted binary-outcome model. `predict_raw` returns an unclamped
/// probability; callers clamp via predict_probability.
class FittedModel {
public:
    virtual ~FittedModel() = default;
    virtual double predict_raw(const FeatureMatrix& x, std::size_t row) const = 0;
    virtual std::size_t input_cols() const = 0;
};

/// A learner with its data-dependent settings (lambda grid, knots, bins)
/// fixed on the full training set, so every CV fold fits the same path.
class PreparedLearner {
public:
    virtual ~PreparedLearner() = default;
    virtual std::size_t path_size() const { return 1; }
    /// One model per path point, fitted on `rows`.
    virtual std::vector<std::unique_ptr<FittedModel>> fit_path(std::span<const std::size_t> rows) const = 0;
    virtual std::unique_ptr<FittedModel> fit_at(std::span<const std::size_t> rows, std::size_t index) const {
        auto path = fit_path(rows);
        return std::move(path.at(index));
    }
};

inline double predict_probability(const FittedModel& m, const FeatureMatrix& x, std::size_t row) {
    x.check_row_dimension(m.input_cols());
    return clamp_probability(m.predict_raw(x, row));
}

namespace detail {

inline void check_outcome(std::span<const double> y, std::span<const std::size_t> rows) {
    for (std::size_t r : rows)
        if (y[r] != 0.0 && y[r] != 1.0) throw FitError("binary outcome must be 0/1");
}

// ----- penalized logistic (elastic net / adaptive lasso) -------------------

class GlmModel final : public FittedModel {
public:
    GlmModel(GlmCoef coef, std::size_t cols, int levels, int first_level)
        : coef_(std::move(coef)), cols_(cols), levels_(levels), first_level_(first_level) {}

    double predict_raw(const FeatureMatrix& x, std::size_t row) const override {
        GlmDesign d{x.rows, x.cols, x.values.data(), x.has_period() && levels_ > 0 ? x.period.data() : nullptr,
                    levels_, first_level_};
        return expit(coef_.linear_predictor(d, row));
    }
    std::size_t input_cols() const override { return cols_; }
    const GlmCoef& coef() const { return coef_; }

private:
    GlmCoef coef_;
    std::size_t cols_;
    int levels_;
    int first_level_;
};

class PenalizedLogistic final : public PreparedLearner {
public:
    PenalizedLogistic(const BaseLearnerSpec& spec, const FeatureMatrix& x, std::span<const double> y,
                      std::span<const std::size_t> rows, bool adaptive)
        : spec_(spec), x_(x), y_(y), adaptive_(adaptive) {
        design_ = GlmDesign{x.rows, x.cols, x.values.data(), x.has_period() ? x.period.data() : nullptr,
                            x.has_period() ? x.periods : 0, 0};
        GlmOptions opt = options(rows);
        GlmPathSolver solver(design_, y_, rows, opt);
        lambdas_ = lambda_grid(solver.lambda_max(), spec_.n_lambda, spec_.lambda_ratio);
    }

    std::size_t path_size() const override { return lambdas_.size(); }

    std::vector<std::unique_ptr<FittedModel>> fit_path(std::span<const std::size_t> rows) const override {
        return fit_upto(rows, lambdas_.size());
    }

    std::unique_ptr<FittedModel> fit_at(std::span<const std::size_t> rows, std::size_t index) const override {
        auto path = fit_upto(rows, index + 1);
        return std::move(path.back());
    }

private:
    // Penalty factors: ones, or adaptive weights 1/|ridge coefficient| from an
    // initial ridge fit on the same rows (capped, rescaled to mean 1).
    GlmOptions options(std::span<const std::size_t> rows) const {
        GlmOptions opt;
        opt.family = Family::binomial;
        opt.alpha = adaptive_ ? 1.0 : spec_.alpha;
        if (!adaptive_) return opt;
        GlmOptions ridge;
        ridge.family = Family::binomial;
        ridge.alpha = 0.0;
        GlmPathSolver init(design_, y_, rows, ridge);
        GlmOptions probe;
        probe.family = Family::binomial;
        probe.alpha = 1.0;
        GlmPathSolver probe_solver(design_, y_, rows, probe);
        const double lambda_ridge = 1e-3 * probe_solver.lambda_max();
        const GlmCoef c = init.fit_single(lambda_ridge);
        constexpr double kMaxWeight = 1e4;
        opt.penalty_factor.resize(c.beta_std.size());
        double total = 0.0;
        for (std::size_t j = 0; j < c.beta_std.size(); ++j) {
            const double a = std::abs(c.beta_std[j]);
            opt.penalty_factor[j] = a > 1.0 / kMaxWeight ? 1.0 / a : kMaxWeight;
            total += opt.penalty_factor[j];
        }
        const double scale = static_cast<double>(opt.penalty_factor.size()) / total;
        for (double& w : opt.penalty_factor) w *= scale;
        return opt;
    }

    std::vector<std::unique_ptr<FittedModel>> fit_upto(std::span<const std::size_t> rows, std::size_t count) const {
        detail::check_outcome(y_, rows);
        GlmPathSolver solver(design_, y_, rows, options(rows));
        std::vector<std::unique_ptr<FittedModel>> out;
        const std::span<const double> grid(lambdas_.data(), count);
        for (auto& c : solver.fit(grid))
            out.push_back(std::make_unique<GlmModel>(std::move(c), x_.cols, design_.levels, 0));
        return out;
    }

    BaseLearnerSpec spec_;
    const FeatureMatrix& x_;
    std::span<const double> y_;
    bool adaptive_;
    GlmDesign design_;
    std::vector<double> lambdas_;
};

// ----- basis-expanded logistic (natural splines, hinges) -------------------

/// Maps feature rows to basis rows; shared by the spline and hinge learners.
struct Basis {
    struct Term {
        enum Kind { linear, spline, hinge_pos, hinge_neg } kind;
        std::size_t col;
        std::size_t knot = 0;  // spline term index k (d_k - d_{K-1})
        double cut = 0.0;
    };
    std::vector<Term> terms;
    std::vector<std::vector<double>> knots;  // per input column (splines)

    // Natural cubic spline truncated-power basis (K knots -> x plus K-2 terms).
    static double d_k(double x, const std::vector<double>& xi, std::size_t k) {
        const double K = xi.back();
        auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
        return (cube(x - xi[k]) - cube(x - K)) / (K - xi[k]);
    }

    double eval(const Term& t, const double* row) const {
        const double v = row[t.col];
        switch (t.kind) {
            case Term::linear: return v;
            case Term::spline: {
                const auto& xi = knots[t.col];
                return d_k(v, xi, t.knot) - d_k(v, xi, xi.size() - 2);
            }
            case Term::hinge_pos: return std::max(0.0, v - t.cut);
            case Term::hinge_neg: return std::max(0.0, t.cut - v);
        }
        return 0.0;
    }

    std::vector<double> expand(const FeatureMatrix& x) const {
        std::vector<double> out(x.rows * terms.size());
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double* r = x.row(i);
            for (std::size_t k = 0; k < terms.size(); ++k) out[i * terms.size() + k] = eval(terms[k], r);
        }
        return out;
    }
};

class BasisLogisticModel final : public FittedModel {
public:
    BasisLogisticModel(std::shared_ptr<const Basis> basis, GlmCoef coef, std::size_t cols, int levels)
        : basis_(std::move(basis)), coef_(std::move(coef)), cols_(cols), levels_(levels) {}

    double predict_raw(const FeatureMatrix& x, std::size_t row) const override {
        const double* r = x.row(row);
        double eta = coef_.intercept;
        for (std::size_t k = 0; k < basis_->terms.size(); ++k) eta += coef_.beta[k] * basis_->eval(basis_->terms[k], r);
        if (levels_ > 0 && x.has_period()) {
            const int l = x.period[row];
            if (l >= 1 && l < levels_) eta += coef_.beta[basis_->terms.size() + static_cast<std::size_t>(l - 1)];
        }
        return expit(eta);
    }
    std::size_t input_cols() const override { return cols_; }

private:
    std::shared_ptr<const Basis> basis_;
    GlmCoef coef_;
    std::size_t cols_;
    int levels_;
};

inline std::vector<double> quantiles_of(const FeatureMatrix& x, std::size_t col, std::span<const std::size_t> rows,
                                        const std::vector<double>& probs) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (std::size_t r : rows) v.push_back(x.at(r, col));
    std::sort(v.begin(), v.end());
    std::vector<double> q;
    for (double p : probs) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        q.push_back(v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]));
    }
    q.erase(std::unique(q.begin(), q.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }), q.end());
    return q;
}

/// Columns eligible for nonlinear terms: non-binary, and not the linear time
/// column when the categorical period block is present.
inline std::vector<char> continuous_columns(const FeatureMatrix& x) {
    std::vector<char> c(x.cols, 0);
    for (std::size_t j = 0; j < x.cols; ++j) {
        if (x.has_period() && static_cast<long>(j) == x.time_col) continue;
        c[j] = x.is_binary(j) ? 0 : 1;
    }
    return c;
}

inline GlmCoef fit_basis_glm(const std::vector<double>& basis_values, std::size_t n_terms, const FeatureMatrix& x,
                             std::span<const double> y, std::span<const std::size_t> rows, double ridge) {
    GlmDesign d{x.rows, n_terms, basis_values.data(), x.has_period() ? x.period.data() : nullptr,
                x.has_period() ? x.periods : 0, 1};
    GlmOptions opt;
    opt.family = Family::binomial;
    opt.alpha = 0.0;
    GlmPathSolver solver(d, y, rows, opt);
    return solver.fit_single(ridge);
}

class SplineLogistic final : public PreparedLearner {
public:
    SplineLogistic(const BaseLearnerSpec& spec, const FeatureMatrix& x, std::span<const double> y,
                   std::span<const std::size_t> rows)
        : spec_(spec), x_(x), y_(y) {
        auto basis = std::make_shared<Basis>();
        basis->knots.resize(x.cols);
        const auto cont = continuous_columns(x);
        std::vector<double> probs;
        for (int k = 0; k < spec.knots; ++k)
            probs.push_back(0.05 + 0.9 * static_cast<double>(k) / static_cast<double>(spec.knots - 1));
        for (std::size_t j = 0; j < x.cols; ++j) {
            if (x.has_period() && static_cast<long>(j) == x.time_col) continue;
            basis->terms.push_back({Basis::Term::linear, j});
            if (!cont[j]) continue;
            auto xi = quantiles_of(x, j, rows, probs);
            if (xi.size() < 3) continue;
            basis->knots[j] = xi;
            for (std::size_t k = 0; k + 2 < xi.size(); ++k) basis->terms.push_back({Basis::Term::spline, j, k});
        }
        basis_ = std::move(basis);
        values_ = basis_->expand(x);
        GlmPathSolver solver(design(), y_, rows, options());
        lambdas_ = lambda_grid(solver.lambda_max(), spec.n_lambda, spec.lambda_ratio);
    }

    std::size_t path_size() const override { return lambdas_.size(); }

    std::vector<std::unique_ptr<FittedModel>> fit_path(std::span<const std::size_t> rows) const override {
        return fit_upto(rows, lambdas_.size());
    }

    std::unique_ptr<FittedModel> fit_at(std::span<const std::size_t> rows, std::size_t index) const override {
        auto path = fit_upto(rows, index + 1);
        return std::move(path.back());
    }

private:
    GlmDesign design() const {
        return GlmDesign{x_.rows, basis_->terms.size(), values_.data(), x_.has_period() ? x_.period.data() : nullptr,
                         x_.has_period() ? x_.periods : 0, 1};
    }

    GlmOptions options() const {
        GlmOptions opt;
        opt.family = Family::binomial;
        opt.alpha = spec_.alpha;
        return opt;
    }

    std::vector<std::unique_ptr<FittedModel>> fit_upto(std::span<const std::size_t> rows, std::size_t count) const {
        detail::check_outcome(y_, rows);
        GlmPathSolver solver(design(), y_, rows, options());
        std::vector<std::unique_ptr<FittedModel>> out;
        for (auto& c : solver.fit(std::span<const double>(lambdas_.data(), count)))
            out.push_back(std::make_unique<BasisLogisticModel>(basis_, std::move(c), x_.cols, x_.has_period() ? x_.periods : 0));
        return out;
    }

    BaseLearnerSpec spec_;
    const FeatureMatrix& x_;
    std::span<const double> y_;
    std::shared_ptr<const Basis> basis_;
    std::vector<double> values_;
    std::vector<double> lambdas_;
};

/// Additive MARS-style learner: a least-squares forward pass picks hinge
/// pairs max(0, x - c), max(0, c - x) (linear terms for binary columns) on top
/// of the period indicators, then a ridge-stabilized logistic fit is run on
/// the selected basis.
class HingeLogistic final : public PreparedLearner {
public:
    HingeLogistic(const BaseLearnerSpec& spec, const FeatureMatrix& x, std::span<const double> y,
                  std::span<const std::size_t> rows)
        : spec_(spec), x_(x), y_(y) {
        const auto cont = continuous_columns(x);
        std::vector<double> probs;
        for (int k = 1; k <= spec.hinge_knots; ++k)
            probs.push_back(static_cast<double>(k) / static_cast<double>(spec.hinge_knots + 1));
        for (std::size_t j = 0; j < x.cols; ++j) {
            if (x.has_period() && static_cast<long>(j) == x.time_col) continue;
            if (cont[j]) {
                for (double c : quantiles_of(x, j, rows, probs)) {
                    candidates_.push_back({{Basis::Term::hinge_pos, j, 0, c}, {Basis::Term::hinge_neg, j, 0, c}, true});
                }
            } else {
                candidates_.push_back({{Basis::Term::linear, j}, {}, false});
            }
        }
    }

    std::vector<std::unique_ptr<FittedModel>> fit_path(std::span<const std::size_t> rows) const override {
        detail::check_outcome(y_, rows);
        auto basis = std::make_shared<Basis>(forward_pass(rows));
        const auto values = basis->expand(x_);
        GlmCoef c = fit_basis_glm(values, basis->terms.size(), x_, y_, rows, spec_.ridge);
        std::vector<std::unique_ptr<FittedModel>> out;
        out.push_back(std::make_unique<BasisLogisticModel>(basis, std::move(c), x_.cols, x_.has_period() ? x_.periods : 0));
        return out;
    }

private:
    struct Candidate {
        Basis::Term a;
        Basis::Term b;
        bool pair;
    };

    Basis forward_pass(std::span<const std::size_t> rows) const {
        // Deterministic stride subsample for the least-squares search.
        std::vector<std::size_t> sub;
        const std::size_t stride = std::max<std::size_t>(1, (rows.size() + spec_.forward_rows - 1) / spec_.forward_rows);
        for (std::size_t k = 0; k < rows.size(); k += stride) sub.push_back(rows[k]);
        const std::size_t m = sub.size();

        std::vector<std::vector<double>> q;  // orthonormal basis columns over `sub`
        auto add_orthonormal = [&](std::vector<double> v) {
            for (const auto& u : q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) dot += u[i] * v[i];
                for (std::size_t i = 0; i < m; ++i) v[i] -= dot * u[i];
            }
            double norm = 0.0;
            for (double e : v) norm += e * e;
            norm = std::sqrt(norm);
            if (norm < 1e-8) return false;
            for (double& e : v) e /= norm;
            q.push_back(std::move(v));
            return true;
        };
        if (x_.has_period()) {
            for (int l = 0; l < x_.periods; ++l) {
                std::vector<double> v(m);
                for (std::size_t i = 0; i < m; ++i) v[i] = x_.period[sub[i]] == l ? 1.0 : 0.0;
                add_orthonormal(std::move(v));
            }
        } else {
            add_orthonormal(std::vector<double>(m, 1.0));
        }
        std::vector<double> resid(m);
        for (std::size_t i = 0; i < m; ++i) resid[i] = y_[sub[i]];
        auto project_out = [&](std::vector<double>& v) {
            for (const auto& u : q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) dot += u[i] * v[i];
                for (std::size_t i = 0; i < m; ++i) v[i] -= dot * u[i];
            }
        };
        project_out(resid);
        double rss0 = 0.0;
        for (double e : resid) rss0 += e * e;

        Basis basis;
        std::vector<char> used(candidates_.size(), 0);
        auto column = [&](const Basis::Term& t) {
            std::vector<double> v(m);
            for (std::size_t i = 0; i < m; ++i) v[i] = basis.eval(t, x_.row(sub[i]));
            return v;
        };
        while (static_cast<int>(basis.terms.size()) < spec_.max_terms) {
            double best = 0.0;
            std::size_t best_c = candidates_.size();
            for (std::size_t c = 0; c < candidates_.size(); ++c) {
                if (used[c]) continue;
                // Reduction in RSS from the span of the (orthogonalized) pair.
                std::vector<double> a = column(candidates_[c].a);
                project_out(a);
                double aa = 0.0, ar = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    aa += a[i] * a[i];
                    ar += a[i] * resid[i];
                }
                double gain = aa > 1e-10 ? ar * ar / aa : 0.0;
                if (candidates_[c].pair) {
                    std::vector<double> b = column(candidates_[c].b);
                    project_out(b);
                    if (aa > 1e-10) {
                        double ab = 0.0;
                        for (std::size_t i = 0; i < m; ++i) ab += a[i] * b[i];
                        for (std::size_t i = 0; i < m; ++i) b[i] -= ab / aa * a[i];
                    }
                    double bb = 0.0, br = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        bb += b[i] * b[i];
                        br += b[i] * resid[i];
                    }
                    if (bb > 1e-10) gain += br * br / bb;
                }
                if (gain > best) {
                    best = gain;
                    best_c = c;
                }
            }
            if (best_c == candidates_.size() || best < 1e-4 * rss0) break;
            used[best_c] = 1;
            const Candidate& cand = candidates_[best_c];
            if (add_orthonormal(column(cand.a))) basis.terms.push_back(cand.a);
            if (cand.pair && add_orthonormal(column(cand.b))) basis.terms.push_back(cand.b);
            for (std::size_t i = 0; i < m; ++i) resid[i] = y_[sub[i]];
            project_out(resid);
        }
        return basis;
    }

    BaseLearnerSpec spec_;
    const FeatureMatrix& x_;
    std::span<const double> y_;
    std::vector<Candidate> candidates_;
};

// ----- bagged trees on the logit scale -------------------------------------

class TreeEnsembleModel final : public FittedModel {
public:
    TreeEnsembleModel(std::vector<RegressionTree> trees, std::size_t cols) : trees_(std::move(trees)), cols_(cols) {}

    double predict_raw(const FeatureMatrix& x, std::size_t row) const override {
        double s = 0.0;
        for (const auto& t : trees_) s += t.predict(x.row(row));
        return expit(s / static_cast<double>(trees_.size()));
    }
    std::size_t input_cols() const override { return cols_; }

private:
    std::vector<RegressionTree> trees_;
    std::size_t cols_;
};

/// Tree structure is learned on a bootstrap sample; leaf values are the
/// logits of the leaf event rate over all fitting rows, shrunk toward the
/// overall rate with `leaf_prior` pseudo-observations.
class TreeEnsemble final : public PreparedLearner {
public:
    TreeEnsemble(const BaseLearnerSpec& spec, const FeatureMatrix& x, std::span<const double> y,
                 std::span<const std::size_t> rows, std::uint64_t seed)
        : spec_(spec), x_(x), y_(y), seed_(seed) {
        bins_ = BinnedFeatures::build(x.values.data(), x.rows, x.cols, rows, 64);
    }

    std::vector<std::unique_ptr<FittedModel>> fit_path(std::span<const std::size_t> rows) const override {
        detail::check_outcome(y_, rows);
        std::mt19937_64 rng(seed_);
        double base = 0.0;
        for (std::size_t r : rows) base += y_[r];
        base /= static_cast<double>(rows.size());
        TreeOptions opt;
        opt.max_depth = spec_.depth;
        opt.min_leaf = spec_.min_leaf;
        std::vector<RegressionTree> trees;
        std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
        for (int b = 0; b < spec_.trees; ++b) {
            std::vector<std::size_t> boot(rows.size());
            for (auto& r : boot) r = rows[pick(rng)];
            RegressionTree tree = grow_tree(bins_, y_, std::move(boot), opt, rng);
            std::vector<double> sum(tree.nodes.size(), 0.0), cnt(tree.nodes.size(), 0.0);
            for (std::size_t r : rows) {
                const int leaf = tree.leaf_of_binned(bins_, r);
                sum[static_cast<std::size_t>(leaf)] += y_[r];
                cnt[static_cast<std::size_t>(leaf)] += 1.0;
            }
            for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
                if (tree.nodes[k].feature >= 0) continue;
                const double p = (sum[k] + spec_.leaf_prior * base) / (cnt[k] + spec_.leaf_prior);
                tree.nodes[k].value = logit(clamp_probability(p));
            }
            trees.push_back(std::move(tree));
        }
        std::vector<std::unique_ptr<FittedModel>> out;
        out.push_back(std::make_unique<TreeEnsembleModel>(std::move(trees), x_.cols));
        return out;
    }

private:
    BaseLearnerSpec spec_;
    const FeatureMatrix& x_;
    std::span<const double> y_;
    std::uint64_t seed_;
    BinnedFeatures bins_;
};

}  // namespace detail

/// Prepares a learner on the full training rows. The returned object keeps
/// references to `x` and `y`, which must outlive it.
inline std::unique_ptr<PreparedLearner> prepare_learner(const BaseLearnerSpec& spec, const FeatureMatrix& x,
                                                        std::span<const double> y, std::span<const std::size_t> rows,
                                                        std::uint64_t seed) {
    spec.validate();
    detail::check_outcome(y, rows);
    switch (spec.kind) {
        case LearnerKind::elastic_net_logistic:
            return std::make_unique<detail::PenalizedLogistic>(spec, x, y, rows, false);
        case LearnerKind::adaptive_lasso_logistic:
            return std::make_unique<detail::PenalizedLogistic>(spec, x, y, rows, true);
        case LearnerKind::spline_logistic: return std::make_unique<detail::SplineLogistic>(spec, x, y, rows);
        case LearnerKind::hinge_logistic: return std::make_unique<detail::HingeLogistic>(spec, x, y, rows);
        case LearnerKind::tree_ensemble: return std::make_unique<detail::TreeEnsemble>(spec, x, y, rows, seed);
    }
    throw ConfigError("unknown learner");
}

/// Deterministic fold labels for `n` units (shuffled by `seed`).
inline std::vector<std::size_t> fold_labels(std::size_t n, std::size_t folds, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> label(n);
    for (std::size_t k = 0; k < n; ++k) label[order[k]] = k % folds;
    return label;
}

/// Fits one base learner on all rows of `x`. Path learners pick their
/// lambda by internal K-fold CV log loss.
inline std::unique_ptr<FittedModel> fit_base_learner(const BaseLearnerSpec& spec, const FeatureMatrix& x,
                                                     std::span<const double> y, std::uint64_t seed = 1) {
    if (y.size() != x.rows) throw DimensionError("outcome length does not match feature rows");
    if (x.rows < 10) throw FitError("need at least 10 rows");
    const auto rows = all_rows(x.rows);
    auto learner = prepare_learner(spec, x, y, rows, seed);
    std::size_t best = 0;
    if (learner->path_size() > 1) {
        const std::size_t K = std::min(spec.inner_folds, x.rows);
        const auto label = fold_labels(x.rows, K, seed);
        std::vector<double> loss(learner->path_size(), 0.0);
        for (std::size_t f = 0; f < K; ++f) {
            std::vector<std::size_t> train, test;
            for (std::size_t i = 0; i < x.rows; ++i) (label[i] == f ? test : train).push_back(i);
            const auto path = learner->fit_path(train);
            for (std::size_t k = 0; k < path.size(); ++k)
                for (std::size_t i : test) {
                    const double p = clamp_probability(path[k]->predict_raw(x, i));
                    loss[k] -= y[i] > 0.5 ? std::log(p) : std::log(1.0 - p);
                }
        }
        best = static_cast<std::size_t>(std::min_element(loss.begin(), loss.end()) - loss.begin());
    }
    return learner->fit_at(rows, best);
}

}  // namespace survhte::learners
