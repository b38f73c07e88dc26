#pragma once

// Penalized GLM path solver (binomial / gaussian) by coordinate descent on the
// weighted covariance matrix, in the style of glmnet's "covariance updates".
// The design is a dense block plus an optional categorical block whose levels
// act as one-hot columns; the categorical block never materializes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "survhte/common.hpp"

namespace survhte::learners {

/// Non-owning view of a design: row-major dense block plus an optional
/// categorical column. Levels below `first_level` are the reference (no
/// column); levels `first_level..levels-1` each get one indicator column.
struct GlmDesign {
    std::size_t rows = 0;
    std::size_t dense_cols = 0;
    const double* dense = nullptr;
    const int* level = nullptr;
    int levels = 0;
    int first_level = 0;

    std::size_t level_cols() const { return level ? static_cast<std::size_t>(levels - first_level) : 0; }
    std::size_t cols() const { return dense_cols + level_cols(); }
    const double* row(std::size_t i) const { return dense + i * dense_cols; }
    /// Column index of the indicator active on row i, or -1.
    long level_col(std::size_t i) const {
        if (!level) return -1;
        const int l = level[i];
        return l >= first_level ? static_cast<long>(dense_cols + static_cast<std::size_t>(l - first_level)) : -1;
    }
};

enum class Family { binomial, gaussian };

struct GlmOptions {
    Family family = Family::binomial;
    double alpha = 1.0;                  // 1 = lasso, 0 = ridge
    std::vector<double> penalty_factor;  // per column; empty = all ones
    int max_irls = 25;
    double irls_tol = 1e-6;
    double cd_tol = 1e-9;
    int max_cd_sweeps = 10000;
};

/// Coefficients on the original column scale, plus their standardized values.
struct GlmCoef {
    double intercept = 0.0;
    std::vector<double> beta;
    std::vector<double> beta_std;
    double lambda = 0.0;

    double linear_predictor(const GlmDesign& d, std::size_t i) const {
        double eta = intercept;
        const double* x = d.row(i);
        for (std::size_t j = 0; j < d.dense_cols; ++j) eta += beta[j] * x[j];
        if (const long c = d.level_col(i); c >= 0) eta += beta[static_cast<std::size_t>(c)];
        return eta;
    }
};

class GlmPathSolver {
public:
    GlmPathSolver(const GlmDesign& design, std::span<const double> y, std::span<const std::size_t> rows,
                  GlmOptions options)
        : design_(design), opt_(std::move(options)) {
        p_ = design_.cols();
        if (opt_.penalty_factor.empty()) opt_.penalty_factor.assign(p_, 1.0);
        if (opt_.penalty_factor.size() != p_) throw DimensionError("glm: penalty factor length mismatch");
        m_ = rows.size();
        if (m_ == 0) throw FitError("glm: no rows");
        const std::size_t dc = design_.dense_cols;

        // Standardize the dense block over the fitting rows; indicator columns
        // are scaled but not centered so the block stays sparse.
        center_.assign(p_, 0.0);
        scale_.assign(p_, 1.0);
        active_.assign(p_, true);
        std::vector<double> count(design_.level_cols(), 0.0);
        for (std::size_t r : rows) {
            const double* x = design_.row(r);
            for (std::size_t j = 0; j < dc; ++j) center_[j] += x[j];
            if (const long c = design_.level_col(r); c >= 0) count[static_cast<std::size_t>(c) - dc] += 1.0;
        }
        const double md = static_cast<double>(m_);
        for (std::size_t j = 0; j < dc; ++j) center_[j] /= md;
        std::vector<double> ss(dc, 0.0);
        for (std::size_t r : rows) {
            const double* x = design_.row(r);
            for (std::size_t j = 0; j < dc; ++j) ss[j] += (x[j] - center_[j]) * (x[j] - center_[j]);
        }
        for (std::size_t j = 0; j < dc; ++j) {
            const double sd = std::sqrt(ss[j] / md);
            if (sd < 1e-10) {
                active_[j] = false;
            } else {
                scale_[j] = sd;
            }
        }
        for (std::size_t l = 0; l < count.size(); ++l) {
            const double pr = count[l] / md;
            const double sd = std::sqrt(pr * (1.0 - pr));
            if (sd < 1e-10) {
                active_[dc + l] = false;
            } else {
                scale_[dc + l] = sd;
            }
        }
        for (std::size_t j = 0; j < p_; ++j)
            if (opt_.penalty_factor[j] == std::numeric_limits<double>::infinity()) active_[j] = false;

        z_.resize(m_ * dc);
        lc_.resize(m_);
        y_.resize(m_);
        for (std::size_t k = 0; k < m_; ++k) {
            const std::size_t r = rows[k];
            const double* x = design_.row(r);
            for (std::size_t j = 0; j < dc; ++j) z_[k * dc + j] = active_[j] ? (x[j] - center_[j]) / scale_[j] : 0.0;
            const long c = design_.level_col(r);
            lc_[k] = (c >= 0 && active_[static_cast<std::size_t>(c)]) ? c : -1;
            y_[k] = y[r];
        }
        if (opt_.family == Family::binomial)
            for (double v : y_)
                if (v != 0.0 && v != 1.0) throw FitError("glm: binomial outcome must be 0/1");

        // Intercept-only starting point.
        double ybar = 0.0;
        for (double v : y_) ybar += v;
        ybar /= md;
        if (opt_.family == Family::binomial) {
            ybar = clamp_probability(ybar);
            b0_ = logit(ybar);
        } else {
            b0_ = ybar;
        }
        beta_.assign(p_, 0.0);
        eta_.assign(m_, b0_);
    }

    std::size_t cols() const { return p_; }

    /// Smallest lambda at which all penalized coefficients are zero.
    double lambda_max() {
        const double saved_b0 = b0_;
        std::vector<double> saved_beta = beta_;
        std::vector<double> saved_eta = eta_;
        std::fill(beta_.begin(), beta_.end(), 0.0);
        std::fill(eta_.begin(), eta_.end(), b0_null());
        b0_ = b0_null();
        build_quadratic();
        double lmax = 0.0;
        const double a = std::max(opt_.alpha, 1e-3);
        for (std::size_t j = 0; j < p_; ++j) {
            if (!active_[j] || opt_.penalty_factor[j] <= 0.0) continue;
            lmax = std::max(lmax, std::abs(c_[j]) / (a * opt_.penalty_factor[j]));
        }
        b0_ = saved_b0;
        beta_ = std::move(saved_beta);
        eta_ = std::move(saved_eta);
        return lmax > 0.0 ? lmax : 1e-8;
    }

    /// Fits the path for a decreasing lambda sequence, warm-starting each fit.
    std::vector<GlmCoef> fit(std::span<const double> lambdas) {
        std::vector<GlmCoef> path;
        path.reserve(lambdas.size());
        for (double lambda : lambdas) {
            fit_one(lambda);
            path.push_back(export_coef(lambda));
        }
        return path;
    }

    GlmCoef fit_single(double lambda) {
        fit_one(lambda);
        return export_coef(lambda);
    }

private:
    double b0_null() const {
        double ybar = 0.0;
        for (double v : y_) ybar += v;
        ybar /= static_cast<double>(m_);
        return opt_.family == Family::binomial ? logit(clamp_probability(ybar)) : ybar;
    }

    // Builds the weighted quadratic approximation at the current eta:
    // G (centered weighted Gram / m) and c (centered weighted cross / m).
    void build_quadratic() {
        const auto dc = static_cast<Eigen::Index>(design_.dense_cols);
        const auto m = static_cast<Eigen::Index>(m_);
        Eigen::VectorXd w(m), wz(m);
        for (std::size_t k = 0; k < m_; ++k) {
            double wk, zk;
            if (opt_.family == Family::binomial) {
                const double pr = expit(eta_[k]);
                wk = std::max(pr * (1.0 - pr), 1e-5);
                zk = eta_[k] + (y_[k] - pr) / wk;
            } else {
                wk = 1.0;
                zk = y_[k];
            }
            w(static_cast<Eigen::Index>(k)) = wk;
            wz(static_cast<Eigen::Index>(k)) = wk * zk;
        }
        const double sw = w.sum(), sz = wz.sum();
        std::vector<double> sx(p_, 0.0), sxz(p_, 0.0);
        Eigen::MatrixXd sxx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
        if (dc > 0) {
            const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Z(z_.data(), m, dc);
            const Eigen::VectorXd zx = Z.transpose() * w;
            const Eigen::VectorXd zxz = Z.transpose() * wz;
            const Eigen::MatrixXd Zw = w.cwiseSqrt().asDiagonal() * Z;
            sxx.topLeftCorner(dc, dc).selfadjointView<Eigen::Upper>().rankUpdate(Zw.transpose());
            for (Eigen::Index j = 0; j < dc; ++j) {
                sx[static_cast<std::size_t>(j)] = zx(j);
                sxz[static_cast<std::size_t>(j)] = zxz(j);
            }
        }
        for (std::size_t k = 0; k < m_; ++k) {
            const long c = lc_[k];
            if (c < 0) continue;
            const auto L = static_cast<std::size_t>(c);
            const auto Li = static_cast<Eigen::Index>(c);
            const double v = 1.0 / scale_[L];
            const double wv = w(static_cast<Eigen::Index>(k)) * v;
            sx[L] += wv;
            sxz[L] += wz(static_cast<Eigen::Index>(k)) * v;
            sxx(Li, Li) += wv * v;
            const double* x = &z_[k * design_.dense_cols];
            double* colL = sxx.col(Li).data();
            for (Eigen::Index i = 0; i < dc; ++i) colL[i] += wv * x[i];
        }
        const double md = static_cast<double>(m_);
        w_sum_ = sw / md;
        mu_.assign(p_, 0.0);
        for (std::size_t j = 0; j < p_; ++j) mu_[j] = sx[j] / sw;
        zbar_ = sz / sw;
        G_.resize(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
        c_.assign(p_, 0.0);
        for (std::size_t j = 0; j < p_; ++j) {
            c_[j] = sxz[j] / md - w_sum_ * mu_[j] * zbar_;
            for (std::size_t i = 0; i <= j; ++i) {
                const double g = sxx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) / md -
                                 w_sum_ * mu_[i] * mu_[j];
                G_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g;
                G_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = g;
            }
        }
    }

    // Solves min 1/2 b'Gb - c'b + lambda * sum pf (alpha |b| + (1-alpha)/2 b^2).
    void solve_quadratic(double lambda) {
        if (opt_.alpha <= 0.0) {
            std::vector<Eigen::Index> idx;
            for (std::size_t j = 0; j < p_; ++j)
                if (active_[j]) idx.push_back(static_cast<Eigen::Index>(j));
            const auto q = static_cast<Eigen::Index>(idx.size());
            Eigen::MatrixXd A(q, q);
            Eigen::VectorXd rhs(q);
            for (Eigen::Index a = 0; a < q; ++a) {
                rhs(a) = c_[static_cast<std::size_t>(idx[a])];
                for (Eigen::Index b = 0; b < q; ++b) A(a, b) = G_(idx[a], idx[b]);
                A(a, a) += lambda * opt_.penalty_factor[static_cast<std::size_t>(idx[a])] + 1e-12;
            }
            const Eigen::VectorXd sol = A.ldlt().solve(rhs);
            std::fill(beta_.begin(), beta_.end(), 0.0);
            for (Eigen::Index a = 0; a < q; ++a) beta_[static_cast<std::size_t>(idx[a])] = sol(a);
            return;
        }
        // grad_j = c_j - sum_k G_jk beta_k
        std::vector<double> grad(c_);
        for (std::size_t k = 0; k < p_; ++k)
            if (beta_[k] != 0.0)
                for (std::size_t j = 0; j < p_; ++j) grad[j] -= G_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) * beta_[k];
        const double l1 = lambda * opt_.alpha, l2 = lambda * (1.0 - opt_.alpha);
        auto sweep = [&](bool active_only) {
            double max_change = 0.0;
            for (std::size_t j = 0; j < p_; ++j) {
                if (!active_[j]) continue;
                if (active_only && beta_[j] == 0.0) continue;
                const double gjj = G_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
                if (gjj <= 0.0) continue;
                const double pf = opt_.penalty_factor[j];
                const double u = grad[j] + gjj * beta_[j];
                const double thr = l1 * pf;
                double nb = 0.0;
                if (u > thr)
                    nb = (u - thr) / (gjj + l2 * pf);
                else if (u < -thr)
                    nb = (u + thr) / (gjj + l2 * pf);
                const double delta = nb - beta_[j];
                if (delta != 0.0) {
                    beta_[j] = nb;
                    for (std::size_t i = 0; i < p_; ++i)
                        grad[i] -= G_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * delta;
                    max_change = std::max(max_change, gjj * delta * delta);
                }
            }
            return max_change;
        };
        for (int outer = 0; outer < opt_.max_cd_sweeps; ++outer) {
            if (sweep(false) < opt_.cd_tol * w_sum_) break;
            for (int inner = 0; inner < opt_.max_cd_sweeps; ++inner)
                if (sweep(true) < opt_.cd_tol * w_sum_) break;
        }
    }

    void update_eta() {
        const std::size_t dc = design_.dense_cols;
        b0_ = zbar_;
        for (std::size_t j = 0; j < p_; ++j) b0_ -= mu_[j] * beta_[j];
        for (std::size_t k = 0; k < m_; ++k) {
            double e = b0_;
            const double* x = &z_[k * dc];
            for (std::size_t j = 0; j < dc; ++j) e += beta_[j] * x[j];
            if (const long c = lc_[k]; c >= 0) e += beta_[static_cast<std::size_t>(c)] / scale_[static_cast<std::size_t>(c)];
            eta_[k] = e;
        }
    }

    double deviance() const {
        double dev = 0.0;
        for (std::size_t k = 0; k < m_; ++k) {
            if (opt_.family == Family::binomial) {
                const double pr = clamp_probability(expit(eta_[k]), 1e-15, 1.0 - 1e-15);
                dev -= 2.0 * (y_[k] > 0.5 ? std::log(pr) : std::log(1.0 - pr));
            } else {
                dev += (y_[k] - eta_[k]) * (y_[k] - eta_[k]);
            }
        }
        return dev;
    }

    void fit_one(double lambda) {
        if (opt_.family == Family::gaussian) {
            if (!gaussian_ready_) {
                build_quadratic();
                gaussian_ready_ = true;
            }
            solve_quadratic(lambda);
            update_eta();
            return;
        }
        double dev_old = deviance();
        for (int it = 0; it < opt_.max_irls; ++it) {
            build_quadratic();
            solve_quadratic(lambda);
            update_eta();
            const double dev = deviance();
            if (!std::isfinite(dev)) throw SingularFitError("glm: non-finite deviance");
            if (std::abs(dev - dev_old) / (std::abs(dev) + 0.1) < opt_.irls_tol) break;
            dev_old = dev;
        }
    }

    GlmCoef export_coef(double lambda) const {
        GlmCoef out;
        out.lambda = lambda;
        out.beta.assign(p_, 0.0);
        out.beta_std = beta_;
        out.intercept = b0_;
        const std::size_t dc = design_.dense_cols;
        for (std::size_t j = 0; j < p_; ++j) {
            if (!active_[j]) {
                out.beta_std[j] = 0.0;
                continue;
            }
            out.beta[j] = beta_[j] / scale_[j];
            if (j < dc) out.intercept -= beta_[j] * center_[j] / scale_[j];
        }
        return out;
    }

    GlmDesign design_;
    GlmOptions opt_;
    std::size_t p_ = 0;
    std::size_t m_ = 0;
    std::vector<double> center_, scale_;
    std::vector<bool> active_;
    std::vector<double> z_;
    std::vector<long> lc_;
    std::vector<double> y_;
    double b0_ = 0.0;
    std::vector<double> beta_;
    std::vector<double> eta_;
    Eigen::MatrixXd G_;
    std::vector<double> c_, mu_;
    double w_sum_ = 0.0, zbar_ = 0.0;
    bool gaussian_ready_ = false;
};

/// Log-spaced decreasing grid from lambda_max down by `ratio`.
inline std::vector<double> lambda_grid(double lambda_max, std::size_t count = 50, double ratio = 1e-4) {
    std::vector<double> grid(count);
    if (count == 1) {
        grid[0] = lambda_max;
        return grid;
    }
    const double step = std::log(ratio) / static_cast<double>(count - 1);
    for (std::size_t k = 0; k < count; ++k) grid[k] = lambda_max * std::exp(step * static_cast<double>(k));
    return grid;
}

}  // namespace survhte::learners
