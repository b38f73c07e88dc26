#pragma once

// Bayesian sum-of-trees regression by backfitting MCMC (grow/prune
// Metropolis-Hastings per tree, conjugate normal leaves, inverse-chi-square
// noise). Only variable inclusion proportions are reported.

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/learners/tree.hpp"

namespace survhte::importance {

struct BartOptions {
    int trees = 200;
    double alpha = 0.95;
    double beta = 2.0;
    double k = 2.0;
    double nu = 3.0;
    double q = 0.9;
    int burn_in = 250;
    int iterations = 1000;
    std::size_t min_leaf = 5;
    std::size_t max_bins = 100;
};

namespace detail {

struct BartNode {
    int feature = -1;
    std::uint16_t cut = 0;
    int parent = -1;
    int left = -1;
    int right = -1;
    int depth = 0;
    double mu = 0.0;
    bool alive = true;
};

struct BartTree {
    std::vector<BartNode> nodes{BartNode{}};
    std::vector<int> leaf;  // leaf index per observation

    std::vector<int> leaves() const {
        std::vector<int> out;
        for (std::size_t k = 0; k < nodes.size(); ++k)
            if (nodes[k].alive && nodes[k].feature < 0) out.push_back(static_cast<int>(k));
        return out;
    }
    /// Internal nodes whose children are both leaves.
    std::vector<int> prunable() const {
        std::vector<int> out;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            const auto& n = nodes[k];
            if (n.alive && n.feature >= 0 && nodes[n.left].feature < 0 && nodes[n.right].feature < 0)
                out.push_back(static_cast<int>(k));
        }
        return out;
    }
    int new_node() {
        for (std::size_t k = 0; k < nodes.size(); ++k)
            if (!nodes[k].alive) {
                nodes[k] = BartNode{};
                return static_cast<int>(k);
            }
        nodes.emplace_back();
        return static_cast<int>(nodes.size() - 1);
    }
};

}  // namespace detail

/// Posterior mean inclusion proportions: per kept iteration, the share of all
/// splitting rules that use feature j, averaged over iterations.
inline std::vector<double> bart_inclusion(const double* x, std::size_t n, std::size_t p, std::span<const double> y_raw,
                                          const BartOptions& opt, std::uint64_t seed) {
    if (y_raw.size() != n) throw DimensionError("bart: outcome length mismatch");
    if (n < 2 * opt.min_leaf) throw FitError("bart: too few rows");
    const auto [ymin_it, ymax_it] = std::minmax_element(y_raw.begin(), y_raw.end());
    const double ymin = *ymin_it, ymax = *ymax_it;
    std::vector<double> inclusion(p, 0.0);
    if (!(ymax - ymin > 1e-12)) return inclusion;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = (y_raw[i] - ymin) / (ymax - ymin) - 0.5;

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto bins = learners::BinnedFeatures::build(x, n, p, all, opt.max_bins);

    // Noise prior calibrated to the OLS residual variance (sample variance when p >= n).
    double sigma2_hat;
    {
        Eigen::MatrixXd X(n, p + 1);
        Eigen::VectorXd Y(n);
        for (std::size_t i = 0; i < n; ++i) {
            X(i, 0) = 1.0;
            for (std::size_t j = 0; j < p; ++j) X(i, j + 1) = x[i * p + j];
            Y(i) = y[i];
        }
        if (n > p + 1) {
            const Eigen::VectorXd b = X.colPivHouseholderQr().solve(Y);
            sigma2_hat = (Y - X * b).squaredNorm() / static_cast<double>(n - p - 1);
        } else {
            sigma2_hat = variance(y);
        }
        sigma2_hat = std::max(sigma2_hat, 1e-8);
    }
    const boost::math::chi_squared chi(opt.nu);
    const double lambda = sigma2_hat * boost::math::quantile(chi, 1.0 - opt.q) / opt.nu;
    const double tau = std::pow(0.5 / (opt.k * std::sqrt(static_cast<double>(opt.trees))), 2);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> norm(0.0, 1.0);
    auto pick = [&](std::size_t count) { return std::min(count - 1, static_cast<std::size_t>(unif(rng) * static_cast<double>(count))); };
    auto split_prob = [&](int depth) { return opt.alpha * std::pow(1.0 + depth, -opt.beta); };

    const auto m = static_cast<std::size_t>(opt.trees);
    std::vector<detail::BartTree> forest(m);
    for (auto& t : forest) t.leaf.assign(n, 0);
    std::vector<double> fit(n, 0.0);  // sum of trees
    double sigma2 = sigma2_hat;
    std::vector<double> resid(n);

    // Log marginal likelihood of a leaf's residuals (terms common to grow and
    // prune cancel).
    auto leaf_ml = [&](double cnt, double sum) {
        return -0.5 * std::log(sigma2 + cnt * tau) + 0.5 * std::log(sigma2) +
               tau * sum * sum / (2.0 * sigma2 * (sigma2 + cnt * tau));
    };

    std::vector<std::uint16_t> lo_bin(p), hi_bin(p);
    // Range of bins present in a node; returns the number of usable features.
    auto node_ranges = [&](std::span<const int> members) {
        std::fill(lo_bin.begin(), lo_bin.end(), std::numeric_limits<std::uint16_t>::max());
        std::fill(hi_bin.begin(), hi_bin.end(), 0);
        for (int i : members)
            for (std::size_t j = 0; j < p; ++j) {
                const auto b = bins.bin(static_cast<std::size_t>(i), j);
                lo_bin[j] = std::min(lo_bin[j], b);
                hi_bin[j] = std::max(hi_bin[j], b);
            }
        std::size_t usable = 0;
        for (std::size_t j = 0; j < p; ++j) usable += hi_bin[j] > lo_bin[j] ? 1 : 0;
        return usable;
    };

    std::vector<int> members;
    const int total_iter = opt.burn_in + opt.iterations;
    for (int iter = 0; iter < total_iter; ++iter) {
        for (std::size_t tj = 0; tj < m; ++tj) {
            auto& tree = forest[tj];
            for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - (fit[i] - tree.nodes[tree.leaf[i]].mu);

            const auto leaves = tree.leaves();
            const bool root_only = leaves.size() == 1;
            const bool grow = root_only || unif(rng) < 0.5;
            if (grow) {
                const int L = leaves[pick(leaves.size())];
                members.clear();
                for (std::size_t i = 0; i < n; ++i)
                    if (tree.leaf[i] == L) members.push_back(static_cast<int>(i));
                const std::size_t usable = node_ranges(members);
                if (usable > 0 && members.size() >= 2 * opt.min_leaf) {
                    std::size_t choice = pick(usable), feature = 0;
                    for (std::size_t j = 0; j < p; ++j)
                        if (hi_bin[j] > lo_bin[j] && choice-- == 0) {
                            feature = j;
                            break;
                        }
                    const std::size_t n_cuts = static_cast<std::size_t>(hi_bin[feature] - lo_bin[feature]);
                    const auto cut = static_cast<std::uint16_t>(lo_bin[feature] + pick(n_cuts));
                    double nl = 0, sl = 0, nr = 0, sr = 0;
                    for (int i : members) {
                        if (bins.bin(static_cast<std::size_t>(i), feature) <= cut) {
                            nl += 1;
                            sl += resid[i];
                        } else {
                            nr += 1;
                            sr += resid[i];
                        }
                    }
                    if (nl >= static_cast<double>(opt.min_leaf) && nr >= static_cast<double>(opt.min_leaf)) {
                        const int d = tree.nodes[L].depth;
                        const double ps = split_prob(d), pc = split_prob(d + 1);
                        // Prunable count after the grow: L becomes prunable; its
                        // parent stops being prunable if it was.
                        std::size_t w_star = tree.prunable().size() + 1;
                        const int par = tree.nodes[L].parent;
                        if (par >= 0) {
                            const auto& pn = tree.nodes[par];
                            if (tree.nodes[pn.left].feature < 0 && tree.nodes[pn.right].feature < 0) --w_star;
                        }
                        const double p_grow = root_only ? 1.0 : 0.5;
                        const double log_ratio = std::log(0.5 / static_cast<double>(w_star)) -
                                                 std::log(p_grow / static_cast<double>(leaves.size())) +
                                                 std::log(ps) + 2.0 * std::log(1.0 - pc) - std::log(1.0 - ps) +
                                                 leaf_ml(nl, sl) + leaf_ml(nr, sr) - leaf_ml(nl + nr, sl + sr);
                        if (std::log(unif(rng)) < log_ratio) {
                            const int a = tree.new_node();
                            const int b = tree.new_node();
                            auto& node = tree.nodes[L];
                            node.feature = static_cast<int>(feature);
                            node.cut = cut;
                            node.left = a;
                            node.right = b;
                            tree.nodes[a].parent = tree.nodes[b].parent = L;
                            tree.nodes[a].depth = tree.nodes[b].depth = d + 1;
                            for (int i : members)
                                tree.leaf[i] = bins.bin(static_cast<std::size_t>(i), feature) <= cut ? a : b;
                        }
                    }
                }
            } else {
                const auto candidates = tree.prunable();
                const int P = candidates[pick(candidates.size())];
                const auto& pn = tree.nodes[P];
                double nl = 0, sl = 0, nr = 0, sr = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (tree.leaf[i] == pn.left) {
                        nl += 1;
                        sl += resid[i];
                    } else if (tree.leaf[i] == pn.right) {
                        nr += 1;
                        sr += resid[i];
                    }
                }
                const int d = pn.depth;
                const double ps = split_prob(d), pc = split_prob(d + 1);
                const std::size_t b_after = leaves.size() - 1;
                const double p_grow_after = b_after == 1 ? 1.0 : 0.5;
                const double log_ratio = std::log(p_grow_after / static_cast<double>(b_after)) -
                                         std::log(0.5 / static_cast<double>(candidates.size())) -
                                         (std::log(ps) + 2.0 * std::log(1.0 - pc) - std::log(1.0 - ps)) +
                                         leaf_ml(nl + nr, sl + sr) - leaf_ml(nl, sl) - leaf_ml(nr, sr);
                if (std::log(unif(rng)) < log_ratio) {
                    const int l = pn.left, r = pn.right;
                    for (std::size_t i = 0; i < n; ++i)
                        if (tree.leaf[i] == l || tree.leaf[i] == r) tree.leaf[i] = P;
                    tree.nodes[l].alive = tree.nodes[r].alive = false;
                    auto& node = tree.nodes[P];
                    node.feature = -1;
                    node.left = node.right = -1;
                }
            }

            // Leaf values from their conjugate posterior, then refresh the fit.
            std::vector<double> cnt(tree.nodes.size(), 0.0), sum(tree.nodes.size(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                cnt[tree.leaf[i]] += 1.0;
                sum[tree.leaf[i]] += resid[i];
            }
            for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
                auto& node = tree.nodes[k];
                if (!node.alive || node.feature >= 0) continue;
                const double denom = sigma2 + cnt[k] * tau;
                node.mu = tau * sum[k] / denom + std::sqrt(sigma2 * tau / denom) * norm(rng);
            }
            for (std::size_t i = 0; i < n; ++i) fit[i] = y[i] - resid[i] + tree.nodes[tree.leaf[i]].mu;
        }

        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) sse += (y[i] - fit[i]) * (y[i] - fit[i]);
        std::chi_squared_distribution<double> chi_post(opt.nu + static_cast<double>(n));
        sigma2 = (opt.nu * lambda + sse) / chi_post(rng);

        if (iter >= opt.burn_in) {
            std::vector<double> uses(p, 0.0);
            double total = 0.0;
            for (const auto& t : forest)
                for (const auto& node : t.nodes)
                    if (node.alive && node.feature >= 0) {
                        uses[static_cast<std::size_t>(node.feature)] += 1.0;
                        total += 1.0;
                    }
            if (total > 0.0)
                for (std::size_t j = 0; j < p; ++j) inclusion[j] += uses[j] / total;
        }
    }
    for (double& v : inclusion) v /= static_cast<double>(opt.iterations);
    return inclusion;
}

}  // namespace survhte::importance
