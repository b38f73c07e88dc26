#pragma once

// Histogram-based CART regression trees on quantile-binned features. Shared
// by the bagged logistic tree learner and the regression-forest importance
// scorer; the Bayesian tree sampler reuses the binning.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "survhte/common.hpp"

namespace survhte::learners {

/// Quantile bins per column. A value v falls in bin b when
/// cuts[b-1] < v <= cuts[b]; the last bin is open above.
struct BinnedFeatures {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint16_t> bins;  // column-major
    std::vector<std::vector<double>> cuts;

    std::uint16_t bin(std::size_t i, std::size_t j) const { return bins[j * rows + i]; }
    std::size_t bin_count(std::size_t j) const { return cuts[j].size() + 1; }

    std::uint16_t bin_of(std::size_t j, double v) const {
        const auto& c = cuts[j];
        return static_cast<std::uint16_t>(std::lower_bound(c.begin(), c.end(), v) - c.begin());
    }

    /// Cut points are estimated on `fit_rows`; all `rows` are binned.
    static BinnedFeatures build(const double* x, std::size_t rows, std::size_t cols, std::span<const std::size_t> fit_rows,
                                std::size_t max_bins) {
        BinnedFeatures b;
        b.rows = rows;
        b.cols = cols;
        b.cuts.resize(cols);
        b.bins.resize(rows * cols);
        std::vector<double> v;
        for (std::size_t j = 0; j < cols; ++j) {
            v.clear();
            for (std::size_t r : fit_rows) v.push_back(x[r * cols + j]);
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            auto& c = b.cuts[j];
            if (v.size() <= max_bins) {
                for (std::size_t k = 0; k + 1 < v.size(); ++k) c.push_back(0.5 * (v[k] + v[k + 1]));
            } else {
                for (std::size_t k = 1; k < max_bins; ++k) {
                    const std::size_t pos = k * v.size() / max_bins;
                    c.push_back(0.5 * (v[pos - 1] + v[pos]));
                }
                c.erase(std::unique(c.begin(), c.end()), c.end());
            }
            for (std::size_t i = 0; i < rows; ++i) b.bins[j * rows + i] = b.bin_of(j, x[i * cols + j]);
        }
        return b;
    }
};

struct TreeNode {
    int feature = -1;  // -1 for leaves
    std::uint16_t cut_bin = 0;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int depth = 0;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    int leaf_of(const double* x) const {
        int k = 0;
        while (nodes[k].feature >= 0) k = x[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
        return k;
    }

    int leaf_of_binned(const BinnedFeatures& b, std::size_t i) const {
        int k = 0;
        while (nodes[k].feature >= 0)
            k = b.bin(i, static_cast<std::size_t>(nodes[k].feature)) <= nodes[k].cut_bin ? nodes[k].left : nodes[k].right;
        return k;
    }

    double predict(const double* x) const { return nodes[leaf_of(x)].value; }
};

struct TreeOptions {
    int max_depth = 6;
    std::size_t min_leaf = 5;
    std::size_t mtry = 0;  // 0 = all features
};

/// Grows a least-squares tree on `rows` (duplicates allowed, for bootstrap
/// samples). Leaf values are the mean response of the rows reaching them.
inline RegressionTree grow_tree(const BinnedFeatures& b, std::span<const double> y, std::vector<std::size_t> rows,
                                const TreeOptions& opt, std::mt19937_64& rng) {
    RegressionTree tree;
    struct Pending {
        int node;
        std::size_t begin, end;
    };
    std::vector<Pending> stack;
    tree.nodes.push_back({});
    stack.push_back({0, 0, rows.size()});
    std::vector<std::size_t> features(b.cols);
    std::iota(features.begin(), features.end(), std::size_t{0});
    const std::size_t mtry = (opt.mtry == 0 || opt.mtry > b.cols) ? b.cols : opt.mtry;
    std::vector<double> hsum;
    std::vector<double> hcnt;

    while (!stack.empty()) {
        const Pending job = stack.back();
        stack.pop_back();
        const std::size_t n = job.end - job.begin;
        double total = 0.0;
        for (std::size_t k = job.begin; k < job.end; ++k) total += y[rows[k]];
        TreeNode& node = tree.nodes[static_cast<std::size_t>(job.node)];
        node.value = n ? total / static_cast<double>(n) : 0.0;
        if (node.depth >= opt.max_depth || n < 2 * opt.min_leaf) continue;

        if (mtry < b.cols)
            for (std::size_t k = 0; k < mtry; ++k) {
                std::uniform_int_distribution<std::size_t> pick(k, b.cols - 1);
                std::swap(features[k], features[pick(rng)]);
            }
        double best_gain = 1e-12;
        int best_feature = -1;
        std::uint16_t best_bin = 0;
        const double parent = total * total / static_cast<double>(n);
        for (std::size_t f = 0; f < mtry; ++f) {
            const std::size_t j = features[f];
            const std::size_t nb = b.bin_count(j);
            if (nb < 2) continue;
            hsum.assign(nb, 0.0);
            hcnt.assign(nb, 0.0);
            for (std::size_t k = job.begin; k < job.end; ++k) {
                const std::size_t r = rows[k];
                const auto bin = b.bin(r, j);
                hsum[bin] += y[r];
                hcnt[bin] += 1.0;
            }
            double ls = 0.0, lc = 0.0;
            for (std::size_t bin = 0; bin + 1 < nb; ++bin) {
                ls += hsum[bin];
                lc += hcnt[bin];
                const double rc = static_cast<double>(n) - lc;
                if (lc < static_cast<double>(opt.min_leaf)) continue;
                if (rc < static_cast<double>(opt.min_leaf)) break;
                const double rs = total - ls;
                const double gain = ls * ls / lc + rs * rs / rc - parent;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<int>(j);
                    best_bin = static_cast<std::uint16_t>(bin);
                }
            }
        }
        if (best_feature < 0) continue;
        const auto fj = static_cast<std::size_t>(best_feature);
        const auto mid = std::stable_partition(rows.begin() + static_cast<long>(job.begin), rows.begin() + static_cast<long>(job.end),
                                               [&](std::size_t r) { return b.bin(r, fj) <= best_bin; });
        const std::size_t split = static_cast<std::size_t>(mid - rows.begin());
        const int depth = node.depth;
        node.feature = best_feature;
        node.cut_bin = best_bin;
        node.threshold = b.cuts[fj][best_bin];
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes[static_cast<std::size_t>(job.node)].left = left;
        tree.nodes[static_cast<std::size_t>(job.node)].right = left + 1;
        TreeNode child;
        child.depth = depth + 1;
        tree.nodes.push_back(child);
        tree.nodes.push_back(child);
        stack.push_back({left + 1, split, job.end});
        stack.push_back({left, job.begin, split});
    }
    return tree;
}

}  // namespace survhte::learners
