#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/learners/tree.hpp"

namespace survhte::importance {

struct ForestOptions {
    int trees = 500;
    int max_depth = 4;
    double sample_fraction = 0.5;
    std::size_t min_node = 5;
    std::size_t mtry = 0;  // 0: min(ceil(sqrt(p) + 20), p)
    double decay = 2.0;    // depth weight k^-decay
    std::size_t max_bins = 128;
};

/// Regression forest on (x, y) returning depth-weighted split-frequency
/// importance: at each depth k the share of splits on feature j, averaged
/// with weights k^-decay.
inline std::vector<double> forest_importance(const double* x, std::size_t n, std::size_t p, std::span<const double> y,
                                             const ForestOptions& opt, std::uint64_t seed) {
    if (y.size() != n) throw DimensionError("forest: outcome length mismatch");
    if (n < 2 * opt.min_node) throw FitError("forest: too few rows");
    const auto rows = [&] {
        std::vector<std::size_t> r(n);
        std::iota(r.begin(), r.end(), std::size_t{0});
        return r;
    }();
    const auto bins = learners::BinnedFeatures::build(x, n, p, rows, opt.max_bins);
    learners::TreeOptions topt;
    topt.max_depth = opt.max_depth;
    topt.min_leaf = opt.min_node;
    topt.mtry = opt.mtry ? opt.mtry
                         : std::min(p, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p)) + 20.0)));
    const auto D = static_cast<std::size_t>(opt.max_depth);
    std::vector<std::vector<double>> counts(D, std::vector<double>(p, 0.0));
    std::mt19937_64 rng(seed);
    const auto m = std::max<std::size_t>(2 * opt.min_node, static_cast<std::size_t>(opt.sample_fraction * static_cast<double>(n)));
    std::vector<std::size_t> perm = rows;
    for (int b = 0; b < opt.trees; ++b) {
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::size_t> sample(perm.begin(), perm.begin() + static_cast<long>(std::min(m, n)));
        const auto tree = learners::grow_tree(bins, y, std::move(sample), topt, rng);
        for (const auto& node : tree.nodes)
            if (node.feature >= 0) counts[static_cast<std::size_t>(node.depth)][static_cast<std::size_t>(node.feature)] += 1.0;
    }
    std::vector<double> imp(p, 0.0);
    double wsum = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
        const double total = std::accumulate(counts[k].begin(), counts[k].end(), 0.0);
        const double w = std::pow(static_cast<double>(k + 1), -opt.decay);
        wsum += w;
        if (total <= 0.0) continue;
        for (std::size_t j = 0; j < p; ++j) imp[j] += w * counts[k][j] / total;
    }
    for (double& v : imp) v /= wsum;
    return imp;
}

}  // namespace survhte::importance
