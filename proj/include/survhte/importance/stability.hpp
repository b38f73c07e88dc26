#pragma once

#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "survhte/common.hpp"
#include "survhte/core_data.hpp"
#include "survhte/importance/scorers.hpp"
#include "survhte/survival_ite.hpp"

namespace survhte::importance {

struct StabilityResult {
    std::size_t replicates = 0;  // requested B
    std::size_t completed = 0;
    std::map<std::string, std::vector<std::size_t>> counts;  // method -> per-feature selection count
    std::vector<std::string> failures;
};

/// Repeats Step 1 and Step 2 on B random subsamples of size m and counts how
/// often each feature is selected by each method. Subsamples are drawn
/// without replacement so subject ids stay unique.
inline StabilityResult bootstrap_stability(const Cohort& cohort, const std::vector<Method>& methods, std::size_t B,
                                           std::size_t m, std::uint64_t seed,
                                           const std::vector<learners::BaseLearnerSpec>& library,
                                           const ScorerOptions& scorer = {}, unsigned threads = 1) {
    if (B < 1) throw ConfigError("bootstrap: B must be >= 1");
    if (m < 1 || m > cohort.size()) throw ConfigError("bootstrap: sample size must be in [1, n]");
    StabilityResult out;
    out.replicates = B;
    for (Method meth : methods) out.counts[to_string(meth)].assign(cohort.dim, 0);
    std::vector<std::map<std::string, std::vector<std::size_t>>> picks(B);
    std::vector<std::string> errors(B);
    std::vector<char> ok(B, 0);
    parallel_for(B, threads, [&](std::size_t b) {
        const std::uint64_t rs = derive_seed(seed, b);
        std::vector<std::size_t> idx(cohort.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::mt19937_64 rng(rs);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(m);
        std::sort(idx.begin(), idx.end());
        try {
            const Cohort sample = cohort.subset(idx);
            const auto models = fit_outcome_models(sample, library, derive_seed(rs, 1));
            const auto surface = estimate_ite(models, sample);
            const auto psi = surface.column(sample.horizon);
            for (Method meth : methods) {
                const auto curve = score_features(psi, sample, meth, derive_seed(rs, 2), scorer);
                picks[b][to_string(meth)] = select_features(curve).selected;
            }
            ok[b] = 1;
        } catch (const std::exception& e) {
            errors[b] = "replicate " + std::to_string(b + 1) + ": " + e.what();
        }
    });
    for (std::size_t b = 0; b < B; ++b) {
        if (!ok[b]) {
            out.failures.push_back(errors[b]);
            continue;
        }
        ++out.completed;
        for (const auto& [name, sel] : picks[b])
            for (std::size_t j : sel) ++out.counts[name][j];
    }
    return out;
}

}  // namespace survhte::importance
