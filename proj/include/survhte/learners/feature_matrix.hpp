#pragma once

#include <span>
#include <string>
#include <vector>

#include "survhte/common.hpp"

namespace survhte::learners {

/// Row-major numeric features with an optional categorical period column.
/// Hazard designs carry the period twice: as a linear dense column
/// (`time_col`) and as the categorical `period` (level t-1); each learner
/// decides which encoding it uses.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<int> period;  // empty when there is no categorical block
    int periods = 0;
    long time_col = -1;
    std::vector<std::string> names;

    const double* row(std::size_t i) const { return values.data() + i * cols; }
    double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
    bool has_period() const { return !period.empty(); }

    /// True when every value in column j is 0 or 1.
    bool is_binary(std::size_t j) const {
        for (std::size_t i = 0; i < rows; ++i) {
            const double v = values[i * cols + j];
            if (v != 0.0 && v != 1.0) return false;
        }
        return true;
    }

    void check_row_dimension(std::size_t expected_cols) const {
        if (cols != expected_cols)
            throw DimensionError("feature matrix has " + std::to_string(cols) + " columns, model expects " +
                                 std::to_string(expected_cols));
    }
};

/// Plain covariate matrix from rows of equal length.
inline FeatureMatrix make_features(const std::vector<std::vector<double>>& rows,
                                   std::vector<std::string> names = {}) {
    FeatureMatrix m;
    m.rows = rows.size();
    m.cols = rows.empty() ? names.size() : rows.front().size();
    m.values.reserve(m.rows * m.cols);
    for (const auto& r : rows) {
        if (r.size() != m.cols) throw DimensionError("ragged feature rows");
        m.values.insert(m.values.end(), r.begin(), r.end());
    }
    if (names.empty())
        for (std::size_t j = 0; j < m.cols; ++j) names.push_back("x" + std::to_string(j + 1));
    m.names = std::move(names);
    return m;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = i;
    return r;
}

}  // namespace survhte::learners
