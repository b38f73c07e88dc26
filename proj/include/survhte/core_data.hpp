#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "survhte/common.hpp"

namespace survhte {

/// One observed unit: covariates, binary treatment, observed time
/// min(event time, censor time) on the integer grid, and event flag.
struct Subject {
    std::string id;
    std::vector<double> x;
    int a = 0;
    int t_obs = 1;
    int y = 0;
};

/// Validated sample. Immutable after construction by convention; every
/// downstream module takes it by const reference.
struct Cohort {
    std::vector<Subject> subjects;
    std::size_t dim = 0;
    int horizon = 1;
    std::vector<std::string> feature_names;

    std::size_t size() const { return subjects.size(); }

    std::size_t count_arm(int a) const {
        return static_cast<std::size_t>(
            std::count_if(subjects.begin(), subjects.end(), [a](const Subject& s) { return s.a == a; }));
    }

    /// Index of a feature by name, if present.
    std::optional<std::size_t> feature_index(const std::string& name) const {
        for (std::size_t j = 0; j < feature_names.size(); ++j)
            if (feature_names[j] == name) return j;
        return std::nullopt;
    }

    /// Sub-cohort made of the given subject indices, in the given order.
    Cohort subset(std::span<const std::size_t> idx) const {
        Cohort c;
        c.dim = dim;
        c.horizon = horizon;
        c.feature_names = feature_names;
        c.subjects.reserve(idx.size());
        for (std::size_t i : idx) c.subjects.push_back(subjects.at(i));
        return c;
    }
};

/// A row of parsed but not yet validated input. Integer fields are kept wide
/// so out-of-range values are reported rather than truncated.
struct RawRow {
    std::string id;
    long long time = 0;
    long long event = 0;
    long long treatment = 0;
    std::vector<double> x;
};

struct Violation {
    std::size_t row;  // 1-based
    std::string rule;
};

inline std::vector<Violation> find_violations(std::span<const RawRow> rows) {
    std::vector<Violation> out;
    std::unordered_set<std::string> seen;
    const std::size_t dim = rows.empty() ? 0 : rows.front().x.size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const RawRow& r = rows[i];
        const std::size_t row = i + 1;
        if (!seen.insert(r.id).second) out.push_back({row, "ids unique"});
        if (r.time < 1) out.push_back({row, "t_obs >= 1"});
        if (r.event != 0 && r.event != 1) out.push_back({row, "y in {0,1}"});
        if (r.treatment != 0 && r.treatment != 1) out.push_back({row, "a in {0,1}"});
        if (r.x.size() != dim) out.push_back({row, "covariate length equals cohort dimension"});
        for (double v : r.x)
            if (!std::isfinite(v)) {
                out.push_back({row, "finite covariates"});
                break;
            }
    }
    return out;
}

/// Builds a Cohort, throwing ValidationError for the first violation found.
inline Cohort validate_cohort(std::span<const RawRow> rows, int horizon,
                              std::vector<std::string> feature_names = {}) {
    if (horizon < 1) throw ValidationError(0, "horizon >= 1");
    if (const auto v = find_violations(rows); !v.empty()) throw ValidationError(v.front().row, v.front().rule);

    Cohort c;
    c.horizon = horizon;
    c.dim = rows.empty() ? feature_names.size() : rows.front().x.size();
    if (feature_names.empty())
        for (std::size_t j = 0; j < c.dim; ++j) feature_names.push_back("x" + std::to_string(j + 1));
    if (feature_names.size() != c.dim) throw ValidationError(0, "feature names match dimension");
    c.feature_names = std::move(feature_names);
    c.subjects.reserve(rows.size());
    for (const RawRow& r : rows)
        c.subjects.push_back({r.id, r.x, static_cast<int>(r.treatment), static_cast<int>(r.time),
                              static_cast<int>(r.event)});
    return c;
}

// ---------------------------------------------------------------------------
// Counting-process expansion
// ---------------------------------------------------------------------------

/// Person-period row. Covariates are not copied: `subject` indexes the cohort.
/// Every row is at risk by construction.
struct PersonPeriodRow {
    std::size_t subject = 0;
    int t = 1;
    int event = 0;
    int a = 0;
};

struct PersonPeriodTable {
    std::vector<PersonPeriodRow> rows;
    int horizon = 1;
};

/// Number of at-risk periods a subject contributes up to the horizon.
inline int periods_at_risk(const Subject& s, int horizon) { return std::min(s.t_obs, horizon); }

/// Event indicator restricted to the horizon.
inline int event_within(const Subject& s, int horizon) { return (s.y == 1 && s.t_obs <= horizon) ? 1 : 0; }

/// One binary row per subject per period in 1..min(t_obs, horizon); the event
/// flag is set only on the last row of a subject whose event occurs by the
/// horizon. Subjects are expanded in cohort order.
inline PersonPeriodTable expand_counting_process(const Cohort& cohort, int horizon,
                                                 std::span<const std::size_t> subset = {}) {
    if (horizon < 1) throw ValidationError(0, "horizon >= 1");
    PersonPeriodTable table;
    table.horizon = horizon;
    auto expand_one = [&](std::size_t i) {
        const Subject& s = cohort.subjects[i];
        const int last = periods_at_risk(s, horizon);
        const int ev = event_within(s, horizon);
        for (int t = 1; t <= last; ++t) table.rows.push_back({i, t, (t == last) ? ev : 0, s.a});
    };
    if (subset.empty()) {
        std::size_t total = 0;
        for (const auto& s : cohort.subjects) total += static_cast<std::size_t>(periods_at_risk(s, horizon));
        table.rows.reserve(total);
        for (std::size_t i = 0; i < cohort.size(); ++i) expand_one(i);
    } else {
        for (std::size_t i : subset) expand_one(i);
    }
    return table;
}

/// Censoring counting process: rows until censoring or event, with outcome 1
/// in the period a subject is censored. A subject with an event at t_obs is
/// at risk of censoring through t_obs - 1 only (the event is resolved first
/// within a period). Subjects followed past the horizon contribute horizon
/// rows, all uncensored.
inline PersonPeriodTable expand_censoring_process(const Cohort& cohort, int horizon) {
    PersonPeriodTable table;
    table.horizon = horizon;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const Subject& s = cohort.subjects[i];
        int last;
        int censored;
        if (s.t_obs > horizon) {
            last = horizon;
            censored = 0;
        } else if (s.y == 1) {
            last = s.t_obs - 1;
            censored = 0;
        } else {
            last = s.t_obs;
            censored = 1;
        }
        for (int t = 1; t <= last; ++t) table.rows.push_back({i, t, (t == last) ? censored : 0, s.a});
    }
    return table;
}

/// Collapsed per-subject view of a table: (periods, event) from the last row.
struct CollapsedSubject {
    std::size_t subject;
    int periods;
    int event;
};

inline std::vector<CollapsedSubject> collapse(const PersonPeriodTable& table) {
    std::vector<CollapsedSubject> out;
    for (const auto& r : table.rows) {
        if (!out.empty() && out.back().subject == r.subject) {
            out.back().periods = r.t;
            out.back().event = r.event;
        } else {
            out.push_back({r.subject, r.t, r.event});
        }
    }
    return out;
}

}  // namespace survhte
