#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace survhte {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input data violates a schema or cohort rule. `row` is 1-based over data
/// rows (0 when the violation is not tied to a row).
struct ValidationError : Error {
    ValidationError(std::size_t row_, std::string rule_, const std::string& detail = {})
        : Error(format(row_, rule_, detail)), row(row_), rule(std::move(rule_)) {}

    std::size_t row;
    std::string rule;

private:
    static std::string format(std::size_t row, const std::string& rule, const std::string& detail) {
        std::string msg = "validation error";
        if (row > 0) msg += " at row " + std::to_string(row);
        msg += ": " + rule;
        if (!detail.empty()) msg += " (" + detail + ")";
        return msg;
    }
};

struct ConfigError : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct CalibrationError : Error { using Error::Error; };
struct SingularFitError : Error { using Error::Error; };
struct AllLearnersFailed : Error { using Error::Error; };
struct EmptyArmError : Error { using Error::Error; };
struct NoEventsError : Error { using Error::Error; };
struct DegenerateNormalizer : Error { using Error::Error; };
struct DegenerateDenominator : Error { using Error::Error; };
struct EmptyStratum : Error { using Error::Error; };
struct InvalidBreaks : Error { using Error::Error; };
struct NonFiniteUpdate : Error { using Error::Error; };
struct FitError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

inline constexpr double kProbFloor = 1e-6;
inline constexpr double kProbCeil = 1.0 - 1e-6;

inline double clamp_probability(double p, double lo = kProbFloor, double hi = kProbCeil) {
    if (std::isnan(p)) return lo;
    return std::clamp(p, lo, hi);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double expit(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Sample variance with n-1 denominator; 0 for fewer than two values.
inline double variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

/// Mean Bernoulli negative log-likelihood with probabilities clamped.
inline double log_loss(std::span<const double> y, std::span<const double> p) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double q = clamp_probability(p[i]);
        s -= y[i] > 0.5 ? std::log(q) : std::log(1.0 - q);
    }
    return y.empty() ? 0.0 : s / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Seeds
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed in the splittable seed tree (scenario -> replicate -> module).
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t child) {
    return splitmix64(parent ^ splitmix64(child + 0x632be59bd9b4e019ULL));
}

/// Stateless counter-based uniform stream: `uniform(k)` depends only on
/// (key, k), so per-subject draws do not depend on generation order.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(splitmix64(key)) {}

    /// Uniform on the open interval (0, 1).
    double uniform(std::uint64_t counter) const {
        const std::uint64_t bits = splitmix64(key_ ^ splitmix64(counter));
        return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
    }

private:
    std::uint64_t key_;
};

/// FNV-1a, used for config hashes recorded in reports.
inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Threads
// ---------------------------------------------------------------------------

/// Thread count from SURVHTE_THREADS, or 1.
inline unsigned default_threads() {
    if (const char* env = std::getenv("SURVHTE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots so output does not depend on scheduling. The
/// first exception thrown by any task is rethrown after all workers join.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= n || failure) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::jthread> pool;
    const unsigned count = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    pool.reserve(count);
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace survhte
