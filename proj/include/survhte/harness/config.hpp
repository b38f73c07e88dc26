#pragma once

// Run configuration: an INI file of [section] key = value lines. Grid keys
// take comma-separated lists. Unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "survhte/cate.hpp"
#include "survhte/common.hpp"
#include "survhte/importance/scorers.hpp"
#include "survhte/learners/super_learner.hpp"

namespace survhte::harness {

struct RunConfig {
    // Scenario grid.
    std::vector<std::size_t> n{3000};
    std::vector<std::size_t> d{10};
    std::vector<double> beta{0.5};
    std::vector<double> rate{0.10};
    std::vector<std::size_t> strata{10};

    std::size_t replicates = 10;
    std::uint64_t seed = 1;
    int horizon = 12;
    unsigned threads = 1;
    std::string out_dir = "out";

    std::vector<learners::BaseLearnerSpec> library = learners::default_library();
    std::size_t folds = 10;

    std::vector<importance::Method> methods = importance::all_methods();
    importance::ScorerOptions scorer;

    double epsilon = 1e-3;
    int max_steps = 5000;
    double level = 0.95;

    std::string cate_feature = "x2";
    std::size_t cate_stratum = 1;
    Binning binning = Binning::equal_width;
    std::vector<double> breaks;

    std::size_t bootstrap_replicates = 0;
    std::size_t bootstrap_size = 8000;

    void validate() const;
};

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    T v{};
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
        throw ConfigError("config: '" + key + "' expects a number, got '" + t + "'");
    return v;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& key, const std::string& text) {
    std::vector<T> out;
    for (const auto& tok : split_list(text)) out.push_back(parse_number<T>(key, tok));
    if (out.empty()) throw ConfigError("config: '" + key + "' needs at least one value");
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (k) s += ", ";
        if constexpr (std::is_same_v<T, std::string>) {
            s += v[k];
        } else {
            char buf[64];
            const auto res = std::to_chars(buf, buf + sizeof buf, v[k]);
            s.append(buf, res.ptr);
        }
    }
    return s;
}

template <typename T>
std::string num(T v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::function<void(learners::BaseLearnerSpec&)> learner_setter(const std::string& key, const std::string& k,
                                                                     const std::string& v) {
    using S = learners::BaseLearnerSpec;
    if (key == "alpha") return [x = parse_number<double>(k, v)](S& s) { s.alpha = x; };
    if (key == "n_lambda") return [x = parse_number<std::size_t>(k, v)](S& s) { s.n_lambda = x; };
    if (key == "lambda_ratio") return [x = parse_number<double>(k, v)](S& s) { s.lambda_ratio = x; };
    if (key == "knots") return [x = parse_number<int>(k, v)](S& s) { s.knots = x; };
    if (key == "max_terms") return [x = parse_number<int>(k, v)](S& s) { s.max_terms = x; };
    if (key == "hinge_knots") return [x = parse_number<int>(k, v)](S& s) { s.hinge_knots = x; };
    if (key == "trees") return [x = parse_number<int>(k, v)](S& s) { s.trees = x; };
    if (key == "depth") return [x = parse_number<int>(k, v)](S& s) { s.depth = x; };
    if (key == "min_leaf") return [x = parse_number<std::size_t>(k, v)](S& s) { s.min_leaf = x; };
    throw ConfigError("config: unknown key '" + k + "'");
}

}  // namespace detail

inline void RunConfig::validate() const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    for (auto v : n)
        if (!in(static_cast<double>(v), 1000, 15000)) throw ConfigError("config: scenario.n must be in [1000, 15000]");
    for (auto v : d)
        if (!in(static_cast<double>(v), 8, 30)) throw ConfigError("config: scenario.d must be in [8, 30]");
    for (auto v : beta)
        if (!in(v, 0.0, 2.0)) throw ConfigError("config: scenario.beta must be in [0, 2]");
    for (auto v : rate)
        if (!in(v, 0.025, 0.30)) throw ConfigError("config: scenario.rate must be in [0.025, 0.30]");
    for (auto v : strata)
        if (!in(static_cast<double>(v), 1, 50)) throw ConfigError("config: scenario.strata must be in [1, 50]");
    if (replicates < 1 || replicates > 50) throw ConfigError("config: run.replicates must be in [1, 50]");
    if (horizon < 1 || horizon > 60) throw ConfigError("config: run.horizon must be in [1, 60]");
    if (threads < 1) throw ConfigError("config: run.threads must be >= 1");
    if (library.empty()) throw ConfigError("config: learners.library is empty");
    for (const auto& s : library) s.validate();
    if (folds < 2 || folds > 20) throw ConfigError("config: learners.folds must be in [2, 20]");
    if (methods.empty()) throw ConfigError("config: importance.methods is empty");
    if (scorer.forest.trees < 1 || scorer.bart.trees < 1) throw ConfigError("config: tree counts must be >= 1");
    if (scorer.bart.burn_in < 0 || scorer.bart.iterations < 1) throw ConfigError("config: invalid sampler length");
    if (!(epsilon > 0.0)) throw ConfigError("config: tmle.epsilon must be > 0");
    if (max_steps < 0) throw ConfigError("config: tmle.max_steps must be >= 0");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("config: tmle.level must lie in (0, 1)");
    if (cate_stratum < 1) throw ConfigError("config: cate.stratum must be >= 1");
    for (std::size_t k = 1; k < breaks.size(); ++k)
        if (!(breaks[k] > breaks[k - 1])) throw ConfigError("config: cate.breaks must be strictly increasing");
}

/// Parses INI text. Missing keys keep their defaults.
inline RunConfig parse_config(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    RunConfig c;
    const std::map<std::string, std::set<std::string>> known{
        {"scenario", {"n", "d", "beta", "rate", "strata"}},
        {"run", {"replicates", "seed", "horizon", "threads", "out_dir"}},
        {"learners", {"library", "folds", "alpha", "n_lambda", "lambda_ratio", "knots", "max_terms", "hinge_knots", "trees",
                      "depth", "min_leaf"}},
        {"importance", {"methods", "folds", "forest_trees", "forest_depth", "bart_trees", "bart_burn_in", "bart_iterations"}},
        {"tmle", {"epsilon", "max_steps", "level"}},
        {"cate", {"feature", "stratum", "binning", "breaks"}},
        {"bootstrap", {"replicates", "sample_size"}},
    };
    // Hyperparameters under [learners] apply to every library member and those
    // under [learner.<kind>] to that kind; the rest keep each kind's defaults.
    std::map<std::string, std::vector<std::function<void(learners::BaseLearnerSpec&)>>> hyper;
    std::vector<std::string> library_names;
    for (const auto& [section, body] : tree) {
        const bool per_kind = section.rfind("learner.", 0) == 0;
        if (per_kind) (void)learners::learner_kind_from_string(section.substr(8));
        const auto it = known.find(per_kind ? std::string("learners") : section);
        if (it == known.end() || body.empty()) throw ConfigError("config: unknown section [" + section + "]");
        for (const auto& [key, node] : body) {
            if (!it->second.count(key) || (per_kind && (key == "library" || key == "folds")))
                throw ConfigError("config: unknown key '" + section + "." + key + "'");
            const std::string v = detail::trim(node.get_value<std::string>());
            const std::string k = section + "." + key;
            using detail::parse_number;
            using detail::parse_numbers;
            if (section == "scenario") {
                if (key == "n") c.n = parse_numbers<std::size_t>(k, v);
                if (key == "d") c.d = parse_numbers<std::size_t>(k, v);
                if (key == "beta") c.beta = parse_numbers<double>(k, v);
                if (key == "rate") c.rate = parse_numbers<double>(k, v);
                if (key == "strata") c.strata = parse_numbers<std::size_t>(k, v);
            } else if (section == "run") {
                if (key == "replicates") c.replicates = parse_number<std::size_t>(k, v);
                if (key == "seed") c.seed = parse_number<std::uint64_t>(k, v);
                if (key == "horizon") c.horizon = parse_number<int>(k, v);
                if (key == "threads") c.threads = parse_number<unsigned>(k, v);
                if (key == "out_dir") c.out_dir = v;
            } else if (section == "learners") {
                if (key == "library") library_names = detail::split_list(v);
                if (key == "folds") c.folds = parse_number<std::size_t>(k, v);
                if (key != "library" && key != "folds") hyper[""].push_back(detail::learner_setter(key, k, v));
            } else if (section.rfind("learner.", 0) == 0) {
                hyper[section.substr(8)].push_back(detail::learner_setter(key, k, v));
            } else if (section == "importance") {
                if (key == "methods") {
                    c.methods.clear();
                    for (const auto& m : detail::split_list(v)) c.methods.push_back(importance::method_from_string(m));
                }
                if (key == "folds") c.scorer.folds = parse_number<std::size_t>(k, v);
                if (key == "forest_trees") c.scorer.forest.trees = parse_number<int>(k, v);
                if (key == "forest_depth") c.scorer.forest.max_depth = parse_number<int>(k, v);
                if (key == "bart_trees") c.scorer.bart.trees = parse_number<int>(k, v);
                if (key == "bart_burn_in") c.scorer.bart.burn_in = parse_number<int>(k, v);
                if (key == "bart_iterations") c.scorer.bart.iterations = parse_number<int>(k, v);
            } else if (section == "tmle") {
                if (key == "epsilon") c.epsilon = parse_number<double>(k, v);
                if (key == "max_steps") c.max_steps = parse_number<int>(k, v);
                if (key == "level") c.level = parse_number<double>(k, v);
            } else if (section == "cate") {
                if (key == "feature") c.cate_feature = v;
                if (key == "stratum") c.cate_stratum = parse_number<std::size_t>(k, v);
                if (key == "binning") {
                    if (v == "equal_width")
                        c.binning = Binning::equal_width;
                    else if (v == "quantile")
                        c.binning = Binning::quantile;
                    else
                        throw ConfigError("config: cate.binning must be equal_width or quantile");
                }
                if (key == "breaks") c.breaks = v.empty() ? std::vector<double>{} : parse_numbers<double>(k, v);
            } else if (section == "bootstrap") {
                if (key == "replicates") c.bootstrap_replicates = parse_number<std::size_t>(k, v);
                if (key == "sample_size") c.bootstrap_size = parse_number<std::size_t>(k, v);
            }
        }
    }
    std::vector<learners::BaseLearnerSpec> lib;
    if (library_names.empty())
        for (const auto& s : c.library) library_names.push_back(s.name());
    for (const auto& name : library_names) {
        auto s = learners::default_spec(learners::learner_kind_from_string(name));
        for (const auto& apply : hyper[""]) apply(s);
        for (const auto& apply : hyper[s.name()]) apply(s);
        lib.push_back(s);
    }
    c.library = std::move(lib);
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical INI rendering of a resolved config; its hash identifies a run.
inline std::string to_ini(const RunConfig& c) {
    using detail::join;
    using detail::num;
    std::vector<std::string> lib, methods;
    for (const auto& s : c.library) lib.push_back(s.name());
    for (auto m : c.methods) methods.push_back(importance::to_string(m));
    std::string s;
    s += "[scenario]\n";
    s += "n = " + join(c.n) + "\n";
    s += "d = " + join(c.d) + "\n";
    s += "beta = " + join(c.beta) + "\n";
    s += "rate = " + join(c.rate) + "\n";
    s += "strata = " + join(c.strata) + "\n";
    s += "[run]\n";
    s += "replicates = " + num(c.replicates) + "\n";
    s += "seed = " + num(c.seed) + "\n";
    s += "horizon = " + num(c.horizon) + "\n";
    s += "[learners]\n";
    s += "library = " + join(lib) + "\n";
    s += "folds = " + num(c.folds) + "\n";
    for (const auto& h : c.library) {
        s += "[learner." + h.name() + "]\n";
        s += "alpha = " + num(h.alpha) + "\n";
        s += "n_lambda = " + num(h.n_lambda) + "\n";
        s += "lambda_ratio = " + num(h.lambda_ratio) + "\n";
        s += "knots = " + num(h.knots) + "\n";
        s += "max_terms = " + num(h.max_terms) + "\n";
        s += "hinge_knots = " + num(h.hinge_knots) + "\n";
        s += "trees = " + num(h.trees) + "\n";
        s += "depth = " + num(h.depth) + "\n";
        s += "min_leaf = " + num(h.min_leaf) + "\n";
    }
    s += "[importance]\n";
    s += "methods = " + join(methods) + "\n";
    s += "folds = " + num(c.scorer.folds) + "\n";
    s += "forest_trees = " + num(c.scorer.forest.trees) + "\n";
    s += "forest_depth = " + num(c.scorer.forest.max_depth) + "\n";
    s += "bart_trees = " + num(c.scorer.bart.trees) + "\n";
    s += "bart_burn_in = " + num(c.scorer.bart.burn_in) + "\n";
    s += "bart_iterations = " + num(c.scorer.bart.iterations) + "\n";
    s += "[tmle]\n";
    s += "epsilon = " + num(c.epsilon) + "\n";
    s += "max_steps = " + num(c.max_steps) + "\n";
    s += "level = " + num(c.level) + "\n";
    s += "[cate]\n";
    s += "feature = " + c.cate_feature + "\n";
    s += "stratum = " + num(c.cate_stratum) + "\n";
    s += std::string("binning = ") + (c.binning == Binning::equal_width ? "equal_width" : "quantile") + "\n";
    s += "breaks = " + join(c.breaks) + "\n";
    s += "[bootstrap]\n";
    s += "replicates = " + num(c.bootstrap_replicates) + "\n";
    s += "sample_size = " + num(c.bootstrap_size) + "\n";
    return s;
}

/// 16-hex-digit FNV-1a hash of the canonical config.
inline std::string config_hash(const RunConfig& c) {
    static const char* hex = "0123456789abcdef";
    std::uint64_t h = fnv1a(to_ini(c));
    std::string out(16, '0');
    for (int k = 15; k >= 0; --k) {
        out[static_cast<std::size_t>(k)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace survhte::harness
