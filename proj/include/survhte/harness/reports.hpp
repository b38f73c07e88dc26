#pragma once

// Report rendering: a JSON summary and a long-format metrics CSV. Both carry
// the config hash and contain no timestamps, so identical runs give identical
// bytes.

#include <filesystem>
#include <sstream>
#include <string>

#include <json.hpp>

#include "survhte/harness/experiments.hpp"
#include "survhte/harness/io.hpp"

namespace survhte::harness {

using Json = nlohmann::ordered_json;

inline Json scenario_json(const Scenario& s) {
    return Json{{"n", s.n}, {"d", s.d}, {"beta", s.beta}, {"rate", s.rate}, {"strata", s.strata}};
}

inline Json replicate_json(const ReplicateResult& r) {
    Json j{{"replicate", r.replicate}, {"seed", r.seed}, {"ok", r.ok}};
    if (!r.ok) {
        j["error"] = r.error;
        return j;
    }
    j["event_rate"] = r.event_rate;
    j["nrmse"] = r.nrmse;
    j["psi_variance"] = r.psi_var;
    j["ate_truth"] = r.ate_truth;
    j["ate_initial"] = r.ate_initial;
    j["pct_bias_initial"] = r.bias_initial;
    if (!r.methods.empty()) {
        Json ms = Json::array();
        for (const auto& m : r.methods) {
            Json mj{{"method", m.method}, {"selected", m.selected}, {"ppv", m.ppv}, {"tpr", m.tpr}, {"hits", m.hits}};
            mj["knee_rank"] = m.knee_rank ? Json(*m.knee_rank) : Json(nullptr);
            ms.push_back(std::move(mj));
        }
        j["methods"] = std::move(ms);
    }
    if (!r.ate_targeted.empty()) {
        j["ate_targeted"] = r.ate_targeted;
        j["pct_bias_targeted"] = r.bias_targeted;
        j["targeting"] = Json{{"converged", r.targeting_converged},
                              {"max_steps_reached", r.max_steps_reached},
                              {"monotone", r.monotone},
                              {"partition_gap", r.partition_gap}};
    }
    if (r.stratum) {
        const auto& s = *r.stratum;
        j["stratum"] = Json{{"label", s.label},
                            {"size", s.size},
                            {"lower", s.lower},
                            {"upper", s.upper},
                            {"truth", s.truth},
                            {"initial", s.initial},
                            {"global", s.global},
                            {"targeted", s.targeted},
                            {"half_width", s.half_width},
                            {"pct_bias_initial", s.bias_initial},
                            {"pct_bias_global", s.bias_global},
                            {"pct_bias_targeted", s.bias_targeted},
                            {"max_steps_reached", s.max_steps_reached}};
    }
    j["warnings"] = r.warnings;
    return j;
}

inline Json aggregate_json(const ScenarioAggregate& a) {
    Json j{{"completed", a.completed}, {"failed", a.failed}};
    if (a.completed == 0) return j;
    j["nrmse"] = a.nrmse;
    j["psi_variance"] = a.psi_var;
    j["pct_bias_initial"] = a.bias_initial;
    if (!a.bias_targeted.empty()) j["pct_bias_targeted"] = a.bias_targeted;
    if (!a.stratum_bias_targeted.empty()) {
        j["stratum_pct_bias_initial"] = a.stratum_bias_initial;
        j["stratum_pct_bias_global"] = a.stratum_bias_global;
        j["stratum_pct_bias_targeted"] = a.stratum_bias_targeted;
    }
    if (!a.methods.empty()) {
        Json ms = Json::array();
        for (const auto& m : a.methods)
            ms.push_back(Json{{"method", m.method}, {"ppv", m.ppv}, {"tpr", m.tpr}, {"hit_rate", m.hit_rate}});
        j["methods"] = std::move(ms);
    }
    return j;
}

inline Json report_json(const ExperimentReport& rep) {
    Json j{{"experiment", rep.experiment}, {"config_hash", rep.config_hash}, {"seed", rep.config.seed},
           {"horizon", rep.config.horizon}, {"replicates", rep.config.replicates}};
    Json scs = Json::array();
    for (const auto& s : rep.scenarios) {
        Json sj{{"index", s.index}, {"scenario", scenario_json(s.scenario)}, {"r", s.r}};
        sj["aggregate"] = aggregate_json(aggregate(s));
        Json failures = Json::array();
        for (const auto& r : s.replicates)
            if (!r.ok) failures.push_back(Json{{"replicate", r.replicate}, {"error", r.error}});
        sj["failures"] = std::move(failures);
        Json reps = Json::array();
        for (const auto& r : s.replicates) reps.push_back(replicate_json(r));
        sj["replicate_rows"] = std::move(reps);
        scs.push_back(std::move(sj));
    }
    j["scenarios"] = std::move(scs);
    return j;
}

/// Long format: config_hash,experiment,scenario,n,d,beta,rate,strata,replicate,metric,method,feature,t,value.
/// Empty cells mean "not applicable".
inline std::string metrics_csv(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "config_hash,experiment,scenario,n,d,beta,rate,strata,replicate,metric,method,feature,t,value\n";
    for (const auto& s : rep.scenarios) {
        const auto& sc = s.scenario;
        std::ostringstream pre;
        pre << rep.config_hash << ',' << rep.experiment << ',' << s.index << ',' << sc.n << ',' << sc.d << ','
            << format_double(sc.beta) << ',' << format_double(sc.rate) << ',' << sc.strata << ',';
        const std::string prefix = pre.str();
        for (const auto& r : s.replicates) {
            auto row = [&](const std::string& metric, const std::string& method, const std::string& feature,
                           const std::string& t, double v) {
                out << prefix << r.replicate << ',' << metric << ',' << method << ',' << feature << ',' << t << ','
                    << format_double(v) << '\n';
            };
            auto curve = [&](const std::string& metric, const std::vector<double>& v) {
                for (std::size_t t = 0; t < v.size(); ++t) row(metric, "", "", std::to_string(t + 1), v[t]);
            };
            row("ok", "", "", "", r.ok ? 1.0 : 0.0);
            if (!r.ok) continue;
            row("event_rate", "", "", "", r.event_rate);
            curve("nrmse", r.nrmse);
            curve("psi_variance", r.psi_var);
            curve("ate_truth", r.ate_truth);
            curve("ate_initial", r.ate_initial);
            curve("pct_bias_initial", r.bias_initial);
            for (const auto& m : r.methods) {
                row("ppv", m.method, "", "", m.ppv);
                row("tpr", m.method, "", "", m.tpr);
                for (std::size_t f = 0; f < m.hits.size(); ++f) row("hit", m.method, "x" + std::to_string(f + 1), "", m.hits[f]);
            }
            if (!r.ate_targeted.empty()) {
                curve("ate_targeted", r.ate_targeted);
                curve("pct_bias_targeted", r.bias_targeted);
                row("targeting_converged", "", "", "", r.targeting_converged ? 1.0 : 0.0);
                row("partition_gap", "", "", "", r.partition_gap);
            }
            if (r.stratum) {
                curve("stratum_truth", r.stratum->truth);
                curve("stratum_targeted", r.stratum->targeted);
                curve("stratum_half_width", r.stratum->half_width);
                curve("stratum_pct_bias_initial", r.stratum->bias_initial);
                curve("stratum_pct_bias_global", r.stratum->bias_global);
                curve("stratum_pct_bias_targeted", r.stratum->bias_targeted);
            }
        }
    }
    return out.str();
}

/// First path of the form base.ext, base.1.ext, base.2.ext, ... that does
/// not exist yet. Reports are never overwritten.
inline std::string fresh_path(const std::string& dir, const std::string& base, const std::string& ext) {
    namespace fs = std::filesystem;
    fs::path p = fs::path(dir) / (base + ext);
    for (int k = 1; fs::exists(p); ++k) p = fs::path(dir) / (base + "." + std::to_string(k) + ext);
    return p.string();
}

struct WrittenReport {
    std::string json_path;
    std::string csv_path;
};

inline WrittenReport write_report(const ExperimentReport& rep, const std::string& out_dir) {
    WrittenReport w;
    const std::string base = rep.experiment + "_" + rep.config_hash;
    w.json_path = fresh_path(out_dir, base, ".json");
    w.csv_path = fresh_path(out_dir, base + "_metrics", ".csv");
    write_text(w.json_path, report_json(rep).dump(2) + "\n");
    write_text(w.csv_path, metrics_csv(rep));
    return w;
}

}  // namespace survhte::harness
