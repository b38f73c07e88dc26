// survhte: command-line front end for simulation, the three estimation steps
// and the experiment grids.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "survhte/dgp.hpp"
#include "survhte/harness/config.hpp"
#include "survhte/harness/experiments.hpp"
#include "survhte/harness/io.hpp"
#include "survhte/harness/pipeline.hpp"
#include "survhte/harness/reports.hpp"

namespace {

using namespace survhte;
using namespace survhte::harness;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<unsigned> threads;
    std::optional<int> horizon;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "INI run configuration");
    app->add_option("--seed", c.seed, "master seed (overrides the config)");
    app->add_option("--out-dir", c.out_dir, "output directory (overrides the config)");
    app->add_option("--threads", c.threads, "worker threads (overrides SURVHTE_THREADS and the config)");
    app->add_option("--horizon", c.horizon, "horizon in periods (overrides the config)");
}

// Precedence: command line, then SURVHTE_THREADS, then the config file.
RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
    if (std::getenv("SURVHTE_THREADS")) cfg.threads = default_threads();
    if (c.threads) cfg.threads = *c.threads;
    if (c.horizon) cfg.horizon = *c.horizon;
    cfg.validate();
    return cfg;
}

std::string hash_comment(const RunConfig& cfg) { return "config_hash=" + config_hash(cfg); }

std::string write_json(const RunConfig& cfg, const std::string& base, Json j) {
    Json out{{"config_hash", config_hash(cfg)}};
    for (auto& [k, v] : j.items())
        if (k != "config_hash") out[k] = v;
    const std::string path = fresh_path(cfg.out_dir, base, ".json");
    write_text(path, out.dump(2) + "\n");
    return path;
}

void announce(const std::string& path) { std::cout << "wrote " << path << "\n"; }

/// DGP truth sidecar written by `simulate`; lets later steps score themselves.
struct TruthFile {
    dgp::DgpParams params;
    double r = 0.0;
};

TruthFile read_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(0, "truth file readable", path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        throw ValidationError(0, "truth file is JSON", e.what());
    }
    TruthFile t;
    try {
        t.r = j.at("r").get<double>();
        t.params.d = j.at("d").get<std::size_t>();
        t.params.beta = j.at("beta").get<double>();
        t.params.horizon = j.at("horizon").get<int>();
    } catch (const std::exception& e) {
        throw ValidationError(0, "truth file fields", e.what());
    }
    t.params.r = t.r;
    return t;
}

std::vector<double> true_ite_column(const Cohort& cohort, double r, int t) {
    std::vector<double> v(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) v[i] = dgp::true_ite(cohort.subjects[i].x, t, r);
    return v;
}

int run(int argc, char** argv) {
    CLI::App app{"Survival heterogeneous treatment effect estimation"};
    app.require_subcommand(1);

    Common sim_c, fit_c, imp_c, tgt_c, cate_c, e1_c, e2_c, pipe_c;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic cohort and its truth sidecar");
    add_common(sim, sim_c);
    std::optional<std::size_t> sim_n, sim_d;
    std::optional<double> sim_beta, sim_rate, sim_r;
    sim->add_option("--n", sim_n, "subjects");
    sim->add_option("--d", sim_d, "covariates");
    sim->add_option("--beta", sim_beta, "confounding strength");
    sim->add_option("--rate", sim_rate, "target event rate (calibrates r)");
    sim->add_option("--r", sim_r, "explicit rate scale r (skips calibration)");

    std::string cohort_path, surface_path, truth_path;
    auto* fit = app.add_subcommand("fit", "Step 1: hazard stacks and the initial effect surface");
    add_common(fit, fit_c);
    fit->add_option("--cohort", cohort_path, "cohort CSV")->required();
    fit->add_option("--truth", truth_path, "truth sidecar from simulate (adds NRMSE)");

    auto* imp = app.add_subcommand("importance", "Step 2: importance scores, knee and selection");
    add_common(imp, imp_c);
    imp->add_option("--cohort", cohort_path, "cohort CSV")->required();
    imp->add_option("--surface", surface_path, "effect surface CSV from fit")->required();
    imp->add_option("--truth", truth_path, "truth sidecar from simulate (adds PPV/TPR)");

    auto* tgt = app.add_subcommand("target", "Step 3: targeted ATE curve with a simultaneous band");
    add_common(tgt, tgt_c);
    tgt->add_option("--cohort", cohort_path, "cohort CSV")->required();
    tgt->add_option("--surface", surface_path, "effect surface CSV from fit")->required();

    auto* cate = app.add_subcommand("cate", "Step 3: stratified MCATE curves with bands");
    add_common(cate, cate_c);
    std::string feature;
    std::optional<std::size_t> groups;
    std::vector<double> breaks;
    cate->add_option("--cohort", cohort_path, "cohort CSV")->required();
    cate->add_option("--surface", surface_path, "effect surface CSV from fit")->required();
    cate->add_option("--feature", feature, "stratification feature (default from the config)");
    cate->add_option("--groups", groups, "number of strata (default from the config)");
    cate->add_option("--breaks", breaks, "explicit strictly increasing breaks")->delimiter(',');

    auto* e1 = app.add_subcommand("exp1", "feature-identification experiment over the config grid");
    add_common(e1, e1_c);
    auto* e2 = app.add_subcommand("exp2", "targeting and %Bias experiment over the config grid");
    add_common(e2, e2_c);

    auto* pipe = app.add_subcommand("pipeline", "Steps 1-3 end to end on a cohort CSV");
    add_common(pipe, pipe_c);
    pipe->add_option("--cohort", cohort_path, "cohort CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (sim->parsed()) {
        RunConfig cfg = resolve(sim_c);
        dgp::DgpParams p;
        p.n = sim_n.value_or(cfg.n.front());
        p.d = sim_d.value_or(cfg.d.front());
        p.beta = sim_beta.value_or(cfg.beta.front());
        p.horizon = cfg.horizon;
        p.seed = cfg.seed;
        if (sim_r)
            p.r = *sim_r;
        else
            p.target_rate = sim_rate.value_or(cfg.rate.front());
        const auto [cohort, truth] = dgp::generate_cohort(p);
        const std::string csv = fresh_path(cfg.out_dir, "cohort", ".csv");
        write_cohort_csv(csv, cohort, hash_comment(cfg));
        announce(csv);
        std::vector<double> ate;
        for (int t = 1; t <= cohort.horizon; ++t) ate.push_back(truth.sample_ate(cohort, t));
        Json j{{"n", p.n}, {"d", p.d}, {"beta", p.beta}, {"horizon", p.horizon}, {"seed", p.seed}, {"r", truth.r}};
        j["target_rate"] = p.target_rate ? Json(*p.target_rate) : Json(nullptr);
        j["event_rate"] = dgp::event_rate(cohort);
        j["ate_truth"] = ate;
        announce(write_json(cfg, "truth", std::move(j)));
        return 0;
    }

    if (fit->parsed()) {
        RunConfig cfg = resolve(fit_c);
        const Cohort cohort = read_cohort_csv(cohort_path, cfg.horizon);
        const auto models = fit_outcome_models(cohort, cfg.library, derive_seed(cfg.seed, 1), cfg.threads, cfg.folds);
        const auto surface = estimate_ite(models, cohort);
        const std::string csv = fresh_path(cfg.out_dir, "surface", ".csv");
        write_surface_csv(csv, surface, hash_comment(cfg));
        announce(csv);
        Json j{{"n", cohort.size()}, {"horizon", cohort.horizon}};
        j["outcome_models"] = Json{{"treated", stack_json(*models.model_treated)}, {"control", stack_json(*models.model_control)}};
        j["ate_initial"] = mean_curve(surface);
        if (!truth_path.empty()) {
            const auto truth = read_truth(truth_path);
            std::vector<double> err;
            for (int t = 1; t <= cohort.horizon; ++t) err.push_back(nrmse(surface.column(t), true_ite_column(cohort, truth.r, t)));
            j["nrmse"] = err;
        }
        announce(write_json(cfg, "fit", std::move(j)));
        return 0;
    }

    if (imp->parsed()) {
        RunConfig cfg = resolve(imp_c);
        const Cohort cohort = read_cohort_csv(cohort_path, cfg.horizon);
        const auto surface = read_surface_csv(surface_path);
        const auto sel = run_importance(cohort, surface, cfg, derive_seed(cfg.seed, 2));
        std::optional<std::vector<std::size_t>> truth;
        if (!truth_path.empty()) {
            read_truth(truth_path);
            truth = dgp::true_features();
        }
        Json methods = Json::array();
        for (const auto& s : sel) methods.push_back(selection_json(s, cohort, truth ? &*truth : nullptr));
        announce(write_json(cfg, "importance", Json{{"methods", std::move(methods)}}));
        return 0;
    }

    if (tgt->parsed()) {
        RunConfig cfg = resolve(tgt_c);
        const Cohort cohort = read_cohort_csv(cohort_path, cfg.horizon);
        const auto surface = read_surface_csv(surface_path);
        if (surface.n != cohort.size() || surface.horizon != cohort.horizon)
            throw ValidationError(0, "surface matches cohort", "subject count or horizon differs");
        const auto res = run_target(cohort, surface, cfg, derive_seed(cfg.seed, 3));
        EffectSurface targeted = surface;
        for (std::size_t i = 0; i < surface.n; ++i)
            for (int t = 1; t <= surface.horizon; ++t) {
                const auto k = surface.index(i, t);
                targeted.s1[k] = res.fit.arm1.curves.S(i, t);
                targeted.s0[k] = res.fit.arm0.curves.S(i, t);
                targeted.psi_hat[k] = res.fit.psi(i, t);
            }
        const std::string csv = fresh_path(cfg.out_dir, "targeted", ".csv");
        write_surface_csv(csv, targeted, hash_comment(cfg));
        announce(csv);
        announce(write_json(cfg, "target", target_json(res, surface)));
        return 0;
    }

    if (cate->parsed()) {
        RunConfig cfg = resolve(cate_c);
        if (!breaks.empty()) cfg.breaks = breaks;
        if (!feature.empty()) cfg.cate_feature = feature;
        cfg.validate();
        const Cohort cohort = read_cohort_csv(cohort_path, cfg.horizon);
        const auto surface = read_surface_csv(surface_path);
        if (surface.n != cohort.size() || surface.horizon != cohort.horizon)
            throw ValidationError(0, "surface matches cohort", "subject count or horizon differs");
        const auto strata = configured_strata(cohort, cfg, cfg.cate_feature, groups.value_or(cfg.strata.front()));
        const std::uint64_t seed = derive_seed(cfg.seed, 3);
        const auto fits = fit_nuisances(cohort, cfg.library, derive_seed(seed, 0), cfg.threads, cfg.folds);
        const auto est = estimate_cate(cohort, fits, surface, strata.strata, target_options(cfg), cfg.level,
                                       derive_seed(cfg.seed, 4), cfg.threads);
        const std::string csv = fresh_path(cfg.out_dir, "cate", ".csv");
        write_text(csv, "# " + hash_comment(cfg) + "\n" + cate_csv(est, cohort));
        announce(csv);
        announce(write_json(cfg, "cate", cate_json(est, cohort, strata.warnings)));
        return 0;
    }

    if (e1->parsed() || e2->parsed()) {
        const bool first = e1->parsed();
        RunConfig cfg = resolve(first ? e1_c : e2_c);
        const auto rep = first ? run_experiment1(cfg) : run_experiment2(cfg);
        const auto w = write_report(rep, cfg.out_dir);
        announce(w.json_path);
        announce(w.csv_path);
        for (const auto& s : rep.scenarios)
            for (const auto& r : s.replicates)
                if (!r.ok) std::cerr << "scenario " << s.index << " replicate " << r.replicate << " failed: " << r.error << "\n";
        return 0;
    }

    if (pipe->parsed()) {
        RunConfig cfg = resolve(pipe_c);
        const Cohort cohort = read_cohort_csv(cohort_path, cfg.horizon);
        const auto res = run_pipeline(cohort, cfg);
        const std::string csv = fresh_path(cfg.out_dir, "surface", ".csv");
        write_surface_csv(csv, res.surface, hash_comment(cfg));
        announce(csv);
        const std::string cate_path = fresh_path(cfg.out_dir, "cate", ".csv");
        write_text(cate_path, "# " + hash_comment(cfg) + "\n" + cate_csv(res.cate, cohort));
        announce(cate_path);
        announce(write_json(cfg, "pipeline", pipeline_json(res, cohort, cfg)));
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const survhte::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const survhte::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
