#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "survhte/dgp.hpp"
#include "survhte/harness/config.hpp"
#include "survhte/harness/experiments.hpp"
#include "survhte/harness/io.hpp"
#include "survhte/harness/pipeline.hpp"
#include "survhte/harness/reports.hpp"

using namespace survhte;
using namespace survhte::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("survhte_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Smallest grid the config ranges allow, with cheap scorers.
RunConfig small_config() {
    RunConfig c = parse_config(R"(
[scenario]
n = 1000
rate = 0.2
strata = 10
[run]
replicates = 2
seed = 17
[importance]
methods = regression_forest, elastic_net
forest_trees = 100
)");
    return c;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(SURVHTE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const ExperimentReport& exp1_report() {
    static const ExperimentReport r = run_experiment1(small_config());
    return r;
}

const ExperimentReport& exp2_report() {
    static const ExperimentReport r = [] {
        RunConfig c = small_config();
        c.replicates = 1;
        return run_experiment2(c);
    }();
    return r;
}

}  // namespace

TEST(Config, DefaultsMatchDesignedScenario) {
    const RunConfig c = parse_config("");
    EXPECT_EQ(c.n, std::vector<std::size_t>{3000});
    EXPECT_EQ(c.d, std::vector<std::size_t>{10});
    EXPECT_EQ(c.beta, std::vector<double>{0.5});
    EXPECT_EQ(c.rate, std::vector<double>{0.10});
    EXPECT_EQ(c.strata, std::vector<std::size_t>{10});
    EXPECT_EQ(c.horizon, 12);
    EXPECT_EQ(c.replicates, 10u);
    EXPECT_EQ(c.library.size(), 3u);
}

TEST(Config, GridListsAndExpansion) {
    const RunConfig c = parse_config("[scenario]\nn = 1000, 3000\nbeta = 0, 2\n");
    const auto g = expand_grid(c);
    ASSERT_EQ(g.size(), 4u);
    std::set<std::pair<std::size_t, double>> seen;
    for (const auto& s : g) seen.insert({s.n, s.beta});
    EXPECT_EQ(seen.size(), 4u);
}

TEST(Config, RejectsUnknownAndOutOfRange) {
    EXPECT_THROW(parse_config("[nope]\nx = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\nsed = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[scenario]\nn = 500\n"), ConfigError);
    EXPECT_THROW(parse_config("[scenario]\nd = 31\n"), ConfigError);
    EXPECT_THROW(parse_config("[scenario]\nbeta = 2.5\n"), ConfigError);
    EXPECT_THROW(parse_config("[scenario]\nrate = 0.5\n"), ConfigError);
    EXPECT_THROW(parse_config("[scenario]\nstrata = 51\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\nreplicates = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("[scenario]\nn = abc\n"), ConfigError);
    EXPECT_THROW(parse_config("[tmle]\nepsilon = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("[tmle]\nlevel = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[cate]\nbreaks = 0, 0.5, 0.4\n"), ConfigError);
    EXPECT_THROW(parse_config("[cate]\nbinning = kernel\n"), ConfigError);
    EXPECT_THROW(parse_config("[importance]\nmethods = lasso\n"), ConfigError);
    EXPECT_THROW(parse_config("[learners]\nlibrary = glm\n"), ConfigError);
    EXPECT_THROW(parse_config("[learner.glm]\nalpha = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[learner.hinge_logistic]\nfolds = 5\n"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST(Config, LearnerOverridesSharedThenPerKind) {
    const RunConfig c = parse_config(
        "[learners]\nlibrary = elastic_net_logistic, spline_logistic\nn_lambda = 20\n"
        "[learner.spline_logistic]\nknots = 6\nn_lambda = 30\n");
    ASSERT_EQ(c.library.size(), 2u);
    EXPECT_EQ(c.library[0].n_lambda, 20u);
    EXPECT_EQ(c.library[1].n_lambda, 30u);
    EXPECT_EQ(c.library[1].knots, 6);
    // Untouched fields keep the kind's defaults.
    EXPECT_EQ(c.library[1].alpha, learners::default_spec(learners::LearnerKind::spline_logistic).alpha);
    EXPECT_EQ(c.library[0].knots, learners::default_spec(learners::LearnerKind::elastic_net_logistic).knots);
}

TEST(Config, CanonicalFormRoundTripsAndHashes) {
    const RunConfig c = parse_config(
        "[scenario]\nbeta = 0, 2\n[learners]\nlibrary = spline_logistic, tree_ensemble\n"
        "[learner.tree_ensemble]\ntrees = 40\n[cate]\nbreaks = 0, 0.1, 1\n");
    const std::string ini = to_ini(c);
    const RunConfig back = parse_config(ini);
    EXPECT_EQ(to_ini(back), ini);
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(config_hash(c).size(), 16u);
    RunConfig other = c;
    other.seed += 1;
    EXPECT_NE(config_hash(other), config_hash(c));
    // Thread count does not change results, so it stays out of the hash.
    other = c;
    other.threads = 4;
    EXPECT_EQ(config_hash(other), config_hash(c));
}

TEST(Io, CohortCsvRoundTrip) {
    dgp::DgpParams p;
    p.n = 200;
    p.r = 600;
    const auto [c, truth] = dgp::generate_cohort(p);
    std::stringstream ss;
    write_cohort_csv(ss, c, "config_hash=abc");
    const Cohort back = parse_cohort_csv(ss, 12);
    ASSERT_EQ(back.size(), c.size());
    EXPECT_EQ(back.feature_names, c.feature_names);
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_EQ(back.subjects[i].id, c.subjects[i].id);
        EXPECT_EQ(back.subjects[i].x, c.subjects[i].x);
        EXPECT_EQ(back.subjects[i].t_obs, c.subjects[i].t_obs);
        EXPECT_EQ(back.subjects[i].y, c.subjects[i].y);
        EXPECT_EQ(back.subjects[i].a, c.subjects[i].a);
    }
}

TEST(Io, MissingColumnNamed) {
    std::stringstream ss("id,time,treatment,x1\n1,2,0,0.5\n");
    try {
        parse_cohort_csv(ss, 12);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("'event'"), std::string::npos) << e.what();
    }
}

TEST(Io, BadFieldCarriesRow) {
    std::stringstream ss("id,time,event,treatment,x1\n1,2,0,0,0.5\n2,three,0,0,0.5\n");
    try {
        parse_cohort_csv(ss, 12);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.row, 2u);
    }
    std::stringstream short_row("id,time,event,treatment,x1\n1,2,0\n");
    EXPECT_THROW(parse_cohort_csv(short_row, 12), ValidationError);
}

TEST(Io, SurfaceRoundTripIsExact) {
    EffectSurface s;
    s.n = 3;
    s.horizon = 4;
    s.ids = {"a", "b", "c"};
    for (int k = 0; k < 12; ++k) {
        s.s1.push_back(1.0 / (3.0 + k));
        s.s0.push_back(1.0 / (7.0 + k));
        s.psi_hat.push_back(s.s1.back() - s.s0.back());
    }
    std::stringstream ss;
    write_surface_csv(ss, s, "config_hash=x");
    const auto back = parse_surface_csv(ss);
    EXPECT_EQ(back.n, 3u);
    EXPECT_EQ(back.horizon, 4);
    EXPECT_EQ(back.ids, s.ids);
    EXPECT_EQ(back.s1, s.s1);
    EXPECT_EQ(back.psi_hat, s.psi_hat);
    std::stringstream gap("id,t,s1,s0,psi\na,1,1,1,0\na,3,1,1,0\n");
    EXPECT_THROW(parse_surface_csv(gap), ValidationError);
}

TEST(Reports, FreshPathNeverOverwrites) {
    const auto dir = scratch("fresh");
    const auto a = fresh_path(dir.string(), "r", ".json");
    write_text(a, "first");
    const auto b = fresh_path(dir.string(), "r", ".json");
    EXPECT_NE(a, b);
    write_text(b, "second");
    EXPECT_EQ(slurp(a), "first");
    EXPECT_EQ(fs::path(b).filename(), "r.1.json");
}

TEST(SeedTree, DistinctAndStable) {
    EXPECT_EQ(replicate_seed(1, 0, 0), replicate_seed(1, 0, 0));
    EXPECT_NE(replicate_seed(1, 0, 0), replicate_seed(1, 0, 1));
    EXPECT_NE(replicate_seed(1, 0, 0), replicate_seed(1, 1, 0));
    EXPECT_NE(replicate_seed(1, 0, 0), replicate_seed(2, 0, 0));
}

TEST(Experiment1, ShapeAndTraceability) {
    const auto& rep = exp1_report();
    ASSERT_EQ(rep.scenarios.size(), 1u);
    const auto& s = rep.scenarios[0];
    ASSERT_EQ(s.replicates.size(), 2u);
    for (std::size_t b = 0; b < 2; ++b) {
        const auto& r = s.replicates[b];
        ASSERT_TRUE(r.ok) << r.error;
        EXPECT_EQ(r.replicate, b + 1);
        EXPECT_EQ(r.seed, replicate_seed(17, 0, b));
        EXPECT_EQ(r.nrmse.size(), 12u);
        ASSERT_EQ(r.methods.size(), 2u);
        for (const auto& m : r.methods) {
            EXPECT_EQ(m.hits.size(), 10u);
            EXPECT_GE(m.ppv, 0.0);
            EXPECT_LE(m.tpr, 1.0);
        }
    }
    const auto csv = metrics_csv(rep);
    EXPECT_NE(csv.find(rep.config_hash + ",exp1,0,1000,10,0.5,0.2,10,2,tpr,regression_forest"), std::string::npos);
}

TEST(Experiment1, AggregatesRecomputeFromRows) {
    const auto& s = exp1_report().scenarios[0];
    const auto a = aggregate(s);
    EXPECT_EQ(a.completed, 2u);
    EXPECT_EQ(a.failed, 0u);
    for (std::size_t t = 0; t < 12; ++t)
        EXPECT_DOUBLE_EQ(a.nrmse[t], (s.replicates[0].nrmse[t] + s.replicates[1].nrmse[t]) / 2.0);
    for (std::size_t m = 0; m < a.methods.size(); ++m) {
        EXPECT_DOUBLE_EQ(a.methods[m].tpr, (s.replicates[0].methods[m].tpr + s.replicates[1].methods[m].tpr) / 2.0);
        for (std::size_t j = 0; j < 10; ++j)
            EXPECT_DOUBLE_EQ(a.methods[m].hit_rate[j],
                             (s.replicates[0].methods[m].hits[j] + s.replicates[1].methods[m].hits[j]) / 2.0);
    }
}

TEST(Experiment1, FailedReplicatesAreCountedNotAggregated) {
    ScenarioResult s = exp1_report().scenarios[0];
    s.replicates[1].ok = false;
    s.replicates[1].error = "injected";
    const auto a = aggregate(s);
    EXPECT_EQ(a.completed, 1u);
    EXPECT_EQ(a.failed, 1u);
    EXPECT_EQ(a.nrmse, s.replicates[0].nrmse);
}

TEST(Experiment1, SerialAndThreadedIdentical) {
    RunConfig c = small_config();
    c.threads = 2;
    const auto threaded = run_experiment1(c);
    EXPECT_EQ(metrics_csv(threaded), metrics_csv(exp1_report()));
    EXPECT_EQ(report_json(threaded).dump(), report_json(exp1_report()).dump());
}

TEST(Experiment2, TargetingAssertionsAndStratum) {
    const auto& rep = exp2_report();
    const auto& r = rep.scenarios[0].replicates[0];
    ASSERT_TRUE(r.ok) << r.error;
    EXPECT_TRUE(r.targeting_converged || r.max_steps_reached);
    EXPECT_TRUE(r.monotone);
    EXPECT_LE(r.partition_gap, 1e-10);
    EXPECT_EQ(r.ate_targeted.size(), 12u);
    EXPECT_EQ(r.bias_targeted.size(), 12u);
    ASSERT_TRUE(r.stratum);
    EXPECT_EQ(r.stratum->label, 1u);
    EXPECT_DOUBLE_EQ(r.stratum->lower, 0.0);
    EXPECT_NEAR(r.stratum->upper, 0.1, 1e-12);
    EXPECT_EQ(r.stratum->bias_targeted.size(), 12u);
    for (double v : r.stratum->bias_targeted) EXPECT_GE(v, 0.0);
}

TEST(Experiment2, SingleStratumIsAte) {
    RunConfig c = small_config();
    c.replicates = 1;
    c.strata = {1};
    c.methods = {importance::Method::elastic_net};
    const auto rep = run_experiment2(c);
    const auto& r = rep.scenarios[0].replicates[0];
    ASSERT_TRUE(r.ok) << r.error;
    ASSERT_TRUE(r.stratum);
    EXPECT_EQ(r.stratum->size, 1000u);
    for (std::size_t t = 0; t < 12; ++t) {
        EXPECT_NEAR(r.stratum->truth[t], r.ate_truth[t], 1e-12);
        EXPECT_NEAR(r.stratum->global[t], r.ate_targeted[t], 1e-10);
    }
}

TEST(Pipeline, CsvRoundTripMatchesInMemory) {
    dgp::DgpParams p;
    p.n = 1000;
    p.r = 307;
    p.seed = 3;
    const auto [c, truth] = dgp::generate_cohort(p);
    std::stringstream ss;
    write_cohort_csv(ss, c);
    const Cohort back = parse_cohort_csv(ss, 12);
    RunConfig cfg = small_config();
    cfg.methods = {importance::Method::elastic_net};
    cfg.strata = {2};
    const auto a = run_pipeline(c, cfg);
    const auto b = run_pipeline(back, cfg);
    EXPECT_EQ(a.surface.psi_hat, b.surface.psi_hat);
    EXPECT_EQ(pipeline_json(a, c, cfg).dump(), pipeline_json(b, back, cfg).dump());
    ASSERT_EQ(a.cate.size(), 2u);
    // Observed-range equal-width bins partition the cohort.
    EXPECT_EQ(a.cate[0].stratum.size() + a.cate[1].stratum.size(), 1000u);
}

TEST(Cli, ExitCodesAndAppendOnlyOutputs) {
    const auto dir = scratch("cli");
    const auto log = dir / "log.txt";
    EXPECT_EQ(run_cli("", log), 1);
    EXPECT_EQ(run_cli("fit", log), 1);  // --cohort is required
    EXPECT_EQ(run_cli("fit --cohort " + (dir / "missing.csv").string(), log), 1);
    EXPECT_NE(slurp(log).find("error"), std::string::npos);

    const auto cfg = dir / "bad.ini";
    write_text(cfg.string(), "[run]\nsed = 3\n");
    EXPECT_EQ(run_cli("simulate --config " + cfg.string(), log), 1);

    const std::string sim = "simulate --n 1000 --r 600 --seed 5 --out-dir " + (dir / "out").string();
    ASSERT_EQ(run_cli(sim, log), 0) << slurp(log);
    ASSERT_EQ(run_cli(sim, log), 0) << slurp(log);
    EXPECT_TRUE(fs::exists(dir / "out" / "cohort.csv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "cohort.1.csv"));
    EXPECT_EQ(slurp(dir / "out" / "cohort.csv"), slurp(dir / "out" / "cohort.1.csv"));
    EXPECT_EQ(slurp(dir / "out" / "truth.json"), slurp(dir / "out" / "truth.1.json"));
    EXPECT_EQ(slurp(dir / "out" / "cohort.csv").rfind("# config_hash=", 0), 0u);

    // A single-arm cohort passes validation but cannot be fitted: runtime failure.
    write_text((dir / "one_arm.csv").string(), "id,time,event,treatment,x1\n1,2,1,0,0.1\n2,3,0,0,0.2\n3,1,1,0,0.3\n");
    EXPECT_EQ(run_cli("fit --cohort " + (dir / "one_arm.csv").string() + " --out-dir " + dir.string(), log), 2);
}
