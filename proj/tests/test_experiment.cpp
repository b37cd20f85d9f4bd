#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mpg/error.hpp"
#include "mpg/experiment.hpp"

using namespace mpg;

namespace {

nlohmann::json small_lake_config() {
    return {{"name", "lake-smoke"},
            {"environment", {{"id", "frozenlake"}, {"size", 4}}},
            {"policy", {{"kind", "tabular"}, {"feature_scale", 3.0}}},
            {"train", {{"episodes", 40}, {"eta_T", 1e-4}, {"tau_T", 0.1}}},
            {"grid", {{"tau_0", {0.5, 0.3}}, {"eta_0", 1e-3}, {"horizon", 10}}},
            {"agents", 3},
            {"eval_games", 20},
            {"seed", 77}};
}

AgentRecord record(int games, int successes, double steps_sum, int steps_count, bool failed) {
    AgentRecord r;
    r.eval.games = games;
    r.eval.successes = successes;
    r.eval.steps_sum = steps_sum;
    r.eval.steps_count = steps_count;
    r.failed = failed;
    return r;
}

}  // namespace

TEST_CASE("aggregation pools over agents that trained") {
    const GridCell cell{0.4, 1e-3, 10};
    const ResultRow row = aggregate(cell, {record(100, 80, 800.0, 80, false), record(100, 60, 420.0, 60, false),
                                           record(100, 2, 20.0, 2, true)});
    CHECK(row.agents == 3);
    CHECK(row.failed_to_train == 1);
    CHECK(row.success_pct == doctest::Approx(70.0));
    CHECK(row.avg_steps == doctest::Approx(1220.0 / 140.0));
    const ResultRow none = aggregate(cell, {record(100, 0, 0.0, 0, true)});
    CHECK(none.success_pct == 0.0);
    CHECK(std::isnan(none.avg_steps));
}

TEST_CASE("results csv round trip and report table") {
    std::vector<ResultRow> rows;
    rows.push_back(aggregate({0.3, 5e-4, 15}, {record(10, 7, 49.0, 7, false)}));
    rows.push_back(aggregate({0.6, 1e-4, 15}, {record(10, 0, 0.0, 0, true)}));
    std::stringstream csv;
    write_results_csv(csv, rows);
    const auto back = read_results_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(back[0].cell.tau0 == 0.3);
    CHECK(back[0].cell.eta0 == 5e-4);
    CHECK(back[0].cell.horizon == 15);
    CHECK(back[0].success_pct == doctest::Approx(70.0));
    CHECK(back[0].avg_steps == doctest::Approx(7.0));
    CHECK(back[1].failed_to_train == 1);
    CHECK(std::isnan(back[1].avg_steps));

    const std::string md = markdown_report("demo", rows);
    CHECK(md.find("| 0.3 | 0.0005 | 15 | 70.00 | 7.00 | 0/1 |") != std::string::npos);
    CHECK(md.find("| 0.6 | 0.0001 | 15 | 0.00 | - | 1/1 |") != std::string::npos);

    std::stringstream bad("tau_0,eta_0\n1,2\n");
    CHECK_THROWS_AS(read_results_csv(bad), Error);
    std::stringstream nohdr("0.3,1,2,3,4,5,6\n");
    CHECK_THROWS_AS(read_results_csv(nohdr), Error);
}

TEST_CASE("config parsing: scalars become one-element grids, bad input is rejected") {
    const ExperimentSpec spec = ExperimentSpec::from_json(small_lake_config());
    CHECK(spec.tau0_grid == std::vector<double>{0.5, 0.3});
    CHECK(spec.eta0_grid == std::vector<double>{1e-3});
    CHECK(spec.horizon_grid == std::vector<int>{10});
    CHECK(spec.cells().size() == 2);
    CHECK(spec.policy.feature_scale == 3.0);
    CHECK(spec.train.variant == UpdateVariant::Sampled);
    const ExperimentSpec again = ExperimentSpec::from_json(spec.to_json());
    CHECK(again.to_json() == spec.to_json());

    auto j = small_lake_config();
    j["policy"] = {{"kind", "neural"}, {"hidden", {8}}, {"mode", "separate"}, {"output_init_scale", 0.1}};
    const ExperimentSpec neural = ExperimentSpec::from_json(j);
    CHECK(neural.policy.kind == PolicySpec::Kind::Neural);
    CHECK(neural.policy.neural.hidden == std::vector<int>{8});
    CHECK(neural.policy.neural.output_init_scale == 0.1);
    CHECK(ExperimentSpec::from_json(neural.to_json()).to_json() == neural.to_json());

    auto missing = small_lake_config();
    missing["grid"].erase("tau_0");
    CHECK_THROWS_AS(ExperimentSpec::from_json(missing), Error);
    auto negative = small_lake_config();
    negative["train"]["eta_T"] = -1.0;
    CHECK_THROWS_AS(ExperimentSpec::from_json(negative), Error);
    auto kind = small_lake_config();
    kind["policy"]["kind"] = "forest";
    CHECK_THROWS_AS(ExperimentSpec::from_json(kind), Error);
    auto agents = small_lake_config();
    agents["agents"] = 0;
    CHECK_THROWS_AS(ExperimentSpec::from_json(agents), Error);
}

TEST_CASE("shipped configs parse") {
    const std::filesystem::path dir = MPG_SOURCE_DIR "/configs";
    int count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        INFO(entry.path().string());
        CHECK_NOTHROW(load_experiment(entry.path()));
        ++count;
    }
    CHECK(count >= 5);
    CHECK_THROWS_AS(load_experiment(dir / "does-not-exist.json"), Error);
}

TEST_CASE("runs are identical across worker counts") {
    const ExperimentSpec spec = ExperimentSpec::from_json(small_lake_config());
    const ExperimentResult one = run_experiment(spec, 1);
    const ExperimentResult three = run_experiment(spec, 3);
    REQUIRE(one.rows.size() == three.rows.size());
    for (std::size_t c = 0; c < one.rows.size(); ++c) {
        CHECK(one.rows[c].success_pct == three.rows[c].success_pct);
        CHECK(one.rows[c].failed_to_train == three.rows[c].failed_to_train);
        for (std::size_t a = 0; a < one.rows[c].records.size(); ++a) {
            CHECK(one.rows[c].records[a].seed == three.rows[c].records[a].seed);
            CHECK(one.rows[c].records[a].eval.steps_sum == three.rows[c].records[a].eval.steps_sum);
        }
    }
    for (std::size_t k = 0; k < one.artifacts.size(); ++k) {
        CHECK(one.artifacts[k].checkpoint == three.artifacts[k].checkpoint);
        CHECK(one.artifacts[k].train_log_csv == three.artifacts[k].train_log_csv);
    }
    CHECK_THROWS_AS(run_experiment(spec, 0), Error);
}

TEST_CASE("failed-to-train rule: diverged or under five percent success") {
    auto j = small_lake_config();
    j["train"]["divergence_threshold"] = 1e-3;
    j["grid"]["tau_0"] = 0.5;
    j["agents"] = 2;
    const ExperimentResult result = run_experiment(ExperimentSpec::from_json(j), 1);
    REQUIRE(result.rows.size() == 1);
    CHECK(result.rows[0].failed_to_train == 2);
    for (const auto& r : result.rows[0].records) {
        CHECK(r.diverged);
        CHECK(r.failed);
        CHECK(r.eval.games == 0);
    }

    // A horizon shorter than the shortest path can never succeed.
    auto short_n = small_lake_config();
    short_n["grid"]["horizon"] = 5;
    short_n["grid"]["tau_0"] = 0.5;
    const ExperimentResult capped = run_experiment(ExperimentSpec::from_json(short_n), 1);
    for (const auto& r : capped.rows[0].records) {
        CHECK_FALSE(r.diverged);
        CHECK(r.eval.successes == 0);
        CHECK(r.failed);
    }
}

TEST_CASE("evaluation counts steps of successful lake games only") {
    const auto env = make_environment({{"id", "frozenlake"}, {"size", 4}});
    const auto model = make_policy(PolicySpec{}, *env, 30, 1.0, 1);
    RandomSource rng(2);
    const EvalSummary s = evaluate_games(*env, *model, 30, 500, rng);
    CHECK(s.games == 500);
    CHECK(s.steps_count == s.successes);
    if (s.successes > 0) CHECK(s.avg_steps() >= 6.0);

    const auto pole = make_environment({{"id", "cartpole"}});
    PolicySpec neural;
    neural.kind = PolicySpec::Kind::Neural;
    neural.neural.hidden = {8};
    const auto pm = make_policy(neural, *pole, 20, 1.0, 3);
    const EvalSummary ps = evaluate_games(*pole, *pm, 20, 50, rng);
    CHECK(ps.steps_count == 50);
    CHECK(ps.avg_steps() <= 20.0);
    CHECK_THROWS_AS(make_policy(PolicySpec{}, *pole, 20, 1.0, 3), Error);
}

TEST_CASE("results directory layout and checkpoints") {
    const ExperimentSpec spec = ExperimentSpec::from_json(small_lake_config());
    const ExperimentResult result = run_experiment(spec, 2);
    const auto dir = std::filesystem::temp_directory_path() / "mpg_test_experiment";
    std::filesystem::remove_all(dir);
    write_experiment(dir, spec, result);
    for (const char* f : {"spec.json", "results.csv", "agents.csv", "report.md"})
        CHECK(std::filesystem::exists(dir / f));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "cell1_agent2.json"));
    CHECK(std::filesystem::exists(dir / "logs" / "cell0_agent0.csv"));
    std::ifstream in(dir / "results.csv");
    CHECK(read_results_csv(in).size() == 2);

    std::ifstream ck(dir / "checkpoints" / "cell0_agent1.json");
    const auto j = nlohmann::json::parse(ck);
    CHECK(j.at("horizon") == 10);
    const auto model = policy_model_from_json(j.at("policy"));
    CHECK(model->horizon() == 10);
    CHECK(model->tau() == doctest::Approx(0.1).epsilon(1e-10));
    std::filesystem::remove_all(dir);
}

TEST_CASE("worker count from the environment") {
    ::unsetenv("MPG_WORKERS");
    CHECK(worker_count_from_env() == 1);
    ::setenv("MPG_WORKERS", "4", 1);
    CHECK(worker_count_from_env() == 4);
    ::setenv("MPG_WORKERS", "zero", 1);
    CHECK_THROWS_AS(worker_count_from_env(), Error);
    ::setenv("MPG_WORKERS", "0", 1);
    CHECK_THROWS_AS(worker_count_from_env(), Error);
    ::unsetenv("MPG_WORKERS");
}

TEST_CASE("environment arguments") {
    CHECK(environment_from_argument("frozenlake8").at("size") == 8);
    CHECK(environment_from_argument("cartpole").at("id") == "cartpole");
    CHECK_THROWS_AS(environment_from_argument("/nonexistent/env.json"), Error);
}
