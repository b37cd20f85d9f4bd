// Acceptance run: one PASS/FAIL line per criterion, thresholds fixed below.
//
// Exit status: 0 when every criterion passes, 1 when any fails, 2 on error.
// With --ctest the status is 0 as long as the deterministic criteria pass;
// the stochastic training reproductions (6, 7, 8) are still evaluated and
// printed but do not fail the test run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpg/checks.hpp"
#include "mpg/experiment.hpp"

using namespace mpg;

namespace {

constexpr std::uint64_t kSeed = 20240601;

struct Criterion {
    int id;
    std::string title;
    double budget_seconds;
    bool stochastic;
    std::function<CheckResult(int workers)> run;
};

std::string config(const char* name) { return std::string(MPG_SOURCE_DIR) + "/configs/" + name; }

ExperimentSpec single_cell(const char* file, double tau0, double eta0, int horizon) {
    ExperimentSpec spec = load_experiment(config(file));
    spec.tau0_grid = {tau0};
    spec.eta0_grid = {eta0};
    spec.horizon_grid = {horizon};
    spec.validate();
    return spec;
}

std::string fmt(const char* pattern, double a, double b, int c) {
    char buf[160];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

/// Trains the cell and reports (success %, avg steps, failed agents).
CheckResult reproduce(const ExperimentSpec& spec, int workers, double min_success, double max_steps,
                      double min_steps, int attempts) {
    CheckResult r;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        ExperimentSpec s = spec;
        if (attempt > 0) s.seed = RandomSource::derive_seed(spec.seed, 1000 + attempt);
        const ResultRow row = run_experiment(s, workers).rows.front();
        const bool steps_ok = !std::isnan(row.avg_steps) && row.avg_steps <= max_steps && row.avg_steps >= min_steps;
        r.pass = row.success_pct >= min_success && steps_ok;
        if (!r.detail.empty()) r.detail += "; ";
        r.detail += "attempt " + std::to_string(attempt + 1) + ": " +
                    fmt("success %.2f%%, avg steps %.2f, failed %d", row.success_pct, row.avg_steps,
                        row.failed_to_train) +
                    "/" + std::to_string(row.agents);
        if (r.pass) break;
    }
    return r;
}

CheckResult both(CheckResult a, const CheckResult& b) {
    a.pass = a.pass && b.pass;
    a.detail += " | " + b.name + ": " + (b.pass ? "ok, " : "FAILED, ") + b.detail;
    return a;
}

std::vector<Criterion> criteria() {
    return {
        {1, "DP identities on 25 random MDPs", 10.0, false,
         [](int) {
             CheckResult fault = check_dp_identities(5, kSeed, DpFault::HardMax);
             fault.name = "hard-max fault";
             fault.pass = !fault.pass;
             return both(check_dp_identities(25, kSeed), fault);
         }},
        {2, "policy gradient theorem vs finite differences", 30.0, false,
         [](int) { return check_gradient_theorem(10, kSeed + 1); }},
        {3, "sampled update unbiased within 3 sigma (1e5 samples)", 120.0, false,
         [](int) { return check_unbiasedness(100000, kSeed + 2); }},
        {4, "global optimality and d-map certificate on 10 MDPs", 300.0, false,
         [](int) { return check_global_optimality(10, kSeed + 4); }},
        {5, "horizon-extension limit with gamma 0.9", 1e9, false,
         [](int) { return check_horizon_limit(5, kSeed + 5); }},
        {6, "FrozenLake 4x4, tau0 0.4, eta0 1e-3, n 10", 600.0, true,
         [](int workers) {
             return reproduce(single_cell("frozenlake4_n10.json", 0.4, 1e-3, 10), workers, 99.0, 6.3, 0.0, 3);
         }},
        {7, "FrozenLake 8x8, tau_T 0.005, tau0 0.3, eta0 2e-6, n 100", 3600.0, true,
         [](int workers) {
             return reproduce(single_cell("frozenlake8_tauT0.005.json", 0.3, 2e-6, 100), workers, 90.0, 18.0, 0.0,
                              1);
         }},
        {8, "CartPole neural, tau0 0.15, eta0 1e-6, n 100", 3600.0, true,
         [](int workers) {
             const ExperimentSpec spec = single_cell("cartpole_best.json", 0.15, 1e-6, 100);
             CheckResult r = reproduce(spec, workers, 50.0, 1e9, 80.0, 1);
             // Untrained policies of the same agents.
             const auto env = make_environment(spec.environment);
             int games = 0, wins = 0;
             for (int a = 0; a < spec.agents; ++a) {
                 const std::uint64_t seed = RandomSource::derive_seed(RandomSource::derive_seed(spec.seed, 0), a);
                 auto model = make_policy(spec.policy, *env, 100, spec.train.tau_terminal,
                                          RandomSource::derive_seed(seed, 1));
                 RandomSource rng(RandomSource::derive_seed(seed, 2));
                 const EvalSummary e = evaluate_games(*env, *model, 100, spec.eval_games, rng);
                 games += e.games;
                 wins += e.successes;
             }
             const double baseline = 100.0 * wins / games;
             r.pass = r.pass && baseline < 5.0;
             char buf[96];
             std::snprintf(buf, sizeof buf, "; untrained baseline %.2f%% over %d games", baseline, games);
             r.detail += buf;
             return r;
         }},
        {9, "neural backprop, NTK symmetric PSD and positive at width 256", 120.0, false,
         [](int) { return check_neural(kSeed + 6, 256); }},
        {10, "same seed gives identical CSV bytes", 1e9, false, [](int) { return check_determinism(kSeed + 7); }},
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    bool ctest = false;
    std::vector<int> only;
    app.add_flag("--ctest", ctest, "exit 0 unless a deterministic criterion fails");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);

    try {
        const int workers = worker_count_from_env();
        const std::set<int> selected(only.begin(), only.end());
        int failed = 0, failed_deterministic = 0;
        for (const auto& c : criteria()) {
            if (!selected.empty() && !selected.count(c.id)) continue;
            CheckResult r = timed([&] {
                try {
                    return c.run(workers);
                } catch (const std::exception& e) {
                    return CheckResult{c.title, false, std::string("error: ") + e.what(), 0.0};
                }
            });
            const bool in_budget = r.seconds < c.budget_seconds;
            const bool pass = r.pass && in_budget;
            std::printf("%s criterion %d: %s (%.1fs%s) %s\n", pass ? "PASS" : "FAIL", c.id, c.title.c_str(),
                        r.seconds, in_budget ? "" : ", over time budget", r.detail.c_str());
            std::fflush(stdout);
            if (!pass) {
                ++failed;
                if (!c.stochastic) ++failed_deterministic;
            }
        }
        std::printf("%s: %d criterion failure(s)\n", failed ? "FAILED" : "OK", failed);
        if (ctest) return failed_deterministic ? 1 : 0;
        return failed ? 1 : 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance: %s\n", e.what());
        return 2;
    }
}
