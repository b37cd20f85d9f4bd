#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpg/environments.hpp"
#include "mpg/neural_prefs.hpp"
#include "mpg/policy_model.hpp"
#include "mpg/train.hpp"

namespace mpg {

/// How an agent's preferences are parametrized.
struct PolicySpec {
    enum class Kind { Tabular, Neural };
    Kind kind = Kind::Tabular;
    /// Multiplier of the Kronecker basis for tabular policies.
    double feature_scale = 1.0;
    NeuralConfig neural;
};

struct GridCell {
    double tau0 = 1.0;
    double eta0 = 1e-3;
    int horizon = 1;
};

/// One experiment: an environment, a training recipe, and a grid over
/// (tau_0, eta_0, n). Every cell trains `agents` independent runs.
struct ExperimentSpec {
    std::string name = "experiment";
    nlohmann::json environment;
    PolicySpec policy;
    /// Episodes, terminal rates, variant and guard; the grid overrides
    /// horizon, eta0 and tau0.
    TrainConfig train;
    std::vector<double> tau0_grid;
    std::vector<double> eta0_grid;
    std::vector<int> horizon_grid;
    int agents = 1;
    int eval_games = 100;
    std::uint64_t seed = 0;
    std::string output = "results";

    void validate() const;
    std::vector<GridCell> cells() const;

    static ExperimentSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

ExperimentSpec load_experiment(const std::filesystem::path& path);

/// Outcome of playing `games` episodes with a frozen policy.
struct EvalSummary {
    int games = 0;
    int successes = 0;
    /// Steps summed over the counted games: successful games when success
    /// means reaching a goal, every game when success means surviving.
    double steps_sum = 0.0;
    int steps_count = 0;

    double success_rate() const { return games ? static_cast<double>(successes) / games : 0.0; }
    double avg_steps() const;
};

/// Plays games with the stochastic policy at its current temperature.
EvalSummary evaluate_games(const Environment& env, const PolicyModel& model, int horizon, int games,
                           RandomSource& rng);

struct AgentRecord {
    int cell = 0;
    int agent = 0;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::string diagnostic;
    EvalSummary eval;
    double final_tau = 0.0;
    double final_eta = 0.0;
    /// Divergence guard tripped or evaluation success below the threshold.
    bool failed = false;
};

/// Evaluation success rate below which a run counts as failed to train.
inline constexpr double kFailedSuccessRate = 0.05;

struct ResultRow {
    GridCell cell;
    int agents = 0;
    /// Pooled over the games of agents that did not fail.
    double success_pct = 0.0;
    /// Pooled over the counted games of agents that did not fail; NaN if none.
    double avg_steps = 0.0;
    int failed_to_train = 0;
    std::vector<AgentRecord> records;
};

/// Recomputes the aggregate columns from the per-agent records.
ResultRow aggregate(const GridCell& cell, std::vector<AgentRecord> records);

/// Builds the untrained policy for one agent.
std::unique_ptr<PolicyModel> make_policy(const PolicySpec& spec, const Environment& env, int horizon, double tau,
                                         std::uint64_t seed);

/// Per-agent artefacts of a run, kept when an output directory is used.
struct AgentArtifacts {
    nlohmann::json checkpoint;
    std::string train_log_csv;
};

/// Worker threads from MPG_WORKERS (default 1).
int worker_count_from_env();

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<AgentArtifacts> artifacts;  // cell-major, agent-minor
};

/// Trains and evaluates every (cell, agent) pair. Each run draws from its own
/// stream derived from (seed, cell, agent), so results do not depend on the
/// number of workers.
ExperimentResult run_experiment(const ExperimentSpec& spec, int workers = 1);

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
void write_agents_csv(std::ostream& out, const std::vector<ResultRow>& rows);

/// Writes spec.json, results.csv, agents.csv, report.md, checkpoints/ and
/// logs/ under `dir`.
void write_experiment(const std::filesystem::path& dir, const ExperimentSpec& spec, const ExperimentResult& result);

/// Re-reads results.csv (and spec.json when present) from a results directory.
std::vector<ResultRow> read_results_csv(std::istream& in);

/// Markdown table with columns tau_0, eta_0, n, success %, average steps, failed.
std::string markdown_report(const std::string& title, const std::vector<ResultRow>& rows);

/// Checkpoint file: {"environment", "horizon", "policy"}.
nlohmann::json make_checkpoint(const nlohmann::json& environment, int horizon, const PolicyModel& model);

/// Accepts a JSON file path or a short id ("frozenlake4", "frozenlake8",
/// "cartpole").
nlohmann::json environment_from_argument(const std::string& arg);

}  // namespace mpg
