#include "mpg/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "mpg/error.hpp"

namespace mpg {

namespace {

std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::string fixed(double x, int digits) {
    if (std::isnan(x)) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

template <typename T>
std::vector<T> json_list(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw Error(std::string("experiment grid: missing '") + key + "'");
    const auto& v = j.at(key);
    if (v.is_array()) return v.get<std::vector<T>>();
    return {v.get<T>()};
}

std::string cell_tag(int cell, int agent) {
    return "cell" + std::to_string(cell) + "_agent" + std::to_string(agent);
}

}  // namespace

void ExperimentSpec::validate() const {
    if (tau0_grid.empty() || eta0_grid.empty() || horizon_grid.empty()) throw Error("experiment: empty grid");
    if (agents < 1) throw Error("experiment: need at least one agent per cell");
    if (eval_games < 1) throw Error("experiment: need at least one evaluation game");
    for (const auto& c : cells()) {
        TrainConfig cfg = train;
        cfg.horizon = c.horizon;
        cfg.eta0 = c.eta0;
        cfg.tau0 = c.tau0;
        cfg.validate();
    }
}

std::vector<GridCell> ExperimentSpec::cells() const {
    std::vector<GridCell> out;
    for (int n : horizon_grid)
        for (double tau0 : tau0_grid)
            for (double eta0 : eta0_grid) out.push_back({tau0, eta0, n});
    return out;
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& j) {
    try {
        ExperimentSpec spec;
        spec.name = j.value("name", spec.name);
        spec.environment = j.at("environment");
        if (j.contains("policy")) {
            const auto& p = j.at("policy");
            const std::string kind = p.value("kind", "tabular");
            if (kind == "tabular") {
                spec.policy.kind = PolicySpec::Kind::Tabular;
                spec.policy.feature_scale = p.value("feature_scale", 1.0);
            } else if (kind == "neural") {
                spec.policy.kind = PolicySpec::Kind::Neural;
                spec.policy.neural.hidden = p.value("hidden", spec.policy.neural.hidden);
                const std::string act = p.value("activation", "tanh");
                if (act != "tanh" && act != "identity") throw Error("policy: unknown activation '" + act + "'");
                spec.policy.neural.activation = act == "tanh" ? Activation::Tanh : Activation::Identity;
                spec.policy.neural.mode = horizon_mode_from_string(p.value("mode", "shared-scaled"));
                spec.policy.neural.output_init_scale = p.value("output_init_scale", 1.0);
            } else {
                throw Error("policy: unknown kind '" + kind + "'");
            }
        }
        const auto& t = j.at("train");
        spec.train.episodes = t.at("episodes").get<int>();
        spec.train.eta_terminal = t.at("eta_T").get<double>();
        spec.train.tau_terminal = t.at("tau_T").get<double>();
        spec.train.variant = update_variant_from_string(t.value("variant", "sampled"));
        spec.train.batch = t.value("batch", 1);
        spec.train.clip_ceiling = t.value("clip", 10.0);
        spec.train.divergence_threshold = t.value("divergence_threshold", 1e6);
        spec.train.objective_interval = t.value("objective_interval", 0);
        const auto& g = j.at("grid");
        spec.tau0_grid = json_list<double>(g, "tau_0");
        spec.eta0_grid = json_list<double>(g, "eta_0");
        spec.horizon_grid = json_list<int>(g, "horizon");
        spec.agents = j.value("agents", 1);
        spec.eval_games = j.value("eval_games", 100);
        spec.seed = j.value("seed", std::uint64_t{0});
        spec.output = j.value("output", spec.output);
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("experiment config: ") + e.what());
    }
}

nlohmann::json ExperimentSpec::to_json() const {
    nlohmann::json policy_json;
    if (policy.kind == PolicySpec::Kind::Tabular) {
        policy_json = {{"kind", "tabular"}, {"feature_scale", policy.feature_scale}};
    } else {
        policy_json = {{"kind", "neural"},
                       {"hidden", policy.neural.hidden},
                       {"activation", policy.neural.activation == Activation::Tanh ? "tanh" : "identity"},
                       {"mode", to_string(policy.neural.mode)},
                       {"output_init_scale", policy.neural.output_init_scale}};
    }
    return {{"name", name},
            {"environment", environment},
            {"policy", policy_json},
            {"train",
             {{"episodes", train.episodes},
              {"eta_T", train.eta_terminal},
              {"tau_T", train.tau_terminal},
              {"variant", to_string(train.variant)},
              {"batch", train.batch},
              {"clip", train.clip_ceiling},
              {"divergence_threshold", train.divergence_threshold},
              {"objective_interval", train.objective_interval}}},
            {"grid", {{"tau_0", tau0_grid}, {"eta_0", eta0_grid}, {"horizon", horizon_grid}}},
            {"agents", agents},
            {"eval_games", eval_games},
            {"seed", seed},
            {"output", output}};
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open experiment config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("experiment config " + path.string() + ": " + e.what());
    }
    return ExperimentSpec::from_json(j);
}

double EvalSummary::avg_steps() const {
    return steps_count ? steps_sum / steps_count : std::numeric_limits<double>::quiet_NaN();
}

EvalSummary evaluate_games(const Environment& env, const PolicyModel& model, int horizon, int games,
                           RandomSource& rng) {
    EvalSummary out;
    const bool count_all = env.success_on_timeout();
    for (int g = 0; g < games; ++g) {
        const Episode ep = run_episode(env, model, horizon, rng);
        ++out.games;
        if (ep.success) ++out.successes;
        if (count_all || ep.success) {
            out.steps_sum += ep.length();
            ++out.steps_count;
        }
    }
    return out;
}

ResultRow aggregate(const GridCell& cell, std::vector<AgentRecord> records) {
    ResultRow row;
    row.cell = cell;
    row.agents = static_cast<int>(records.size());
    long games = 0, successes = 0, steps_count = 0;
    double steps_sum = 0.0;
    for (const auto& r : records) {
        if (r.failed) {
            ++row.failed_to_train;
            continue;
        }
        games += r.eval.games;
        successes += r.eval.successes;
        steps_sum += r.eval.steps_sum;
        steps_count += r.eval.steps_count;
    }
    row.success_pct = games ? 100.0 * static_cast<double>(successes) / games : 0.0;
    row.avg_steps = steps_count ? steps_sum / steps_count : std::numeric_limits<double>::quiet_NaN();
    row.records = std::move(records);
    return row;
}

std::unique_ptr<PolicyModel> make_policy(const PolicySpec& spec, const Environment& env, int horizon, double tau,
                                         std::uint64_t seed) {
    if (spec.kind == PolicySpec::Kind::Tabular) {
        const FiniteMdp* mdp = env.finite_mdp();
        if (!mdp) throw Error("tabular policies need a finite environment");
        auto features = std::make_shared<const FeatureMap>(
            FeatureMap::tabular(mdp->n_states(), mdp->n_actions(), spec.feature_scale));
        return std::make_unique<LinearPolicyModel>(
            ExtendedPolicy(horizon, features, tau, PolicyTable::uniform(mdp->n_states(), mdp->n_actions())));
    }
    NeuralConfig cfg = spec.neural;
    cfg.seed = seed;
    return std::make_unique<NeuralPolicyModel>(horizon, env.action_count(), env.state_dim(), tau, cfg);
}

int worker_count_from_env() {
    const char* raw = std::getenv("MPG_WORKERS");
    if (!raw || !*raw) return 1;
    char* end = nullptr;
    const long v = std::strtol(raw, &end, 10);
    if (*end != '\0' || v < 1) throw Error(std::string("MPG_WORKERS must be a positive integer, got '") + raw + "'");
    return static_cast<int>(v);
}

ExperimentResult run_experiment(const ExperimentSpec& spec, int workers) {
    spec.validate();
    if (workers < 1) throw Error("run_experiment: need at least one worker");
    const auto cells = spec.cells();
    const int agents = spec.agents;
    const int jobs = static_cast<int>(cells.size()) * agents;

    std::vector<AgentRecord> records(jobs);
    ExperimentResult result;
    result.artifacts.resize(jobs);

    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&] {
        // Each worker owns its environment instance; specs are immutable so
        // this only avoids sharing caches.
        const auto env = make_environment(spec.environment);
        for (int job = next++; job < jobs; job = next++) {
            try {
                const int c = job / agents;
                const int a = job % agents;
                const GridCell& cell = cells[c];
                const std::uint64_t agent_seed =
                    RandomSource::derive_seed(RandomSource::derive_seed(spec.seed, c), a);

                TrainConfig cfg = spec.train;
                cfg.horizon = cell.horizon;
                cfg.eta0 = cell.eta0;
                cfg.tau0 = cell.tau0;
                cfg.seed = RandomSource::derive_seed(agent_seed, 0);
                auto model = make_policy(spec.policy, *env, cell.horizon, cell.tau0,
                                         RandomSource::derive_seed(agent_seed, 1));
                const TrainLog log = train(*env, *model, cfg);

                AgentRecord& rec = records[job];
                rec.cell = c;
                rec.agent = a;
                rec.seed = agent_seed;
                rec.diverged = log.diverged;
                rec.diagnostic = log.diagnostic;
                rec.final_tau = model->tau();
                rec.final_eta = log.rows.empty() ? cell.eta0 : log.rows.back().eta;
                if (!log.diverged) {
                    RandomSource eval_rng(RandomSource::derive_seed(agent_seed, 2));
                    rec.eval = evaluate_games(*env, *model, cell.horizon, spec.eval_games, eval_rng);
                }
                rec.failed = rec.diverged || rec.eval.success_rate() < kFailedSuccessRate;

                std::ostringstream csv;
                log.write_csv(csv);
                result.artifacts[job] = {make_checkpoint(spec.environment, cell.horizon, *model), csv.str()};
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = jobs;
            }
        }
    };

    const int threads = std::min(workers, std::max(jobs, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);

    for (std::size_t c = 0; c < cells.size(); ++c) {
        std::vector<AgentRecord> cell_records(records.begin() + c * agents, records.begin() + (c + 1) * agents);
        result.rows.push_back(aggregate(cells[c], std::move(cell_records)));
    }
    return result;
}

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << "tau_0,eta_0,horizon,agents,success_pct,avg_steps,failed_to_train\n";
    for (const auto& r : rows)
        out << fmt(r.cell.tau0) << ',' << fmt(r.cell.eta0) << ',' << r.cell.horizon << ',' << r.agents << ','
            << fmt(r.success_pct) << ',' << fmt(r.avg_steps) << ',' << r.failed_to_train << '\n';
}

void write_agents_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << "cell,tau_0,eta_0,horizon,agent,seed,diverged,games,successes,steps_sum,steps_count,final_tau,final_eta,"
           "failed\n";
    for (const auto& r : rows)
        for (const auto& a : r.records)
            out << a.cell << ',' << fmt(r.cell.tau0) << ',' << fmt(r.cell.eta0) << ',' << r.cell.horizon << ','
                << a.agent << ',' << a.seed << ',' << (a.diverged ? 1 : 0) << ',' << a.eval.games << ','
                << a.eval.successes << ',' << fmt(a.eval.steps_sum) << ',' << a.eval.steps_count << ','
                << fmt(a.final_tau) << ',' << fmt(a.final_eta) << ',' << (a.failed ? 1 : 0) << '\n';
}

void write_experiment(const std::filesystem::path& dir, const ExperimentSpec& spec, const ExperimentResult& result) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "checkpoints", ec);
    if (!ec) fs::create_directories(dir / "logs", ec);
    if (ec) throw Error("cannot create results directory " + dir.string() + ": " + ec.message());

    auto open = [&](const fs::path& p) {
        std::ofstream f(p, std::ios::binary);
        if (!f) throw Error("cannot write " + p.string());
        return f;
    };
    {
        auto f = open(dir / "spec.json");
        f << spec.to_json().dump(2) << '\n';
    }
    {
        auto f = open(dir / "results.csv");
        write_results_csv(f, result.rows);
    }
    {
        auto f = open(dir / "agents.csv");
        write_agents_csv(f, result.rows);
    }
    {
        auto f = open(dir / "report.md");
        f << markdown_report(spec.name, result.rows);
    }
    const int agents = spec.agents;
    for (std::size_t job = 0; job < result.artifacts.size(); ++job) {
        const std::string tag = cell_tag(static_cast<int>(job) / agents, static_cast<int>(job) % agents);
        auto ck = open(dir / "checkpoints" / (tag + ".json"));
        ck << result.artifacts[job].checkpoint.dump() << '\n';
        auto lg = open(dir / "logs" / (tag + ".csv"));
        lg << result.artifacts[job].train_log_csv;
    }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("tau_0,", 0) != 0) throw Error("results.csv: missing header");
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 7) throw Error("results.csv: expected 7 columns in '" + line + "'");
        ResultRow r;
        try {
            r.cell = {std::stod(f[0]), std::stod(f[1]), std::stoi(f[2])};
            r.agents = std::stoi(f[3]);
            r.success_pct = std::stod(f[4]);
            r.avg_steps = f[5] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[5]);
            r.failed_to_train = std::stoi(f[6]);
        } catch (const std::exception&) {
            throw Error("results.csv: malformed row '" + line + "'");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string markdown_report(const std::string& title, const std::vector<ResultRow>& rows) {
    std::ostringstream os;
    os << "### " << title << "\n\n";
    os << "| tau_0 | eta_0 | n | Success % | average steps | failed to train |\n";
    os << "|---|---|---|---|---|---|\n";
    for (const auto& r : rows)
        os << "| " << fmt(r.cell.tau0) << " | " << fmt(r.cell.eta0) << " | " << r.cell.horizon << " | "
           << fixed(r.success_pct, 2) << " | " << fixed(r.avg_steps, 2) << " | " << r.failed_to_train << "/"
           << r.agents << " |\n";
    return os.str();
}

nlohmann::json make_checkpoint(const nlohmann::json& environment, int horizon, const PolicyModel& model) {
    return {{"environment", environment}, {"horizon", horizon}, {"policy", model.checkpoint()}};
}

nlohmann::json environment_from_argument(const std::string& arg) {
    if (arg == "frozenlake4") return {{"id", "frozenlake"}, {"size", 4}};
    if (arg == "frozenlake8") return {{"id", "frozenlake"}, {"size", 8}};
    if (arg == "cartpole") return {{"id", "cartpole"}};
    std::ifstream in(arg);
    if (!in) throw Error("unknown environment '" + arg + "' (not an id or a readable JSON file)");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("environment file " + arg + ": " + e.what());
    }
    return j.contains("environment") ? j.at("environment") : j;
}

}  // namespace mpg
