#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpg/certificates.hpp"
#include "mpg/checks.hpp"
#include "mpg/environments.hpp"
#include "mpg/error.hpp"
#include "mpg/experiment.hpp"
#include "mpg/neural_prefs.hpp"
#include "mpg/soft_dp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw mpg::Error("cannot open " + path.string());
    return json::parse(in);
}

struct LoadedCheckpoint {
    int horizon = 0;
    std::unique_ptr<mpg::PolicyModel> model;
};

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    const json j = read_json(path);
    LoadedCheckpoint out;
    out.horizon = j.at("horizon").get<int>();
    out.model = mpg::policy_model_from_json(j.at("policy"));
    return out;
}

int cmd_train(const std::string& config, const std::string& out_override) {
    mpg::ExperimentSpec spec = mpg::load_experiment(config);
    if (!out_override.empty()) spec.output = out_override;
    const int workers = mpg::worker_count_from_env();
    std::cerr << "training " << spec.name << ": " << spec.cells().size() << " cells x " << spec.agents
              << " agents, " << workers << " worker(s)\n";
    const mpg::ExperimentResult result = mpg::run_experiment(spec, workers);
    mpg::write_experiment(spec.output, spec, result);
    std::cout << mpg::markdown_report(spec.name, result.rows);
    std::cerr << "results written to " << spec.output << "\n";
    return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& env_arg, int games, std::uint64_t seed) {
    const LoadedCheckpoint ck = load_checkpoint(checkpoint);
    const auto env = mpg::make_environment(mpg::environment_from_argument(env_arg));
    mpg::RandomSource rng(seed);
    const mpg::EvalSummary s = mpg::evaluate_games(*env, *ck.model, ck.horizon, games, rng);
    json out{{"environment", env->name()},
             {"games", s.games},
             {"successes", s.successes},
             {"success_pct", 100.0 * s.success_rate()},
             {"avg_steps", s.steps_count ? json(s.avg_steps()) : json(nullptr)},
             {"tau", ck.model->tau()}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_certify(const std::string& checkpoint, const std::string& env_arg, double tol, int samples,
                std::uint64_t seed) {
    const LoadedCheckpoint ck = load_checkpoint(checkpoint);
    const auto env = mpg::make_environment(mpg::environment_from_argument(env_arg));
    json out{{"environment", env->name()}, {"horizon", ck.horizon}, {"tau", ck.model->tau()}};
    bool pass = true;

    if (const auto* linear = dynamic_cast<const mpg::LinearPolicyModel*>(ck.model.get())) {
        const mpg::FiniteMdp* mdp = env->finite_mdp();
        if (!mdp) throw mpg::Error("tabular certificate needs an environment with a finite model");
        const mpg::ExtendedPolicy& policy = linear->policy();
        const mpg::SoftDpSolution oracle =
            mpg::solve_optimal(*mdp, ck.horizon, policy.tau(), 1.0, policy.baseline());
        const mpg::GramSpectrum spectrum = mpg::feature_spectrum(policy.features());
        json reports = json::array();
        for (int m = 1; m <= ck.horizon; ++m) {
            const mpg::CertificateReport rep = mpg::certify(mpg::compute_d_map(*mdp, policy, oracle, m), spectrum,
                                                            policy.step(m).as_table(), oracle.policy(m), tol);
            pass = pass && rep.pass;
            reports.push_back(mpg::to_json(rep));
        }
        out["kind"] = "linear";
        out["certificates"] = reports;
    } else if (const auto* neural = dynamic_cast<const mpg::NeuralPolicyModel*>(ck.model.get())) {
        std::vector<mpg::Observation> observations = env->all_observations();
        if (observations.empty()) {
            mpg::RandomSource rng(seed);
            for (int k = 0; k < samples; ++k) observations.push_back(env->observe(env->reset(rng)));
        }
        std::vector<mpg::NtkPoint> points;
        for (const auto& obs : observations)
            for (int a = 0; a < env->action_count(); ++a) points.push_back({a, obs});
        // Shared networks see the horizon only through one scalar input, so
        // the shortest and longest horizons are checked; separate networks
        // are checked one by one.
        std::vector<int> steps{1};
        if (neural->encoding().mode == mpg::HorizonMode::SeparateNetworks)
            for (int i = 2; i <= ck.horizon; ++i) steps.push_back(i);
        else if (ck.horizon > 1)
            steps.push_back(ck.horizon);
        json per_step = json::array();
        for (int i : steps) {
            const mpg::NtkGram g = mpg::ntk_gram(*neural, i, points);
            pass = pass && g.pass;
            json row = mpg::to_json(g);
            row["steps_left"] = i;
            per_step.push_back(row);
        }
        out["kind"] = "neural";
        out["points"] = points.size();
        out["ntk"] = per_step;
    } else {
        throw mpg::Error("unsupported checkpoint kind");
    }
    out["pass"] = pass;
    std::cout << out.dump(2) << "\n";
    return pass ? 0 : 1;
}

int cmd_verify(const std::string& level) {
    if (level != "fast" && level != "full") throw mpg::Error("--level must be fast or full");
    int failures = 0;
    mpg::verify_suite(level == "full" ? mpg::VerifyLevel::Full : mpg::VerifyLevel::Fast,
                      [&](const mpg::CheckResult& r) {
                          if (!r.pass) ++failures;
                          std::printf("%s  %-32s %7.2fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                                      r.detail.c_str());
                          std::fflush(stdout);
                      });
    std::printf("%s: %d failure(s)\n", failures ? "FAILED" : "OK", failures);
    return failures ? 1 : 0;
}

int cmd_report(const fs::path& dir) {
    std::ifstream in(dir / "results.csv");
    if (!in) throw mpg::Error("no results.csv in " + dir.string());
    std::string title = dir.filename().string();
    if (fs::exists(dir / "spec.json")) title = read_json(dir / "spec.json").value("name", title);
    std::cout << mpg::markdown_report(title, mpg::read_results_csv(in));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Matryoshka policy gradient experiments"};
    app.require_subcommand(1);

    std::string config, out_dir;
    auto* train = app.add_subcommand("train", "Train every grid cell of an experiment config");
    train->add_option("config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out_dir, "Override the output directory");

    std::string checkpoint, env_arg;
    int games = 100;
    std::uint64_t seed = 1;
    auto* evaluate = app.add_subcommand("evaluate", "Play games with a trained checkpoint");
    evaluate->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    evaluate->add_option("env", env_arg, "frozenlake4 | frozenlake8 | cartpole | JSON file")->required();
    evaluate->add_option("--games", games)->check(CLI::PositiveNumber);
    evaluate->add_option("--seed", seed);

    double tol = 1e-6;
    int samples = 200;
    auto* certify = app.add_subcommand("certify", "Optimality certificate of a checkpoint");
    certify->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    certify->add_option("env", env_arg)->required();
    certify->add_option("--tol", tol, "Residual tolerance for tabular certificates");
    certify->add_option("--samples", samples, "States sampled when the environment is continuous");
    certify->add_option("--seed", seed);

    std::string level = "fast";
    auto* verify = app.add_subcommand("verify", "Run the identity and property suites");
    verify->add_option("--level", level)->check(CLI::IsMember({"fast", "full"}));

    std::string results_dir;
    auto* report = app.add_subcommand("report", "Render results.csv as a markdown table");
    report->add_option("results-dir", results_dir)->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(config, out_dir);
        if (*evaluate) return cmd_evaluate(checkpoint, env_arg, games, seed);
        if (*certify) return cmd_certify(checkpoint, env_arg, tol, samples, seed);
        if (*verify) return cmd_verify(level);
        if (*report) return cmd_report(results_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
