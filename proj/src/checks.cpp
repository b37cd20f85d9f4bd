#include "mpg/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "mpg/certificates.hpp"
#include "mpg/environments.hpp"
#include "mpg/error.hpp"
#include "mpg/experiment.hpp"
#include "mpg/neural_prefs.hpp"
#include "mpg/soft_dp.hpp"
#include "mpg/train.hpp"

namespace mpg {

namespace {

constexpr double kLseTol = 1e-10;
constexpr double kValueGapTol = 1e-9;
constexpr double kTruncationTol = 1e-10;
constexpr double kGradientRelTol = 1e-5;
constexpr double kFdStep = 1e-5;
constexpr double kZLimit = 3.0;
constexpr double kPolicyErrorTol = 1e-3;
constexpr double kResidualTol = 1e-6;
constexpr double kPerturbation = 0.05;
constexpr double kHorizonL1Tol = 1e-3;
constexpr double kMonotoneSlack = 1e-12;
constexpr double kNeuralFdRelTol = 1e-5;
constexpr double kNtkPsdTol = 1e-8;
// Smallest eigenvalue (relative to the largest) that is distinguishable from
// symmetric eigensolver round-off on a 64 x 64 Gram matrix.
constexpr double kNtkRoundoff = 1000.0 * std::numeric_limits<double>::epsilon();

std::string describe(const std::ostringstream& os) { return os.str(); }

PolicyTable random_policy_table(int S, int A, RandomSource& rng, double spread = 1.0) {
    PolicyTable t(S, A);
    for (int s = 0; s < S; ++s) {
        double total = 0.0;
        for (int a = 0; a < A; ++a) total += t(s, a) = std::exp(spread * rng.normal());
        for (int a = 0; a < A; ++a) t(s, a) /= total;
    }
    return t;
}

std::vector<Observation> index_obs(int S) {
    std::vector<Observation> out(S);
    for (int s = 0; s < S; ++s) out[s].index = s;
    return out;
}

/// Optimal-policy recursion with the log-sum-exp replaced by a hard max.
SoftDpSolution solve_with_hard_max(const FiniteMdp& mdp, int n, double tau, double gamma, const PolicyTable& pbar) {
    SoftDpSolution sol = solve_optimal(mdp, n, tau, gamma, pbar);
    const int S = mdp.n_states(), A = mdp.n_actions();
    for (int i = 1; i <= n; ++i) {
        auto& q = sol.q_star[i];
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                double acc = 0.0;
                for (int t = 0; t < S; ++t) acc += mdp.transition(s, a, t) * sol.v_star[i - 1][t];
                q[static_cast<std::size_t>(s) * A + a] = mdp.reward(s, a) + gamma * acc;
            }
        for (int s = 0; s < S; ++s) {
            double top = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < A; ++a) top = std::max(top, q[static_cast<std::size_t>(s) * A + a]);
            sol.v_star[i][s] = top;
            double total = 0.0;
            for (int a = 0; a < A; ++a)
                total += sol.pi_star[i - 1](s, a) = pbar(s, a) * std::exp((q[static_cast<std::size_t>(s) * A + a] - top) / tau);
            for (int a = 0; a < A; ++a) sol.pi_star[i - 1](s, a) /= total;
        }
    }
    return sol;
}

ExtendedPolicy random_tabular_policy(int S, int A, int n, double tau, RandomSource& rng, double spread) {
    auto features = std::make_shared<const FeatureMap>(FeatureMap::tabular(S, A));
    ExtendedPolicy policy(n, features, tau, PolicyTable::uniform(S, A));
    for (int i = 1; i <= n; ++i)
        for (double& t : policy.step(i).theta()) t = spread * rng.normal();
    return policy;
}

struct ZStats {
    double max_abs_z = 0.0;
    std::vector<double> block_max_z;
};

/// Per-component z-scores of the Monte-Carlo mean of `draw` against `exact`.
template <typename Draw>
ZStats mc_zscores(const PolicyModel& model, const std::vector<double>& exact, int samples, Draw&& draw) {
    const std::size_t P = exact.size();
    std::vector<double> sum(P, 0.0), sum_sq(P, 0.0);
    for (int k = 0; k < samples; ++k) {
        const std::vector<double> d = draw();
        for (std::size_t j = 0; j < P; ++j) {
            sum[j] += d[j];
            sum_sq[j] += d[j] * d[j];
        }
    }
    ZStats out;
    for (int i = 1; i <= model.horizon(); ++i) {
        const auto [offset, len] = model.block_range(i);
        double worst = 0.0;
        for (std::size_t j = offset; j < offset + len; ++j) {
            const double mean = sum[j] / samples;
            const double var = std::max(sum_sq[j] / samples - mean * mean, 0.0);
            const double se = std::sqrt(var / samples);
            const double dev = std::abs(mean - exact[j]);
            const double z = se > 0.0 ? dev / se : (dev < 1e-14 ? 0.0 : std::numeric_limits<double>::infinity());
            worst = std::max(worst, z);
        }
        out.block_max_z.push_back(worst);
        out.max_abs_z = std::max(out.max_abs_z, worst);
    }
    return out;
}

}  // namespace

CheckResult timed(const std::function<CheckResult()>& body) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r = body();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

CheckResult check_dp_identities(int count, std::uint64_t seed, DpFault fault) {
    CheckResult r;
    r.name = fault == DpFault::None ? "dp identities" : "dp identities (hard-max fault)";
    double lse_err = 0.0, gap_err = 0.0, trunc_err = 0.0;
    for (int c = 0; c < count; ++c) {
        RandomSource rng(RandomSource::derive_seed(seed, c));
        const int S = 2 + static_cast<int>(rng.next() % 5);
        const int A = 2 + static_cast<int>(rng.next() % 3);
        const int n = 1 + static_cast<int>(rng.next() % 5);
        const double tau = c % 2 == 0 ? 0.1 : 1.0;
        const FiniteMdp mdp = random_mdp(S, A, rng);
        const PolicyTable pbar = random_policy_table(S, A, rng, 0.5);
        auto solve = [&](int horizon) {
            return fault == DpFault::HardMax ? solve_with_hard_max(mdp, horizon, tau, 1.0, pbar)
                                             : solve_optimal(mdp, horizon, tau, 1.0, pbar);
        };
        const SoftDpSolution sol = solve(n);

        // V*^(i) = tau log E_pbar exp(Q*^(i)/tau), and evaluating pi* by the
        // plain policy recursion reproduces V*.
        const PolicyEvaluation ev = evaluate_policy(mdp, sol.pi_star, pbar, tau);
        for (int i = 1; i <= n; ++i)
            for (int s = 0; s < S; ++s) {
                std::span<const double> q(sol.q_star[i].data() + static_cast<std::size_t>(s) * A, A);
                lse_err = std::max(lse_err, std::abs(sol.v_star[i][s] - soft_value(q, pbar.row(s), tau)));
                lse_err = std::max(lse_err, std::abs(ev.value(i, s) - sol.v_star[i][s]));
            }

        std::vector<PolicyTable> steps;
        for (int i = 0; i < n; ++i) steps.push_back(random_policy_table(S, A, rng));
        for (double gamma : {1.0, 0.9}) {
            const ValueGap vg = value_gap(mdp, steps, pbar, tau, gamma, std::numeric_limits<double>::infinity());
            gap_err = std::max(gap_err, vg.max_mismatch);
        }

        for (int m = 1; m < n; ++m) {
            const SoftDpSolution cut = truncate(sol, m);
            const SoftDpSolution direct = solve(m);
            for (int i = 1; i <= m; ++i) trunc_err = std::max(trunc_err, cut.policy(i).max_abs_diff(direct.policy(i)));
        }
    }
    r.pass = lse_err <= kLseTol && gap_err <= kValueGapTol && trunc_err <= kTruncationTol;
    std::ostringstream os;
    os << count << " MDPs: log-sum-exp err " << lse_err << " (tol " << kLseTol << "), value-gap err " << gap_err
       << " (tol " << kValueGapTol << "), truncation err " << trunc_err << " (tol " << kTruncationTol << ")";
    r.detail = describe(os);
    return r;
}

CheckResult check_gradient_theorem(int count, std::uint64_t seed) {
    CheckResult r;
    r.name = "policy gradient theorem";
    double worst = 0.0;
    for (int c = 0; c < count; ++c) {
        RandomSource rng(RandomSource::derive_seed(seed, c));
        const FiniteMdp mdp = random_mdp(3, 2, rng);
        const double tau = c % 2 == 0 ? 0.5 : 1.0;
        ExtendedPolicy policy = random_tabular_policy(3, 2, 3, tau, rng, 0.5);
        const auto grad = ideal_gradient(mdp, policy);
        std::vector<std::vector<double>> fd(3);
        double scale = 0.0;
        for (int i = 1; i <= 3; ++i) {
            auto& theta = policy.step(i).theta();
            for (std::size_t k = 0; k < theta.size(); ++k) {
                const double keep = theta[k];
                theta[k] = keep + kFdStep;
                const double up = objective(mdp, policy.tables(), policy.baseline(), tau);
                theta[k] = keep - kFdStep;
                const double down = objective(mdp, policy.tables(), policy.baseline(), tau);
                theta[k] = keep;
                fd[i - 1].push_back((up - down) / (2.0 * kFdStep));
                scale = std::max(scale, std::abs(fd[i - 1].back()));
            }
        }
        // Relative to the component, floored at 1e-4 of the largest component
        // so exact zeros do not divide by zero.
        for (int i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < fd[i].size(); ++k) {
                const double denom = std::max(std::abs(fd[i][k]), 1e-4 * scale);
                worst = std::max(worst, std::abs(grad[i][k] - fd[i][k]) / denom);
            }
    }
    r.pass = worst < kGradientRelTol;
    std::ostringstream os;
    os << count << " MDPs (3 states, 2 actions, n=3): max relative error " << worst << " (tol " << kGradientRelTol
       << ")";
    r.detail = describe(os);
    return r;
}

CheckResult check_unbiasedness(int samples, std::uint64_t seed) {
    CheckResult r;
    r.name = "sampled update unbiased";
    RandomSource rng(seed);
    const FiniteMdp mdp = random_mdp(3, 2, rng);
    const double tau = 0.7;
    const LinearPolicyModel model(random_tabular_policy(3, 2, 3, tau, rng, 0.5));
    const auto obs = index_obs(3);
    const auto exact = ideal_gradient(mdp, model, obs);
    RandomSource path_rng(RandomSource::derive_seed(seed, 1));
    const ZStats z = mc_zscores(model, exact, samples, [&] {
        return compute_sampled_update(model, sample_episode(mdp, model, path_rng), 1.0, tau).delta;
    });
    r.pass = z.max_abs_z < kZLimit;
    std::ostringstream os;
    os << samples << " paths: max |z| per block";
    for (double b : z.block_max_z) os << ' ' << b;
    os << " (limit " << kZLimit << ")";
    r.detail = describe(os);
    return r;
}

CheckResult check_multi_update_mean(int samples, std::uint64_t seed) {
    CheckResult r;
    r.name = "multi update expectation";
    RandomSource rng(seed);
    const FiniteMdp mdp = random_mdp(3, 2, rng);
    const double tau = 0.7;
    const LinearPolicyModel model(random_tabular_policy(3, 2, 3, tau, rng, 0.2));
    const auto obs = index_obs(3);
    const auto exact = multi_update_mean(mdp, model, obs);
    RandomSource path_rng(RandomSource::derive_seed(seed, 1));
    const ZStats z = mc_zscores(model, exact, samples, [&] {
        return compute_multi_update(model, sample_episode(mdp, model, path_rng), 1.0, tau,
                                    std::numeric_limits<double>::infinity())
            .delta;
    });
    r.pass = z.max_abs_z < kZLimit;
    std::ostringstream os;
    os << samples << " paths, no clipping: max |z| per block";
    for (double b : z.block_max_z) os << ' ' << b;
    os << " (limit " << kZLimit << ")";
    r.detail = describe(os);
    return r;
}

CheckResult check_global_optimality(int count, std::uint64_t seed) {
    CheckResult r;
    r.name = "global optimality certificate";
    const int S = 4, A = 3, n = 3;
    const double tau = 0.5;
    const double eta = 2.0;
    const int max_iterations = 200000;
    const auto obs = index_obs(S);
    double worst_error = 0.0, worst_residual = 0.0, weakest_perturbed = std::numeric_limits<double>::infinity();
    int worst_iterations = 0, converged = 0, certified = 0, rejected = 0;
    for (int c = 0; c < count; ++c) {
        RandomSource rng(RandomSource::derive_seed(seed, c));
        const FiniteMdp mdp = random_mdp(S, A, rng);
        const PolicyTable pbar = PolicyTable::uniform(S, A);
        const SoftDpSolution oracle = solve_optimal(mdp, n, tau, 1.0, pbar);
        LinearPolicyModel model(random_tabular_policy(S, A, n, tau, rng, 0.0));

        // Ideal updates with a fixed step until the update vanishes.
        int it = 0;
        for (; it < max_iterations; ++it) {
            auto g = ideal_gradient(mdp, model, obs);
            double top = 0.0;
            for (double& x : g) {
                x *= eta;
                top = std::max(top, std::abs(x));
            }
            if (top < 1e-13) break;
            model.add_to_parameters(g);
        }
        worst_iterations = std::max(worst_iterations, it);
        const ExtendedPolicy& trained = model.policy();
        double err = 0.0;
        for (int i = 1; i <= n; ++i) err = std::max(err, trained.step(i).as_table().max_abs_diff(oracle.policy(i)));
        worst_error = std::max(worst_error, err);
        if (err < kPolicyErrorTol) ++converged;

        const GramSpectrum spectrum = feature_spectrum(trained.features());
        bool all_pass = true;
        for (int m = 1; m <= n; ++m) {
            const CertificateReport rep = certify(compute_d_map(mdp, trained, oracle, m), spectrum,
                                                  trained.step(m).as_table(), oracle.policy(m), kResidualTol);
            worst_residual = std::max(worst_residual, rep.residual_max);
            all_pass = all_pass && rep.pass;
        }
        if (all_pass) ++certified;

        ExtendedPolicy perturbed = trained;
        for (int i = 1; i <= n; ++i)
            for (double& t : perturbed.step(i).theta()) t += rng.uniform() < 0.5 ? -kPerturbation : kPerturbation;
        double perturbed_residual = 0.0;
        bool any_fail = false;
        for (int m = 1; m <= n; ++m) {
            const CertificateReport rep = certify(compute_d_map(mdp, perturbed, oracle, m), spectrum,
                                                  perturbed.step(m).as_table(), oracle.policy(m), kResidualTol);
            perturbed_residual = std::max(perturbed_residual, rep.residual_max);
            any_fail = any_fail || !rep.pass;
        }
        weakest_perturbed = std::min(weakest_perturbed, perturbed_residual);
        if (any_fail) ++rejected;
    }
    r.pass = converged == count && certified == count && rejected == count;
    std::ostringstream os;
    os << count << " MDPs (4 states, 3 actions, n=3, tau=0.5): converged " << converged << ", certified " << certified
       << ", perturbed rejected " << rejected << "; max policy error " << worst_error << " (tol " << kPolicyErrorTol
       << "), max residual " << worst_residual << " (tol " << kResidualTol << "), smallest perturbed residual "
       << weakest_perturbed << ", iterations <= " << worst_iterations;
    r.detail = describe(os);
    return r;
}

CheckResult check_horizon_limit(int count, std::uint64_t seed) {
    CheckResult r;
    r.name = "horizon extension limit";
    const double gamma = 0.9;
    const double tau = 0.5;
    const int n_max = 60;
    double worst_final = 0.0, worst_rise = 0.0;
    for (int c = 0; c < count; ++c) {
        RandomSource rng(RandomSource::derive_seed(seed, c));
        const int S = 3 + static_cast<int>(rng.next() % 4);
        const int A = 2 + static_cast<int>(rng.next() % 3);
        const FiniteMdp mdp = random_mdp(S, A, rng);
        const PolicyTable pbar = PolicyTable::uniform(S, A);
        const InfiniteHorizonSolution inf = solve_infinite_discounted(mdp, tau, gamma, 1e-15, pbar);
        const SoftDpSolution sol = solve_optimal(mdp, n_max, tau, gamma, pbar);
        std::vector<double> dist(n_max + 1, 0.0);
        for (int n = 1; n <= n_max; ++n) {
            const PolicyTable& p = sol.policy(n);
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) dist[n] += std::abs(p(s, a) - inf.policy(s, a));
        }
        worst_final = std::max(worst_final, dist[n_max]);
        for (int n = 5; n < n_max; ++n) worst_rise = std::max(worst_rise, dist[n + 1] - dist[n]);
    }
    r.pass = worst_final < kHorizonL1Tol && worst_rise <= kMonotoneSlack;
    std::ostringstream os;
    os << count << " MDPs (gamma=0.9, tau=0.5): max ||pi_60 - pi_inf||_1 " << worst_final << " (tol " << kHorizonL1Tol
       << "), largest increase for n>=5 " << worst_rise << " (slack " << kMonotoneSlack << ")";
    r.detail = describe(os);
    return r;
}

CheckResult check_neural(std::uint64_t seed, int width) {
    CheckResult r;
    r.name = "neural gradients and NTK";
    const FrozenLake lake(FrozenLakeSpec::standard4x4());
    const auto observations = lake.all_observations();

    // Backprop against central differences on 100 random coordinates.
    NeuralConfig small;
    small.hidden = {16, 16};
    small.seed = seed;
    NeuralPolicyModel net(5, 4, lake.state_dim(), 0.5, small);
    RandomSource rng(RandomSource::derive_seed(seed, 7));
    // Move off the zero-bias init so every parameter matters.
    {
        auto p = net.parameters();
        for (double& x : p) x += 0.1 * rng.normal();
        net.set_parameters(p);
    }
    double worst_fd = 0.0;
    const double h = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        const int i = 1 + static_cast<int>(rng.next() % 5);
        const int a = static_cast<int>(rng.next() % 4);
        const Observation& obs = observations[rng.next() % observations.size()];
        const auto grad = net.grad_preference(i, a, obs);
        const std::size_t k = rng.next() % grad.size();
        auto p = net.parameters();
        const double keep = p[k];
        p[k] = keep + h;
        net.set_parameters(p);
        const double up = net.preference(i, a, obs);
        p[k] = keep - h;
        net.set_parameters(p);
        const double down = net.preference(i, a, obs);
        p[k] = keep;
        net.set_parameters(p);
        const double fd = (up - down) / (2.0 * h);
        worst_fd = std::max(worst_fd, std::abs(fd - grad[k]) / std::max({std::abs(fd), std::abs(grad[k]), 1e-6}));
    }

    // NTK of a wide network at random init over all 64 (a, s) pairs.
    NeuralConfig wide;
    wide.hidden = {width, width};
    wide.seed = RandomSource::derive_seed(seed, 11);
    const NeuralPolicyModel big(10, 4, lake.state_dim(), 0.5, wide);
    std::vector<NtkPoint> points;
    for (const auto& obs : observations)
        for (int a = 0; a < 4; ++a) points.push_back({a, obs});
    const NtkGram ntk = ntk_gram(big, 10, points, kNtkPsdTol);
    const bool psd = ntk.min_eig >= -kNtkPsdTol * ntk.max_eig;
    const bool positive = ntk.min_eig > kNtkRoundoff * ntk.max_eig;

    r.pass = worst_fd < kNeuralFdRelTol && psd && positive;
    std::ostringstream os;
    os << "backprop vs finite differences max rel err " << worst_fd << " (tol " << kNeuralFdRelTol << "); NTK width "
       << width << " on " << points.size() << " pairs: min eig " << ntk.min_eig << ", max eig " << ntk.max_eig
       << ", ratio " << ntk.min_eig / ntk.max_eig << " (round-off floor " << kNtkRoundoff
       << "; relative cut " << kNtkPsdTol << (ntk.pass ? " met)" : " not met)");
    r.detail = describe(os);
    return r;
}

CheckResult check_frozenlake_paths() {
    CheckResult r;
    r.name = "frozenlake shortest paths";
    const int p4 = lake_shortest_path(FrozenLakeSpec::standard4x4());
    const int p8 = lake_shortest_path(FrozenLakeSpec::standard8x8());
    const bool valid = validate(frozenlake_as_mdp(FrozenLakeSpec::standard4x4())).valid() &&
                       validate(frozenlake_as_mdp(FrozenLakeSpec::standard8x8())).valid();
    r.pass = p4 == 6 && p8 == 14 && valid;
    r.detail = "4x4: " + std::to_string(p4) + " (expect 6), 8x8: " + std::to_string(p8) + " (expect 14)" +
               (valid ? "" : ", exported MDP invalid");
    return r;
}

CheckResult check_determinism(std::uint64_t seed) {
    CheckResult r;
    r.name = "experiment determinism";
    ExperimentSpec spec;
    spec.name = "determinism";
    spec.environment = {{"id", "frozenlake"}, {"size", 4}};
    spec.policy.kind = PolicySpec::Kind::Tabular;
    spec.policy.feature_scale = 3.0;
    spec.train.episodes = 60;
    spec.train.eta_terminal = 1e-4;
    spec.train.tau_terminal = 0.1;
    spec.train.objective_interval = 10;
    spec.tau0_grid = {0.4};
    spec.eta0_grid = {1e-3, 5e-3};
    spec.horizon_grid = {10};
    spec.agents = 3;
    spec.eval_games = 10;
    spec.seed = seed;
    auto render = [&](int workers) {
        const ExperimentResult res = run_experiment(spec, workers);
        std::ostringstream os;
        write_results_csv(os, res.rows);
        write_agents_csv(os, res.rows);
        for (const auto& a : res.artifacts) os << a.train_log_csv << a.checkpoint.dump();
        return os.str();
    };
    const std::string first = render(1);
    const std::string second = render(2);
    r.pass = first == second && !first.empty();
    r.detail = r.pass ? "identical output (" + std::to_string(first.size()) + " bytes, 1 vs 2 workers)"
                      : "outputs differ between runs";
    return r;
}

std::vector<CheckResult> verify_suite(VerifyLevel level, const std::function<void(const CheckResult&)>& on_result) {
    const bool full = level == VerifyLevel::Full;
    const std::uint64_t seed = 20240601;
    std::vector<std::function<CheckResult()>> checks{
        [&] { return check_dp_identities(25, seed); },
        [&] {
            // Mutation run: the corrupted recursion must be caught.
            CheckResult m = check_dp_identities(5, seed, DpFault::HardMax);
            m.name = "dp fault injection detected";
            m.pass = !m.pass;
            m.detail = (m.pass ? "hard-max recursion rejected: " : "hard-max recursion NOT rejected: ") + m.detail;
            return m;
        },
        [&] { return check_gradient_theorem(10, seed + 1); },
        [&] { return check_unbiasedness(full ? 100000 : 20000, seed + 2); },
        [&] { return check_multi_update_mean(full ? 100000 : 20000, seed + 3); },
        [&] { return check_global_optimality(full ? 10 : 3, seed + 4); },
        [&] { return check_horizon_limit(5, seed + 5); },
        [&] { return check_neural(seed + 6, full ? 256 : 128); },
        [] { return check_frozenlake_paths(); },
        [&] { return check_determinism(seed + 7); },
    };
    std::vector<CheckResult> out;
    for (const auto& check : checks) {
        CheckResult res = timed([&] {
            try {
                return check();
            } catch (const std::exception& e) {
                return CheckResult{"(check threw)", false, e.what(), 0.0};
            }
        });
        if (on_result) on_result(res);
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace mpg
