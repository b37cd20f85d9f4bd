#include "mpg/finite_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mpg/error.hpp"

namespace mpg {

FiniteMdp::FiniteMdp(int n_states, int n_actions)
    : n_states_(n_states), n_actions_(n_actions) {
    if (n_states <= 0 || n_actions <= 0) throw Error("FiniteMdp: dimensions must be positive");
    transition_.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
    reward_.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    initial_.assign(n_states, 1.0 / n_states);
    terminal_.assign(n_states, 0);
}

void FiniteMdp::set_reward_noise(int s, int a, double half_width) {
    if (half_width < 0.0) throw Error("FiniteMdp: negative reward noise");
    if (noise_.empty()) noise_.assign(reward_.size(), 0.0);
    noise_[rindex(s, a)] = half_width;
}

void FiniteMdp::make_terminal(int s) {
    terminal_[s] = 1;
    for (int a = 0; a < n_actions_; ++a) {
        auto row = transition_row(s, a);
        std::fill(row.begin(), row.end(), 0.0);
        row[s] = 1.0;
        set_reward(s, a, 0.0);
        if (!noise_.empty()) noise_[rindex(s, a)] = 0.0;
    }
}

std::vector<int> FiniteMdp::terminal_states() const {
    std::vector<int> out;
    for (int s = 0; s < n_states_; ++s)
        if (terminal_[s]) out.push_back(s);
    return out;
}

double FiniteMdp::reward_bound() const {
    double bound = 0.0;
    for (std::size_t k = 0; k < reward_.size(); ++k)
        bound = std::max(bound, std::abs(reward_[k]) + (noise_.empty() ? 0.0 : noise_[k]));
    return bound;
}

std::pair<int, double> FiniteMdp::step(int s, int a, RandomSource& rng) const {
    const int next = rng.categorical(transition_row(s, a));
    double r = reward(s, a);
    const double w = reward_noise(s, a);
    if (w > 0.0) r += rng.uniform(-w, w);
    return {next, r};
}

ValidationReport validate(const FiniteMdp& mdp, double tol) {
    ValidationReport report;
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    auto complain = [&](auto&&... parts) {
        std::ostringstream os;
        (os << ... << parts);
        report.violations.push_back(os.str());
    };

    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            double total = 0.0;
            for (int t = 0; t < S; ++t) {
                const double p = mdp.transition(s, a, t);
                if (!std::isfinite(p) || p < 0.0)
                    complain("negative or non-finite probability p(", s, ",", a, ",", t, ") = ", p);
                total += p;
            }
            if (std::abs(total - 1.0) > tol) complain("row (", s, ",", a, ") sums to ", total);
            if (!std::isfinite(mdp.reward(s, a))) complain("reward r(", a, ",", s, ") is not finite");
        }
    }

    const auto& init = mdp.initial_dist();
    if (static_cast<int>(init.size()) != S) {
        complain("initial_dist has ", init.size(), " entries, expected ", S);
    } else {
        double total = 0.0;
        for (int s = 0; s < S; ++s) {
            if (!(init[s] >= 0.0)) complain("initial_dist[", s, "] = ", init[s], " is negative");
            total += init[s];
        }
        if (std::abs(total - 1.0) > tol) complain("initial_dist sums to ", total);
    }

    for (int s : mdp.terminal_states()) {
        for (int a = 0; a < A; ++a) {
            if (mdp.transition(s, a, s) != 1.0) complain("terminal state ", s, " does not self-loop under action ", a);
            if (mdp.reward(s, a) != 0.0) complain("terminal state ", s, " has non-zero reward under action ", a);
        }
    }

    // Strong connectivity: every state reaches every state. Forward and
    // backward reachability from state 0 must both cover the whole graph.
    auto covers_all = [&](bool forward) {
        std::vector<char> seen(S, 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int v = 0; v < S; ++v) {
                if (seen[v]) continue;
                bool edge = false;
                for (int a = 0; a < A && !edge; ++a)
                    edge = forward ? mdp.transition(u, a, v) > 0.0 : mdp.transition(v, a, u) > 0.0;
                if (edge) {
                    seen[v] = 1;
                    stack.push_back(v);
                }
            }
        }
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    };
    report.irreducible = covers_all(true) && covers_all(false);
    return report;
}

StateDistribution StateDistribution::point_mass(int n_states, int s) {
    StateDistribution d{std::vector<double>(n_states, 0.0)};
    d.probs[s] = 1.0;
    return d;
}

bool StateDistribution::is_valid(double tol) const {
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) return false;
        total += p;
    }
    return std::abs(total - 1.0) <= tol;
}

StateDistribution propagate(const FiniteMdp& mdp, const StateDistribution& dist,
                            const PolicyTable& policy) {
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    if (static_cast<int>(dist.probs.size()) != S || policy.n_states() != S || policy.n_actions() != A)
        throw Error("propagate: dimension mismatch");
    StateDistribution out{std::vector<double>(S, 0.0)};
    for (int s = 0; s < S; ++s) {
        if (dist.probs[s] == 0.0) continue;
        for (int a = 0; a < A; ++a) {
            const double w = dist.probs[s] * policy(s, a);
            if (w == 0.0) continue;
            auto row = mdp.transition_row(s, a);
            for (int t = 0; t < S; ++t) out.probs[t] += w * row[t];
        }
    }
    return out;
}

std::vector<StateDistribution> state_laws(const FiniteMdp& mdp, std::span<const PolicyTable> steps) {
    const int n = static_cast<int>(steps.size());
    std::vector<StateDistribution> laws;
    laws.reserve(n + 1);
    laws.push_back(StateDistribution{mdp.initial_dist()});
    for (int k = 0; k < n; ++k) laws.push_back(propagate(mdp, laws.back(), steps[n - k - 1]));
    return laws;
}

Trajectory sample_trajectory(const FiniteMdp& mdp, std::span<const PolicyTable> steps,
                             RandomSource& rng) {
    const int n = static_cast<int>(steps.size());
    if (n < 1) throw Error("sample_trajectory: horizon must be at least 1");
    Trajectory traj;
    traj.states.reserve(n + 1);
    traj.actions.reserve(n);
    traj.rewards.reserve(n);
    int s = rng.categorical(mdp.initial_dist());
    traj.states.push_back(s);
    for (int k = 0; k < n; ++k) {
        const int a = rng.categorical(steps[n - k - 1].row(s));
        auto [next, r] = mdp.step(s, a, rng);
        traj.actions.push_back(a);
        traj.rewards.push_back(r);
        traj.states.push_back(next);
        s = next;
    }
    return traj;
}

nlohmann::json to_json(const FiniteMdp& mdp) {
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    nlohmann::json transition = nlohmann::json::array();
    for (int s = 0; s < S; ++s) {
        nlohmann::json per_action = nlohmann::json::array();
        for (int a = 0; a < A; ++a) {
            auto row = mdp.transition_row(s, a);
            per_action.push_back(std::vector<double>(row.begin(), row.end()));
        }
        transition.push_back(std::move(per_action));
    }
    // mean_reward is indexed [a][s]
    nlohmann::json reward = nlohmann::json::array();
    for (int a = 0; a < A; ++a) {
        std::vector<double> col(S);
        for (int s = 0; s < S; ++s) col[s] = mdp.reward(s, a);
        reward.push_back(std::move(col));
    }
    return {{"n_states", S},
            {"n_actions", A},
            {"transition", std::move(transition)},
            {"mean_reward", std::move(reward)},
            {"initial_dist", mdp.initial_dist()},
            {"terminal", mdp.terminal_states()}};
}

FiniteMdp finite_mdp_from_json(const nlohmann::json& j) {
    try {
        const int S = j.at("n_states").get<int>();
        const int A = j.at("n_actions").get<int>();
        FiniteMdp mdp(S, A);
        const auto& tr = j.at("transition");
        const auto& rw = j.at("mean_reward");
        if (static_cast<int>(tr.size()) != S) throw Error("mdp json: transition has wrong state count");
        if (static_cast<int>(rw.size()) != A) throw Error("mdp json: mean_reward has wrong action count");
        for (int s = 0; s < S; ++s) {
            if (static_cast<int>(tr[s].size()) != A) throw Error("mdp json: transition has wrong action count");
            for (int a = 0; a < A; ++a) {
                if (static_cast<int>(tr[s][a].size()) != S)
                    throw Error("mdp json: transition row has wrong length");
                for (int t = 0; t < S; ++t) mdp.set_transition(s, a, t, tr[s][a][t].get<double>());
            }
        }
        for (int a = 0; a < A; ++a) {
            if (static_cast<int>(rw[a].size()) != S) throw Error("mdp json: mean_reward row has wrong length");
            for (int s = 0; s < S; ++s) mdp.set_reward(s, a, rw[a][s].get<double>());
        }
        mdp.set_initial_dist(j.at("initial_dist").get<std::vector<double>>());
        if (j.contains("terminal"))
            for (int s : j.at("terminal").get<std::vector<int>>()) {
                if (s < 0 || s >= S) throw Error("mdp json: terminal index out of range");
                mdp.make_terminal(s);
            }
        return mdp;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("mdp json: ") + e.what());
    }
}

FiniteMdp random_mdp(int n_states, int n_actions, RandomSource& rng) {
    FiniteMdp mdp(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            auto row = mdp.transition_row(s, a);
            double total = 0.0;
            for (auto& p : row) {
                p = -std::log(1.0 - rng.uniform());
                total += p;
            }
            for (auto& p : row) p /= total;
            mdp.set_reward(s, a, rng.uniform(-1.0, 1.0));
        }
    }
    return mdp;
}

}  // namespace mpg
