#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpg/policy_table.hpp"
#include "mpg/random.hpp"

namespace mpg {

/// Finite Markov decision process with dense transition tensor p[s][a][s'],
/// mean rewards r(a,s), an initial state law and optional absorbing terminal
/// states. Treated as immutable once built; share it freely across threads.
class FiniteMdp {
public:
    FiniteMdp() = default;
    FiniteMdp(int n_states, int n_actions);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }

    double transition(int s, int a, int next) const { return transition_[tindex(s, a, next)]; }
    void set_transition(int s, int a, int next, double p) { transition_[tindex(s, a, next)] = p; }
    std::span<const double> transition_row(int s, int a) const {
        return {transition_.data() + tindex(s, a, 0), static_cast<std::size_t>(n_states_)};
    }
    std::span<double> transition_row(int s, int a) {
        return {transition_.data() + tindex(s, a, 0), static_cast<std::size_t>(n_states_)};
    }

    /// Mean reward r(a,s) after taking `a` in `s`.
    double reward(int s, int a) const { return reward_[rindex(s, a)]; }
    void set_reward(int s, int a, double r) { reward_[rindex(s, a)] = r; }

    /// Half-width of optional uniform reward noise around the mean; 0 means
    /// deterministic rewards.
    double reward_noise(int s, int a) const {
        return noise_.empty() ? 0.0 : noise_[rindex(s, a)];
    }
    void set_reward_noise(int s, int a, double half_width);

    const std::vector<double>& initial_dist() const { return initial_; }
    void set_initial_dist(std::vector<double> dist) { initial_ = std::move(dist); }

    bool is_terminal(int s) const { return terminal_[s] != 0; }
    /// Marks `s` absorbing: self-loop under every action with zero reward.
    void make_terminal(int s);
    std::vector<int> terminal_states() const;

    /// Declared reward bound R_max; defaults to max |r| + max noise.
    double reward_bound() const;

    /// One environment transition: (next state, sampled reward).
    std::pair<int, double> step(int s, int a, RandomSource& rng) const;

private:
    std::size_t tindex(int s, int a, int next) const {
        return (static_cast<std::size_t>(s) * n_actions_ + a) * n_states_ + next;
    }
    std::size_t rindex(int s, int a) const { return static_cast<std::size_t>(s) * n_actions_ + a; }

    int n_states_ = 0;
    int n_actions_ = 0;
    std::vector<double> transition_;
    std::vector<double> reward_;
    std::vector<double> noise_;
    std::vector<double> initial_;
    std::vector<char> terminal_;
};

struct ValidationReport {
    std::vector<std::string> violations;
    /// Reachability graph (s -> s' iff some action moves there with positive
    /// probability) is strongly connected.
    bool irreducible = false;

    bool valid() const { return violations.empty(); }
};

/// Checks every structural invariant, reporting each violation with its
/// location. Reducible MDPs are flagged, not rejected.
ValidationReport validate(const FiniteMdp& mdp, double tol = 1e-12);

struct StateDistribution {
    std::vector<double> probs;

    static StateDistribution point_mass(int n_states, int s);
    bool is_valid(double tol = 1e-12) const;
};

/// One step of the state law under a stationary policy:
/// d'(s') = sum_{s,a} d(s) pi(a|s) p(s,a,s').
StateDistribution propagate(const FiniteMdp& mdp, const StateDistribution& dist,
                            const PolicyTable& policy);

/// Law of S_k when following the extended policy `steps` (steps[i-1] is the
/// i-step policy) from the MDP's initial distribution, for k = 0..n.
std::vector<StateDistribution> state_laws(const FiniteMdp& mdp, std::span<const PolicyTable> steps);

struct Trajectory {
    std::vector<int> states;     // s_0 .. s_n
    std::vector<int> actions;    // a_0 .. a_{n-1}
    std::vector<double> rewards; // r_0 .. r_{n-1}

    int horizon() const { return static_cast<int>(actions.size()); }
    bool is_consistent() const {
        return states.size() == actions.size() + 1 && rewards.size() == actions.size();
    }
};

/// Samples a length-n path: a_k ~ steps[n-k-1](.|s_k), i.e. the (n-k)-step
/// policy chooses the k-th action.
Trajectory sample_trajectory(const FiniteMdp& mdp, std::span<const PolicyTable> steps,
                             RandomSource& rng);

nlohmann::json to_json(const FiniteMdp& mdp);
FiniteMdp finite_mdp_from_json(const nlohmann::json& j);

/// Random dense MDP used by the identity suites: Dirichlet(1)-like rows,
/// rewards uniform on [-1, 1], uniform initial law.
FiniteMdp random_mdp(int n_states, int n_actions, RandomSource& rng);

}  // namespace mpg
