#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mpg/environments.hpp"
#include "mpg/finite_mdp.hpp"
#include "mpg/policy_model.hpp"
#include "mpg/softmax_policy.hpp"

namespace mpg {

enum class UpdateVariant { Sampled, Ideal, Multi };

std::string to_string(UpdateVariant variant);
UpdateVariant update_variant_from_string(const std::string& name);

/// One played path, as seen by the learner. observations has length() + 1
/// entries. An episode may stop before `horizon` at a terminal event; the
/// remaining steps are treated as padding that carries zero reward, zero
/// log-ratio and no gradient.
struct Episode {
    int horizon = 0;
    std::vector<Observation> observations;
    std::vector<int> actions;
    std::vector<double> rewards;
    /// log(pi / pbar) of the chosen action under the step policy that chose it.
    std::vector<double> log_ratios;
    bool terminated = false;
    bool success = false;

    int length() const { return static_cast<int>(actions.size()); }
    double total_reward() const;
};

/// Plays one episode of at most `horizon` steps; the (horizon - k)-step
/// policy chooses the k-th action.
Episode run_episode(const Environment& env, const PolicyModel& model, int horizon, RandomSource& rng);

/// Full-length path on a finite MDP (terminal states stay absorbing and are
/// not cut), annotated with the model's log-ratios.
Episode sample_episode(const FiniteMdp& mdp, const PolicyModel& model, RandomSource& rng);

/// Wraps a finite-MDP trajectory, annotating log-ratios under `model`.
Episode to_episode(const Trajectory& traj, const PolicyModel& model);

/// Practical baseline v_t subtracted from each return; receives the number
/// of remaining steps i and the observation at which pi^(i) acted.
using BaselineFn = std::function<double(int steps_left, const Observation& obs)>;

/// Parameter change proposed by one update, in the model's flat coordinates.
struct UpdateRecord {
    std::vector<double> delta;
    /// block_ranges[i-1] locates the parameters of pi^(i) in delta.
    std::vector<std::pair<std::size_t, std::size_t>> block_ranges;
    /// returns[i-1]: C_i for the sampled variant, sum_k rho_{i,k} C_{k,i} for
    /// the multi variant, 0 for the ideal variant.
    std::vector<double> returns;
    /// norms[i-1]: Euclidean norm of the contribution of step i.
    std::vector<double> norms;
    /// Importance weights clipped at the ceiling (multi variant).
    std::uint64_t clipped = 0;

    std::span<const double> step_delta(int i) const {
        const auto [offset, len] = block_ranges.at(i - 1);
        return std::span<const double>(delta).subspan(offset, len);
    }
};

/// theta^(i) += eta C_i grad log pi^(i)(A_{n-i} | S_{n-i}), with
/// C_i = sum_{l = n-i}^{n-1} [R_l - tau log(pi^(n-l)/pbar)(A_l | S_l)].
UpdateRecord compute_sampled_update(const PolicyModel& model, const Episode& episode, double eta, double tau,
                                    const BaselineFn& baseline = {});

/// Reuses every window of the path for every step policy:
///   theta^(i) += eta sum_{k=0}^{n-i} rho_{i,k} C_{k,i} grad log pi^(i)(A_k | S_k)
/// with rho_{i,k} the likelihood ratio of the window [k, k+i) under
/// (pi^(i), ..., pi^(1)) against the policies that actually acted. Weights
/// above `clip_ceiling` are clipped and counted.
UpdateRecord compute_multi_update(const PolicyModel& model, const Episode& episode, double eta, double tau,
                                  double clip_ceiling = 10.0);

/// Exact gradient of J_n over a finite MDP, with `observations[s]` the
/// model's view of state s:
///   grad_i = gamma^{n-i} sum_s m^(i)(s) sum_a pi^(i) [Q^(i) - tau log(pi^(i)/pbar) - V^(i)] grad log pi^(i),
/// m^(i) the law of S_{n-i}.
std::vector<double> ideal_gradient(const FiniteMdp& mdp, const PolicyModel& model,
                                   std::span<const Observation> observations, double gamma = 1.0);

/// Exact expectation of compute_multi_update (without clipping, eta = 1):
///   sum_{k=0}^{n-i} sum_s m_k(s) sum_a pi^(i) [Q^(i) - tau log(pi^(i)/pbar)] grad log pi^(i),
/// with m_k the law of S_k under the acting policy.
std::vector<double> multi_update_mean(const FiniteMdp& mdp, const PolicyModel& model,
                                      std::span<const Observation> observations);

void apply_update(PolicyModel& model, const UpdateRecord& update);

// Finite-MDP conveniences over linear extended policies. Each applies the
// update in place and returns what was applied.
UpdateRecord mpg_sampled_update(ExtendedPolicy& policy, const Trajectory& traj, double eta, double tau);
UpdateRecord mpg_multi_update(ExtendedPolicy& policy, const Trajectory& traj, double eta, double tau,
                              double clip_ceiling = 10.0);
UpdateRecord mpg_ideal_update(const FiniteMdp& mdp, ExtendedPolicy& policy, double eta, double tau);

/// grad J_n split per step: out[i-1] is the gradient for theta^(i).
std::vector<std::vector<double>> ideal_gradient(const FiniteMdp& mdp, const ExtendedPolicy& policy,
                                                double gamma = 1.0);
std::vector<std::vector<double>> multi_update_mean(const FiniteMdp& mdp, const ExtendedPolicy& policy);

/// Per-episode multiplier d = (x_T / x_0)^(1/episodes).
double decay_schedule(double x0, double x_terminal, int episodes);

struct TrainConfig {
    int horizon = 1;
    int episodes = 1;
    double eta0 = 1e-3;
    double eta_terminal = 1e-3;
    double tau0 = 1.0;
    double tau_terminal = 1.0;
    UpdateVariant variant = UpdateVariant::Sampled;
    std::uint64_t seed = 0;
    /// Paths averaged per update.
    int batch = 1;
    double clip_ceiling = 10.0;
    double divergence_threshold = 1e6;
    /// Exact J_n is logged every this many episodes when a finite model
    /// exists; 0 disables it.
    int objective_interval = 1;
    BaselineFn baseline;

    /// Throws Error on an invalid configuration.
    void validate() const;
};

struct TrainLogRow {
    int episode = 0;
    double j_estimate = 0.0;  // NaN when not computed
    double cum_reward = 0.0;
    double eta = 0.0;
    double tau = 0.0;
    std::vector<double> update_norms;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    bool diverged = false;
    std::string diagnostic;
    std::uint64_t clipped = 0;

    /// episode,J_estimate,cum_reward,eta,tau,norm_1..norm_n
    void write_csv(std::ostream& out) const;
};

/// Algorithm loop: per episode, play one path (or `batch` paths) under the
/// current policy, apply the configured update, then decay eta and tau.
/// Stops early, with diverged set, if a parameter leaves
/// [-divergence_threshold, divergence_threshold] or becomes non-finite.
TrainLog train(const Environment& env, PolicyModel& model, const TrainConfig& config);

/// Same loop on a finite MDP with full-length paths.
TrainLog train(const FiniteMdp& mdp, PolicyModel& model, const TrainConfig& config);
TrainLog train(const FiniteMdp& mdp, ExtendedPolicy& policy, const TrainConfig& config);

}  // namespace mpg
