#include "mpg/train.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "mpg/error.hpp"
#include "mpg/soft_dp.hpp"

namespace mpg {

std::string to_string(UpdateVariant variant) {
    switch (variant) {
        case UpdateVariant::Sampled: return "sampled";
        case UpdateVariant::Ideal: return "ideal";
        case UpdateVariant::Multi: return "multi";
    }
    return "unknown";
}

UpdateVariant update_variant_from_string(const std::string& name) {
    if (name == "sampled") return UpdateVariant::Sampled;
    if (name == "ideal") return UpdateVariant::Ideal;
    if (name == "multi") return UpdateVariant::Multi;
    throw Error("unknown update variant '" + name + "'");
}

double Episode::total_reward() const {
    double total = 0.0;
    for (double r : rewards) total += r;
    return total;
}

namespace {

double log_ratio(const std::vector<double>& pi, const std::vector<double>& baseline, int a) {
    return std::log(pi[a] / baseline[a]);
}

void check_tau(const PolicyModel& model, double tau) {
    if (!(tau > 0.0)) throw Error("temperature must be positive");
    if (std::abs(tau - model.tau()) > 1e-12 * std::max(1.0, tau))
        throw Error("update temperature differs from the policy's temperature");
}

UpdateRecord empty_record(const PolicyModel& model) {
    UpdateRecord rec;
    const int n = model.horizon();
    rec.delta.assign(model.parameter_count(), 0.0);
    rec.returns.assign(n, 0.0);
    rec.norms.assign(n, 0.0);
    for (int i = 1; i <= n; ++i) rec.block_ranges.push_back(model.block_range(i));
    return rec;
}

/// Adds scale * grad log pi^(i)(a|obs) to rec.delta and records its norm.
void add_term(const PolicyModel& model, int i, int a, const Observation& obs, double scale,
              std::vector<double>& scratch, UpdateRecord& rec) {
    if (scale == 0.0) return;
    const auto [offset, len] = rec.block_ranges[i - 1];
    std::fill(scratch.begin() + offset, scratch.begin() + offset + len, 0.0);
    model.accumulate_grad_log_policy(i, a, obs, scale, scratch);
    double sq = 0.0;
    for (std::size_t k = offset; k < offset + len; ++k) {
        sq += scratch[k] * scratch[k];
        rec.delta[k] += scratch[k];
    }
    rec.norms[i - 1] = std::sqrt(rec.norms[i - 1] * rec.norms[i - 1] + sq);
}

void check_episode(const PolicyModel& model, const Episode& episode) {
    if (episode.horizon != model.horizon()) throw Error("episode horizon differs from the policy horizon");
    const std::size_t L = episode.actions.size();
    if (episode.rewards.size() != L || episode.log_ratios.size() != L || episode.observations.size() != L + 1 ||
        static_cast<int>(L) > episode.horizon)
        throw Error("malformed episode");
}

std::vector<Observation> index_observations(int n_states) {
    std::vector<Observation> out(n_states);
    for (int s = 0; s < n_states; ++s) out[s].index = s;
    return out;
}

PolicyTable baseline_table(const PolicyModel& model, std::span<const Observation> observations) {
    PolicyTable t(static_cast<int>(observations.size()), model.n_actions());
    for (std::size_t s = 0; s < observations.size(); ++s) {
        const auto row = model.baseline(observations[s]);
        std::copy(row.begin(), row.end(), t.row(static_cast<int>(s)).begin());
    }
    return t;
}

/// sum_a pi^(i) [Q^(i) - tau log(pi^(i)/pbar) - centre * V^(i)] grad log pi^(i)
/// weighted per state by `mass`, accumulated into `grad` for every step.
std::vector<double> weighted_policy_gradient(const FiniteMdp& mdp, const PolicyModel& model,
                                             std::span<const Observation> observations, double gamma,
                                             bool use_multi_mass, bool centre) {
    const int n = model.horizon();
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    if (static_cast<int>(observations.size()) != S) throw Error("need one observation per MDP state");
    if (model.n_actions() != A) throw Error("policy and MDP action counts differ");
    const auto tables = policy_tables(model, observations);
    const PolicyTable pbar = baseline_table(model, observations);
    const auto laws = state_laws(mdp, tables);
    const double tau = model.tau();
    const PolicyEvaluation ev = evaluate_policy(mdp, tables, pbar, tau, gamma);

    std::vector<double> grad(model.parameter_count(), 0.0);
    std::vector<double> mass(S);
    for (int i = 1; i <= n; ++i) {
        if (use_multi_mass) {
            std::fill(mass.begin(), mass.end(), 0.0);
            for (int k = 0; k <= n - i; ++k)
                for (int s = 0; s < S; ++s) mass[s] += laws[k].probs[s];
        } else {
            const double w = std::pow(gamma, n - i);
            for (int s = 0; s < S; ++s) mass[s] = w * laws[n - i].probs[s];
        }
        const PolicyTable& pi = tables[i - 1];
        for (int s = 0; s < S; ++s) {
            if (mass[s] == 0.0) continue;
            const double v = centre ? ev.value(i, s) : 0.0;
            for (int a = 0; a < A; ++a) {
                const double p = pi(s, a);
                const double adv = ev.q_value(i, s, a) - tau * std::log(p / pbar(s, a)) - v;
                model.accumulate_grad_log_policy(i, a, observations[s], mass[s] * p * adv, grad);
            }
        }
    }
    return grad;
}

std::vector<std::vector<double>> split_blocks(const PolicyModel& model, const std::vector<double>& flat) {
    std::vector<std::vector<double>> out;
    for (int i = 1; i <= model.horizon(); ++i) {
        const auto [offset, len] = model.block_range(i);
        out.emplace_back(flat.begin() + offset, flat.begin() + offset + len);
    }
    return out;
}

}  // namespace

Episode run_episode(const Environment& env, const PolicyModel& model, int horizon, RandomSource& rng) {
    if (horizon < 1 || horizon > model.horizon()) throw Error("run_episode: horizon out of range");
    if (env.action_count() != model.n_actions()) throw Error("run_episode: action counts differ");
    Episode ep;
    ep.horizon = horizon;
    EnvState state = env.reset(rng);
    ep.observations.push_back(env.observe(state));
    for (int k = 0; k < horizon; ++k) {
        const Observation& obs = ep.observations.back();
        const auto pi = model.action_distribution(horizon - k, obs);
        const int a = rng.categorical(pi);
        ep.log_ratios.push_back(log_ratio(pi, model.baseline(obs), a));
        StepResult res = env.step(state, a, rng);
        ep.actions.push_back(a);
        ep.rewards.push_back(res.reward);
        state = std::move(res.next);
        ep.observations.push_back(env.observe(state));
        if (res.terminal) {
            ep.terminated = true;
            ep.success = res.success;
            break;
        }
    }
    if (!ep.terminated) ep.success = env.success_on_timeout();
    return ep;
}

Episode sample_episode(const FiniteMdp& mdp, const PolicyModel& model, RandomSource& rng) {
    if (model.n_actions() != mdp.n_actions()) throw Error("sample_episode: action counts differ");
    const int n = model.horizon();
    Episode ep;
    ep.horizon = n;
    int s = rng.categorical(mdp.initial_dist());
    ep.observations.push_back({s, {}});
    for (int k = 0; k < n; ++k) {
        const Observation& obs = ep.observations.back();
        const auto pi = model.action_distribution(n - k, obs);
        const int a = rng.categorical(pi);
        ep.log_ratios.push_back(log_ratio(pi, model.baseline(obs), a));
        auto [next, r] = mdp.step(s, a, rng);
        ep.actions.push_back(a);
        ep.rewards.push_back(r);
        ep.observations.push_back({next, {}});
        s = next;
    }
    return ep;
}

Episode to_episode(const Trajectory& traj, const PolicyModel& model) {
    if (!traj.is_consistent()) throw Error("to_episode: inconsistent trajectory");
    const int n = traj.horizon();
    if (n != model.horizon()) throw Error("to_episode: trajectory horizon differs from the policy horizon");
    Episode ep;
    ep.horizon = n;
    ep.actions = traj.actions;
    ep.rewards = traj.rewards;
    for (int s : traj.states) ep.observations.push_back({s, {}});
    for (int k = 0; k < n; ++k) {
        const auto& obs = ep.observations[k];
        ep.log_ratios.push_back(log_ratio(model.action_distribution(n - k, obs), model.baseline(obs), traj.actions[k]));
    }
    return ep;
}

UpdateRecord compute_sampled_update(const PolicyModel& model, const Episode& episode, double eta, double tau,
                                    const BaselineFn& baseline) {
    check_tau(model, tau);
    check_episode(model, episode);
    const int n = model.horizon();
    const int L = episode.length();
    UpdateRecord rec = empty_record(model);

    // suffix[t] = sum_{l >= t} (R_l - tau log-ratio_l)
    std::vector<double> suffix(L + 1, 0.0);
    for (int t = L - 1; t >= 0; --t)
        suffix[t] = suffix[t + 1] + episode.rewards[t] - tau * episode.log_ratios[t];

    std::vector<double> scratch(rec.delta.size(), 0.0);
    for (int i = 1; i <= n; ++i) {
        const int t = n - i;
        if (t >= L) continue;
        const Observation& obs = episode.observations[t];
        rec.returns[i - 1] = suffix[t];
        const double coeff = suffix[t] - (baseline ? baseline(i, obs) : 0.0);
        add_term(model, i, episode.actions[t], obs, eta * coeff, scratch, rec);
    }
    return rec;
}

UpdateRecord compute_multi_update(const PolicyModel& model, const Episode& episode, double eta, double tau,
                                  double clip_ceiling) {
    check_tau(model, tau);
    check_episode(model, episode);
    if (!(clip_ceiling > 0.0)) throw Error("clip ceiling must be positive");
    const int n = model.horizon();
    const int L = episode.length();
    UpdateRecord rec = empty_record(model);

    // log pi^(j)(A_t | S_t), filled on demand
    const double unset = std::numeric_limits<double>::infinity();
    std::vector<double> log_prob(static_cast<std::size_t>(n) * L, unset);
    std::vector<double> log_base(L);
    for (int t = 0; t < L; ++t)
        log_base[t] = std::log(model.baseline(episode.observations[t])[episode.actions[t]]);
    auto lp = [&](int j, int t) {
        double& slot = log_prob[static_cast<std::size_t>(j - 1) * L + t];
        if (slot == unset)
            slot = std::log(model.action_distribution(j, episode.observations[t])[episode.actions[t]]);
        return slot;
    };

    std::vector<double> scratch(rec.delta.size(), 0.0);
    for (int i = 1; i <= n; ++i) {
        for (int k = 0; k <= n - i && k < L; ++k) {
            double log_rho = 0.0;
            double c = 0.0;
            for (int l = 0; l < i && k + l < L; ++l) {
                const int t = k + l;
                const double target = lp(i - l, t);
                log_rho += target - lp(n - t, t);
                c += episode.rewards[t] - tau * (target - log_base[t]);
            }
            double rho = std::exp(log_rho);
            if (rho > clip_ceiling) {
                rho = clip_ceiling;
                ++rec.clipped;
            }
            rec.returns[i - 1] += rho * c;
            add_term(model, i, episode.actions[k], episode.observations[k], eta * rho * c, scratch, rec);
        }
    }
    return rec;
}

std::vector<double> ideal_gradient(const FiniteMdp& mdp, const PolicyModel& model,
                                   std::span<const Observation> observations, double gamma) {
    return weighted_policy_gradient(mdp, model, observations, gamma, false, true);
}

std::vector<double> multi_update_mean(const FiniteMdp& mdp, const PolicyModel& model,
                                      std::span<const Observation> observations) {
    return weighted_policy_gradient(mdp, model, observations, 1.0, true, false);
}

void apply_update(PolicyModel& model, const UpdateRecord& update) { model.add_to_parameters(update.delta); }

UpdateRecord mpg_sampled_update(ExtendedPolicy& policy, const Trajectory& traj, double eta, double tau) {
    LinearPolicyModel model(policy);
    UpdateRecord rec = compute_sampled_update(model, to_episode(traj, model), eta, tau);
    model.add_to_parameters(rec.delta);
    policy = model.policy();
    return rec;
}

UpdateRecord mpg_multi_update(ExtendedPolicy& policy, const Trajectory& traj, double eta, double tau,
                              double clip_ceiling) {
    LinearPolicyModel model(policy);
    UpdateRecord rec = compute_multi_update(model, to_episode(traj, model), eta, tau, clip_ceiling);
    model.add_to_parameters(rec.delta);
    policy = model.policy();
    return rec;
}

UpdateRecord mpg_ideal_update(const FiniteMdp& mdp, ExtendedPolicy& policy, double eta, double tau) {
    LinearPolicyModel model(policy);
    check_tau(model, tau);
    const auto obs = index_observations(mdp.n_states());
    UpdateRecord rec = empty_record(model);
    rec.delta = ideal_gradient(mdp, model, obs);
    for (int i = 1; i <= model.horizon(); ++i) {
        const auto [offset, len] = rec.block_ranges[i - 1];
        double sq = 0.0;
        for (std::size_t k = offset; k < offset + len; ++k) {
            rec.delta[k] *= eta;
            sq += rec.delta[k] * rec.delta[k];
        }
        rec.norms[i - 1] = std::sqrt(sq);
    }
    model.add_to_parameters(rec.delta);
    policy = model.policy();
    return rec;
}

std::vector<std::vector<double>> ideal_gradient(const FiniteMdp& mdp, const ExtendedPolicy& policy, double gamma) {
    const LinearPolicyModel model(policy);
    const auto obs = index_observations(mdp.n_states());
    return split_blocks(model, ideal_gradient(mdp, model, obs, gamma));
}

std::vector<std::vector<double>> multi_update_mean(const FiniteMdp& mdp, const ExtendedPolicy& policy) {
    const LinearPolicyModel model(policy);
    const auto obs = index_observations(mdp.n_states());
    return split_blocks(model, multi_update_mean(mdp, model, obs));
}

double decay_schedule(double x0, double x_terminal, int episodes) {
    if (!(x0 > 0.0) || !(x_terminal > 0.0)) throw Error("decay_schedule: endpoints must be positive");
    if (episodes < 1) throw Error("decay_schedule: need at least one episode");
    return std::pow(x_terminal / x0, 1.0 / episodes);
}

void TrainConfig::validate() const {
    if (horizon < 1) throw Error("TrainConfig: horizon must be at least 1");
    if (episodes < 1) throw Error("TrainConfig: episodes must be at least 1");
    if (!(eta0 > 0.0) || !(eta_terminal > 0.0)) throw Error("TrainConfig: learning rates must be positive");
    if (!(tau0 > 0.0) || !(tau_terminal > 0.0)) throw Error("TrainConfig: temperatures must be positive");
    if (batch < 1) throw Error("TrainConfig: batch must be at least 1");
    if (!(clip_ceiling > 0.0)) throw Error("TrainConfig: clip ceiling must be positive");
    if (!(divergence_threshold > 0.0)) throw Error("TrainConfig: divergence threshold must be positive");
    if (objective_interval < 0) throw Error("TrainConfig: objective interval must be non-negative");
}

void TrainLog::write_csv(std::ostream& out) const {
    const std::size_t n = rows.empty() ? 0 : rows.front().update_norms.size();
    out << "episode,J_estimate,cum_reward,eta,tau";
    for (std::size_t i = 1; i <= n; ++i) out << ",norm_" << i;
    out << '\n';
    std::ostringstream line;
    line.precision(10);
    for (const auto& r : rows) {
        line.str("");
        line << r.episode << ',' << r.j_estimate << ',' << r.cum_reward << ',' << r.eta << ',' << r.tau;
        for (double v : r.update_norms) line << ',' << v;
        out << line.str() << '\n';
    }
}

namespace {

template <typename Sampler>
TrainLog train_loop(PolicyModel& model, const TrainConfig& config, Sampler&& sample, const FiniteMdp* mdp,
                    std::span<const Observation> observations) {
    config.validate();
    if (model.horizon() != config.horizon) throw Error("train: policy horizon differs from the configured horizon");
    if (config.variant == UpdateVariant::Ideal && (mdp == nullptr || observations.empty()))
        throw Error("train: the ideal update needs an exact finite model");

    RandomSource rng(config.seed);
    const double eta_decay = decay_schedule(config.eta0, config.eta_terminal, config.episodes);
    const double tau_decay = decay_schedule(config.tau0, config.tau_terminal, config.episodes);
    double eta = config.eta0;
    double tau = config.tau0;
    model.set_tau(tau);

    const PolicyTable pbar = mdp ? baseline_table(model, observations) : PolicyTable(1, 1);
    TrainLog log;
    log.rows.reserve(config.episodes);
    for (int episode = 0; episode < config.episodes; ++episode) {
        TrainLogRow row;
        row.episode = episode;
        row.eta = eta;
        row.tau = tau;
        row.j_estimate = std::numeric_limits<double>::quiet_NaN();
        try {
            UpdateRecord total = empty_record(model);
            if (config.variant == UpdateVariant::Ideal) {
                total.delta = ideal_gradient(*mdp, model, observations);
                for (double& d : total.delta) d *= eta;
                for (int i = 1; i <= model.horizon(); ++i) {
                    double sq = 0.0;
                    for (double d : total.step_delta(i)) sq += d * d;
                    total.norms[i - 1] = std::sqrt(sq);
                }
                row.cum_reward = sample(rng).total_reward();
            } else {
                const double share = 1.0 / config.batch;
                for (int b = 0; b < config.batch; ++b) {
                    const Episode ep = sample(rng);
                    row.cum_reward += share * ep.total_reward();
                    const UpdateRecord rec =
                        config.variant == UpdateVariant::Sampled
                            ? compute_sampled_update(model, ep, eta, tau, config.baseline)
                            : compute_multi_update(model, ep, eta, tau, config.clip_ceiling);
                    for (std::size_t k = 0; k < total.delta.size(); ++k) total.delta[k] += share * rec.delta[k];
                    for (std::size_t i = 0; i < total.norms.size(); ++i) total.norms[i] += share * rec.norms[i];
                    total.clipped += rec.clipped;
                }
            }
            apply_update(model, total);
            log.clipped += total.clipped;
            row.update_norms = std::move(total.norms);
        } catch (const Error& e) {
            log.diverged = true;
            log.diagnostic = "episode " + std::to_string(episode) + ": " + e.what();
            break;
        }
        const double worst = model.max_abs_parameter();
        if (!(worst <= config.divergence_threshold)) {
            log.diverged = true;
            std::ostringstream os;
            os << "episode " << episode << ": max |theta| = " << worst << " exceeds " << config.divergence_threshold;
            log.diagnostic = os.str();
            log.rows.push_back(std::move(row));
            break;
        }
        if (mdp && config.objective_interval > 0 &&
            (episode % config.objective_interval == 0 || episode + 1 == config.episodes))
            row.j_estimate = objective(*mdp, policy_tables(model, observations), pbar, tau);
        log.rows.push_back(std::move(row));
        eta *= eta_decay;
        tau *= tau_decay;
        model.set_tau(tau);
    }
    return log;
}

}  // namespace

TrainLog train(const Environment& env, PolicyModel& model, const TrainConfig& config) {
    const auto observations = env.all_observations();
    auto sampler = [&](RandomSource& rng) { return run_episode(env, model, config.horizon, rng); };
    return train_loop(model, config, sampler, env.finite_mdp(), observations);
}

TrainLog train(const FiniteMdp& mdp, PolicyModel& model, const TrainConfig& config) {
    const auto observations = index_observations(mdp.n_states());
    auto sampler = [&](RandomSource& rng) { return sample_episode(mdp, model, rng); };
    return train_loop(model, config, sampler, &mdp, observations);
}

TrainLog train(const FiniteMdp& mdp, ExtendedPolicy& policy, const TrainConfig& config) {
    LinearPolicyModel model(policy);
    TrainLog log = train(mdp, model, config);
    policy = model.policy();
    return log;
}

}  // namespace mpg
