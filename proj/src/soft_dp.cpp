#include "mpg/soft_dp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mpg/error.hpp"

namespace mpg {

namespace {

void check_tables(const FiniteMdp& mdp, std::span<const PolicyTable> steps, const PolicyTable& baseline) {
    if (steps.empty()) throw Error("soft dp: empty extended policy");
    auto same = [&](const PolicyTable& t) {
        return t.n_states() == mdp.n_states() && t.n_actions() == mdp.n_actions();
    };
    if (!same(baseline)) throw Error("soft dp: baseline shape mismatch");
    for (const auto& t : steps)
        if (!same(t)) throw Error("soft dp: policy table shape mismatch");
}

void check_params(double tau, double gamma) {
    if (!(tau > 0.0)) throw Error("soft dp: temperature must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("soft dp: discount must lie in (0, 1]");
}

// r(a,s) + gamma sum_s' p(s,a,s') v(s')
double backup(const FiniteMdp& mdp, int s, int a, double gamma, const std::vector<double>& v) {
    auto row = mdp.transition_row(s, a);
    double acc = 0.0;
    for (int t = 0; t < mdp.n_states(); ++t) acc += row[t] * v[t];
    return mdp.reward(s, a) + gamma * acc;
}

}  // namespace

PolicyEvaluation evaluate_policy(const FiniteMdp& mdp, std::span<const PolicyTable> steps,
                                 const PolicyTable& baseline, double tau, double gamma) {
    check_tables(mdp, steps, baseline);
    check_params(tau, gamma);
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    const int n = static_cast<int>(steps.size());
    PolicyEvaluation ev;
    ev.n_actions = A;
    ev.v.assign(n + 1, std::vector<double>(S, 0.0));
    ev.q.assign(n + 1, {});
    for (int i = 1; i <= n; ++i) {
        const PolicyTable& pi = steps[i - 1];
        auto& q = ev.q[i];
        q.assign(static_cast<std::size_t>(S) * A, 0.0);
        for (int s = 0; s < S; ++s) {
            double v = 0.0;
            for (int a = 0; a < A; ++a) {
                const double qa = backup(mdp, s, a, gamma, ev.v[i - 1]);
                q[static_cast<std::size_t>(s) * A + a] = qa;
                const double p = pi(s, a);
                if (p > 0.0) v += p * (qa - tau * std::log(p / baseline(s, a)));
            }
            ev.v[i][s] = v;
        }
    }
    return ev;
}

double soft_value(std::span<const double> q, std::span<const double> baseline, double tau) {
    double top = -INFINITY;
    for (double x : q) top = std::max(top, x / tau);
    double acc = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) acc += baseline[a] * std::exp(q[a] / tau - top);
    return tau * (top + std::log(acc));
}

SoftDpSolution solve_optimal(const FiniteMdp& mdp, int horizon, double tau, double gamma,
                             const PolicyTable& baseline) {
    if (horizon < 1) throw Error("solve_optimal: horizon must be at least 1");
    check_params(tau, gamma);
    if (baseline.n_states() != mdp.n_states() || baseline.n_actions() != mdp.n_actions())
        throw Error("solve_optimal: baseline shape mismatch");
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    SoftDpSolution sol;
    sol.tau = tau;
    sol.gamma = gamma;
    sol.n_actions = A;
    sol.baseline = baseline;
    sol.v_star.assign(horizon + 1, std::vector<double>(S, 0.0));
    sol.q_star.assign(horizon + 1, {});
    sol.pi_star.reserve(horizon);
    std::vector<double> qs(A);
    for (int i = 1; i <= horizon; ++i) {
        auto& q = sol.q_star[i];
        q.assign(static_cast<std::size_t>(S) * A, 0.0);
        PolicyTable pi(S, A);
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) qs[a] = backup(mdp, s, a, gamma, sol.v_star[i - 1]);
            std::copy(qs.begin(), qs.end(), q.begin() + static_cast<std::ptrdiff_t>(s) * A);
            const double v = soft_value(qs, baseline.row(s), tau);
            sol.v_star[i][s] = v;
            double total = 0.0;
            for (int a = 0; a < A; ++a) {
                pi(s, a) = baseline(s, a) * std::exp((qs[a] - v) / tau);
                total += pi(s, a);
            }
            // total is 1 up to rounding; renormalize so rows are exact simplex points
            for (int a = 0; a < A; ++a) pi(s, a) /= total;
        }
        sol.pi_star.push_back(std::move(pi));
    }
    return sol;
}

InfiniteHorizonSolution solve_infinite_discounted(const FiniteMdp& mdp, double tau, double gamma,
                                                  double tol, const PolicyTable& baseline) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error("solve_infinite_discounted: require 0 < gamma < 1");
    if (!(tol > 0.0)) throw Error("solve_infinite_discounted: tolerance must be positive");
    check_params(tau, gamma);
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    // |V| <= R_max / (1 - gamma); the change after k sweeps is at most gamma^k times that.
    const double range = mdp.reward_bound() / (1.0 - gamma) + 1.0;
    const int cap = static_cast<int>(std::ceil(std::log(tol / range) / std::log(gamma))) + 1000;
    InfiniteHorizonSolution out;
    out.v.assign(S, 0.0);
    std::vector<double> next(S), qs(A);
    for (int it = 1; it <= cap; ++it) {
        double change = 0.0;
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) qs[a] = backup(mdp, s, a, gamma, out.v);
            next[s] = soft_value(qs, baseline.row(s), tau);
            change = std::max(change, std::abs(next[s] - out.v[s]));
        }
        out.v.swap(next);
        out.iterations = it;
        if (change < tol) {
            out.policy = PolicyTable(S, A);
            for (int s = 0; s < S; ++s) {
                for (int a = 0; a < A; ++a) qs[a] = backup(mdp, s, a, gamma, out.v);
                const double v = soft_value(qs, baseline.row(s), tau);
                double total = 0.0;
                for (int a = 0; a < A; ++a) {
                    out.policy(s, a) = baseline(s, a) * std::exp((qs[a] - v) / tau);
                    total += out.policy(s, a);
                }
                for (int a = 0; a < A; ++a) out.policy(s, a) /= total;
            }
            return out;
        }
    }
    throw Error("solve_infinite_discounted: no convergence after " + std::to_string(cap) + " sweeps");
}

SoftDpSolution truncate(const SoftDpSolution& solution, int m) {
    if (m < 1 || m >= solution.horizon()) throw Error("truncate: require 1 <= m < n");
    SoftDpSolution out = solution;
    out.v_star.resize(m + 1);
    out.q_star.resize(m + 1);
    out.pi_star.resize(m);
    return out;
}

ExtendedPolicy truncate(const ExtendedPolicy& policy, int m) { return policy.truncate(m); }

ValueGap value_gap(const FiniteMdp& mdp, std::span<const PolicyTable> steps, const PolicyTable& baseline,
                   double tau, double gamma, double tol) {
    check_tables(mdp, steps, baseline);
    const int S = mdp.n_states();
    const int n = static_cast<int>(steps.size());
    const auto ev = evaluate_policy(mdp, steps, baseline, tau, gamma);
    const auto opt = solve_optimal(mdp, n, tau, gamma, baseline);

    // kl[i][s] = KL(pi^(i) || pi*^(i))(s)
    std::vector<std::vector<double>> kl(n + 1, std::vector<double>(S, 0.0));
    for (int i = 1; i <= n; ++i)
        for (int s = 0; s < S; ++s) kl[i][s] = kl_divergence(steps[i - 1].row(s), opt.policy(i).row(s));

    ValueGap gap;
    gap.direct.resize(S);
    gap.kl_series.resize(S);
    for (int s0 = 0; s0 < S; ++s0) {
        gap.direct[s0] = ev.v[n][s0] - opt.v_star[n][s0];
        auto law = StateDistribution::point_mass(S, s0);
        double series = 0.0;
        double discount = 1.0;
        for (int k = 0; k < n; ++k) {
            double expected = 0.0;
            for (int s = 0; s < S; ++s) expected += law.probs[s] * kl[n - k][s];
            series += discount * expected;
            discount *= gamma;
            law = propagate(mdp, law, steps[n - k - 1]);
        }
        gap.kl_series[s0] = -tau * series;
        gap.max_mismatch = std::max(gap.max_mismatch, std::abs(gap.direct[s0] - gap.kl_series[s0]));
    }
    if (gap.max_mismatch > tol) {
        std::ostringstream os;
        os << "value_gap: identity violated, max mismatch " << gap.max_mismatch << " > " << tol;
        throw IdentityError(os.str());
    }
    return gap;
}

double objective(const FiniteMdp& mdp, std::span<const PolicyTable> steps, const PolicyTable& baseline,
                 double tau, double gamma) {
    const auto ev = evaluate_policy(mdp, steps, baseline, tau, gamma);
    const int n = static_cast<int>(steps.size());
    double j = 0.0;
    for (int s = 0; s < mdp.n_states(); ++s) j += mdp.initial_dist()[s] * ev.v[n][s];
    return j;
}

nlohmann::json to_json(const SoftDpSolution& solution) {
    nlohmann::json policies = nlohmann::json::array();
    for (const auto& p : solution.pi_star) policies.push_back(to_json(p));
    return {{"horizon", solution.horizon()},
            {"tau", solution.tau},
            {"gamma", solution.gamma},
            {"v_star", solution.v_star},
            {"q_star", solution.q_star},
            {"pi_star", std::move(policies)},
            {"baseline", to_json(solution.baseline)}};
}

}  // namespace mpg
