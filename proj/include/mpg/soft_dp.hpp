#pragma once

#include <span>
#include <vector>

#include "json.hpp"
#include "mpg/finite_mdp.hpp"
#include "mpg/policy_table.hpp"
#include "mpg/softmax_policy.hpp"

namespace mpg {

/// Entropy-regularized values of a fixed extended policy.
/// v[i][s] = V^(i)(s) for i = 0..n, q[i][s*|A|+a] = Q^(i)(a,s) for i = 1..n
/// (q[0] is empty).
struct PolicyEvaluation {
    int n_actions = 0;
    std::vector<std::vector<double>> v;
    std::vector<std::vector<double>> q;

    int horizon() const { return static_cast<int>(v.size()) - 1; }
    double value(int i, int s) const { return v[i][s]; }
    double q_value(int i, int s, int a) const { return q[i][static_cast<std::size_t>(s) * n_actions + a]; }
};

/// Backward recursion over the horizon:
///   V^(0) = 0,
///   Q^(i)(a,s) = r(a,s) + gamma sum_s' p(s,a,s') V^(i-1)(s'),
///   V^(i)(s)   = sum_a pi^(i)(a|s) [Q^(i)(a,s) - tau log(pi^(i)/pbar)(a|s)].
/// `steps[i-1]` is pi^(i).
PolicyEvaluation evaluate_policy(const FiniteMdp& mdp, std::span<const PolicyTable> steps,
                                 const PolicyTable& baseline, double tau, double gamma = 1.0);

/// Optimal extended policy and its values from the soft Bellman recursion.
struct SoftDpSolution {
    double tau = 1.0;
    double gamma = 1.0;
    int n_actions = 0;
    PolicyTable baseline;
    std::vector<std::vector<double>> v_star;  // i = 0..n
    std::vector<std::vector<double>> q_star;  // i = 0..n, q_star[0] empty
    std::vector<PolicyTable> pi_star;         // pi_star[i-1] = pi*^(i)

    int horizon() const { return static_cast<int>(pi_star.size()); }
    const PolicyTable& policy(int i) const { return pi_star.at(i - 1); }
    double q_value(int i, int s, int a) const { return q_star[i][static_cast<std::size_t>(s) * n_actions + a]; }
};

/// V*^(i)(s) = tau log sum_a pbar(a|s) exp(Q*^(i)(a,s)/tau) by log-sum-exp,
/// pi*^(i) = pbar exp((Q*^(i) - V*^(i))/tau).
SoftDpSolution solve_optimal(const FiniteMdp& mdp, int horizon, double tau, double gamma,
                             const PolicyTable& baseline);

/// tau log sum_a pbar(a) exp(q(a)/tau), stable.
double soft_value(std::span<const double> q, std::span<const double> baseline, double tau);

struct InfiniteHorizonSolution {
    std::vector<double> v;
    PolicyTable policy;
    int iterations = 0;
};

/// Fixed point of V = tau log E_pbar exp((r + gamma P V)/tau) for gamma < 1,
/// iterated until the sup-norm change drops below `tol`.
InfiniteHorizonSolution solve_infinite_discounted(const FiniteMdp& mdp, double tau, double gamma,
                                                  double tol, const PolicyTable& baseline);

/// T_{n,m} on a DP solution: keeps horizons 1..m.
SoftDpSolution truncate(const SoftDpSolution& solution, int m);
/// T_{n,m} on a parametrized extended policy.
ExtendedPolicy truncate(const ExtendedPolicy& policy, int m);

/// Both sides of V_pi^(n)(s) - V*^(n)(s)
///   = -tau E_pi[ sum_{i<n} gamma^i KL(pi^(n-i) || pi*^(n-i))(S_i) | S_0 = s ].
struct ValueGap {
    std::vector<double> direct;     // V_pi^(n) - V*^(n)
    std::vector<double> kl_series;  // right-hand side by exact propagation
    double max_mismatch = 0.0;
};

/// Throws IdentityError when the two sides disagree beyond `tol`.
ValueGap value_gap(const FiniteMdp& mdp, std::span<const PolicyTable> steps, const PolicyTable& baseline,
                   double tau, double gamma = 1.0, double tol = 1e-9);

/// J_n(pi) = sum_s nu_0(s) V_pi^(n)(s).
double objective(const FiniteMdp& mdp, std::span<const PolicyTable> steps, const PolicyTable& baseline,
                 double tau, double gamma = 1.0);

nlohmann::json to_json(const SoftDpSolution& solution);

}  // namespace mpg
