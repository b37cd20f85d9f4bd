#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpg/finite_mdp.hpp"
#include "mpg/policy_table.hpp"
#include "mpg/random.hpp"

namespace mpg {

enum class FeatureKind { Tabular, Custom, RandomFeature };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& name);

/// Feature map psi: A x S -> R^P on a finite index set. Rows are stored
/// densely, indexed by the flat pair index s * |A| + a.
class FeatureMap {
public:
    /// Kronecker features: psi(a,s) = scale * e_{s*|A|+a}; the kernel is scale^2 I.
    static FeatureMap tabular(int n_states, int n_actions, double scale = 1.0);
    /// Arbitrary basis; `rows` holds |S|*|A| rows of length `dimension`.
    static FeatureMap custom(int n_states, int n_actions, int dimension, std::vector<double> rows,
                             FeatureKind kind = FeatureKind::Custom);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    int dimension() const { return dimension_; }
    FeatureKind kind() const { return kind_; }
    /// Multiplier of the Kronecker basis (tabular maps only).
    double tabular_scale() const { return scale_; }

    std::span<const double> eval(int a, int s) const;

    /// h(a,s) = theta . psi(a,s)
    double preference(std::span<const double> theta, int a, int s) const;

    /// theta += scale * psi(a,s)
    void add_scaled(std::span<double> theta, int a, int s, double scale) const;

    /// Gram matrix Theta((a,s),(a',s')) = psi(a,s) . psi(a',s'), row-major over
    /// the flat pair index.
    std::vector<double> gram() const;

private:
    std::size_t pair(int a, int s) const { return static_cast<std::size_t>(s) * n_actions_ + a; }

    int n_states_ = 0;
    int n_actions_ = 0;
    int dimension_ = 0;
    FeatureKind kind_ = FeatureKind::Tabular;
    double scale_ = 1.0;
    std::vector<double> rows_;
};

/// Number of times a relative logit fell below the clamp floor since start.
std::uint64_t softmax_clamp_count();

/// Relative logit floor: (h - max h) / tau is clamped at this value so every
/// action keeps strictly positive probability.
inline constexpr double kLogitFloor = -500.0;

/// Boltzmann distribution pbar(a) exp(h(a)/tau) / Z with max-subtraction.
/// Throws on a non-finite preference.
std::vector<double> boltzmann(std::span<const double> preferences, std::span<const double> baseline,
                              double tau);

/// Linear-preference softmax policy pi(a|s) ~ pbar(a|s) exp(theta . psi(a,s) / tau).
class SoftmaxPolicy {
public:
    SoftmaxPolicy(std::shared_ptr<const FeatureMap> features, double tau, PolicyTable baseline);

    const FeatureMap& features() const { return *features_; }
    std::shared_ptr<const FeatureMap> shared_features() const { return features_; }
    const PolicyTable& baseline() const { return baseline_; }

    double tau() const { return tau_; }
    void set_tau(double tau);

    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }

    double preference(int a, int s) const { return features_->preference(theta_, a, s); }

    std::vector<double> action_distribution(int s) const;

    /// grad_theta log pi(a|s) = (1/tau) sum_a' (delta_{a,a'} - pi(a'|s)) psi(a',s).
    std::vector<double> grad_log_policy(int a, int s) const;

    /// Adds scale * grad log pi(a|s) to `out` without materializing the gradient.
    void accumulate_grad_log_policy(int a, int s, double scale, std::span<double> out) const;

    PolicyTable as_table() const;

private:
    std::shared_ptr<const FeatureMap> features_;
    double tau_;
    PolicyTable baseline_;
    std::vector<double> theta_;
};

/// Checks shapes agree before materializing pi(a|s) over the MDP's states.
PolicyTable as_table(const SoftmaxPolicy& policy, const FiniteMdp& mdp);

/// D_KL(p || q) with 0 log 0 = 0. Throws if q(a) = 0 < p(a).
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Per-horizon policies (pi^(1), ..., pi^(n)); step(i) is used when i steps
/// remain. Each step owns its parameter vector. All steps share one
/// temperature.
class ExtendedPolicy {
public:
    ExtendedPolicy(int horizon, std::shared_ptr<const FeatureMap> features, double tau,
                   PolicyTable baseline);
    explicit ExtendedPolicy(std::vector<SoftmaxPolicy> steps);

    int horizon() const { return static_cast<int>(steps_.size()); }

    /// 1-based: step(1) is the 1-step policy.
    SoftmaxPolicy& step(int i) { return steps_.at(i - 1); }
    const SoftmaxPolicy& step(int i) const { return steps_.at(i - 1); }

    double tau() const { return steps_.front().tau(); }
    void set_tau(double tau);

    const PolicyTable& baseline() const { return steps_.front().baseline(); }
    const FeatureMap& features() const { return steps_.front().features(); }

    /// tables()[i-1] is pi^(i) materialized.
    std::vector<PolicyTable> tables() const;

    /// Translation operator T_{n,m}: keeps (pi^(1), ..., pi^(m)).
    ExtendedPolicy truncate(int m) const;

    double max_abs_parameter() const;

private:
    std::vector<SoftmaxPolicy> steps_;
};

/// Path sampled with the (n-k)-step policy choosing the k-th action.
Trajectory sample_trajectory(const FiniteMdp& mdp, const ExtendedPolicy& policy, RandomSource& rng);

/// {"horizon", "tau", "feature_kind", "thetas", "baseline"}; custom feature
/// rows are embedded under "features" when the kind is not tabular.
nlohmann::json to_json(const ExtendedPolicy& policy);
ExtendedPolicy extended_policy_from_json(const nlohmann::json& j);

}  // namespace mpg
