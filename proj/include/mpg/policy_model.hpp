#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mpg/softmax_policy.hpp"

namespace mpg {

/// What a policy sees of a state: a discrete index (finite environments) and
/// a feature vector (for neural preferences). Either may be unused.
struct Observation {
    int index = -1;
    std::vector<double> features;
};

/// Extended softmax policy behind a flat parameter vector. Step i (1-based)
/// reads the contiguous block block_range(i); blocks of distinct steps are
/// disjoint unless the model shares one network across horizons.
class PolicyModel {
public:
    virtual ~PolicyModel() = default;

    virtual std::unique_ptr<PolicyModel> clone() const = 0;

    virtual int horizon() const = 0;
    virtual int n_actions() const = 0;
    virtual double tau() const = 0;
    virtual void set_tau(double tau) = 0;

    /// pi^(steps_left)(. | obs)
    virtual std::vector<double> action_distribution(int steps_left, const Observation& obs) const = 0;
    /// pbar(. | obs)
    virtual std::vector<double> baseline(const Observation& obs) const = 0;

    virtual std::size_t parameter_count() const = 0;
    /// (offset, length) of step i's parameters in the flat vector.
    virtual std::pair<std::size_t, std::size_t> block_range(int steps_left) const = 0;

    /// grad[...] += scale * grad_theta log pi^(steps_left)(a | obs), in flat coordinates.
    virtual void accumulate_grad_log_policy(int steps_left, int a, const Observation& obs, double scale,
                                            std::span<double> grad) const = 0;

    /// theta += delta (flat)
    virtual void add_to_parameters(std::span<const double> delta) = 0;
    virtual std::vector<double> parameters() const = 0;
    virtual void set_parameters(std::span<const double> theta) = 0;

    virtual double max_abs_parameter() const;

    virtual nlohmann::json checkpoint() const = 0;
};

/// PolicyModel over a linear ExtendedPolicy on a finite state space; uses
/// Observation::index.
class LinearPolicyModel final : public PolicyModel {
public:
    explicit LinearPolicyModel(ExtendedPolicy policy) : policy_(std::move(policy)) {}

    const ExtendedPolicy& policy() const { return policy_; }
    ExtendedPolicy& policy() { return policy_; }

    std::unique_ptr<PolicyModel> clone() const override { return std::make_unique<LinearPolicyModel>(*this); }
    int horizon() const override { return policy_.horizon(); }
    int n_actions() const override { return policy_.features().n_actions(); }
    double tau() const override { return policy_.tau(); }
    void set_tau(double tau) override { policy_.set_tau(tau); }

    std::vector<double> action_distribution(int steps_left, const Observation& obs) const override;
    std::vector<double> baseline(const Observation& obs) const override;

    std::size_t parameter_count() const override;
    std::pair<std::size_t, std::size_t> block_range(int steps_left) const override;
    void accumulate_grad_log_policy(int steps_left, int a, const Observation& obs, double scale,
                                    std::span<double> grad) const override;
    void add_to_parameters(std::span<const double> delta) override;
    std::vector<double> parameters() const override;
    void set_parameters(std::span<const double> theta) override;
    double max_abs_parameter() const override { return policy_.max_abs_parameter(); }
    nlohmann::json checkpoint() const override { return to_json(policy_); }

private:
    ExtendedPolicy policy_;
};

/// Materializes pi^(i) for every step over `observations` (one per state).
std::vector<PolicyTable> policy_tables(const PolicyModel& model, std::span<const Observation> observations);

/// Restores either checkpoint kind ("linear" or "neural").
std::unique_ptr<PolicyModel> policy_model_from_json(const nlohmann::json& j);

}  // namespace mpg
