#pragma once

#include <span>
#include <vector>

#include "json.hpp"

namespace mpg {

/// Dense action probabilities pi(a|s), stored state-major.
class PolicyTable {
public:
    PolicyTable() = default;
    PolicyTable(int n_states, int n_actions, double fill = 0.0)
        : n_states_(n_states), n_actions_(n_actions),
          probs_(static_cast<std::size_t>(n_states) * n_actions, fill) {}

    static PolicyTable uniform(int n_states, int n_actions) {
        return PolicyTable(n_states, n_actions, 1.0 / n_actions);
    }

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }

    double operator()(int s, int a) const { return probs_[index(s, a)]; }
    double& operator()(int s, int a) { return probs_[index(s, a)]; }

    std::span<const double> row(int s) const {
        return {probs_.data() + index(s, 0), static_cast<std::size_t>(n_actions_)};
    }
    std::span<double> row(int s) {
        return {probs_.data() + index(s, 0), static_cast<std::size_t>(n_actions_)};
    }

    const std::vector<double>& data() const { return probs_; }

    /// Rows non-negative and summing to one within `tol`.
    bool is_valid(double tol = 1e-12) const;

    /// max |this - other| over all entries.
    double max_abs_diff(const PolicyTable& other) const;

    friend bool operator==(const PolicyTable&, const PolicyTable&) = default;

private:
    std::size_t index(int s, int a) const {
        return static_cast<std::size_t>(s) * n_actions_ + a;
    }

    int n_states_ = 0;
    int n_actions_ = 0;
    std::vector<double> probs_;
};

nlohmann::json to_json(const PolicyTable& table);
PolicyTable policy_table_from_json(const nlohmann::json& j);

}  // namespace mpg
