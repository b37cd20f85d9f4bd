#include "mpg/policy_table.hpp"

#include <algorithm>
#include <cmath>

#include "mpg/error.hpp"

namespace mpg {

bool PolicyTable::is_valid(double tol) const {
    if (n_states_ <= 0 || n_actions_ <= 0) return false;
    for (int s = 0; s < n_states_; ++s) {
        double total = 0.0;
        for (double p : row(s)) {
            if (!(p >= 0.0)) return false;
            total += p;
        }
        if (std::abs(total - 1.0) > tol) return false;
    }
    return true;
}

double PolicyTable::max_abs_diff(const PolicyTable& other) const {
    if (other.n_states_ != n_states_ || other.n_actions_ != n_actions_)
        throw Error("PolicyTable::max_abs_diff: shape mismatch");
    double worst = 0.0;
    for (std::size_t k = 0; k < probs_.size(); ++k)
        worst = std::max(worst, std::abs(probs_[k] - other.probs_[k]));
    return worst;
}

nlohmann::json to_json(const PolicyTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (int s = 0; s < table.n_states(); ++s) {
        auto r = table.row(s);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

PolicyTable policy_table_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw Error("policy table: expected a non-empty array of rows");
    const int n_states = static_cast<int>(j.size());
    const int n_actions = static_cast<int>(j[0].size());
    PolicyTable table(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
        if (static_cast<int>(j[s].size()) != n_actions)
            throw Error("policy table: ragged row " + std::to_string(s));
        for (int a = 0; a < n_actions; ++a) table(s, a) = j[s][a].get<double>();
    }
    return table;
}

}  // namespace mpg
