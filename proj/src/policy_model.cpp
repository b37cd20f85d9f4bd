#include "mpg/policy_model.hpp"

#include <algorithm>
#include <cmath>

#include "mpg/error.hpp"
#include "mpg/neural_prefs.hpp"

namespace mpg {

double PolicyModel::max_abs_parameter() const {
    double worst = 0.0;
    for (double t : parameters()) worst = std::max(worst, std::abs(t));
    return worst;
}

std::vector<double> LinearPolicyModel::action_distribution(int steps_left, const Observation& obs) const {
    return policy_.step(steps_left).action_distribution(obs.index);
}

std::vector<double> LinearPolicyModel::baseline(const Observation& obs) const {
    auto row = policy_.baseline().row(obs.index);
    return {row.begin(), row.end()};
}

std::size_t LinearPolicyModel::parameter_count() const {
    return static_cast<std::size_t>(policy_.horizon()) * policy_.features().dimension();
}

std::pair<std::size_t, std::size_t> LinearPolicyModel::block_range(int steps_left) const {
    const std::size_t P = policy_.features().dimension();
    return {static_cast<std::size_t>(steps_left - 1) * P, P};
}

void LinearPolicyModel::accumulate_grad_log_policy(int steps_left, int a, const Observation& obs, double scale,
                                                   std::span<double> grad) const {
    auto [offset, len] = block_range(steps_left);
    policy_.step(steps_left).accumulate_grad_log_policy(a, obs.index, scale, grad.subspan(offset, len));
}

void LinearPolicyModel::add_to_parameters(std::span<const double> delta) {
    const std::size_t P = policy_.features().dimension();
    for (int i = 1; i <= policy_.horizon(); ++i) {
        auto& theta = policy_.step(i).theta();
        const std::size_t offset = static_cast<std::size_t>(i - 1) * P;
        for (std::size_t k = 0; k < P; ++k) theta[k] += delta[offset + k];
    }
}

std::vector<double> LinearPolicyModel::parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (int i = 1; i <= policy_.horizon(); ++i) {
        const auto& theta = policy_.step(i).theta();
        out.insert(out.end(), theta.begin(), theta.end());
    }
    return out;
}

void LinearPolicyModel::set_parameters(std::span<const double> theta) {
    if (theta.size() != parameter_count()) throw Error("LinearPolicyModel: parameter size mismatch");
    const std::size_t P = policy_.features().dimension();
    for (int i = 1; i <= policy_.horizon(); ++i) {
        auto first = theta.begin() + static_cast<std::ptrdiff_t>((i - 1) * P);
        policy_.step(i).theta().assign(first, first + static_cast<std::ptrdiff_t>(P));
    }
}

std::vector<PolicyTable> policy_tables(const PolicyModel& model, std::span<const Observation> observations) {
    const int S = static_cast<int>(observations.size());
    const int A = model.n_actions();
    std::vector<PolicyTable> out;
    out.reserve(model.horizon());
    for (int i = 1; i <= model.horizon(); ++i) {
        PolicyTable t(S, A);
        for (int s = 0; s < S; ++s) {
            const auto pi = model.action_distribution(i, observations[s]);
            std::copy(pi.begin(), pi.end(), t.row(s).begin());
        }
        out.push_back(std::move(t));
    }
    return out;
}

std::unique_ptr<PolicyModel> policy_model_from_json(const nlohmann::json& j) {
    const std::string kind = j.value("kind", "linear");
    if (kind == "linear") return std::make_unique<LinearPolicyModel>(extended_policy_from_json(j));
    if (kind == "neural") return std::make_unique<NeuralPolicyModel>(neural_policy_from_json(j));
    throw Error("checkpoint: unknown policy kind '" + kind + "'");
}

}  // namespace mpg
