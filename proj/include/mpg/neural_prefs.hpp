#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpg/certificates.hpp"
#include "mpg/policy_model.hpp"
#include "mpg/random.hpp"

namespace mpg {

enum class Activation { Tanh, Identity };

/// Fully connected scalar-output network with a linear output layer.
/// Parameters are stored flat, layer by layer: W (out x in, row-major) then b.
class Mlp {
public:
    Mlp() = default;
    /// sizes = {input, hidden..., 1}; weights ~ N(0, 1/fan_in), biases 0.
    /// The output layer's standard deviation is further multiplied by
    /// `output_scale`.
    Mlp(std::vector<int> sizes, Activation hidden, RandomSource& rng, double output_scale = 1.0);
    /// All-zero parameters.
    Mlp(std::vector<int> sizes, Activation hidden);

    const std::vector<int>& sizes() const { return sizes_; }
    Activation activation() const { return activation_; }
    int input_size() const { return sizes_.front(); }
    std::size_t parameter_count() const { return params_.size(); }
    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    double forward(std::span<const double> input) const;

    /// Returns the output and adds scale * d(output)/d(params) into `grad`.
    double backward(std::span<const double> input, double scale, std::span<double> grad) const;

private:
    std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

    std::vector<int> sizes_;
    Activation activation_ = Activation::Tanh;
    std::vector<double> params_;
    std::vector<std::size_t> offsets_;
};

enum class HorizonMode {
    SeparateNetworks,  // one network per step, disjoint parameters
    SharedRaw,         // one network, remaining steps i fed raw
    SharedScaled,      // one network, g(i) = 1 - 1/i fed
};

std::string to_string(HorizonMode mode);
HorizonMode horizon_mode_from_string(const std::string& name);

struct HorizonEncoding {
    HorizonMode mode = HorizonMode::SharedScaled;

    /// Monotone map N -> [0, 1) with shrinking increments.
    static double g(int i) { return 1.0 - 1.0 / static_cast<double>(i); }
    int extra_inputs() const { return mode == HorizonMode::SeparateNetworks ? 0 : 1; }
    double encode(int i) const { return mode == HorizonMode::SharedRaw ? static_cast<double>(i) : g(i); }
};

struct NeuralConfig {
    std::vector<int> hidden{64, 64};
    Activation activation = Activation::Tanh;
    HorizonMode mode = HorizonMode::SharedScaled;
    std::uint64_t seed = 0;
    /// Multiplier on the output layer's init scale. Small values start
    /// training from a near-uniform policy at low temperature.
    double output_init_scale = 1.0;
};

/// Extended policy with preferences h(a, s, i) from feed-forward networks.
/// Network input: one-hot action, state features, then the horizon code.
/// The baseline policy is uniform over actions.
class NeuralPolicyModel final : public PolicyModel {
public:
    NeuralPolicyModel(int horizon, int n_actions, int state_dim, double tau, const NeuralConfig& config);
    NeuralPolicyModel(int horizon, int n_actions, int state_dim, double tau, HorizonEncoding encoding,
                      std::vector<Mlp> networks);

    int state_dim() const { return state_dim_; }
    const HorizonEncoding& encoding() const { return encoding_; }
    const Mlp& network(int steps_left) const { return networks_[net_index(steps_left)]; }
    const std::vector<Mlp>& networks() const { return networks_; }

    std::vector<double> encode(int steps_left, int a, const Observation& obs) const;
    /// h(a, s, i)
    double preference(int steps_left, int a, const Observation& obs) const;
    /// grad_theta h(a, s, i) in flat coordinates of the whole model.
    std::vector<double> grad_preference(int steps_left, int a, const Observation& obs) const;

    std::unique_ptr<PolicyModel> clone() const override { return std::make_unique<NeuralPolicyModel>(*this); }
    int horizon() const override { return horizon_; }
    int n_actions() const override { return n_actions_; }
    double tau() const override { return tau_; }
    void set_tau(double tau) override;
    std::vector<double> action_distribution(int steps_left, const Observation& obs) const override;
    std::vector<double> baseline(const Observation& obs) const override;
    std::size_t parameter_count() const override;
    std::pair<std::size_t, std::size_t> block_range(int steps_left) const override;
    void accumulate_grad_log_policy(int steps_left, int a, const Observation& obs, double scale,
                                    std::span<double> grad) const override;
    void add_to_parameters(std::span<const double> delta) override;
    std::vector<double> parameters() const override;
    void set_parameters(std::span<const double> theta) override;
    nlohmann::json checkpoint() const override;

private:
    std::size_t net_index(int steps_left) const {
        return encoding_.mode == HorizonMode::SeparateNetworks ? static_cast<std::size_t>(steps_left - 1) : 0;
    }

    int horizon_;
    int n_actions_;
    int state_dim_;
    double tau_;
    HorizonEncoding encoding_;
    std::vector<Mlp> networks_;
};

NeuralPolicyModel neural_policy_from_json(const nlohmann::json& j);

/// Neural tangent kernel K[x][y] = <grad h(x), grad h(y)> on a finite set of
/// (action, observation) pairs for one step.
struct NtkGram {
    GramSpectrum spectrum;
    double min_eig = 0.0;
    double max_eig = 0.0;
    /// min eigenvalue > tol * max eigenvalue. A failure is inconclusive, not
    /// evidence of suboptimality.
    bool pass = false;
};

struct NtkPoint {
    int action = 0;
    Observation obs;
};

NtkGram ntk_gram(const NeuralPolicyModel& model, int steps_left, std::span<const NtkPoint> eval_set,
                 double tol = 1e-8);

nlohmann::json to_json(const NtkGram& ntk);

}  // namespace mpg
