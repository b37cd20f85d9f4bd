#include "mpg/neural_prefs.hpp"

#include <algorithm>
#include <cmath>

#include "mpg/error.hpp"

namespace mpg {

namespace {

std::vector<std::size_t> layout(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw Error("Mlp: need at least input and output sizes");
    if (sizes.back() != 1) throw Error("Mlp: output layer must have one unit");
    for (int s : sizes)
        if (s <= 0) throw Error("Mlp: layer sizes must be positive");
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        offsets.push_back(offset);
        offset += static_cast<std::size_t>(sizes[l + 1]) * (sizes[l] + 1);
    }
    offsets.push_back(offset);
    return offsets;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, Activation hidden)
    : sizes_(std::move(sizes)), activation_(hidden), offsets_(layout(sizes_)) {
    params_.assign(offsets_.back(), 0.0);
}

Mlp::Mlp(std::vector<int> sizes, Activation hidden, RandomSource& rng, double output_scale)
    : Mlp(std::move(sizes), hidden) {
    if (!(output_scale >= 0.0) || !std::isfinite(output_scale)) throw Error("Mlp: bad output scale");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        const int in = sizes_[l];
        const int out = sizes_[l + 1];
        const double sd = (l + 2 == sizes_.size() ? output_scale : 1.0) / std::sqrt(static_cast<double>(in));
        double* w = params_.data() + offsets_[l];
        for (int k = 0; k < out * in; ++k) w[k] = sd * rng.normal();
    }
}

double Mlp::forward(std::span<const double> input) const {
    if (static_cast<int>(input.size()) != sizes_.front()) throw Error("Mlp::forward: input size mismatch");
    std::vector<double> cur(input.begin(), input.end()), next;
    for (double x : cur)
        if (!std::isfinite(x)) throw Error("Mlp::forward: non-finite input");
    const std::size_t L = sizes_.size() - 1;
    for (std::size_t l = 0; l < L; ++l) {
        const int in = sizes_[l];
        const int out = sizes_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const double* b = w + static_cast<std::size_t>(out) * in;
        next.assign(out, 0.0);
        for (int o = 0; o < out; ++o) {
            double z = b[o];
            const double* row = w + static_cast<std::size_t>(o) * in;
            for (int k = 0; k < in; ++k) z += row[k] * cur[k];
            next[o] = (l + 1 < L && activation_ == Activation::Tanh) ? std::tanh(z) : z;
        }
        cur.swap(next);
    }
    return cur[0];
}

double Mlp::backward(std::span<const double> input, double scale, std::span<double> grad) const {
    if (static_cast<int>(input.size()) != sizes_.front()) throw Error("Mlp::backward: input size mismatch");
    if (grad.size() != params_.size()) throw Error("Mlp::backward: gradient size mismatch");
    const std::size_t L = sizes_.size() - 1;
    std::vector<std::vector<double>> acts(L + 1);
    acts[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < L; ++l) {
        const int in = sizes_[l];
        const int out = sizes_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const double* b = w + static_cast<std::size_t>(out) * in;
        acts[l + 1].assign(out, 0.0);
        for (int o = 0; o < out; ++o) {
            double z = b[o];
            const double* row = w + static_cast<std::size_t>(o) * in;
            for (int k = 0; k < in; ++k) z += row[k] * acts[l][k];
            acts[l + 1][o] = (l + 1 < L && activation_ == Activation::Tanh) ? std::tanh(z) : z;
        }
    }
    // delta holds d(output)/d(pre-activation) of the current layer, times scale
    std::vector<double> delta{scale}, prev;
    for (std::size_t l = L; l-- > 0;) {
        const int in = sizes_[l];
        const int out = sizes_[l + 1];
        const double* w = params_.data() + offsets_[l];
        double* gw = grad.data() + offsets_[l];
        double* gb = gw + static_cast<std::size_t>(out) * in;
        for (int o = 0; o < out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            double* grow = gw + static_cast<std::size_t>(o) * in;
            for (int k = 0; k < in; ++k) grow[k] += d * acts[l][k];
            gb[o] += d;
        }
        if (l == 0) break;
        prev.assign(in, 0.0);
        for (int o = 0; o < out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            const double* row = w + static_cast<std::size_t>(o) * in;
            for (int k = 0; k < in; ++k) prev[k] += d * row[k];
        }
        if (activation_ == Activation::Tanh)
            for (int k = 0; k < in; ++k) prev[k] *= 1.0 - acts[l][k] * acts[l][k];
        delta.swap(prev);
    }
    return acts[L][0];
}

std::string to_string(HorizonMode mode) {
    switch (mode) {
        case HorizonMode::SeparateNetworks: return "separate";
        case HorizonMode::SharedRaw: return "shared-raw";
        case HorizonMode::SharedScaled: return "shared-scaled";
    }
    return "unknown";
}

HorizonMode horizon_mode_from_string(const std::string& name) {
    if (name == "separate") return HorizonMode::SeparateNetworks;
    if (name == "shared-raw") return HorizonMode::SharedRaw;
    if (name == "shared-scaled") return HorizonMode::SharedScaled;
    throw Error("unknown horizon mode '" + name + "'");
}

NeuralPolicyModel::NeuralPolicyModel(int horizon, int n_actions, int state_dim, double tau,
                                     const NeuralConfig& config)
    : horizon_(horizon), n_actions_(n_actions), state_dim_(state_dim), tau_(tau), encoding_{config.mode} {
    if (horizon < 1 || n_actions < 1 || state_dim < 0) throw Error("NeuralPolicyModel: bad dimensions");
    if (!(tau > 0.0)) throw Error("NeuralPolicyModel: temperature must be positive");
    std::vector<int> sizes{n_actions + state_dim + encoding_.extra_inputs()};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(1);
    RandomSource rng(config.seed);
    const int count = config.mode == HorizonMode::SeparateNetworks ? horizon : 1;
    for (int k = 0; k < count; ++k) networks_.emplace_back(sizes, config.activation, rng, config.output_init_scale);
}

NeuralPolicyModel::NeuralPolicyModel(int horizon, int n_actions, int state_dim, double tau,
                                     HorizonEncoding encoding, std::vector<Mlp> networks)
    : horizon_(horizon), n_actions_(n_actions), state_dim_(state_dim), tau_(tau), encoding_(encoding),
      networks_(std::move(networks)) {
    const std::size_t expected = encoding_.mode == HorizonMode::SeparateNetworks ? horizon : 1;
    if (networks_.size() != expected) throw Error("NeuralPolicyModel: wrong number of networks");
    for (const auto& net : networks_)
        if (net.input_size() != n_actions + state_dim + encoding_.extra_inputs())
            throw Error("NeuralPolicyModel: network input size mismatch");
}

void NeuralPolicyModel::set_tau(double tau) {
    if (!(tau > 0.0)) throw Error("NeuralPolicyModel: temperature must be positive");
    tau_ = tau;
}

std::vector<double> NeuralPolicyModel::encode(int steps_left, int a, const Observation& obs) const {
    if (static_cast<int>(obs.features.size()) != state_dim_)
        throw Error("NeuralPolicyModel: observation has wrong feature size");
    std::vector<double> x(n_actions_ + state_dim_ + encoding_.extra_inputs(), 0.0);
    x[a] = 1.0;
    std::copy(obs.features.begin(), obs.features.end(), x.begin() + n_actions_);
    if (encoding_.extra_inputs() > 0) x.back() = encoding_.encode(steps_left);
    return x;
}

double NeuralPolicyModel::preference(int steps_left, int a, const Observation& obs) const {
    return network(steps_left).forward(encode(steps_left, a, obs));
}

std::vector<double> NeuralPolicyModel::grad_preference(int steps_left, int a, const Observation& obs) const {
    std::vector<double> grad(parameter_count(), 0.0);
    auto [offset, len] = block_range(steps_left);
    network(steps_left).backward(encode(steps_left, a, obs), 1.0, std::span<double>(grad).subspan(offset, len));
    return grad;
}

std::vector<double> NeuralPolicyModel::action_distribution(int steps_left, const Observation& obs) const {
    std::vector<double> h(n_actions_);
    for (int a = 0; a < n_actions_; ++a) h[a] = preference(steps_left, a, obs);
    const std::vector<double> uniform(n_actions_, 1.0 / n_actions_);
    return boltzmann(h, uniform, tau_);
}

std::vector<double> NeuralPolicyModel::baseline(const Observation&) const {
    return std::vector<double>(n_actions_, 1.0 / n_actions_);
}

std::size_t NeuralPolicyModel::parameter_count() const {
    return networks_.size() * networks_.front().parameter_count();
}

std::pair<std::size_t, std::size_t> NeuralPolicyModel::block_range(int steps_left) const {
    const std::size_t P = networks_.front().parameter_count();
    return {net_index(steps_left) * P, P};
}

void NeuralPolicyModel::accumulate_grad_log_policy(int steps_left, int a, const Observation& obs, double scale,
                                                   std::span<double> grad) const {
    // grad log pi(a) = (1/tau) (grad h(a) - sum_b pi(b) grad h(b))
    const auto pi = action_distribution(steps_left, obs);
    auto [offset, len] = block_range(steps_left);
    auto block = grad.subspan(offset, len);
    const Mlp& net = network(steps_left);
    for (int b = 0; b < n_actions_; ++b) {
        const double coeff = scale / tau_ * ((b == a ? 1.0 : 0.0) - pi[b]);
        if (coeff != 0.0) net.backward(encode(steps_left, b, obs), coeff, block);
    }
}

void NeuralPolicyModel::add_to_parameters(std::span<const double> delta) {
    if (delta.size() != parameter_count()) throw Error("NeuralPolicyModel: delta size mismatch");
    std::size_t k = 0;
    for (auto& net : networks_)
        for (double& p : net.parameters()) p += delta[k++];
}

std::vector<double> NeuralPolicyModel::parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& net : networks_) out.insert(out.end(), net.parameters().begin(), net.parameters().end());
    return out;
}

void NeuralPolicyModel::set_parameters(std::span<const double> theta) {
    if (theta.size() != parameter_count()) throw Error("NeuralPolicyModel: parameter size mismatch");
    std::size_t k = 0;
    for (auto& net : networks_)
        for (double& p : net.parameters()) p = theta[k++];
}

nlohmann::json NeuralPolicyModel::checkpoint() const {
    nlohmann::json nets = nlohmann::json::array();
    for (const auto& net : networks_) {
        const auto& sizes = net.sizes();
        nlohmann::json weights = nlohmann::json::array(), biases = nlohmann::json::array();
        std::size_t offset = 0;
        auto params = net.parameters();
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const std::size_t nw = static_cast<std::size_t>(sizes[l + 1]) * sizes[l];
            weights.push_back(std::vector<double>(params.begin() + offset, params.begin() + offset + nw));
            offset += nw;
            biases.push_back(std::vector<double>(params.begin() + offset, params.begin() + offset + sizes[l + 1]));
            offset += sizes[l + 1];
        }
        nets.push_back({{"sizes", sizes}, {"weights", std::move(weights)}, {"biases", std::move(biases)}});
    }
    return {{"kind", "neural"},
            {"horizon", horizon_},
            {"tau", tau_},
            {"n_actions", n_actions_},
            {"state_dim", state_dim_},
            {"mode", to_string(encoding_.mode)},
            {"activation", networks_.front().activation() == Activation::Tanh ? "tanh" : "identity"},
            {"networks", std::move(nets)}};
}

NeuralPolicyModel neural_policy_from_json(const nlohmann::json& j) {
    try {
        const Activation act = j.at("activation").get<std::string>() == "tanh" ? Activation::Tanh
                                                                               : Activation::Identity;
        std::vector<Mlp> nets;
        for (const auto& jn : j.at("networks")) {
            Mlp net(jn.at("sizes").get<std::vector<int>>(), act);
            auto params = net.parameters();
            std::size_t offset = 0;
            const auto& weights = jn.at("weights");
            const auto& biases = jn.at("biases");
            for (std::size_t l = 0; l < weights.size(); ++l) {
                for (double w : weights[l].get<std::vector<double>>()) params[offset++] = w;
                for (double b : biases[l].get<std::vector<double>>()) params[offset++] = b;
            }
            if (offset != net.parameter_count()) throw Error("network json: parameter count mismatch");
            nets.push_back(std::move(net));
        }
        return NeuralPolicyModel(j.at("horizon").get<int>(), j.at("n_actions").get<int>(),
                                 j.at("state_dim").get<int>(), j.at("tau").get<double>(),
                                 HorizonEncoding{horizon_mode_from_string(j.at("mode").get<std::string>())},
                                 std::move(nets));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("network json: ") + e.what());
    }
}

NtkGram ntk_gram(const NeuralPolicyModel& model, int steps_left, std::span<const NtkPoint> eval_set, double tol) {
    if (eval_set.empty()) throw Error("ntk_gram: empty evaluation set");
    const int N = static_cast<int>(eval_set.size());
    auto [offset, len] = model.block_range(steps_left);
    std::vector<std::vector<double>> grads(N);
    for (int x = 0; x < N; ++x) {
        grads[x].assign(len, 0.0);
        model.network(steps_left).backward(model.encode(steps_left, eval_set[x].action, eval_set[x].obs), 1.0,
                                           grads[x]);
    }
    std::vector<double> k(static_cast<std::size_t>(N) * N);
    for (int x = 0; x < N; ++x)
        for (int y = x; y < N; ++y) {
            double dot = 0.0;
            for (std::size_t p = 0; p < len; ++p) dot += grads[x][p] * grads[y][p];
            k[static_cast<std::size_t>(x) * N + y] = k[static_cast<std::size_t>(y) * N + x] = dot;
        }
    NtkGram out;
    out.spectrum = decompose(std::move(k), N);
    out.max_eig = out.spectrum.eigenvalues.front();
    out.min_eig = out.spectrum.eigenvalues.back();
    out.pass = out.max_eig > 0.0 && out.min_eig > tol * out.max_eig;
    return out;
}

nlohmann::json to_json(const NtkGram& ntk) {
    return {{"min_eig", ntk.min_eig}, {"max_eig", ntk.max_eig}, {"pass", ntk.pass}};
}

}  // namespace mpg
