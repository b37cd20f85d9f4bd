#include "mpg/softmax_policy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "mpg/error.hpp"

namespace mpg {

namespace {
std::atomic<std::uint64_t> g_clamp_count{0};
}

std::uint64_t softmax_clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }

std::string to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::Tabular: return "tabular";
        case FeatureKind::Custom: return "custom";
        case FeatureKind::RandomFeature: return "random";
    }
    return "unknown";
}

FeatureKind feature_kind_from_string(const std::string& name) {
    if (name == "tabular") return FeatureKind::Tabular;
    if (name == "custom") return FeatureKind::Custom;
    if (name == "random") return FeatureKind::RandomFeature;
    throw Error("unknown feature kind '" + name + "'");
}

FeatureMap FeatureMap::tabular(int n_states, int n_actions, double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw Error("FeatureMap::tabular: scale must be positive");
    FeatureMap map;
    map.scale_ = scale;
    map.n_states_ = n_states;
    map.n_actions_ = n_actions;
    map.dimension_ = n_states * n_actions;
    map.kind_ = FeatureKind::Tabular;
    return map;
}

FeatureMap FeatureMap::custom(int n_states, int n_actions, int dimension, std::vector<double> rows,
                              FeatureKind kind) {
    if (rows.size() != static_cast<std::size_t>(n_states) * n_actions * dimension)
        throw Error("FeatureMap::custom: expected |S|*|A|*P entries");
    if (kind == FeatureKind::Tabular) throw Error("FeatureMap::custom: use FeatureMap::tabular");
    FeatureMap map;
    map.n_states_ = n_states;
    map.n_actions_ = n_actions;
    map.dimension_ = dimension;
    map.kind_ = kind;
    map.rows_ = std::move(rows);
    return map;
}

std::span<const double> FeatureMap::eval(int a, int s) const {
    if (kind_ == FeatureKind::Tabular) {
        // Tabular rows are never stored; materialize lazily on demand.
        static thread_local std::vector<double> scratch;
        scratch.assign(dimension_, 0.0);
        scratch[pair(a, s)] = scale_;
        return scratch;
    }
    return {rows_.data() + pair(a, s) * dimension_, static_cast<std::size_t>(dimension_)};
}

double FeatureMap::preference(std::span<const double> theta, int a, int s) const {
    if (kind_ == FeatureKind::Tabular) return scale_ * theta[pair(a, s)];
    const double* row = rows_.data() + pair(a, s) * dimension_;
    double h = 0.0;
    for (int k = 0; k < dimension_; ++k) h += theta[k] * row[k];
    return h;
}

void FeatureMap::add_scaled(std::span<double> theta, int a, int s, double scale) const {
    if (kind_ == FeatureKind::Tabular) {
        theta[pair(a, s)] += scale * scale_;
        return;
    }
    const double* row = rows_.data() + pair(a, s) * dimension_;
    for (int k = 0; k < dimension_; ++k) theta[k] += scale * row[k];
}

std::vector<double> FeatureMap::gram() const {
    const std::size_t N = static_cast<std::size_t>(n_states_) * n_actions_;
    std::vector<double> g(N * N, 0.0);
    if (kind_ == FeatureKind::Tabular) {
        for (std::size_t i = 0; i < N; ++i) g[i * N + i] = scale_ * scale_;
        return g;
    }
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i; j < N; ++j) {
            double dot = 0.0;
            for (int k = 0; k < dimension_; ++k) dot += rows_[i * dimension_ + k] * rows_[j * dimension_ + k];
            g[i * N + j] = g[j * N + i] = dot;
        }
    }
    return g;
}

std::vector<double> boltzmann(std::span<const double> preferences, std::span<const double> baseline,
                              double tau) {
    const std::size_t A = preferences.size();
    std::vector<double> out(A);
    double top = -INFINITY;
    for (std::size_t a = 0; a < A; ++a) {
        if (!std::isfinite(preferences[a])) {
            std::ostringstream os;
            os << "non-finite preference " << preferences[a] << " for action " << a;
            throw Error(os.str());
        }
        top = std::max(top, preferences[a] / tau);
    }
    double total = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
        double z = preferences[a] / tau - top;
        if (z < kLogitFloor) {
            z = kLogitFloor;
            g_clamp_count.fetch_add(1, std::memory_order_relaxed);
        }
        out[a] = baseline[a] * std::exp(z);
        total += out[a];
    }
    for (auto& p : out) p /= total;
    return out;
}

SoftmaxPolicy::SoftmaxPolicy(std::shared_ptr<const FeatureMap> features, double tau, PolicyTable baseline)
    : features_(std::move(features)), tau_(tau), baseline_(std::move(baseline)) {
    if (!features_) throw Error("SoftmaxPolicy: null feature map");
    if (!(tau_ > 0.0)) throw Error("SoftmaxPolicy: temperature must be positive");
    if (baseline_.n_states() != features_->n_states() || baseline_.n_actions() != features_->n_actions())
        throw Error("SoftmaxPolicy: baseline shape does not match feature map");
    for (double p : baseline_.data())
        if (!(p > 0.0)) throw Error("SoftmaxPolicy: baseline must have full support");
    theta_.assign(features_->dimension(), 0.0);
}

void SoftmaxPolicy::set_tau(double tau) {
    if (!(tau > 0.0)) throw Error("SoftmaxPolicy: temperature must be positive");
    tau_ = tau;
}

std::vector<double> SoftmaxPolicy::action_distribution(int s) const {
    const int A = features_->n_actions();
    std::vector<double> h(A);
    for (int a = 0; a < A; ++a) h[a] = preference(a, s);
    try {
        return boltzmann(h, baseline_.row(s), tau_);
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + " at state " + std::to_string(s));
    }
}

std::vector<double> SoftmaxPolicy::grad_log_policy(int a, int s) const {
    std::vector<double> g(features_->dimension(), 0.0);
    accumulate_grad_log_policy(a, s, 1.0, g);
    return g;
}

void SoftmaxPolicy::accumulate_grad_log_policy(int a, int s, double scale, std::span<double> out) const {
    const auto pi = action_distribution(s);
    const double c = scale / tau_;
    for (int b = 0; b < features_->n_actions(); ++b) {
        const double coeff = c * ((b == a ? 1.0 : 0.0) - pi[b]);
        if (coeff != 0.0) features_->add_scaled(out, b, s, coeff);
    }
}

PolicyTable SoftmaxPolicy::as_table() const {
    PolicyTable table(features_->n_states(), features_->n_actions());
    for (int s = 0; s < features_->n_states(); ++s) {
        const auto pi = action_distribution(s);
        std::copy(pi.begin(), pi.end(), table.row(s).begin());
    }
    return table;
}

PolicyTable as_table(const SoftmaxPolicy& policy, const FiniteMdp& mdp) {
    if (policy.features().n_states() != mdp.n_states() || policy.features().n_actions() != mdp.n_actions())
        throw Error("as_table: policy and MDP dimensions differ");
    return policy.as_table();
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw Error("kl_divergence: size mismatch");
    double kl = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        if (p[a] == 0.0) continue;
        if (q[a] <= 0.0) throw Error("kl_divergence: q(" + std::to_string(a) + ") = 0 where p > 0");
        kl += p[a] * std::log(p[a] / q[a]);
    }
    return std::max(kl, 0.0);
}

ExtendedPolicy::ExtendedPolicy(int horizon, std::shared_ptr<const FeatureMap> features, double tau,
                               PolicyTable baseline) {
    if (horizon < 1) throw Error("ExtendedPolicy: horizon must be at least 1");
    steps_.reserve(horizon);
    for (int i = 0; i < horizon; ++i) steps_.emplace_back(features, tau, baseline);
}

ExtendedPolicy::ExtendedPolicy(std::vector<SoftmaxPolicy> steps) : steps_(std::move(steps)) {
    if (steps_.empty()) throw Error("ExtendedPolicy: horizon must be at least 1");
}

void ExtendedPolicy::set_tau(double tau) {
    for (auto& p : steps_) p.set_tau(tau);
}

std::vector<PolicyTable> ExtendedPolicy::tables() const {
    std::vector<PolicyTable> out;
    out.reserve(steps_.size());
    for (const auto& p : steps_) out.push_back(p.as_table());
    return out;
}

ExtendedPolicy ExtendedPolicy::truncate(int m) const {
    if (m < 1 || m >= horizon()) throw Error("truncate: require 1 <= m < n");
    return ExtendedPolicy(std::vector<SoftmaxPolicy>(steps_.begin(), steps_.begin() + m));
}

double ExtendedPolicy::max_abs_parameter() const {
    double worst = 0.0;
    for (const auto& p : steps_)
        for (double t : p.theta()) worst = std::max(worst, std::abs(t));
    return worst;
}

Trajectory sample_trajectory(const FiniteMdp& mdp, const ExtendedPolicy& policy, RandomSource& rng) {
    const int n = policy.horizon();
    Trajectory traj;
    traj.states.reserve(n + 1);
    int s = rng.categorical(mdp.initial_dist());
    traj.states.push_back(s);
    for (int k = 0; k < n; ++k) {
        const auto pi = policy.step(n - k).action_distribution(s);
        const int a = rng.categorical(pi);
        auto [next, r] = mdp.step(s, a, rng);
        traj.actions.push_back(a);
        traj.rewards.push_back(r);
        traj.states.push_back(next);
        s = next;
    }
    return traj;
}

nlohmann::json to_json(const ExtendedPolicy& policy) {
    nlohmann::json thetas = nlohmann::json::array();
    for (int i = 1; i <= policy.horizon(); ++i) thetas.push_back(policy.step(i).theta());
    const auto& fm = policy.features();
    nlohmann::json j = {{"kind", "linear"},
                        {"horizon", policy.horizon()},
                        {"tau", policy.tau()},
                        {"feature_kind", to_string(fm.kind())},
                        {"n_states", fm.n_states()},
                        {"n_actions", fm.n_actions()},
                        {"thetas", std::move(thetas)},
                        {"baseline", to_json(policy.baseline())}};
    if (fm.kind() == FeatureKind::Tabular && fm.tabular_scale() != 1.0) j["feature_scale"] = fm.tabular_scale();
    if (fm.kind() != FeatureKind::Tabular) {
        std::vector<double> rows;
        for (int s = 0; s < fm.n_states(); ++s)
            for (int a = 0; a < fm.n_actions(); ++a) {
                auto r = fm.eval(a, s);
                rows.insert(rows.end(), r.begin(), r.end());
            }
        j["features"] = {{"dimension", fm.dimension()}, {"rows", std::move(rows)}};
    }
    return j;
}

ExtendedPolicy extended_policy_from_json(const nlohmann::json& j) {
    try {
        const int n = j.at("horizon").get<int>();
        const double tau = j.at("tau").get<double>();
        PolicyTable baseline = policy_table_from_json(j.at("baseline"));
        const FeatureKind kind = feature_kind_from_string(j.at("feature_kind").get<std::string>());
        std::shared_ptr<const FeatureMap> features;
        if (kind == FeatureKind::Tabular) {
            features = std::make_shared<FeatureMap>(
                FeatureMap::tabular(baseline.n_states(), baseline.n_actions(), j.value("feature_scale", 1.0)));
        } else {
            const auto& f = j.at("features");
            features = std::make_shared<FeatureMap>(FeatureMap::custom(
                baseline.n_states(), baseline.n_actions(), f.at("dimension").get<int>(),
                f.at("rows").get<std::vector<double>>(), kind));
        }
        ExtendedPolicy policy(n, features, tau, baseline);
        const auto& thetas = j.at("thetas");
        if (static_cast<int>(thetas.size()) != n) throw Error("policy json: thetas length differs from horizon");
        for (int i = 1; i <= n; ++i) {
            auto theta = thetas[i - 1].get<std::vector<double>>();
            if (static_cast<int>(theta.size()) != features->dimension())
                throw Error("policy json: theta has wrong dimension");
            policy.step(i).theta() = std::move(theta);
        }
        return policy;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("policy json: ") + e.what());
    }
}

}  // namespace mpg
