#include "mpg/environments.hpp"

#include <cmath>
#include <deque>

#include "mpg/error.hpp"

namespace mpg {

namespace {

int state_index(const EnvState& state) {
    if (state.size() != 1) throw Error("finite environment: state must hold one index");
    return static_cast<int>(state[0]);
}

}  // namespace

MdpEnvironment::MdpEnvironment(FiniteMdp mdp, std::string name, std::vector<int> goal_states,
                               bool success_on_timeout)
    : mdp_(std::move(mdp)), name_(std::move(name)), goal_(mdp_.n_states(), 0),
      success_on_timeout_(success_on_timeout) {
    for (int g : goal_states) {
        if (g < 0 || g >= mdp_.n_states()) throw Error("MdpEnvironment: goal state out of range");
        goal_[g] = 1;
    }
}

EnvState MdpEnvironment::reset(RandomSource& rng) const {
    return {static_cast<double>(rng.categorical(mdp_.initial_dist()))};
}

StepResult MdpEnvironment::step(const EnvState& state, int action, RandomSource& rng) const {
    const int s = state_index(state);
    if (mdp_.is_terminal(s)) throw Error("MdpEnvironment: stepping a terminal state");
    auto [next, reward] = mdp_.step(s, action, rng);
    StepResult out;
    out.next = {static_cast<double>(next)};
    out.reward = reward;
    out.terminal = mdp_.is_terminal(next);
    out.success = out.terminal && goal_[next];
    return out;
}

Observation MdpEnvironment::observe(const EnvState& state) const { return {state_index(state), {}}; }

std::vector<Observation> MdpEnvironment::all_observations() const {
    std::vector<Observation> out(mdp_.n_states());
    for (int s = 0; s < mdp_.n_states(); ++s) out[s].index = s;
    return out;
}

std::unique_ptr<Environment> bandit_env(std::vector<double> rewards, double noise) {
    if (rewards.empty()) throw Error("bandit_env: need at least one arm");
    FiniteMdp mdp(1, static_cast<int>(rewards.size()));
    for (int a = 0; a < mdp.n_actions(); ++a) {
        if (!std::isfinite(rewards[a])) throw Error("bandit_env: rewards must be finite");
        mdp.set_transition(0, a, 0, 1.0);
        mdp.set_reward(0, a, rewards[a]);
        if (noise > 0.0) mdp.set_reward_noise(0, a, noise);
    }
    return std::make_unique<MdpEnvironment>(std::move(mdp), "bandit", std::vector<int>{}, true);
}

// ---------------------------------------------------------------------------

int FrozenLakeSpec::start() const {
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (grid[k] == Cell::Start) return static_cast<int>(k);
    throw Error("FrozenLakeSpec: no start cell");
}

int FrozenLakeSpec::goal() const {
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (grid[k] == Cell::Goal) return static_cast<int>(k);
    throw Error("FrozenLakeSpec: no goal cell");
}

FrozenLakeSpec FrozenLakeSpec::parse(const std::vector<std::string>& rows, LakeShaping shaping) {
    const int k = static_cast<int>(rows.size());
    if (k < 2) throw Error("FrozenLake layout: need at least 2 rows");
    FrozenLakeSpec spec;
    spec.size = k;
    spec.shaping = shaping;
    int starts = 0, goals = 0;
    for (int r = 0; r < k; ++r) {
        if (static_cast<int>(rows[r].size()) != k)
            throw Error("FrozenLake layout: row " + std::to_string(r) + " is not " + std::to_string(k) + " wide");
        for (char c : rows[r]) {
            switch (c) {
                case 'S': ++starts; break;
                case 'G': ++goals; break;
                case 'F':
                case 'H': break;
                default: throw Error(std::string("FrozenLake layout: unknown cell '") + c + "'");
            }
            spec.grid.push_back(static_cast<Cell>(c));
        }
    }
    if (starts != 1 || goals != 1) throw Error("FrozenLake layout: need exactly one S and one G");
    return spec;
}

std::vector<std::string> FrozenLakeSpec::rows() const {
    std::vector<std::string> out(size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) out[r].push_back(static_cast<char>(at(r, c)));
    return out;
}

FrozenLakeSpec FrozenLakeSpec::standard4x4() { return parse({"SFFF", "FHFH", "FFFH", "HFFG"}); }

FrozenLakeSpec FrozenLakeSpec::standard8x8() {
    LakeShaping shaping;
    shaping.wall = -0.1;
    shaping.move = 0.01;
    return parse({"SFFFFFFF", "FFFFFFFF", "FFFHFFFF", "FFFFFHFF", "FFFHFFFF", "FHHFFFHF", "FHFFHFHF",
                  "FFFHFFFG"},
                 shaping);
}

LakeMove lake_move(const FrozenLakeSpec& spec, int cell, int action) {
    if (action < 0 || action > 3) throw Error("FrozenLake: action out of range");
    const Cell here = spec.grid.at(cell);
    if (here == Cell::Hole || here == Cell::Goal) throw Error("FrozenLake: stepping a terminal cell");
    int r = cell / spec.size, c = cell % spec.size;
    int nr = r, nc = c;
    switch (static_cast<LakeAction>(action)) {
        case LakeAction::Left: --nc; break;
        case LakeAction::Down: ++nr; break;
        case LakeAction::Right: ++nc; break;
        case LakeAction::Up: --nr; break;
    }
    LakeMove out;
    if (nr < 0 || nr >= spec.size || nc < 0 || nc >= spec.size) {
        out.next = cell;
        out.reward = spec.shaping.wall;
        return out;
    }
    out.next = spec.cell_index(nr, nc);
    switch (spec.at(nr, nc)) {
        case Cell::Hole:
            out.reward = spec.shaping.hole;
            out.terminal = true;
            break;
        case Cell::Goal:
            out.reward = spec.shaping.goal;
            out.terminal = true;
            out.success = true;
            break;
        default: out.reward = spec.shaping.move; break;
    }
    return out;
}

FiniteMdp frozenlake_as_mdp(const FrozenLakeSpec& spec, bool uniform_initial) {
    const int S = spec.size * spec.size;
    FiniteMdp mdp(S, 4);
    std::vector<double> init(S, 0.0);
    int live = 0;
    for (int s = 0; s < S; ++s) {
        const Cell cell = spec.grid[s];
        if (cell == Cell::Hole || cell == Cell::Goal) {
            mdp.make_terminal(s);
            continue;
        }
        ++live;
        for (int a = 0; a < 4; ++a) {
            const LakeMove m = lake_move(spec, s, a);
            mdp.set_transition(s, a, m.next, 1.0);
            mdp.set_reward(s, a, m.reward);
        }
    }
    if (uniform_initial) {
        for (int s = 0; s < S; ++s)
            if (!mdp.is_terminal(s)) init[s] = 1.0 / live;
    } else {
        init[spec.start()] = 1.0;
    }
    mdp.set_initial_dist(std::move(init));
    return mdp;
}

int lake_shortest_path(const FrozenLakeSpec& spec) {
    const int S = spec.size * spec.size;
    std::vector<int> dist(S, -1);
    std::deque<int> queue{spec.start()};
    dist[spec.start()] = 0;
    while (!queue.empty()) {
        const int s = queue.front();
        queue.pop_front();
        if (spec.grid[s] == Cell::Goal) return dist[s];
        if (spec.grid[s] == Cell::Hole) continue;
        for (int a = 0; a < 4; ++a) {
            const int t = lake_move(spec, s, a).next;
            if (dist[t] < 0) {
                dist[t] = dist[s] + 1;
                queue.push_back(t);
            }
        }
    }
    return -1;
}

FrozenLake::FrozenLake(FrozenLakeSpec spec, LakeEncoding encoding)
    : spec_(std::move(spec)), encoding_(encoding), mdp_(frozenlake_as_mdp(spec_)) {}

std::string FrozenLake::name() const {
    return "frozenlake" + std::to_string(spec_.size) + "x" + std::to_string(spec_.size);
}

int FrozenLake::state_dim() const {
    return encoding_ == LakeEncoding::Coordinates ? 2 : spec_.size * spec_.size;
}

EnvState FrozenLake::reset(RandomSource&) const { return {static_cast<double>(spec_.start())}; }

StepResult FrozenLake::step(const EnvState& state, int action, RandomSource&) const {
    const LakeMove m = lake_move(spec_, state_index(state), action);
    return {{static_cast<double>(m.next)}, m.reward, m.terminal, m.success};
}

Observation FrozenLake::observe(const EnvState& state) const {
    const int s = state_index(state);
    Observation obs{s, {}};
    if (encoding_ == LakeEncoding::Coordinates) {
        const double scale = 1.0 / (spec_.size - 1);
        obs.features = {(s / spec_.size) * scale, (s % spec_.size) * scale};
    } else {
        obs.features.assign(spec_.size * spec_.size, 0.0);
        obs.features[s] = 1.0;
    }
    return obs;
}

std::vector<Observation> FrozenLake::all_observations() const {
    std::vector<Observation> out;
    for (int s = 0; s < spec_.size * spec_.size; ++s) out.push_back(observe({static_cast<double>(s)}));
    return out;
}

// ---------------------------------------------------------------------------

bool cartpole_failed(const CartPoleState& s, const CartPoleParams& p) {
    return std::abs(s.x) > p.x_limit || std::abs(s.theta) > p.theta_limit;
}

CartPoleStep cartpole_step(const CartPoleState& s, int action, const CartPoleParams& p) {
    if (action != 0 && action != 1) throw Error("cartpole_step: action must be 0 or 1");
    if (cartpole_failed(s, p)) throw Error("cartpole_step: stepping a terminal state");
    const double total_mass = p.cart_mass + p.pole_mass;
    const double pole_moment = p.pole_mass * p.half_length;
    const double force = action == 1 ? p.force : -p.force;
    const double cos_t = std::cos(s.theta);
    const double sin_t = std::sin(s.theta);
    const double temp = (force + pole_moment * s.theta_dot * s.theta_dot * sin_t) / total_mass;
    const double theta_acc = (p.gravity * sin_t - cos_t * temp) /
                             (p.half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - pole_moment * theta_acc * cos_t / total_mass;

    CartPoleStep out;
    out.next.x = s.x + p.dt * s.x_dot;
    out.next.x_dot = s.x_dot + p.dt * x_acc;
    out.next.theta = s.theta + p.dt * s.theta_dot;
    out.next.theta_dot = s.theta_dot + p.dt * theta_acc;
    out.terminal = cartpole_failed(out.next, p);
    out.reward = out.terminal ? p.fail_reward : p.survive_reward;
    return out;
}

EnvState CartPole::reset(RandomSource& rng) const {
    EnvState s(4);
    for (double& x : s) x = rng.uniform(-0.05, 0.05);
    return s;
}

StepResult CartPole::step(const EnvState& state, int action, RandomSource&) const {
    if (state.size() != 4) throw Error("CartPole: state must have 4 components");
    const CartPoleStep r = cartpole_step({state[0], state[1], state[2], state[3]}, action, params_);
    return {{r.next.x, r.next.x_dot, r.next.theta, r.next.theta_dot}, r.reward, r.terminal, false};
}

Observation CartPole::observe(const EnvState& state) const {
    Observation obs;
    obs.features.resize(4);
    for (int k = 0; k < 4; ++k) obs.features[k] = state.at(k) / kScale[k];
    return obs;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Environment> make_environment(const nlohmann::json& j) {
    try {
        const std::string id = j.at("id").get<std::string>();
        if (id == "frozenlake") {
            const int size = j.value("size", 4);
            FrozenLakeSpec spec = size == 8 ? FrozenLakeSpec::standard8x8() : FrozenLakeSpec::standard4x4();
            if (size != 4 && size != 8 && !j.contains("layout"))
                throw Error("frozenlake: non-standard size needs an explicit layout");
            if (j.contains("layout")) spec = FrozenLakeSpec::parse(j.at("layout").get<std::vector<std::string>>(), spec.shaping);
            if (j.contains("shaping")) {
                const auto& sh = j.at("shaping");
                spec.shaping.hole = sh.value("hole", spec.shaping.hole);
                spec.shaping.wall = sh.value("wall", spec.shaping.wall);
                spec.shaping.move = sh.value("move", spec.shaping.move);
                spec.shaping.goal = sh.value("goal", spec.shaping.goal);
            }
            const std::string enc = j.value("encoding", "coordinates");
            if (enc != "coordinates" && enc != "onehot") throw Error("frozenlake: unknown encoding '" + enc + "'");
            return std::make_unique<FrozenLake>(std::move(spec),
                                                enc == "onehot" ? LakeEncoding::OneHot : LakeEncoding::Coordinates);
        }
        if (id == "cartpole") return std::make_unique<CartPole>();
        if (id == "bandit") return bandit_env(j.at("rewards").get<std::vector<double>>(), j.value("noise", 0.0));
        throw Error("unknown environment id '" + id + "'");
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("environment config: ") + e.what());
    }
}

}  // namespace mpg
