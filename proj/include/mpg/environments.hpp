#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpg/finite_mdp.hpp"
#include "mpg/policy_model.hpp"
#include "mpg/random.hpp"

namespace mpg {

/// Caller-owned episode state. Finite environments store the state index in
/// element 0; CartPole stores (x, x_dot, theta, theta_dot).
using EnvState = std::vector<double>;

struct StepResult {
    EnvState next;
    double reward = 0.0;
    bool terminal = false;
    /// Meaningful only when terminal: the episode ended in success.
    bool success = false;
};

/// Episodic environment contract. Implementations are immutable; `step` is a
/// pure function of (state, action, rng draws).
class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string name() const = 0;
    virtual int action_count() const = 0;
    /// Length of Observation::features.
    virtual int state_dim() const = 0;

    virtual EnvState reset(RandomSource& rng) const = 0;
    virtual StepResult step(const EnvState& state, int action, RandomSource& rng) const = 0;
    virtual Observation observe(const EnvState& state) const = 0;

    /// Whether running out of horizon without a terminal event counts as success.
    virtual bool success_on_timeout() const = 0;

    /// Exact finite model of the same system, when one exists.
    virtual const FiniteMdp* finite_mdp() const { return nullptr; }
    /// One observation per state of finite_mdp(), indexed by state.
    virtual std::vector<Observation> all_observations() const { return {}; }
};

/// Environment view of a FiniteMdp. Reaching a terminal state ends the
/// episode; it counts as success iff the state is in `goal_states`.
class MdpEnvironment : public Environment {
public:
    MdpEnvironment(FiniteMdp mdp, std::string name, std::vector<int> goal_states = {},
                   bool success_on_timeout = false);

    std::string name() const override { return name_; }
    int action_count() const override { return mdp_.n_actions(); }
    int state_dim() const override { return 0; }
    EnvState reset(RandomSource& rng) const override;
    StepResult step(const EnvState& state, int action, RandomSource& rng) const override;
    Observation observe(const EnvState& state) const override;
    bool success_on_timeout() const override { return success_on_timeout_; }
    const FiniteMdp* finite_mdp() const override { return &mdp_; }
    std::vector<Observation> all_observations() const override;

private:
    FiniteMdp mdp_;
    std::string name_;
    std::vector<char> goal_;
    bool success_on_timeout_;
};

/// Single-state bandit with arm means `rewards` and uniform noise of
/// half-width `noise`. Never terminal.
std::unique_ptr<Environment> bandit_env(std::vector<double> rewards, double noise = 0.0);

// ---------------------------------------------------------------------------
// FrozenLake

enum class Cell : char { Start = 'S', Frozen = 'F', Hole = 'H', Goal = 'G' };

enum class LakeAction : int { Left = 0, Down = 1, Right = 2, Up = 3 };

struct LakeShaping {
    double hole = -1.0;
    double wall = -0.05;
    double move = 0.05;
    double goal = 10.0;
};

struct FrozenLakeSpec {
    int size = 4;
    std::vector<Cell> grid;  // row-major size x size
    LakeShaping shaping;

    Cell at(int row, int col) const { return grid[static_cast<std::size_t>(row) * size + col]; }
    int cell_index(int row, int col) const { return row * size + col; }
    int start() const;
    int goal() const;

    /// Parses rows of S/F/H/G characters; throws on malformed layouts.
    static FrozenLakeSpec parse(const std::vector<std::string>& rows, LakeShaping shaping = {});
    /// Rows of the layout, one string per grid row.
    std::vector<std::string> rows() const;

    /// Canonical 4x4 map with the small-map shaping.
    static FrozenLakeSpec standard4x4();
    /// Canonical 8x8 map with wall -0.1 and move +0.01.
    static FrozenLakeSpec standard8x8();
};

struct LakeMove {
    int next = 0;
    double reward = 0.0;
    bool terminal = false;
    bool success = false;
};

/// Deterministic (non-slippery) grid move from a non-terminal cell.
LakeMove lake_move(const FrozenLakeSpec& spec, int cell, int action);

/// Exact MDP: holes and the goal absorbing, rewards attached to the causing
/// (s, a). Initial law is a point mass at Start, or uniform over
/// non-terminal cells when `uniform_initial` is set.
FiniteMdp frozenlake_as_mdp(const FrozenLakeSpec& spec, bool uniform_initial = false);

/// Length of the shortest Start -> Goal path avoiding holes, by BFS; -1 if
/// the goal is unreachable.
int lake_shortest_path(const FrozenLakeSpec& spec);

enum class LakeEncoding { Coordinates, OneHot };

class FrozenLake final : public Environment {
public:
    explicit FrozenLake(FrozenLakeSpec spec, LakeEncoding encoding = LakeEncoding::Coordinates);

    const FrozenLakeSpec& spec() const { return spec_; }

    std::string name() const override;
    int action_count() const override { return 4; }
    int state_dim() const override;
    EnvState reset(RandomSource& rng) const override;
    StepResult step(const EnvState& state, int action, RandomSource& rng) const override;
    /// (row, col) / (size - 1), or the one-hot cell vector.
    Observation observe(const EnvState& state) const override;
    bool success_on_timeout() const override { return false; }
    const FiniteMdp* finite_mdp() const override { return &mdp_; }
    std::vector<Observation> all_observations() const override;

private:
    FrozenLakeSpec spec_;
    LakeEncoding encoding_;
    FiniteMdp mdp_;
};

// ---------------------------------------------------------------------------
// CartPole

struct CartPoleParams {
    double gravity = 9.8;
    double cart_mass = 1.0;
    double pole_mass = 0.1;
    double half_length = 0.5;
    double force = 10.0;
    double dt = 0.02;
    double x_limit = 2.4;
    double theta_limit = 12.0 * 3.14159265358979323846 / 180.0;
    double survive_reward = 1.0;
    double fail_reward = -10.0;
};

struct CartPoleState {
    double x = 0.0;
    double x_dot = 0.0;
    double theta = 0.0;
    double theta_dot = 0.0;

    bool operator==(const CartPoleState&) const = default;
};

struct CartPoleStep {
    CartPoleState next;
    double reward = 0.0;
    bool terminal = false;
};

bool cartpole_failed(const CartPoleState& s, const CartPoleParams& params = {});

/// Explicit Euler step of the classic cart-pole; action 1 pushes
/// right, 0 left. Throws when `state` is already terminal.
CartPoleStep cartpole_step(const CartPoleState& state, int action, const CartPoleParams& params = {});

class CartPole final : public Environment {
public:
    explicit CartPole(CartPoleParams params = {}) : params_(params) {}

    /// Feature scaling applied by observe().
    static constexpr std::array<double, 4> kScale{2.4, 3.0, 0.21, 3.0};

    const CartPoleParams& params() const { return params_; }

    std::string name() const override { return "cartpole"; }
    int action_count() const override { return 2; }
    int state_dim() const override { return 4; }
    /// Each coordinate uniform on [-0.05, 0.05].
    EnvState reset(RandomSource& rng) const override;
    StepResult step(const EnvState& state, int action, RandomSource& rng) const override;
    Observation observe(const EnvState& state) const override;
    bool success_on_timeout() const override { return true; }

private:
    CartPoleParams params_;
};

/// Builds an environment from {"id": "frozenlake"|"cartpole"|"bandit", ...}.
std::unique_ptr<Environment> make_environment(const nlohmann::json& j);

}  // namespace mpg
