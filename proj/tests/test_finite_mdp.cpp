#include <cmath>
#include <vector>

#include "doctest.h"
#include "mpg/environments.hpp"
#include "mpg/error.hpp"
#include "mpg/finite_mdp.hpp"
#include "oracles.hpp"

using namespace mpg;

namespace {

FiniteMdp two_state_cycle() {
    FiniteMdp m(2, 1);
    m.set_transition(0, 0, 1, 1.0);
    m.set_transition(1, 0, 0, 1.0);
    m.set_reward(0, 0, 1.0);
    m.set_reward(1, 0, 1.0);
    m.set_initial_dist({1.0, 0.0});
    return m;
}

PolicyTable random_table(int S, int A, RandomSource& rng) {
    PolicyTable t(S, A);
    for (int s = 0; s < S; ++s) {
        double z = 0.0;
        for (int a = 0; a < A; ++a) z += t(s, a) = rng.uniform(0.1, 1.0);
        for (int a = 0; a < A; ++a) t(s, a) /= z;
    }
    return t;
}

}  // namespace

TEST_CASE("deterministic two-state cycle is valid and irreducible") {
    const ValidationReport r = validate(two_state_cycle());
    CHECK(r.valid());
    CHECK(r.irreducible);
}

TEST_CASE("a row summing to 0.9 is reported with its location") {
    FiniteMdp m = two_state_cycle();
    m.set_transition(0, 0, 1, 0.9);
    const ValidationReport r = validate(m);
    REQUIRE_FALSE(r.valid());
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].find("row (0,0) sums to 0.9") != std::string::npos);
}

TEST_CASE("negative probabilities and a bad initial law are violations") {
    FiniteMdp m = two_state_cycle();
    m.set_initial_dist({0.5, 0.4});
    CHECK_FALSE(validate(m).valid());
    FiniteMdp neg = two_state_cycle();
    neg.set_transition(1, 0, 0, 1.2);
    neg.set_transition(1, 0, 1, -0.2);
    CHECK_FALSE(validate(neg).valid());
}

TEST_CASE("FrozenLake 4x4 exports a valid but reducible MDP") {
    const ValidationReport r = validate(frozenlake_as_mdp(FrozenLakeSpec::standard4x4()));
    CHECK(r.valid());
    CHECK_FALSE(r.irreducible);
}

TEST_CASE("propagate: deterministic chain moves point mass") {
    const FiniteMdp m = two_state_cycle();
    const StateDistribution next = propagate(m, StateDistribution::point_mass(2, 0), PolicyTable::uniform(2, 1));
    CHECK(next.probs[0] == 0.0);
    CHECK(next.probs[1] == 1.0);
}

TEST_CASE("propagate: uniform is stationary for doubly stochastic transitions") {
    FiniteMdp m(3, 2);
    for (int s = 0; s < 3; ++s) {
        m.set_transition(s, 0, (s + 1) % 3, 1.0);
        m.set_transition(s, 1, s, 0.5);
        m.set_transition(s, 1, (s + 2) % 3, 0.5);
    }
    m.set_initial_dist({1.0 / 3, 1.0 / 3, 1.0 / 3});
    const StateDistribution out = propagate(m, StateDistribution{{1.0 / 3, 1.0 / 3, 1.0 / 3}}, PolicyTable::uniform(3, 2));
    for (double p : out.probs) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("propagate matches the triple-loop oracle and stays on the simplex") {
    RandomSource rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const FiniteMdp m = random_mdp(3, 2, rng);
        const PolicyTable pi = random_table(3, 2, rng);
        StateDistribution d{m.initial_dist()};
        for (int k = 0; k < 5; ++k) {
            const std::vector<double> expect = oracle::propagate_triple_loop(m, d.probs, pi);
            d = propagate(m, d, pi);
            double total = 0.0;
            for (int s = 0; s < 3; ++s) {
                CHECK(std::abs(d.probs[s] - expect[s]) < 1e-14);
                total += d.probs[s];
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
            CHECK(d.is_valid());
        }
    }
}

TEST_CASE("sample_trajectory: single-state horizon-one path") {
    FiniteMdp m(1, 2);
    m.set_transition(0, 0, 0, 1.0);
    m.set_transition(0, 1, 0, 1.0);
    m.set_reward(0, 0, 1.0);
    m.set_initial_dist({1.0});
    RandomSource rng(5);
    std::vector<PolicyTable> steps{PolicyTable::uniform(1, 2)};
    const Trajectory t = sample_trajectory(m, steps, rng);
    CHECK(t.is_consistent());
    CHECK(t.horizon() == 1);
    CHECK(t.rewards[0] == (t.actions[0] == 0 ? 1.0 : 0.0));
}

TEST_CASE("sample_trajectory: deterministic MDP and greedy policies give the unique path") {
    FiniteMdp m(3, 2);
    for (int s = 0; s < 3; ++s) {
        m.set_transition(s, 0, (s + 1) % 3, 1.0);
        m.set_transition(s, 1, s, 1.0);
        m.set_reward(s, 0, s);
    }
    m.set_initial_dist({1.0, 0.0, 0.0});
    // The 3-step policy moves, the 2-step policy stays, the 1-step policy moves.
    PolicyTable move(3, 2), stay(3, 2);
    for (int s = 0; s < 3; ++s) {
        move(s, 0) = 1.0;
        stay(s, 1) = 1.0;
    }
    std::vector<PolicyTable> steps{move, stay, move};
    RandomSource rng(1);
    const Trajectory t = sample_trajectory(m, steps, rng);
    CHECK(t.states == std::vector<int>{0, 1, 1, 2});
    CHECK(t.actions == std::vector<int>{0, 1, 0});
    CHECK(t.rewards == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("empirical state laws match exact propagation within 3 sigma") {
    RandomSource rng(17);
    const FiniteMdp m = random_mdp(4, 2, rng);
    std::vector<PolicyTable> steps{random_table(4, 2, rng), random_table(4, 2, rng), random_table(4, 2, rng)};
    const auto laws = state_laws(m, steps);
    const int N = 100000;
    std::vector<std::vector<int>> counts(4, std::vector<int>(4, 0));
    for (int k = 0; k < N; ++k) {
        const Trajectory t = sample_trajectory(m, steps, rng);
        for (int step = 0; step <= 3; ++step) ++counts[step][t.states[step]];
    }
    for (int step = 0; step <= 3; ++step)
        for (int s = 0; s < 4; ++s) {
            const double p = laws[step].probs[s];
            const double sigma = std::sqrt(p * (1 - p) / N);
            CHECK(std::abs(counts[step][s] / double(N) - p) < 3.0 * sigma + 1e-12);
        }
}

TEST_CASE("terminal states absorb with zero reward") {
    const FiniteMdp m = frozenlake_as_mdp(FrozenLakeSpec::standard4x4(), true);
    RandomSource rng(8);
    std::vector<PolicyTable> steps(12, PolicyTable::uniform(m.n_states(), 4));
    for (int k = 0; k < 2000; ++k) {
        const Trajectory t = sample_trajectory(m, steps, rng);
        for (int step = 0; step < t.horizon(); ++step)
            if (m.is_terminal(t.states[step])) {
                CHECK(t.states[step + 1] == t.states[step]);
                CHECK(t.rewards[step] == 0.0);
            }
    }
}

TEST_CASE("reward noise is zero mean and bounded") {
    FiniteMdp m(1, 1);
    m.set_transition(0, 0, 0, 1.0);
    m.set_reward(0, 0, 2.0);
    m.set_reward_noise(0, 0, 0.5);
    m.set_initial_dist({1.0});
    RandomSource rng(4);
    double sum = 0.0;
    const int N = 100000;
    for (int k = 0; k < N; ++k) {
        const double r = m.step(0, 0, rng).second;
        CHECK(std::abs(r - 2.0) <= 0.5);
        sum += r;
    }
    const double sigma = 0.5 / std::sqrt(3.0) / std::sqrt(double(N));
    CHECK(std::abs(sum / N - 2.0) < 3 * sigma);
    CHECK(m.reward_bound() == doctest::Approx(2.5));
}

TEST_CASE("json round trip and malformed input") {
    RandomSource rng(9);
    FiniteMdp m = random_mdp(3, 2, rng);
    m.make_terminal(2);
    const FiniteMdp back = finite_mdp_from_json(to_json(m));
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) {
            CHECK(back.reward(s, a) == m.reward(s, a));
            for (int t = 0; t < 3; ++t) CHECK(back.transition(s, a, t) == m.transition(s, a, t));
        }
    CHECK(back.is_terminal(2));
    CHECK(back.initial_dist() == m.initial_dist());
    nlohmann::json bad = to_json(m);
    bad["terminal"] = {7};
    CHECK_THROWS_AS(finite_mdp_from_json(bad), Error);
    CHECK_THROWS_AS(FiniteMdp(0, 2), Error);
}

TEST_CASE("random_mdp yields valid dense models") {
    RandomSource rng(21);
    for (int k = 0; k < 10; ++k) CHECK(validate(random_mdp(5, 3, rng)).valid());
}
