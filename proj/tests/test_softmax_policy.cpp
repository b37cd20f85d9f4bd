#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "mpg/error.hpp"
#include "mpg/finite_mdp.hpp"
#include "mpg/softmax_policy.hpp"
#include "oracles.hpp"

using namespace mpg;

namespace {

SoftmaxPolicy random_policy(int S, int A, double tau, RandomSource& rng, double c = 1.0) {
    SoftmaxPolicy p(std::make_shared<const FeatureMap>(FeatureMap::tabular(S, A, c)), tau, PolicyTable::uniform(S, A));
    for (double& t : p.theta()) t = rng.normal();
    return p;
}

}  // namespace

TEST_CASE("constant preferences return the baseline") {
    const std::vector<double> pbar{0.2, 0.5, 0.3};
    const auto pi = boltzmann(std::vector<double>{1.7, 1.7, 1.7}, pbar, 0.3);
    for (int a = 0; a < 3; ++a) CHECK(pi[a] == doctest::Approx(pbar[a]).epsilon(1e-15));
}

TEST_CASE("closed form: h = (tau ln 2, 0) gives (2/3, 1/3)") {
    const double tau = 0.7;
    const auto pi = boltzmann(std::vector<double>{tau * std::log(2.0), 0.0}, std::vector<double>{0.5, 0.5}, tau);
    CHECK(std::abs(pi[0] - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(pi[1] - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("tabular action distribution matches the naive formula") {
    RandomSource rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const SoftmaxPolicy p = random_policy(4, 3, 0.5, rng);
        for (int s = 0; s < 4; ++s) {
            std::vector<double> h(3);
            for (int a = 0; a < 3; ++a) h[a] = p.theta()[s * 3 + a];
            const auto expect = oracle::naive_softmax(h, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 0.5);
            const auto got = p.action_distribution(s);
            double total = 0.0;
            for (int a = 0; a < 3; ++a) {
                CHECK(std::abs(got[a] - expect[a]) < 1e-12);
                CHECK(got[a] > 1e-300);
                total += got[a];
            }
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("shift invariance") {
    RandomSource rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> h{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        const std::vector<double> pbar{0.1, 0.2, 0.3, 0.4};
        const auto base = boltzmann(h, pbar, 0.2);
        const double c = 100.0 * rng.normal();
        for (double& x : h) x += c;
        const auto shifted = boltzmann(h, pbar, 0.2);
        for (int a = 0; a < 4; ++a) CHECK(std::abs(base[a] - shifted[a]) < 1e-12);
    }
}

TEST_CASE("extreme preferences keep full support and count clamps") {
    const std::uint64_t before = softmax_clamp_count();
    const auto pi = boltzmann(std::vector<double>{0.0, -1e6}, std::vector<double>{0.5, 0.5}, 0.01);
    CHECK(pi[1] > 0.0);
    CHECK(pi[0] == doctest::Approx(1.0));
    CHECK(softmax_clamp_count() > before);
    CHECK_THROWS_AS(boltzmann(std::vector<double>{0.0, NAN}, std::vector<double>{0.5, 0.5}, 1.0), Error);
}

TEST_CASE("expected score is zero") {
    RandomSource rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const SoftmaxPolicy p = random_policy(3, 4, 0.3 + rng.uniform(), rng);
        const int s = static_cast<int>(rng.next() % 3);
        const auto pi = p.action_distribution(s);
        std::vector<double> acc(p.theta().size(), 0.0);
        for (int a = 0; a < 4; ++a) p.accumulate_grad_log_policy(a, s, pi[a], acc);
        for (double x : acc) CHECK(std::abs(x) < 1e-10);
    }
}

TEST_CASE("tabular two-action score component is (1 - pi)/tau") {
    RandomSource rng(4);
    const double tau = 0.4;
    const SoftmaxPolicy p = random_policy(2, 2, tau, rng);
    for (int s = 0; s < 2; ++s)
        for (int a = 0; a < 2; ++a) {
            const auto g = p.grad_log_policy(a, s);
            const double pi = p.action_distribution(s)[a];
            CHECK(g[s * 2 + a] == doctest::Approx((1.0 - pi) / tau).epsilon(1e-14));
            CHECK(g[s * 2 + (1 - a)] == doctest::Approx(-(1.0 - pi) / tau).epsilon(1e-14));
            CHECK(g[(1 - s) * 2] == 0.0);
        }
}

TEST_CASE("score matches finite differences of log pi") {
    RandomSource rng(5);
    for (double c : {1.0, 3.0}) {
        SoftmaxPolicy p = random_policy(3, 3, 0.6, rng, c);
        for (int s = 0; s < 3; ++s)
            for (int a = 0; a < 3; ++a) {
                const auto g = p.grad_log_policy(a, s);
                const auto fd = oracle::finite_difference(
                    [&](const std::vector<double>& th) {
                        SoftmaxPolicy q = p;
                        q.theta() = th;
                        return std::log(q.action_distribution(s)[a]);
                    },
                    p.theta(), 1e-5);
                double scale = 0.0;
                for (double x : fd) scale = std::max(scale, std::abs(x));
                for (std::size_t k = 0; k < g.size(); ++k) {
                    if (fd[k] == 0.0 && g[k] == 0.0) continue;
                    INFO("c=" << c << " s=" << s << " a=" << a << " k=" << k << " g=" << g[k] << " fd=" << fd[k]);
                    CHECK(std::abs(g[k] - fd[k]) / std::max(std::abs(fd[k]), 1e-4 * scale) < 1e-6);
                }
            }
    }
}

TEST_CASE("kl divergence") {
    const std::vector<double> p{1.0, 0.0}, q{0.5, 0.5};
    CHECK(kl_divergence(q, q) == 0.0);
    CHECK(kl_divergence(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(kl_divergence(q, p), Error);
    RandomSource rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(5), b(5);
        double za = 0.0, zb = 0.0;
        for (int k = 0; k < 5; ++k) {
            za += a[k] = rng.uniform();
            zb += b[k] = rng.uniform() + 1e-3;
        }
        for (int k = 0; k < 5; ++k) {
            a[k] /= za;
            b[k] /= zb;
        }
        CHECK(std::abs(kl_divergence(a, b) - oracle::kl_long_double(a, b)) < 1e-12);
    }
}

TEST_CASE("as_table: zero parameters, single state, and row round trip") {
    RandomSource rng(7);
    const FiniteMdp mdp = random_mdp(4, 3, rng);
    PolicyTable pbar(4, 3);
    for (int s = 0; s < 4; ++s) {
        pbar(s, 0) = 0.2;
        pbar(s, 1) = 0.3;
        pbar(s, 2) = 0.5;
    }
    const SoftmaxPolicy zero(std::make_shared<const FeatureMap>(FeatureMap::tabular(4, 3)), 1.0, pbar);
    CHECK(as_table(zero, mdp) == pbar);

    const SoftmaxPolicy p = random_policy(4, 3, 0.8, rng);
    const PolicyTable t = as_table(p, mdp);
    for (int s = 0; s < 4; ++s) {
        const auto row = p.action_distribution(s);
        for (int a = 0; a < 3; ++a) CHECK(t(s, a) == row[a]);
    }

    FiniteMdp single(1, 3);
    for (int a = 0; a < 3; ++a) single.set_transition(0, a, 0, 1.0);
    single.set_initial_dist({1.0});
    const SoftmaxPolicy q = random_policy(1, 3, 0.5, rng);
    const auto row = q.action_distribution(0);
    for (int a = 0; a < 3; ++a) CHECK(as_table(q, single)(0, a) == row[a]);

    CHECK_THROWS_AS(as_table(q, mdp), Error);
}

TEST_CASE("scaled tabular features") {
    const FeatureMap f = FeatureMap::tabular(2, 2, 3.0);
    const auto g = f.gram();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(g[i * 4 + j] == (i == j ? 9.0 : 0.0));
    std::vector<double> theta(4, 0.0);
    theta[3] = 0.5;
    CHECK(f.preference(theta, 1, 1) == 1.5);
    CHECK_THROWS_AS(FeatureMap::tabular(2, 2, 0.0), Error);
}

TEST_CASE("extended policy: steps, truncation and json") {
    RandomSource rng(8);
    auto features = std::make_shared<const FeatureMap>(FeatureMap::tabular(3, 2, 2.0));
    ExtendedPolicy pol(4, features, 0.5, PolicyTable::uniform(3, 2));
    for (int i = 1; i <= 4; ++i)
        for (double& t : pol.step(i).theta()) t = rng.normal();
    const ExtendedPolicy cut = pol.truncate(3);
    CHECK(cut.horizon() == 3);
    for (int i = 1; i <= 3; ++i) CHECK(cut.step(i).theta() == pol.step(i).theta());
    const ExtendedPolicy back = extended_policy_from_json(to_json(pol));
    CHECK(back.horizon() == 4);
    CHECK(back.tau() == 0.5);
    CHECK(back.features().tabular_scale() == 2.0);
    for (int i = 1; i <= 4; ++i) CHECK(back.step(i).theta() == pol.step(i).theta());
    pol.set_tau(0.1);
    for (int i = 1; i <= 4; ++i) CHECK(pol.step(i).tau() == 0.1);
    CHECK_THROWS_AS(pol.set_tau(-1.0), Error);
}
