#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "mpg/certificates.hpp"
#include "mpg/error.hpp"
#include "mpg/soft_dp.hpp"
#include "mpg/train.hpp"
#include "oracles.hpp"

using namespace mpg;

namespace {

std::vector<double> random_psd(int N, int rank, RandomSource& rng) {
    std::vector<std::vector<double>> cols(rank, std::vector<double>(N));
    for (auto& c : cols)
        for (double& x : c) x = rng.normal();
    std::vector<double> g(static_cast<std::size_t>(N) * N, 0.0);
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c)
            for (const auto& v : cols) g[r * N + c] += v[r] * v[c];
    return g;
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

TEST_CASE("decompose: 2x2 closed form") {
    const GramSpectrum sp = decompose({2.0, 1.0, 1.0, 2.0}, 2);
    CHECK(sp.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(sp.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(std::abs(sp.eigenvectors[0][0]) - std::sqrt(0.5)) < 1e-14);
    CHECK(sp.eigenvectors[0][0] * sp.eigenvectors[0][1] > 0.0);
    CHECK(sp.eigenvectors[1][0] * sp.eigenvectors[1][1] < 0.0);
}

TEST_CASE("decompose: random PSD matrices reconstruct and are orthonormal") {
    RandomSource rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const int N = 3 + trial;
        const GramSpectrum sp = decompose(random_psd(N, N - trial % 3, rng), N);
        CHECK(sp.reconstruction_error() < 1e-10);
        CHECK(sp.orthonormality_error() < 1e-12);
        for (int j = 1; j < N; ++j) CHECK(sp.eigenvalues[j] <= sp.eigenvalues[j - 1]);
        CHECK(sp.eigenvalues.back() > -1e-10);
    }
}

TEST_CASE("decompose rejects bad input") {
    CHECK_THROWS_AS(decompose({1.0, 0.5, 0.0, 1.0}, 2), Error);
    CHECK_THROWS_AS(decompose({1.0, 0.0, 0.0}, 2), Error);
    CHECK_THROWS_AS(decompose({1.0, NAN, NAN, 1.0}, 2), Error);
}

TEST_CASE("scaled tabular kernel has every eigenvalue c^2") {
    const GramSpectrum sp = feature_spectrum(FeatureMap::tabular(3, 2, 3.0));
    REQUIRE(sp.size == 6);
    for (double l : sp.eigenvalues) CHECK(l == doctest::Approx(9.0).epsilon(1e-14));
}

TEST_CASE("d-map matches a direct computation and sums to zero per state") {
    RandomSource rng(2);
    const FiniteMdp m = random_mdp(4, 3, rng);
    const int n = 3;
    const SoftDpSolution sol = solve_optimal(m, n, 0.5, 1.0, PolicyTable::uniform(4, 3));
    std::vector<PolicyTable> trained{random_table(4, 3, rng), random_table(4, 3, rng), random_table(4, 3, rng)};
    for (int step = 1; step <= n; ++step) {
        const DMap d = compute_d_map(m, trained, sol, step);
        // Law of S_{n-step} by hand.
        std::vector<double> law = m.initial_dist();
        for (int k = 0; k < n - step; ++k) law = oracle::propagate_triple_loop(m, law, trained[n - 1 - k]);
        const PolicyTable& pi = trained[step - 1];
        for (int s = 0; s < 4; ++s) {
            std::vector<double> p(3), q(3);
            for (int a = 0; a < 3; ++a) {
                p[a] = pi(s, a);
                q[a] = sol.policy(step)(s, a);
            }
            const double kl = oracle::kl_long_double(p, q);
            double row = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double expect = law[s] * p[a] * (std::log(p[a] / q[a]) - kl);
                CHECK(std::abs(d.at(a, s) - expect) < 1e-14);
                row += d.at(a, s);
            }
            CHECK(std::abs(row) < 1e-15);
            CHECK(std::abs(d.state_mass[s] - law[s]) < 1e-14);
        }
    }
    CHECK_THROWS_AS(compute_d_map(m, trained, sol, 0), Error);
    CHECK_THROWS_AS(compute_d_map(m, trained, sol, 4), Error);
}

TEST_CASE("optimal policies certify, perturbed ones fail") {
    RandomSource rng(3);
    const FiniteMdp m = random_mdp(3, 2, rng);
    const SoftDpSolution sol = solve_optimal(m, 2, 0.7, 1.0, PolicyTable::uniform(3, 2));
    const GramSpectrum sp = feature_spectrum(FeatureMap::tabular(3, 2));
    std::vector<PolicyTable> opt{sol.policy(1), sol.policy(2)};
    for (int step = 1; step <= 2; ++step) {
        const CertificateReport r = certify(compute_d_map(m, opt, sol, step), sp, opt[step - 1], sol.policy(step));
        CHECK(r.pass);
        CHECK(r.residual_max < 1e-15);
        CHECK(r.retained == 6);
        CHECK(r.policy_gap_max == 0.0);
    }
    std::vector<PolicyTable> off = opt;
    off[0](0, 0) += 0.05;
    off[0](0, 1) -= 0.05;
    const CertificateReport bad = certify(compute_d_map(m, off, sol, 1), sp, off[0], sol.policy(1));
    CHECK_FALSE(bad.pass);
    CHECK(bad.policy_gap_max == doctest::Approx(0.05));
    const auto j = to_json(bad);
    CHECK(j.at("pass") == false);
    CHECK(j.at("m") == 1);
    CHECK(j.contains("residual_max"));
    CHECK(j.contains("lambda_min_retained"));
}

TEST_CASE("a d-map inside the kernel's null space passes only after truncation") {
    RandomSource rng(4);
    const GramSpectrum full = decompose(random_psd(6, 6, rng), 6);
    DMap d;
    d.step = 1;
    d.n_states = 3;
    d.n_actions = 2;
    d.values = full.eigenvectors.back();
    const PolicyTable any = PolicyTable::uniform(3, 2);
    CHECK_FALSE(certify(d, full, any, any).pass);
    const GramSpectrum low = truncated_kernel(full, 5);
    const CertificateReport r = certify(d, low, any, any);
    CHECK(r.pass);
    CHECK(r.retained == 5);
    CHECK(r.lambda_min_retained == full.eigenvalues[4]);
    CHECK_THROWS_AS(truncated_kernel(full, 0), Error);
}

TEST_CASE("truncated kernel keeps the top eigenpairs") {
    RandomSource rng(5);
    const GramSpectrum full = decompose(random_psd(5, 5, rng), 5);
    const GramSpectrum t = truncated_kernel(full, 2);
    const GramSpectrum again = decompose(t.gram, 5);
    CHECK(again.eigenvalues[0] == doctest::Approx(full.eigenvalues[0]).epsilon(1e-12));
    CHECK(again.eigenvalues[1] == doctest::Approx(full.eigenvalues[1]).epsilon(1e-12));
    for (int j = 2; j < 5; ++j) CHECK(std::abs(again.eigenvalues[j]) < 1e-10);
    CHECK(t.reconstruction_error() < 1e-12);
}

TEST_CASE("random features approximate their kernel") {
    RandomSource rng(6);
    const GramSpectrum sp = decompose(random_psd(4, 4, rng), 4);
    const int P = 20000;
    const FeatureMap f = random_feature_kernel(sp, 2, 2, P, 99);
    const auto g = f.gram();
    double scale = 0.0;
    for (double x : sp.gram) scale = std::max(scale, std::abs(x));
    // Entry-wise MC error of order scale * sqrt(2 / P).
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(std::abs(g[k] - sp.gram[k]) < 8.0 * scale / std::sqrt(double(P)));
    const FeatureMap same = random_feature_kernel(sp, 2, 2, P, 99);
    CHECK(same.gram() == g);
    CHECK_THROWS_AS(random_feature_kernel(sp, 3, 2, 10, 1), Error);
}

TEST_CASE("ideal training on a tabular model ends with a passing certificate") {
    RandomSource rng(7);
    const FiniteMdp m = random_mdp(3, 2, rng);
    const double tau = 0.5;
    ExtendedPolicy p(2, std::make_shared<const FeatureMap>(FeatureMap::tabular(3, 2)), tau, PolicyTable::uniform(3, 2));
    for (int k = 0; k < 20000; ++k) mpg_ideal_update(m, p, 1.0, tau);
    const SoftDpSolution sol = solve_optimal(m, 2, tau, 1.0, p.baseline());
    const GramSpectrum sp = feature_spectrum(p.features());
    for (int step = 1; step <= 2; ++step) {
        const CertificateReport r = certify(compute_d_map(m, p, sol, step), sp, p.step(step).as_table(), sol.policy(step));
        CHECK(r.pass);
        CHECK(r.policy_gap_max < 1e-6);
    }
}
