#include "mpg/certificates.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "mpg/error.hpp"

namespace mpg {

double GramSpectrum::reconstruction_error() const {
    double worst = 0.0;
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            double acc = 0.0;
            for (int j = 0; j < size; ++j) acc += eigenvalues[j] * eigenvectors[j][r] * eigenvectors[j][c];
            worst = std::max(worst, std::abs(gram[static_cast<std::size_t>(r) * size + c] - acc));
        }
    return worst;
}

double GramSpectrum::orthonormality_error() const {
    double worst = 0.0;
    for (int i = 0; i < size; ++i)
        for (int j = i; j < size; ++j) {
            double dot = 0.0;
            for (int k = 0; k < size; ++k) dot += eigenvectors[i][k] * eigenvectors[j][k];
            worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
    return worst;
}

GramSpectrum decompose(std::vector<double> gram, int size, double symmetry_tol) {
    if (size <= 0 || gram.size() != static_cast<std::size_t>(size) * size)
        throw Error("decompose: gram must be size x size");
    Eigen::MatrixXd K(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double x = gram[static_cast<std::size_t>(r) * size + c];
            const double y = gram[static_cast<std::size_t>(c) * size + r];
            if (!std::isfinite(x)) throw Error("decompose: non-finite gram entry");
            if (std::abs(x - y) > symmetry_tol * std::max(1.0, std::abs(x)))
                throw Error("decompose: gram is not symmetric");
            K(r, c) = x;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(K);
    if (solver.info() != Eigen::Success) throw Error("decompose: eigensolver failed");

    GramSpectrum out;
    out.size = size;
    out.gram = std::move(gram);
    out.eigenvalues.resize(size);
    out.eigenvectors.resize(size);
    // Eigen returns ascending order
    for (int j = 0; j < size; ++j) {
        const int src = size - 1 - j;
        out.eigenvalues[j] = solver.eigenvalues()(src);
        out.eigenvectors[j].resize(size);
        for (int k = 0; k < size; ++k) out.eigenvectors[j][k] = solver.eigenvectors()(k, src);
    }
    return out;
}

GramSpectrum feature_spectrum(const FeatureMap& features) {
    return decompose(features.gram(), features.n_states() * features.n_actions());
}

DMap compute_d_map(const FiniteMdp& mdp, std::span<const PolicyTable> trained, const SoftDpSolution& oracle,
                   int m) {
    const int n = static_cast<int>(trained.size());
    if (oracle.horizon() != n) throw Error("compute_d_map: trained and oracle horizons differ");
    if (m < 1 || m > n) throw Error("compute_d_map: step must satisfy 1 <= m <= n");
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    const auto laws = state_laws(mdp, trained);
    const PolicyTable& pi = trained[m - 1];
    const PolicyTable& opt = oracle.policy(m);

    DMap d;
    d.step = m;
    d.n_states = S;
    d.n_actions = A;
    d.state_mass = laws[n - m].probs;
    d.values.assign(static_cast<std::size_t>(S) * A, 0.0);
    for (int s = 0; s < S; ++s) {
        const double kl = kl_divergence(pi.row(s), opt.row(s));
        for (int a = 0; a < A; ++a) {
            const double p = pi(s, a);
            if (p == 0.0) continue;
            d.values[static_cast<std::size_t>(s) * A + a] =
                d.state_mass[s] * p * (std::log(p / opt(s, a)) - kl);
        }
    }
    return d;
}

DMap compute_d_map(const FiniteMdp& mdp, const ExtendedPolicy& trained, const SoftDpSolution& oracle, int m) {
    const auto tables = trained.tables();
    return compute_d_map(mdp, tables, oracle, m);
}

std::vector<double> orthogonality_residuals(const DMap& d, const GramSpectrum& spectrum) {
    if (static_cast<int>(d.values.size()) != spectrum.size)
        throw Error("orthogonality_residuals: index sets differ");
    std::vector<double> out(spectrum.size);
    for (int j = 0; j < spectrum.size; ++j) {
        double dot = 0.0;
        for (int k = 0; k < spectrum.size; ++k) dot += d.values[k] * spectrum.eigenvectors[j][k];
        out[j] = std::abs(dot);
    }
    return out;
}

CertificateReport certify(const DMap& d, const GramSpectrum& spectrum, const PolicyTable& trained_step,
                          const PolicyTable& optimal_step, double tol, double lambda_cut_relative) {
    const auto residuals = orthogonality_residuals(d, spectrum);
    CertificateReport report;
    report.m = d.step;
    report.policy_gap_max = trained_step.max_abs_diff(optimal_step);
    const double cut = lambda_cut_relative * spectrum.eigenvalues.front();
    report.lambda_min_retained = spectrum.eigenvalues.front();
    for (int j = 0; j < spectrum.size; ++j) {
        if (spectrum.eigenvalues[j] <= cut) continue;
        ++report.retained;
        report.lambda_min_retained = std::min(report.lambda_min_retained, spectrum.eigenvalues[j]);
        report.residual_max = std::max(report.residual_max, residuals[j]);
    }
    report.pass = report.retained > 0 && report.residual_max < tol;
    return report;
}

nlohmann::json to_json(const CertificateReport& report) {
    return {{"m", report.m},
            {"residual_max", report.residual_max},
            {"lambda_min_retained", report.lambda_min_retained},
            {"policy_gap_max", report.policy_gap_max},
            {"pass", report.pass}};
}

GramSpectrum truncated_kernel(const GramSpectrum& spectrum, int rank) {
    if (rank < 1 || rank > spectrum.size) throw Error("truncated_kernel: rank out of range");
    const int N = spectrum.size;
    GramSpectrum out;
    out.size = N;
    out.eigenvectors = spectrum.eigenvectors;
    out.eigenvalues.assign(N, 0.0);
    std::copy(spectrum.eigenvalues.begin(), spectrum.eigenvalues.begin() + rank, out.eigenvalues.begin());
    out.gram.assign(static_cast<std::size_t>(N) * N, 0.0);
    for (int j = 0; j < rank; ++j) {
        const auto& e = spectrum.eigenvectors[j];
        const double lambda = spectrum.eigenvalues[j];
        for (int r = 0; r < N; ++r)
            for (int c = 0; c < N; ++c) out.gram[static_cast<std::size_t>(r) * N + c] += lambda * e[r] * e[c];
    }
    return out;
}

FeatureMap random_feature_kernel(const GramSpectrum& spectrum, int n_states, int n_actions, int n_features,
                                 std::uint64_t seed) {
    if (n_features < 1) throw Error("random_feature_kernel: need at least one feature");
    const int N = spectrum.size;
    if (N != n_states * n_actions) throw Error("random_feature_kernel: spectrum size differs from |S|*|A|");
    RandomSource rng(seed);
    std::vector<double> root(N);
    for (int j = 0; j < N; ++j) root[j] = std::sqrt(std::max(spectrum.eigenvalues[j], 0.0));
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_features));
    std::vector<double> rows(static_cast<std::size_t>(N) * n_features, 0.0);
    std::vector<double> z(N);
    for (int f = 0; f < n_features; ++f) {
        for (auto& x : z) x = rng.normal();
        // g = sum_j sqrt(lambda_j) z_j e_j  has covariance Theta
        for (int j = 0; j < N; ++j) {
            const double w = root[j] * z[j] * scale;
            if (w == 0.0) continue;
            const auto& e = spectrum.eigenvectors[j];
            for (int x = 0; x < N; ++x) rows[static_cast<std::size_t>(x) * n_features + f] += w * e[x];
        }
    }
    return FeatureMap::custom(n_states, n_actions, n_features, std::move(rows), FeatureKind::RandomFeature);
}

}  // namespace mpg
