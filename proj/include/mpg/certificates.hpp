#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "mpg/finite_mdp.hpp"
#include "mpg/soft_dp.hpp"
#include "mpg/softmax_policy.hpp"

namespace mpg {

/// Eigendecomposition of a symmetric kernel Gram matrix over a finite index
/// set. Eigenvalues are sorted descending; eigenvectors[j] pairs with
/// eigenvalues[j] and has unit norm.
struct GramSpectrum {
    int size = 0;
    std::vector<double> gram;  // row-major size x size
    std::vector<double> eigenvalues;
    std::vector<std::vector<double>> eigenvectors;

    /// max |Theta - sum_j lambda_j e_j e_j^T|
    double reconstruction_error() const;
    /// max |E^T E - I|
    double orthonormality_error() const;
};

/// Symmetric eigensolve (Eigen's self-adjoint solver). Throws if `gram` is
/// not symmetric within `symmetry_tol`.
GramSpectrum decompose(std::vector<double> gram, int size, double symmetry_tol = 1e-10);

/// Spectrum of the feature map's kernel over all (a,s) pairs.
GramSpectrum feature_spectrum(const FeatureMap& features);

/// d(a,s) = m(s) pi(a|s) [log(pi/pi*)(a|s) - KL(pi || pi*)(s)] for step m,
/// with m(s) the exact law of S_{n-m} under the trained policy. Flat index
/// s * |A| + a, matching the Gram index set.
struct DMap {
    int step = 0;
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> values;
    std::vector<double> state_mass;  // m(s)

    double at(int a, int s) const { return values[static_cast<std::size_t>(s) * n_actions + a]; }
};

DMap compute_d_map(const FiniteMdp& mdp, std::span<const PolicyTable> trained, const SoftDpSolution& oracle,
                   int m);
DMap compute_d_map(const FiniteMdp& mdp, const ExtendedPolicy& trained, const SoftDpSolution& oracle, int m);

/// |<d, e_j>| for every eigenpair.
std::vector<double> orthogonality_residuals(const DMap& d, const GramSpectrum& spectrum);

struct CertificateReport {
    int m = 0;
    double residual_max = 0.0;
    double lambda_min_retained = 0.0;
    double policy_gap_max = 0.0;
    int retained = 0;
    bool pass = false;
};

/// Default eigenvalue cut relative to the largest eigenvalue.
inline constexpr double kLambdaCutRelative = 1e-10;

/// Passes iff |<d, e_j>| < tol for every j with lambda_j > cut * lambda_1.
CertificateReport certify(const DMap& d, const GramSpectrum& spectrum, const PolicyTable& trained_step,
                          const PolicyTable& optimal_step, double tol = 1e-6,
                          double lambda_cut_relative = kLambdaCutRelative);

nlohmann::json to_json(const CertificateReport& report);

/// Theta_hat = sum_{j <= rank} lambda_j e_j e_j^T, returned with its own
/// spectrum (top-rank pairs kept, remaining eigenvalues zeroed).
GramSpectrum truncated_kernel(const GramSpectrum& spectrum, int rank);

/// P' i.i.d. Gaussian samples g_k with covariance Theta, drawn through the
/// spectral square root; features psi(x) = (g_1(x), ..., g_P'(x)) / sqrt(P').
FeatureMap random_feature_kernel(const GramSpectrum& spectrum, int n_states, int n_actions, int n_features,
                                 std::uint64_t seed);

}  // namespace mpg
