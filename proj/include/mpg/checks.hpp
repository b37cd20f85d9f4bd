#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mpg {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

/// Deliberate corruption of the optimal-policy recursion, used to show the
/// identity checks can fail.
enum class DpFault {
    None,
    HardMax,  // hard max over actions in place of the log-sum-exp backup
};

// Each check draws its instances from `seed` and pins its own tolerances.

/// Log-sum-exp identity, value-gap identity and horizon consistency on
/// `count` random MDPs (up to 6 states, 4 actions, tau in {0.1, 1}, n <= 5).
CheckResult check_dp_identities(int count, std::uint64_t seed, DpFault fault = DpFault::None);

/// Exact gradient against central finite differences of J_n on random
/// 3-state / 2-action MDPs, n = 3, tabular features.
CheckResult check_gradient_theorem(int count, std::uint64_t seed);

/// Mean of `samples` sampled updates against the exact gradient, per
/// parameter block, on one fixed small MDP.
CheckResult check_unbiasedness(int samples, std::uint64_t seed);

/// Same for the multi-update variant against its exact expectation.
CheckResult check_multi_update_mean(int samples, std::uint64_t seed);

/// Ideal-update tabular training to stationarity on random 4-state MDPs
/// (n = 3, tau = 0.5): policy error, certificate pass, and certificate
/// failure on a perturbed policy.
CheckResult check_global_optimality(int count, std::uint64_t seed);

/// Discounted horizon extension: ||pi*_n^(n) - pi_inf||_1 decreasing to below
/// 1e-3 at n = 60 on random MDPs.
CheckResult check_horizon_limit(int count, std::uint64_t seed);

/// Manual backprop against finite differences, NTK symmetry and PSD, and the
/// NTK certificate at random init on FrozenLake's (a, s) set.
CheckResult check_neural(std::uint64_t seed, int width = 256);

/// BFS shortest paths of the standard lakes (6 and 14).
CheckResult check_frozenlake_paths();

/// A tiny experiment run twice (one and two workers) yields identical CSV bytes.
CheckResult check_determinism(std::uint64_t seed);

enum class VerifyLevel { Fast, Full };

/// Runs every identity and property suite. The DP mutation run is reported
/// as passing when the corrupted recursion is caught.
std::vector<CheckResult> verify_suite(VerifyLevel level,
                                      const std::function<void(const CheckResult&)>& on_result = {});

/// Times `body` and stores the elapsed seconds in the result.
CheckResult timed(const std::function<CheckResult()>& body);

}  // namespace mpg
