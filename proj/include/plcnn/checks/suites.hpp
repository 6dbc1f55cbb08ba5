#pragma once

// Property suites shared by `plcnn verify` and the acceptance runner. Each
// check draws its own seeded instances and reports a one-line measurement.

#include "plcnn/data.hpp"
#include "plcnn/random.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace plcnn::checks {

// conv 2@3x3 -> ReLU -> maxpool 2x2 -> dense 16 -> SVM (4 classes) on 1x8x8 inputs.
NetworkState tiny_net(std::uint64_t seed);
// conv 1@1x1 on 1x1x2 -> ReLU -> maxpool 1x2 -> SVM (3 classes); 8 paths below the conv.
NetworkState enumerable_conv_net(std::uint64_t seed);
// dense 4 -> 3 -> ReLU -> SVM (3 classes) on 1x1x4 inputs; 8 paths below the dense layer.
NetworkState enumerable_dense_net(std::uint64_t seed);

// Every weight (bias included) ~ N(0, scale^2 / columns).
void randomize(NetworkState& net, Rng& rng, double scale = 1.0);
std::vector<LabeledSample> random_samples(const NetworkState& net, std::size_t n, Rng& rng);
// Smallest distance of the plain forward pass to a kink (ReLU input, max-pool
// runner-up, runner-up class of the hinge).
double kink_margin(const NetworkState& net, const LabeledSample& s, const LossTable& loss);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct DcOptions {
    std::size_t instances = 100;
    std::uint64_t seed = 11;
    // Corrupt one split-weight entry of every pair before evaluating.
    bool inject_fault = false;
    double tolerance = 1e-6;
};
CheckResult check_dc_equality(const DcOptions& opt);

struct CccpOptions {
    std::size_t samples = 500;
    std::size_t iterations = 5;
    std::uint64_t seed = 12;
};
CheckResult check_cccp_monotonicity(const CccpOptions& opt);

struct GlobalOptions {
    std::size_t samples = 200;
    std::size_t passes = 3;
    std::uint64_t seed = 13;
};
CheckResult check_global_monotonicity(const GlobalOptions& opt);

struct DualOptions {
    std::size_t min_steps = 10000;
    std::size_t samples = 200;
    std::uint64_t seed = 14;
};
CheckResult check_dual_monotonicity(const DualOptions& opt);

struct StepOptions {
    std::size_t states = 100;
    std::uint64_t seed = 15;
};
CheckResult check_step_size(const StepOptions& opt);

struct WarmStartOptions {
    std::size_t samples = 50;
    std::size_t epochs = 10;
    std::uint64_t seed = 16;
};
CheckResult check_warm_start(const WarmStartOptions& opt);

struct OracleOptions {
    std::size_t instances = 100;
    std::uint64_t seed = 17;
};
CheckResult check_oracle(const OracleOptions& opt);

struct FeatureOptions {
    std::size_t points = 100;
    std::size_t directions = 20;
    std::uint64_t seed = 18;
};
CheckResult check_features(const FeatureOptions& opt);

struct BackpropOptions {
    std::size_t points = 20;
    std::size_t directions = 20;
    std::uint64_t seed = 19;
};
CheckResult check_backprop(const BackpropOptions& opt);

struct ReductionOptions {
    std::size_t instances = 10;
    std::size_t samples = 40;
    std::size_t pretrain_epochs = 30;
    std::uint64_t seed = 20;
};
struct ReductionReport {
    CheckResult result;
    std::size_t tier_y_within = 0;
    std::size_t escalation_converged = 0;
};
ReductionReport check_constraint_reduction(const ReductionOptions& opt);

// Named suites for the CLI. `seed` offsets every suite's default seed.
struct SuiteOptions {
    std::uint64_t seed = 0;
    bool inject_split_fault = false;
};
const std::vector<std::string>& suite_names();
std::vector<CheckResult> run_suite(const std::string& name, const SuiteOptions& opt);

} // namespace plcnn::checks
