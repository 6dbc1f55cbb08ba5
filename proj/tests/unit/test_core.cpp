#include "plcnn/checks/reference.hpp"
#include "plcnn/checks/suites.hpp"
#include "plcnn/errors.hpp"
#include "plcnn/network.hpp"

#include <doctest.h>

#include <cmath>

using namespace plcnn;

namespace {

Tensor image(const NetworkState& net, std::vector<double> v) {
    const auto& s = net.input_shape();
    return Tensor({s.channels, s.height, s.width}, std::move(v));
}

} // namespace

TEST_CASE("tensor shape and arithmetic") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.extent(1) == 3);
    CHECK(t.shape_string() == "[2x3]");
    t.at(1, 2) = 4.0;
    CHECK(t[5] == 4.0);
    CHECK(dot(t, t) == doctest::Approx(5 * 2.25 + 16.0));
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
    t[0] = std::nan("");
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("network construction checks geometry") {
    CHECK_THROWS_AS(NetworkState({1, 4, 4}, {LayerSpec::convolution(1, 5, 5)}, 2), ShapeError);
    CHECK_THROWS_AS(NetworkState({1, 4, 4}, {LayerSpec::affine({0.0}, {0.0})}, 2), Error);
    NetworkState net = checks::tiny_net(1);
    CHECK(net.feature_dim() == 16);
    CHECK(net.weights(0).shape() == std::vector<std::size_t>{2, 10});
    CHECK(net.weights(3).shape() == std::vector<std::size_t>{16, 19});
    CHECK(net.svm_weights().shape() == std::vector<std::size_t>{4, 16});
    CHECK(net.parametric_indices() == std::vector<std::size_t>{0, 3, 4});
}

TEST_CASE("forward with zero weights clamps every ReLU") {
    NetworkState net = checks::tiny_net(1);
    for (std::size_t k : net.parametric_indices()) {
        net.weights(k).fill(0.0);
    }
    Rng rng(3);
    const auto s = checks::random_samples(net, 1, rng);
    const auto fr = forward(net, s[0].input);
    for (double v : fr.phi.values()) {
        CHECK(v == 0.0);
    }
    for (auto sel : fr.path.selections[1]) {
        CHECK(sel == 0);
    }
}

TEST_CASE("identity 1x1 convolution passes positive input through") {
    NetworkState net({1, 2, 2}, {LayerSpec::convolution(1, 1, 1), LayerSpec::relu()}, 2);
    net.weights(0).storage() = {1.0, 0.0};
    const auto x = image(net, {0.5, 1.0, 2.0, 3.0});
    const auto fr = forward(net, x);
    CHECK(fr.phi.storage() == x.storage());
    for (auto sel : fr.path.selections[1]) {
        CHECK(sel == 1);
    }
}

TEST_CASE("forward matches the reference evaluator and replays its path") {
    Rng rng(5);
    for (int k = 0; k < 10; ++k) {
        NetworkState net = checks::tiny_net(rng.next());
        checks::randomize(net, rng);
        const auto s = checks::random_samples(net, 1, rng);
        const auto fr = forward(net, s[0].input);
        const auto ref = ref::forward(net, s[0].input.values());
        for (std::size_t j = 0; j < ref.size(); ++j) {
            CHECK(std::abs(fr.phi[j] - ref[j]) <= 1e-12);
        }
        CHECK(replay(net, s[0].input, fr.path) == fr.phi);
    }
}

TEST_CASE("max-pool ties go to the lowest offset") {
    NetworkState net({1, 2, 2}, {LayerSpec::max_pool(2, 2, 2)}, 2);
    const auto fr = forward(net, image(net, {1.0, 1.0, 1.0, 1.0}));
    CHECK(fr.path.selections[0][0] == 0);
    const auto fr2 = forward(net, image(net, {0.0, 2.0, 0.0, 2.0}));
    CHECK(fr2.path.selections[0][0] == 1);
}

TEST_CASE("predict") {
    NetworkState net({1, 1, 2}, {}, 2);
    net.svm_weights().storage() = {1.0, 0.0, 0.0, 1.0};
    CHECK(predict(net, image(net, {2.0, 1.0})) == 0);
    CHECK(predict(net, image(net, {1.0, 2.0})) == 1);
    net.svm_weights().fill(0.0);
    CHECK(predict(net, image(net, {1.0, 2.0})) == 0);

    Rng rng(8);
    NetworkState r = checks::tiny_net(9);
    checks::randomize(r, rng);
    for (const auto& s : checks::random_samples(r, 10, rng)) {
        const auto sc = ref::scores(r, ref::forward(r, s.input.values()));
        std::size_t best = 0;
        for (std::size_t c = 1; c < sc.size(); ++c) {
            if (sc[c] > sc[best]) {
                best = c;
            }
        }
        CHECK(predict(r, s.input) == best);
    }
}

TEST_CASE("hinge upper bound") {
    const LossTable loss = LossTable::zero_one(3);
    auto h = hinge_upper_bound(std::vector<double>{0, 0, 0}, 0, loss);
    CHECK(h.value == 1.0);
    CHECK(h.argmax_class == 1);
    h = hinge_upper_bound(std::vector<double>{5, 1, 1}, 0, loss);
    CHECK(h.value == 0.0);
    CHECK(h.argmax_class == 0);
    h = hinge_upper_bound(std::vector<double>{1, 2, 0}, 0, loss);
    CHECK(h.value == 2.0);
    CHECK(h.argmax_class == 1);
}

TEST_CASE("objective") {
    const LossTable loss = LossTable::zero_one(4);
    NetworkState net = checks::tiny_net(2);
    Rng rng(4);
    const auto data = checks::random_samples(net, 12, rng);
    NetworkState zero = net;
    for (std::size_t k : zero.parametric_indices()) {
        zero.weights(k).fill(0.0);
    }
    CHECK(objective(zero, data, 0.5, loss) == 1.0);

    NetworkState sep({1, 1, 2}, {}, 2);
    sep.svm_weights().storage() = {1.0, 0.0, 0.0, 1.0};
    const std::vector<LabeledSample> one = {{Tensor({1, 1, 2}, std::vector<double>{3.0, 0.0}), 0}};
    CHECK(objective(sep, one, 0.0, LossTable::zero_one(2)) == 0.0);

    checks::randomize(net, rng);
    const double got = objective(net, data, 0.01, loss);
    const double want = ref::objective(net, data, 0.01, loss);
    CHECK(std::abs(got - want) <= 1e-12 * std::abs(want));
    CHECK_THROWS(objective(net, std::vector<LabeledSample>{}, 0.01, loss));
}
