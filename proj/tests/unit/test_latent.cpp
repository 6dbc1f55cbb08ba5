#include "plcnn/checks/reference.hpp"
#include "plcnn/checks/suites.hpp"
#include "plcnn/errors.hpp"
#include "plcnn/latent.hpp"

#include <doctest.h>

#include <cmath>

using namespace plcnn;

TEST_CASE("impute marks a positive ReLU active") {
    NetworkState net({1, 1, 1}, {LayerSpec::dense(1), LayerSpec::relu(), LayerSpec::dense(1)}, 2);
    net.weights(0).storage() = {1.0, 0.0};
    net.weights(2).storage() = {2.0, 0.5};
    net.svm_weights().storage() = {1.0, -1.0};
    const std::vector<LabeledSample> data = {{Tensor({1, 1, 1}, std::vector<double>{3.0}), 0}};
    const LayerProblem p(net, 2, data, LossTable::zero_one(2));
    // Layer 2 has no latent layer below the head; use layer 0 for the ReLU.
    const LayerProblem q(net, 0, data, LossTable::zero_one(2));
    const auto a = impute_latent(q, 0, net.weights(0).values());
    CHECK(a.h_star.selections[1] == std::vector<std::uint16_t>{1});
    CHECK(p.latent_layer_count() == 0);
    CHECK(q.latent_layer_count() == 1);
}

TEST_CASE("SVM head: singleton latent space, zero self feature") {
    Rng rng(1);
    NetworkState net = checks::tiny_net(2);
    checks::randomize(net, rng);
    const auto data = checks::random_samples(net, 3, rng);
    const LayerProblem p(net, net.svm_index(), data, LossTable::zero_one(4));
    CHECK(p.latent_layer_count() == 0);
    const auto a = impute_latent(p, 0, net.svm_weights().values());
    const Tensor full = p.materialize(a.feature);
    // Concave stream at the head is W_y . phi: its feature is phi in row y.
    const auto phi = forward(net, data[0].input).phi;
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t j = 0; j < 16; ++j) {
            CHECK(full.at(c, j) == (c == data[0].label ? phi[j] : 0.0));
        }
    }
    const auto self = feature_vector(p, 0, data[0].label, a.h_star);
    CHECK(p.squared_norm(self) == 0.0);
    const std::size_t other = (data[0].label + 1) % 4;
    const Tensor f = p.materialize(feature_vector(p, 0, other, a.h_star));
    for (std::size_t j = 0; j < 16; ++j) {
        CHECK(f.at(other, j) == doctest::Approx(phi[j]));
        CHECK(f.at(data[0].label, j) == doctest::Approx(-phi[j]));
    }
}

TEST_CASE("oracle breaks equal scores with the lowest wrong class") {
    NetworkState net({1, 1, 2}, {}, 3);
    const std::vector<LabeledSample> data = {{Tensor({1, 1, 2}, std::vector<double>{1.0, -1.0}), 0},
                                             {Tensor({1, 1, 2}, std::vector<double>{1.0, -1.0}), 1}};
    const LayerProblem p(net, net.svm_index(), data, LossTable::zero_one(3));
    const std::vector<double> w(6, 0.0);
    CHECK(loss_augmented_oracle(p, 0, impute_latent(p, 0, w), w, {0}).y_hat == 1);
    CHECK(loss_augmented_oracle(p, 1, impute_latent(p, 1, w), w, {0}).y_hat == 0);
}

TEST_CASE("oracle over classes matches enumeration") {
    Rng rng(3);
    for (int k = 0; k < 30; ++k) {
        NetworkState net = checks::enumerable_dense_net(rng.next());
        checks::randomize(net, rng);
        const auto data = checks::random_samples(net, 1, rng);
        const LossTable loss = LossTable::zero_one(3);
        const LayerProblem p(net, 0, data, loss);
        std::vector<double> w = net.weights(0).storage();
        for (auto& v : w) {
            v += rng.normal();
        }
        const auto anchor = impute_latent(p, 0, net.weights(0).values());
        const auto z = ref::prefix(net, 0, data[0].input.values());
        const auto o = loss_augmented_oracle(p, 0, anchor, w, SearchSpace::labels_only());
        double best = -1e300;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = ref::frozen_streams(net, 0, w, z, data[0].label, c, anchor.h_star, loss).cvx;
            if (v > best) {
                best = v;
                arg = c;
            }
        }
        CHECK(o.y_hat == arg);
        CHECK(o.h_hat == anchor.h_star);
    }
}

TEST_CASE("oracle and impute match exhaustive enumeration") {
    checks::OracleOptions opt;
    opt.instances = 40;
    opt.seed = 99;
    const auto r = checks::check_oracle(opt);
    INFO(r.detail);
    CHECK(r.passed);
}

TEST_CASE("search space beyond the latent layers is rejected") {
    NetworkState net = checks::enumerable_dense_net(1);
    Rng rng(4);
    const auto data = checks::random_samples(net, 1, rng);
    const LayerProblem p(net, 0, data, LossTable::zero_one(3));
    const auto a = impute_latent(p, 0, net.weights(0).values());
    CHECK_THROWS_AS(loss_augmented_oracle(p, 0, a, net.weights(0).values(), {p.latent_layer_count() + 1}),
                    ConfigError);
}

TEST_CASE("compact dense features reconstruct the full outer product") {
    Rng rng(5);
    NetworkState net = checks::tiny_net(6);
    checks::randomize(net, rng);
    const auto data = checks::random_samples(net, 4, rng);
    const LayerProblem compact(net, 3, data, LossTable::zero_one(4));
    const LayerProblem conv(net, 0, data, LossTable::zero_one(4));
    CHECK(compact.compact());
    CHECK_FALSE(conv.compact());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto a = impute_latent(compact, i, net.weights(3).values());
        const auto o = loss_augmented_oracle(compact, i, a, net.weights(3).values(), compact.full_space());
        const auto d = subtract(o.feature, a.feature);
        const Tensor full = compact.materialize(d);
        const auto z = compact.input(i);
        for (std::size_t r = 0; r < 16; ++r) {
            for (std::size_t j = 0; j <= z.size(); ++j) {
                const double want = d.out_grad[r] * (j < z.size() ? z[j] : 1.0);
                CHECK(std::abs(full.at(r, j) - want) <= 1e-10 * (1.0 + std::abs(want)));
            }
        }
        CHECK(compact.squared_norm(d) == doctest::Approx(squared_norm(full)).epsilon(1e-12));
        CHECK(compact.inner(d, net.weights(3).values()) == doctest::Approx(dot(full, net.weights(3))).epsilon(1e-12));
    }
}

TEST_CASE("features match finite differences at generic points") {
    checks::FeatureOptions opt;
    opt.points = 30;
    opt.seed = 77;
    const auto r = checks::check_features(opt);
    INFO(r.detail);
    CHECK(r.passed);
}
