#include "plcnn/checks/reference.hpp"
#include "plcnn/checks/suites.hpp"
#include "plcnn/dc.hpp"
#include "plcnn/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace plcnn;

TEST_CASE("split_linear") {
    const SplitWeights s = split_linear(Tensor({2, 2}, std::vector<double>{1, -2, 0, 3}));
    CHECK(s.w_plus.storage() == std::vector<double>{1, 0, 0, 3});
    CHECK(s.w_minus.storage() == std::vector<double>{0, 2, 0, 0});

    const SplitWeights z = split_linear(Tensor({3, 2}));
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(z.w_plus[k] == 0.0);
        CHECK(z.w_minus[k] == 0.0);
    }

    Rng rng(1);
    Tensor w({7, 5});
    for (auto& v : w.storage()) {
        v = rng.normal();
    }
    const SplitWeights r = split_linear(w);
    for (std::size_t k = 0; k < w.size(); ++k) {
        CHECK(r.w_plus[k] >= 0.0);
        CHECK(r.w_minus[k] >= 0.0);
        CHECK(r.w_plus[k] - r.w_minus[k] == w[k]);
        CHECK((r.w_plus[k] == 0.0 || r.w_minus[k] == 0.0));
    }
}

TEST_CASE("dc_linear") {
    NetworkState net({1, 1, 2}, {LayerSpec::dense(1, false)}, 2);
    const Layer& layer = net.layer(0);
    const DCValue out = dc_linear(layer, split_linear(Tensor({1, 2}, std::vector<double>{1, -1})), {{2, 3}, {1, 1}});
    CHECK(out.cvx == std::vector<double>{3});
    CHECK(out.ccv == std::vector<double>{4});
    CHECK(out.value() == std::vector<double>{-1});

    const DCValue plain =
        dc_linear(layer, split_linear(Tensor({1, 2}, std::vector<double>{2, 0.5})), {{2, 3}, {0, 0}});
    CHECK(plain.cvx == std::vector<double>{5.5});
    CHECK(plain.ccv == std::vector<double>{0});

    NetworkState big({1, 1, 6}, {LayerSpec::dense(4)}, 2);
    Rng rng(2);
    for (int k = 0; k < 20; ++k) {
        Tensor w({4, 7});
        for (auto& v : w.storage()) {
            v = rng.normal();
        }
        DCValue u{std::vector<double>(6), std::vector<double>(6)};
        for (std::size_t j = 0; j < 6; ++j) {
            u.cvx[j] = rng.normal();
            u.ccv[j] = rng.normal();
        }
        const auto diff = dc_linear(big.layer(0), split_linear(w), u).value();
        const auto want = ref::linear(big.layer(0), w.values(), u.value());
        for (std::size_t r = 0; r < 4; ++r) {
            CHECK(std::abs(diff[r] - want[r]) <= 1e-12 * (1.0 + std::abs(want[r])));
        }
    }
}

TEST_CASE("dc_relu") {
    auto r = dc_relu({{3}, {1}});
    CHECK(r.cvx[0] == 3);
    CHECK(r.ccv[0] == 1);
    r = dc_relu({{1}, {4}});
    CHECK(r.cvx[0] == 4);
    CHECK(r.value()[0] == 0);
    std::vector<std::uint16_t> sel(1, 7);
    r = dc_relu({{0}, {0}}, sel);
    CHECK(r.cvx[0] == 0);
    CHECK(r.ccv[0] == 0);
    CHECK(sel[0] == 0);
}

TEST_CASE("dc_max") {
    auto m = dc_max(std::vector<double>{2, 5}, std::vector<double>{1, 7});
    CHECK(m.cvx == 9);
    CHECK(m.ccv == 8);
    CHECK(m.cvx - m.ccv == 1);
    m = dc_max(std::vector<double>{3, 4}, std::vector<double>{0, 0});
    CHECK(m.cvx == 4);
    CHECK(m.ccv == 0);
    CHECK(m.selected == 1);
    m = dc_max(std::vector<double>{2, 2, 2}, std::vector<double>{1, 1, 1});
    CHECK(m.selected == 0);
    CHECK(m.cvx - m.ccv == 1);
    CHECK_THROWS_AS(dc_max(std::vector<double>{}, std::vector<double>{}), ShapeError);
}

TEST_CASE("build_dc_pair stage lists") {
    NetworkState net({1, 28, 28},
                     {LayerSpec::convolution(4, 5, 5), LayerSpec::relu(), LayerSpec::max_pool(2, 2, 2),
                      LayerSpec::convolution(8, 5, 5), LayerSpec::relu(), LayerSpec::max_pool(2, 2, 2),
                      LayerSpec::dense(32), LayerSpec::relu()},
                     10);
    const auto pair = build_dc_pair(net, 0);
    CHECK(pair.stage_names() == std::vector<std::string>{"conv*", "relu", "maxpool", "conv", "relu", "maxpool",
                                                         "dense", "relu", "svm"});
    CHECK(pair.latent_layers() == std::vector<std::size_t>{1, 2, 4, 5, 7});
    const auto head = build_dc_pair(net, net.svm_index());
    CHECK(head.stage_names() == std::vector<std::string>{"svm*"});
    CHECK(head.latent_layers().empty());
    CHECK_THROWS_AS(build_dc_pair(net, 1), ShapeError);
    CHECK_THROWS_AS(build_dc_pair(net, 42), ShapeError);
}

TEST_CASE("dc_forward closed forms") {
    Rng rng(3);
    NetworkState net = checks::tiny_net(4);
    checks::randomize(net, rng);
    const auto s = checks::random_samples(net, 1, rng)[0];
    const LossTable loss = LossTable::zero_one(4);

    // Zero conv weights zero the representation (zero biases downstream too).
    NetworkState zb = net;
    for (std::size_t k : {std::size_t{3}}) {
        for (std::size_t r = 0; r < zb.weights(k).extent(0); ++r) {
            zb.weights(k).at(r, zb.weights(k).extent(1) - 1) = 0.0;
        }
    }
    const auto pair0 = build_dc_pair(zb, 0);
    const auto z0 = forward_prefix(zb, 0, s.input.values());
    const std::vector<double> w0(zb.weights(0).size(), 0.0);
    for (std::size_t c = 0; c < 4; ++c) {
        DCQuery q;
        q.fixed_class = c;
        const auto f = dc_forward(pair0, z0, s.label, w0, q);
        CHECK(f.f_cvx - f.f_ccv == doctest::Approx(loss(c, s.label)).epsilon(1e-14));
    }

    const auto head = build_dc_pair(net, net.svm_index());
    const auto phi = forward(net, s.input).phi;
    const auto sc = class_scores(net, phi.values());
    for (std::size_t c = 0; c < 4; ++c) {
        DCQuery q;
        q.fixed_class = c;
        const auto f = dc_forward(head, phi.values(), s.label, net.svm_weights().values(), q);
        CHECK(f.f_cvx - f.f_ccv == doctest::Approx(loss(c, s.label) + sc[c] - sc[s.label]).epsilon(1e-12));
    }
}

TEST_CASE("both streams are convex in the free weights") {
    Rng rng(5);
    for (std::size_t l : {std::size_t{0}, std::size_t{3}, std::size_t{4}}) {
        for (int k = 0; k < 20; ++k) {
            NetworkState net = checks::tiny_net(rng.next());
            checks::randomize(net, rng);
            const auto s = checks::random_samples(net, 1, rng)[0];
            const auto pair = build_dc_pair(net, l);
            const auto z = forward_prefix(net, std::min(l, net.layers().size()), s.input.values());
            std::vector<double> a(net.weights(l).size()), b(a.size()), m(a.size());
            for (std::size_t j = 0; j < a.size(); ++j) {
                a[j] = rng.normal();
                b[j] = rng.normal();
            }
            const double t = rng.uniform(0.05, 0.95);
            for (std::size_t j = 0; j < a.size(); ++j) {
                m[j] = t * a[j] + (1 - t) * b[j];
            }
            const auto fa = dc_forward(pair, z, s.label, a);
            const auto fb = dc_forward(pair, z, s.label, b);
            const auto fm = dc_forward(pair, z, s.label, m);
            CHECK(fm.f_cvx <= t * fa.f_cvx + (1 - t) * fb.f_cvx + 1e-9);
            CHECK(fm.f_ccv <= t * fa.f_ccv + (1 - t) * fb.f_ccv + 1e-9);
        }
    }
}

TEST_CASE("verify_dc") {
    // Small integers keep every intermediate exact.
    NetworkState net({1, 2, 2}, {LayerSpec::convolution(1, 1, 1), LayerSpec::relu(), LayerSpec::dense(2)}, 3);
    net.weights(0).storage() = {2, -1};
    net.weights(2).storage() = {1, -2, 3, 0, 1, 0, 1, -1, 2, -1};
    net.svm_weights().storage() = {1, 0, -1, 2, 3, 1};
    const LabeledSample s{Tensor({1, 2, 2}, std::vector<double>{1, -2, 3, 0}), 1};
    for (std::size_t l : net.parametric_indices()) {
        const auto pair = build_dc_pair(net, l);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(verify_dc(net, pair, s, c) == 0.0);
        }
    }

    Rng rng(6);
    for (int k = 0; k < 100; ++k) {
        NetworkState r = checks::tiny_net(rng.next());
        checks::randomize(r, rng);
        const auto x = checks::random_samples(r, 1, rng)[0];
        for (std::size_t l : r.parametric_indices()) {
            CHECK(verify_dc(r, build_dc_pair(r, l), x, rng.index(4)) <= 1e-6);
        }
    }

    // Negative control.
    checks::DcOptions bad;
    bad.instances = 5;
    bad.inject_fault = true;
    CHECK_FALSE(checks::check_dc_equality(bad).passed);
    NetworkState r = checks::tiny_net(8);
    checks::randomize(r, rng);
    const auto x = checks::random_samples(r, 1, rng)[0];
    auto pair = build_dc_pair(r, 0);
    for (auto& v : pair.stages.back().split.w_plus.storage()) {
        v += 1.0;
    }
    double worst = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
        worst = std::max(worst, verify_dc(r, pair, x, c));
    }
    CHECK(worst > 1e-3);
}
