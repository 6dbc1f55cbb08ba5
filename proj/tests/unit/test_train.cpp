#include "plcnn/cccp.hpp"
#include "plcnn/checks/reference.hpp"
#include "plcnn/checks/suites.hpp"
#include "plcnn/data.hpp"
#include "plcnn/errors.hpp"
#include "plcnn/sgd.hpp"

#include <doctest.h>

#include <cmath>

using namespace plcnn;

namespace {

NetworkState zeroed(NetworkState net) {
    for (std::size_t l : net.parametric_indices()) {
        std::fill(net.weights(l).storage().begin(), net.weights(l).storage().end(), 0.0);
    }
    return net;
}

} // namespace

TEST_CASE("evaluate on zero weights") {
    const NetworkState net = zeroed(checks::tiny_net(1));
    const Dataset d = synth_blobs(4, 5, 8, 3);
    const Evaluation e = evaluate(net, d.samples, 1e-3);
    // All scores tie, so class 0 wins; the hinge is 1 everywhere.
    CHECK(e.accuracy == doctest::Approx(0.25));
    CHECK(e.mean_hinge == doctest::Approx(1.0));
    CHECK(e.objective == doctest::Approx(1.0));
    CHECK_THROWS_AS(evaluate(net, std::span<const LabeledSample>{}, 1e-3), DataError);
}

TEST_CASE("evaluate agrees with the reference objective") {
    Rng rng(8);
    NetworkState net = checks::tiny_net(2);
    checks::randomize(net, rng);
    const Dataset d = synth_blobs(4, 6, 8, 9);
    const LossTable loss = LossTable::zero_one(4);
    CHECK(evaluate(net, d.samples, 1e-3, loss).objective ==
          doctest::Approx(ref::objective(net, d.samples, 1e-3, loss)).epsilon(1e-12));
}

TEST_CASE("optimize_layer never raises the layer objective") {
    Rng rng(2);
    NetworkState net = checks::tiny_net(6);
    checks::randomize(net, rng);
    const Dataset d = synth_blobs(4, 10, 8, 6);
    TrainConfig cfg;
    cfg.cccp_min_iters = 3;
    cfg.cccp_max_iters = 3;
    LayerContext ctx;
    ctx.loss = LossTable::zero_one(4);
    for (std::size_t l : {net.svm_index(), std::size_t{3}, std::size_t{0}}) {
        const LayerReport rep = optimize_layer(net, l, cfg, d.samples, ctx);
        REQUIRE(rep.layer_objectives.size() >= 1);
        for (std::size_t k = 1; k < rep.layer_objectives.size(); ++k) {
            CHECK(rep.layer_objectives[k] <= rep.layer_objectives[k - 1]);
        }
        CHECK(rep.accepted + rep.rejected == rep.iterations);
        CHECK(rep.layer_objectives.back() ==
              doctest::Approx(layer_objective(net, l, d.samples, cfg.lambda, ctx.loss)).epsilon(1e-12));
    }
}

TEST_CASE("the SVM head is a single convex solve") {
    Rng rng(4);
    NetworkState net = checks::tiny_net(7);
    checks::randomize(net, rng);
    const Dataset d = synth_blobs(4, 5, 8, 1);
    TrainConfig cfg;
    cfg.cccp_max_iters = 5;
    LayerContext ctx;
    ctx.loss = LossTable::zero_one(4);
    const LayerReport rep = optimize_layer(net, net.svm_index(), cfg, d.samples, ctx);
    CHECK(rep.iterations == 1);
}

TEST_CASE("zero passes leave the network alone") {
    Rng rng(3);
    NetworkState net = checks::tiny_net(9);
    checks::randomize(net, rng);
    const NetworkState before = net;
    const Dataset d = synth_blobs(4, 5, 8, 2);
    TrainConfig cfg;
    cfg.max_passes = 0;
    TrainLog log;
    train_lwsvm(net, cfg, d.samples, {}, log, LossTable::zero_one(4));
    REQUIRE(log.records.size() == 1);
    CHECK(log.records[0].layer == -1);
    for (std::size_t l : net.parametric_indices()) {
        CHECK(net.weights(l).storage() == before.weights(l).storage());
    }
}

TEST_CASE("optimize_layer argument errors") {
    NetworkState net = checks::tiny_net(1);
    const Dataset d = synth_blobs(4, 2, 8, 2);
    TrainConfig cfg;
    LayerContext ctx;
    CHECK_THROWS_AS(optimize_layer(net, 0, cfg, std::span<const LabeledSample>{}, ctx), DataError);
    cfg.lambda = 0.0;
    CHECK_THROWS_AS(optimize_layer(net, 0, cfg, d.samples, ctx), ConfigError);
}

TEST_CASE("empty batch gives the regularizer gradient") {
    Rng rng(1);
    NetworkState net = checks::tiny_net(4);
    checks::randomize(net, rng);
    const Gradients g =
        backprop_subgradient(net, std::span<const LabeledSample>{}, 0.5, LossKind::Hinge, LossTable::zero_one(4));
    CHECK(g.value == doctest::Approx(0.25 * net.squared_weight_norm()));
    for (std::size_t l : net.parametric_indices()) {
        const auto& w = net.weights(l).storage();
        const auto& gw = g.tensors[l].storage();
        REQUIRE(gw.size() == w.size());
        for (std::size_t k = 0; k < w.size(); ++k) {
            CHECK(gw[k] == doctest::Approx(0.5 * w[k]));
        }
    }
}

TEST_CASE("separable zero-loss batch: only the regularizer is left") {
    NetworkState net({1, 1, 2}, {}, 2);
    net.svm_weights().storage() = {4.0, 0.0, 0.0, 4.0};
    const std::vector<LabeledSample> batch = {{Tensor({1, 1, 2}, std::vector<double>{1.0, 0.0}), 0},
                                              {Tensor({1, 1, 2}, std::vector<double>{0.0, 1.0}), 1}};
    const Gradients g = backprop_subgradient(net, batch, 0.0, LossKind::Hinge, LossTable::zero_one(2));
    CHECK(g.value == 0.0);
    for (double v : g.tensors[net.svm_index()].storage()) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("a zero learning rate changes nothing") {
    for (SgdSolver s : {SgdSolver::Adagrad, SgdSolver::Adam}) {
        Rng rng(2);
        NetworkState net = checks::tiny_net(5);
        checks::randomize(net, rng);
        const NetworkState before = net;
        SgdConfig cfg = SgdConfig::mnist_defaults(s);
        cfg.eta = 0.0;
        cfg.epochs = 2;
        const Dataset d = synth_blobs(4, 4, 8, 5);
        TrainLog log;
        sgd_train(net, cfg, d.samples, {}, log, LossTable::zero_one(4));
        CHECK(log.records.size() == 2);
        for (std::size_t l : net.parametric_indices()) {
            CHECK(net.weights(l).storage() == before.weights(l).storage());
        }
    }
}

TEST_CASE("baseline optimizer defaults") {
    const SgdConfig ag = SgdConfig::mnist_defaults(SgdSolver::Adagrad);
    CHECK(ag.eta == 0.01);
    const SgdConfig ad = SgdConfig::mnist_defaults(SgdSolver::Adadelta);
    CHECK(ad.eta == 1.0);
    CHECK(ad.rho == 0.95);
    CHECK(ad.epsilon == 1e-6);
    const SgdConfig am = SgdConfig::mnist_defaults(SgdSolver::Adam);
    CHECK(am.eta == 0.001);
    CHECK(am.beta1 == 0.9);
    CHECK(am.beta2 == 0.999);
    for (const auto& c : {ag, ad, am}) {
        CHECK(c.lambda == 0.001);
    }
    CHECK(parse_solver("adadelta") == SgdSolver::Adadelta);
    CHECK(to_string(SgdSolver::Adam) == "adam");
    CHECK_THROWS_AS(parse_solver("rmsprop"), ConfigError);
    CHECK_THROWS_AS(parse_loss("l2"), ConfigError);
}

TEST_CASE("adam lowers the objective on blobs") {
    NetworkState net = checks::tiny_net(12);
    const Dataset d = synth_blobs(4, 20, 8, 12);
    SgdConfig cfg = SgdConfig::mnist_defaults(SgdSolver::Adam);
    cfg.eta = 0.01;
    cfg.epochs = 10;
    cfg.batch_size = 8;
    TrainLog log;
    const double start = evaluate(net, d.samples, cfg.lambda).objective;
    sgd_train(net, cfg, d.samples, {}, log, LossTable::zero_one(4));
    CHECK(log.records.back().objective < start);
}
