#include "plcnn/bcfw.hpp"
#include "plcnn/checks/reference.hpp"
#include "plcnn/checks/suites.hpp"
#include "plcnn/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace plcnn;

namespace {

struct HeadFixture {
    NetworkState net = checks::tiny_net(3);
    std::vector<LabeledSample> data;
    LossTable loss = LossTable::zero_one(4);

    explicit HeadFixture(std::size_t n) {
        Rng rng(5);
        checks::randomize(net, rng);
        data = checks::random_samples(net, n, rng);
    }
};

std::vector<GroundTruthAnchor> anchors_at(const LayerProblem& p, std::span<const double> w) {
    std::vector<GroundTruthAnchor> a;
    for (std::size_t i = 0; i < p.size(); ++i) {
        a.push_back(impute_latent(p, i, w));
    }
    return a;
}

} // namespace

TEST_CASE("init_dual starts at the ground-truth vertex") {
    HeadFixture f(5);
    const LayerProblem p(f.net, f.net.svm_index(), f.data, f.loss);
    const auto w0 = f.net.svm_weights().storage();
    const DualState s = init_dual(p, w0, 1e-3, 1e-2);
    CHECK(s.rho == doctest::Approx(10.0 / 11.0).epsilon(1e-15));
    CHECK(s.dual == 0.0);
    CHECK(s.l == 0.0);
    for (std::size_t k = 0; k < w0.size(); ++k) {
        CHECK(s.w[k] == doctest::Approx(s.rho * w0[k]).epsilon(1e-15));
    }
    CHECK_THROWS_AS(init_dual(p, w0, 0.0, 1e-2), ConfigError);
    CHECK_THROWS_AS(init_dual(p, w0, 1e-3, -1.0), ConfigError);
}

TEST_CASE("dual objective by hand") {
    // rho = 1/2: -(2/2)*|(0.5, 2)|^2 + 1*(0.5 - 1) + 3
    const std::vector<double> w = {1.0, 2.0};
    const std::vector<double> w0 = {1.0, 0.0};
    CHECK(dual_objective(w, w0, 3.0, 1.0, 1.0) == doctest::Approx(-1.75));
    // mu = 0 is the plain SVM dual.
    CHECK(dual_objective(w, w0, 3.0, 2.0, 0.0) == doctest::Approx(-5.0 + 3.0));
}

TEST_CASE("optimal step on a zero direction") {
    HeadFixture f(4);
    const LayerProblem p(f.net, f.net.svm_index(), f.data, f.loss);
    const DualState s = init_dual(p, f.net.svm_weights().storage(), 1e-3, 1e-2);
    Corner same{p.zero_feature(1), 0.0};
    CHECK(optimal_step(p, s, 1, same) == 0.0);
    Corner more_loss{p.zero_feature(1), 0.25};
    CHECK(optimal_step(p, s, 1, more_loss) == 1.0);
}

TEST_CASE("steps keep the running dual equal to a fresh recomputation") {
    HeadFixture f(12);
    const LayerProblem p(f.net, 0, f.data, f.loss);
    const auto w0 = f.net.weights(0).storage();
    const auto anchors = anchors_at(p, w0);
    DualState s = init_dual(p, w0, 1e-3, 1e-2);
    for (int round = 0; round < 3; ++round) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double before = s.dual;
            const StepRecord r = block_step(p, s, i, anchors, SearchSpace::labels_only());
            CHECK(r.gamma >= 0.0);
            CHECK(r.gamma <= 1.0);
            CHECK(s.dual - before >= -1e-12);
        }
    }
    CHECK(dual_from_scratch(p, s) == doctest::Approx(s.dual).epsilon(1e-12));
    const auto w = reconstruct_primal(p, s);
    for (std::size_t k = 0; k < w.size(); ++k) {
        CHECK(w[k] == doctest::Approx(s.w[k]).epsilon(1e-10));
    }
}

TEST_CASE("block gaps add up to primal minus dual") {
    HeadFixture f(10);
    const LayerProblem p(f.net, f.net.svm_index(), f.data, f.loss);
    const auto w0 = f.net.svm_weights().storage();
    const auto anchors = anchors_at(p, w0);
    DualState s = init_dual(p, w0, 1e-3, 1e-2);
    for (std::size_t i = 0; i < p.size(); i += 2) {
        block_step(p, s, i, anchors, p.full_space());
    }
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto o = loss_augmented_oracle(p, i, anchors[i], s.w, p.full_space());
        total += block_gap(p, s, i, corner_from_oracle(s, anchors[i], o));
    }
    const double primal = proximal_objective(p, anchors, s.w, w0, 1e-3, 1e-2, p.full_space());
    // The dual leaves out the constant lambda mu / (2 (lambda + mu)) |w0|^2 of the proximal term.
    double w0_sq = 0.0;
    for (double v : w0) {
        w0_sq += v * v;
    }
    const double offset = 1e-3 * 1e-2 / (2.0 * 1.1e-2) * w0_sq;
    CHECK(total + offset == doctest::Approx(primal - s.dual).epsilon(1e-9));
    CHECK(total >= -1e-12);
}

TEST_CASE("solver reaches the explicit QP optimum on the SVM head") {
    HeadFixture f(20);
    const std::size_t head = f.net.svm_index();
    const LayerProblem p(f.net, head, f.data, f.loss);
    const auto w0 = f.net.svm_weights().storage();
    const auto anchors = anchors_at(p, w0);
    // Strong regularization so that BCFW gets close within a few hundred epochs.
    SolverConfig sc;
    sc.lambda = 0.1;
    sc.mu = 1.0;
    sc.inner_stop = 1e-9;
    sc.max_epochs = 3000;
    sc.seed = 4;
    const SolveResult r = solve_layer_svm(p, anchors, w0, sc);

    std::vector<ActivationPath> paths;
    for (const auto& a : anchors) {
        paths.push_back(a.h_star);
    }
    const auto qp = ref::extract_constraints(f.net, head, f.data, paths, 0, f.loss);
    const auto best = ref::solve_explicit(qp, w0, sc.lambda, sc.mu);
    const double ours = ref::explicit_primal(qp, r.w.values(), w0, sc.lambda, sc.mu);
    CHECK(ours >= best.dual - 1e-9);
    CHECK((ours - best.dual) / std::abs(best.dual) < 1e-4);
    CHECK(r.dual <= ours + 1e-12);
}

TEST_CASE("solver argument errors") {
    HeadFixture f(3);
    const LayerProblem p(f.net, f.net.svm_index(), f.data, f.loss);
    const auto w0 = f.net.svm_weights().storage();
    const auto anchors = anchors_at(p, w0);
    SolverConfig sc;
    sc.inner_stop = 1.5;
    CHECK_THROWS_AS(solve_layer_svm(p, anchors, w0, sc), ConfigError);
    sc.inner_stop = 0.01;
    const std::vector<GroundTruthAnchor> short_anchors(anchors.begin(), anchors.begin() + 2);
    CHECK_THROWS_AS(solve_layer_svm(p, short_anchors, w0, sc), ShapeError);
    sc.start_space = SearchSpace{5};
    CHECK_THROWS_AS(solve_layer_svm(p, anchors, w0, sc), ConfigError);
}
