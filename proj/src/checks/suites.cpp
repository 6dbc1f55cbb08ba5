#include "plcnn/checks/suites.hpp"

#include "plcnn/bcfw.hpp"
#include "plcnn/cccp.hpp"
#include "plcnn/checks/reference.hpp"
#include "plcnn/errors.hpp"
#include "plcnn/sgd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>

namespace plcnn::checks {

namespace {

std::string format(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::vector<double> random_unit(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.normal();
    }
    const double norm = std::sqrt(squared_norm(v));
    for (auto& x : v) {
        x /= norm;
    }
    return v;
}

// Largest consecutive increase of a sequence (negative when it strictly decreases).
double max_increase(const std::vector<double>& seq) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < seq.size(); ++k) {
        worst = std::max(worst, seq[k] - seq[k - 1]);
    }
    return seq.size() < 2 ? 0.0 : worst;
}

Dataset noisy_blobs(std::size_t samples, std::uint64_t seed) {
    BlobOptions bo;
    bo.classes = 4;
    bo.samples_per_class = std::max<std::size_t>(1, samples / 4);
    bo.image_side = 8;
    bo.noise = 1.0;
    bo.seed = seed;
    return synth_blobs(bo);
}

bool same_latent(const NetworkState& net, std::size_t l, const ActivationPath& a, const ActivationPath& b) {
    for (std::size_t k : ref::latent_layers(net, l)) {
        if (a.selections.at(k) != b.selections.at(k)) {
            return false;
        }
    }
    return true;
}

double rel_diff(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

} // namespace

NetworkState tiny_net(std::uint64_t seed) {
    NetworkState net({1, 8, 8},
                     {LayerSpec::convolution(2, 3, 3), LayerSpec::relu(), LayerSpec::max_pool(2, 2, 2),
                      LayerSpec::dense(16)},
                     4);
    net.init_random(seed);
    return net;
}

NetworkState enumerable_conv_net(std::uint64_t seed) {
    NetworkState net({1, 1, 2}, {LayerSpec::convolution(1, 1, 1), LayerSpec::relu(), LayerSpec::max_pool(1, 2, 2)}, 3);
    net.init_random(seed);
    return net;
}

NetworkState enumerable_dense_net(std::uint64_t seed) {
    NetworkState net({1, 1, 4}, {LayerSpec::dense(3), LayerSpec::relu()}, 3);
    net.init_random(seed);
    return net;
}

void randomize(NetworkState& net, Rng& rng, double scale) {
    for (std::size_t k : net.parametric_indices()) {
        Tensor& w = net.weights(k);
        const double sd = scale / std::sqrt(static_cast<double>(w.extent(1)));
        for (auto& v : w.storage()) {
            v = sd * rng.normal();
        }
    }
}

std::vector<LabeledSample> random_samples(const NetworkState& net, std::size_t n, Rng& rng) {
    const auto& s = net.input_shape();
    std::vector<LabeledSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor x({s.channels, s.height, s.width});
        for (auto& v : x.storage()) {
            v = rng.normal();
        }
        out.push_back({std::move(x), rng.index(net.classes())});
    }
    return out;
}

double kink_margin(const NetworkState& net, const LabeledSample& s, const LossTable& loss) {
    double m = std::numeric_limits<double>::infinity();
    std::vector<double> v = s.input.storage();
    for (const auto& layer : net.layers()) {
        if (layer.spec.kind == LayerKind::Relu) {
            for (double x : v) {
                m = std::min(m, std::abs(x));
            }
        } else if (layer.spec.kind == LayerKind::MaxPool) {
            const auto& O = layer.output;
            for (std::size_t o = 0; o < O.size(); ++o) {
                std::vector<double> win;
                const std::size_t c = o / (O.height * O.width);
                const std::size_t oy = (o / O.width) % O.height;
                const std::size_t ox = o % O.width;
                for (std::size_t ky = 0; ky < layer.spec.window_h; ++ky) {
                    for (std::size_t kx = 0; kx < layer.spec.window_w; ++kx) {
                        const std::size_t iy = oy * layer.spec.stride + ky;
                        const std::size_t ix = ox * layer.spec.stride + kx;
                        win.push_back(v[(c * layer.input.height + iy) * layer.input.width + ix]);
                    }
                }
                std::sort(win.begin(), win.end(), std::greater<>());
                if (win.size() > 1) {
                    m = std::min(m, win[0] - win[1]);
                }
            }
        }
        v = ref::layer_value(layer, v);
    }
    const auto sc = ref::scores(net, v);
    std::vector<double> cand;
    for (std::size_t c = 0; c < sc.size(); ++c) {
        cand.push_back(loss(c, s.label) + sc[c] - sc[s.label]);
    }
    std::sort(cand.begin(), cand.end(), std::greater<>());
    return std::min(m, cand[0] - cand[1]);
}

CheckResult check_dc_equality(const DcOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(opt.seed);
    const std::size_t targets[3] = {0, 3, 4};
    const char* names[3] = {"conv", "dense", "svm"};
    double worst[3] = {0.0, 0.0, 0.0};
    for (int t = 0; t < 3; ++t) {
        for (std::size_t k = 0; k < opt.instances; ++k) {
            NetworkState net = tiny_net(rng.next());
            randomize(net, rng);
            const auto samples = random_samples(net, 1, rng);
            const std::size_t y_bar = rng.index(net.classes());
            DCNetPair pair = build_dc_pair(net, targets[t]);
            if (opt.inject_fault) {
                auto stage = std::find_if(pair.stages.begin(), pair.stages.end(),
                                          [](const DCStage& s) { return !s.split.w_plus.empty(); });
                if (stage != pair.stages.end()) {
                    stage->split.w_plus[0] += 1.0;
                } else if (!pair.svm_split.w_plus.empty()) {
                    pair.svm_split.w_plus[0] += 1.0;
                }
            }
            worst[t] = std::max(worst[t], verify_dc(net, pair, samples[0], y_bar));
        }
    }
    const double secs = seconds_since(t0);
    CheckResult r;
    r.name = "dc-equality";
    r.passed = worst[0] <= opt.tolerance && worst[1] <= opt.tolerance && worst[2] <= opt.tolerance && secs < 60.0;
    r.detail = format("max residual %s %.2e, %s %.2e, %s %.2e over %zu instances each (tol %.0e), %.2f s", names[0],
                      worst[0], names[1], worst[1], names[2], worst[2], opt.instances, opt.tolerance, secs);
    return r;
}

CheckResult check_cccp_monotonicity(const CccpOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    NetworkState net = tiny_net(opt.seed);
    const Dataset data = noisy_blobs(opt.samples, opt.seed);
    TrainConfig cfg;
    cfg.cccp_min_iters = opt.iterations;
    cfg.cccp_max_iters = opt.iterations;
    // Every iteration has to land, so each convex solve runs until it descends.
    cfg.require_descent = true;
    cfg.inner_max_epochs = 1000;
    cfg.seed = opt.seed;
    LayerContext ctx;
    ctx.loss = LossTable::zero_one(net.classes());
    std::size_t min_iters = std::numeric_limits<std::size_t>::max();
    std::size_t rejected = 0;
    double worst = -std::numeric_limits<double>::infinity();
    std::string per_layer;
    const auto order = net.parametric_indices();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const LayerReport rep = optimize_layer(net, *it, cfg, data.samples, ctx);
        min_iters = std::min(min_iters, rep.iterations);
        rejected += rep.rejected;
        worst = std::max(worst, max_increase(rep.layer_objectives));
        per_layer += format("%s%zu:%zu", per_layer.empty() ? "" : " ", *it, rep.iterations);
    }
    const double secs = seconds_since(t0);
    CheckResult r;
    r.name = "cccp-monotonicity";
    r.passed = min_iters >= opt.iterations && rejected == 0 && worst <= 1e-8 && secs < 300.0;
    r.detail = format("%zu samples, iterations per layer [%s], %zu rejected, largest change %.3e (slack 1e-8), %.1f s",
                      data.size(), per_layer.c_str(), rejected, worst, secs);
    return r;
}

CheckResult check_global_monotonicity(const GlobalOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    NetworkState net = tiny_net(opt.seed);
    const Dataset data = noisy_blobs(opt.samples, opt.seed);
    TrainConfig cfg;
    cfg.max_passes = opt.passes;
    cfg.stop_on_validation = false;
    cfg.seed = opt.seed;
    TrainLog log;
    train_lwsvm(net, cfg, data.samples, {}, log, LossTable::zero_one(net.classes()));
    std::vector<double> seq;
    for (const auto& rec : log.records) {
        seq.push_back(rec.objective);
    }
    const std::size_t expected = 1 + opt.passes * net.parametric_indices().size();
    const double worst = max_increase(seq);
    std::size_t unchanged = 0;
    for (std::size_t i = 1; i < seq.size(); ++i) {
        unchanged += seq[i] == seq[i - 1] ? 1 : 0;
    }
    CheckResult r;
    r.name = "global-monotonicity";
    r.passed = seq.size() >= expected && worst <= 1e-8;
    r.detail = format("%zu logged layer updates over %zu passes (%zu rejected), objective %.6f -> %.6f, largest "
                      "change %.3e (slack 1e-8), %.1f s",
                      seq.size() - 1, opt.passes, unchanged, seq.front(), seq.back(), worst, seconds_since(t0));
    return r;
}

CheckResult check_dual_monotonicity(const DualOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    NetworkState net = tiny_net(opt.seed);
    const Dataset data = noisy_blobs(opt.samples, opt.seed);
    const LossTable loss = LossTable::zero_one(net.classes());
    std::size_t steps = 0;
    std::size_t min_layer_steps = std::numeric_limits<std::size_t>::max();
    double worst_step = std::numeric_limits<double>::infinity();
    double worst_drift = 0.0;
    for (std::size_t l : {std::size_t{0}, std::size_t{3}}) {
        const LayerProblem problem(net, l, data.samples, loss);
        const std::vector<double> w0 = net.weights(l).storage();
        std::vector<GroundTruthAnchor> anchors;
        for (std::size_t i = 0; i < problem.size(); ++i) {
            anchors.push_back(impute_latent(problem, i, w0));
        }
        SolverConfig sc;
        sc.min_epochs = (opt.min_steps + problem.size() - 1) / problem.size();
        sc.max_epochs = sc.min_epochs;
        sc.seed = opt.seed + l;
        sc.start_space = problem.full_space();
        sc.escalate = false;
        std::size_t layer_steps = 0;
        sc.on_step = [&](const StepRecord& s) {
            ++layer_steps;
            worst_step = std::min(worst_step, s.dual_increase);
        };
        sc.on_epoch = [&](const EpochRecord& e) {
            worst_drift = std::max(worst_drift, e.dual_drift / std::max(1.0, std::abs(e.dual)));
        };
        solve_layer_svm(problem, anchors, w0, sc);
        steps += layer_steps;
        min_layer_steps = std::min(min_layer_steps, layer_steps);
    }
    CheckResult r;
    r.name = "dual-monotonicity";
    r.passed = min_layer_steps >= opt.min_steps && worst_step >= -1e-12 && worst_drift <= 1e-9;
    r.detail = format("%zu steps (conv and dense layers), smallest dual increase %.3e (tol -1e-12), largest "
                      "incremental/scratch drift %.3e (tol 1e-9), %.1f s",
                      steps, worst_step, worst_drift, seconds_since(t0));
    return r;
}

CheckResult check_step_size(const StepOptions& opt) {
    Rng rng(opt.seed);
    NetworkState net = tiny_net(opt.seed);
    randomize(net, rng);
    const auto data = random_samples(net, 30, rng);
    const LossTable loss = LossTable::zero_one(net.classes());
    const LayerProblem conv(net, 0, data, loss);
    const LayerProblem dense(net, 3, data, loss);
    double worst = 0.0;
    std::size_t interior = 0;
    std::size_t clipped = 0;
    std::size_t drawn = 0;
    std::size_t states = 0;
    while (states < opt.states && drawn < 50 * opt.states) {
        ++drawn;
        const LayerProblem& p = rng.index(2) ? dense : conv;
        std::vector<double> w0 = net.weights(p.layer()).storage();
        for (auto& v : w0) {
            v += 0.3 * rng.normal() * std::abs(v);
        }
        std::vector<GroundTruthAnchor> anchors;
        for (std::size_t i = 0; i < p.size(); ++i) {
            anchors.push_back(impute_latent(p, i, w0));
        }
        const double lambda = std::pow(10.0, rng.uniform(-3.0, -1.0));
        const double mu = lambda * rng.uniform(0.0, 20.0);
        DualState state = init_dual(p, w0, lambda, mu);
        const std::size_t warm = rng.index(2 * p.size() + 1);
        for (std::size_t k = 0; k < warm; ++k) {
            block_step(p, state, rng.index(p.size()), anchors, {rng.index(p.latent_layer_count() + 1)});
        }
        const std::size_t i = rng.index(p.size());
        std::vector<double> wq = state.w;
        for (auto& v : wq) {
            v += rng.normal() * (0.5 * std::abs(v) + 1e-3);
        }
        const auto oracle = loss_augmented_oracle(p, i, anchors[i], wq, {rng.index(p.latent_layer_count() + 1)});
        const Corner corner = corner_from_oracle(state, anchors[i], oracle);
        if (!(p.squared_norm(subtract(corner.w_s, state.blocks[i])) > 1e-8)) {
            continue; // stationary block: every step size is optimal
        }
        ++states;
        const double gamma = optimal_step(p, state, i, corner);
        const auto dual_along = [&](double g) {
            DualState t = state;
            auto& c = coefficients(t.blocks[i]);
            const auto& s = coefficients(corner.w_s);
            for (std::size_t k = 0; k < c.size(); ++k) {
                c[k] = (1.0 - g) * c[k] + g * s[k];
            }
            t.block_loss[i] = (1.0 - g) * t.block_loss[i] + g * corner.l_s;
            return dual_from_scratch(p, t);
        };
        const double search = ref::golden_section_max(dual_along, 0.0, 1.0, 1e-11);
        worst = std::max(worst, std::abs(gamma - search));
        if (gamma > 0.0 && gamma < 1.0) {
            ++interior;
        } else {
            ++clipped;
        }
    }
    CheckResult r;
    r.name = "step-size";
    r.passed = states >= opt.states && worst <= 1e-6;
    r.detail = format("%zu block states (%zu interior, %zu clipped), max |gamma - golden section| %.3e (tol 1e-6)",
                      states, interior, clipped, worst);
    return r;
}

CheckResult check_warm_start(const WarmStartOptions& opt) {
    Rng rng(opt.seed);
    NetworkState net = tiny_net(opt.seed);
    randomize(net, rng);
    const auto data = random_samples(net, opt.samples, rng);
    const LossTable loss = LossTable::zero_one(net.classes());

    // Proximal start: mu = 10 lambda puts the primal at (10/11) w0 with a zero dual.
    const LayerProblem dense(net, 3, data, loss);
    const double lambda = 1e-3;
    const DualState s = init_dual(dense, net.weights(3).values(), lambda, 10.0 * lambda);
    double worst_w = 0.0;
    for (std::size_t k = 0; k < s.w.size(); ++k) {
        const double expect = 10.0 / 11.0 * s.w0[k];
        worst_w = std::max(worst_w, std::abs(s.w[k] - expect) / std::max(1.0, std::abs(expect)));
    }
    const double scratch = dual_from_scratch(dense, s);
    const bool zero_dual = s.dual == 0.0 && scratch == 0.0;

    // mu = 0 against a textbook BCFW on the multiclass SVM head.
    const LayerProblem head(net, net.svm_index(), data, loss);
    const std::vector<double> w0 = net.svm_weights().storage();
    std::vector<GroundTruthAnchor> anchors;
    for (std::size_t i = 0; i < head.size(); ++i) {
        anchors.push_back(impute_latent(head, i, w0));
    }
    SolverConfig sc;
    sc.lambda = 0.01;
    sc.mu = 0.0;
    sc.min_epochs = opt.epochs;
    sc.max_epochs = opt.epochs;
    sc.seed = opt.seed;
    std::vector<double> gammas;
    sc.on_step = [&](const StepRecord& r) { gammas.push_back(r.gamma); };
    const SolveResult solved = solve_layer_svm(head, anchors, w0, sc);

    std::vector<std::vector<double>> phi;
    std::vector<std::size_t> labels;
    for (const auto& d : data) {
        phi.push_back(ref::forward(net, d.input.values()));
        labels.push_back(d.label);
    }
    const auto trace = ref::standard_bcfw(phi, labels, net.classes(), loss, sc.lambda, opt.epochs, sc.seed);
    double worst_gamma = gammas.size() == trace.gammas.size() ? 0.0 : std::numeric_limits<double>::infinity();
    std::size_t nonzero = 0;
    for (std::size_t k = 0; k < std::min(gammas.size(), trace.gammas.size()); ++k) {
        worst_gamma = std::max(worst_gamma, std::abs(gammas[k] - trace.gammas[k]));
        nonzero += gammas[k] > 0.0 ? 1 : 0;
    }
    double worst_final = 0.0;
    for (std::size_t k = 0; k < trace.w.size(); ++k) {
        worst_final = std::max(worst_final, std::abs(solved.w[k] - trace.w[k]));
    }
    CheckResult r;
    r.name = "warm-start";
    r.passed = worst_w <= 1e-12 && zero_dual && worst_gamma <= 1e-10 && !gammas.empty();
    r.detail = format("mu=10*lambda: max |w - (10/11) w0| %.2e, dual %s; mu=0: %zu steps (%zu nonzero) vs reference "
                      "BCFW, max |gamma diff| %.2e (tol 1e-10), final |w diff| %.2e",
                      worst_w, zero_dual ? "exactly 0" : "nonzero", gammas.size(), nonzero, worst_gamma,
                      worst_final);
    return r;
}

CheckResult check_oracle(const OracleOptions& opt) {
    Rng rng(opt.seed);
    std::size_t impute_ok = 0, oracle_ok = 0, tier_y_ok = 0;
    std::size_t unique_paths = 0, path_matches = 0;
    std::size_t total = 0;
    std::string first_failure;
    for (std::size_t k = 0; k < opt.instances; ++k) {
        NetworkState net = k % 2 ? enumerable_dense_net(rng.next()) : enumerable_conv_net(rng.next());
        randomize(net, rng);
        const auto data = random_samples(net, 1, rng);
        const LossTable loss = LossTable::zero_one(net.classes());
        const LayerProblem problem(net, 0, data, loss);
        const std::size_t y = data[0].label;
        std::vector<double> w_t = net.weights(0).storage();
        std::vector<double> w = w_t;
        for (auto& v : w) {
            v += rng.normal();
        }
        const auto z = ref::prefix(net, 0, data[0].input.values());
        ++total;

        // Latent imputation against max over H of the concave stream.
        const GroundTruthAnchor anchor = impute_latent(problem, 0, w_t);
        const auto imp = ref::exhaustive_impute(net, 0, w_t, z, y, loss);
        const double got = ref::frozen_streams(net, 0, w_t, z, y, y, anchor.h_star, loss).ccv;
        bool ok = rel_diff(got, imp.value) <= 1e-12;
        if (imp.maximizers == 1) {
            ++unique_paths;
            const bool same = same_latent(net, 0, anchor.h_star, imp.h);
            path_matches += same ? 1 : 0;
            ok = ok && same;
        }
        impute_ok += ok ? 1 : 0;
        if (!ok && first_failure.empty()) {
            first_failure = format("impute #%zu: %.17g vs %.17g", k, got, imp.value);
        }

        const double anchor_value = ref::frozen_streams(net, 0, w, z, y, y, anchor.h_star, loss).ccv;
        for (std::size_t tier : {problem.latent_layer_count(), std::size_t{0}}) {
            const OracleResult o = loss_augmented_oracle(problem, 0, anchor, w, {tier});
            const auto ex = ref::exhaustive_oracle(net, 0, w, z, y, anchor.h_star, tier, loss);
            const double val = ref::frozen_streams(net, 0, w, z, y, o.y_hat, o.h_hat, loss).cvx;
            bool good = o.y_hat == ex.y_bar && rel_diff(val, ex.value) <= 1e-12 &&
                        rel_diff(o.score, ex.value - anchor_value) <= 1e-9 &&
                        o.loss == loss(ex.y_bar, y);
            if (ex.maximizers == 1) {
                ++unique_paths;
                const bool same = same_latent(net, 0, o.h_hat, ex.h);
                path_matches += same ? 1 : 0;
                good = good && same;
            }
            if (tier == 0) {
                tier_y_ok += good ? 1 : 0;
            } else {
                oracle_ok += good ? 1 : 0;
            }
            if (!good && first_failure.empty()) {
                first_failure = format("oracle #%zu tier %zu: class %zu vs %zu, value %.17g vs %.17g", k, tier, o.y_hat,
                                       ex.y_bar, val, ex.value);
            }
        }
    }
    CheckResult r;
    r.name = "oracle";
    r.passed = impute_ok == total && oracle_ok == total && tier_y_ok == total;
    r.detail = format("%zu instances (|H| = 8): impute %zu/%zu, oracle Y x H %zu/%zu, oracle Y %zu/%zu match "
                      "exhaustive enumeration; identical paths on %zu/%zu unique maximizers",
                      total, impute_ok, total, oracle_ok, total, tier_y_ok, total, path_matches, unique_paths);
    if (!first_failure.empty()) {
        r.detail += "; first mismatch " + first_failure;
    }
    return r;
}

CheckResult check_features(const FeatureOptions& opt) {
    Rng rng(opt.seed);
    const std::size_t targets[3] = {0, 3, 4};
    const double eps = 1e-5;
    double worst_fd = 0.0;
    double worst_compact = 0.0;
    std::size_t points = 0;
    std::size_t rejected = 0;
    while (points < opt.points && rejected < 100 * opt.points) {
        const std::size_t l = targets[points % 3];
        NetworkState net = tiny_net(rng.next());
        randomize(net, rng);
        const auto data = random_samples(net, 1, rng);
        const LossTable loss = LossTable::zero_one(net.classes());
        const LayerProblem problem(net, l, data, loss);
        const std::size_t y = data[0].label;
        const std::vector<double> z = problem.input(0);
        const std::vector<double> w = net.weights(l).storage();
        const DCForward at = dc_forward(problem.pair(), z, y, w);
        if (!(at.min_margin > 1e-3)) {
            ++rejected;
            continue;
        }
        ++points;
        const GroundTruthAnchor anchor = impute_latent(problem, 0, w);
        const OracleResult oracle = loss_augmented_oracle(problem, 0, anchor, w, problem.full_space());
        const Tensor psi_cvx = problem.materialize(oracle.feature);
        const Tensor psi_ccv = problem.materialize(anchor.feature);
        std::vector<double> fd_cvx, an_cvx, fd_ccv, an_ccv;
        for (std::size_t d = 0; d < opt.directions; ++d) {
            const auto v = random_unit(w.size(), rng);
            std::vector<double> wp = w, wm = w;
            axpy(eps, v, wp);
            axpy(-eps, v, wm);
            const DCForward fp = dc_forward(problem.pair(), z, y, wp);
            const DCForward fm = dc_forward(problem.pair(), z, y, wm);
            fd_cvx.push_back((fp.f_cvx - fm.f_cvx) / (2 * eps));
            fd_ccv.push_back((fp.f_ccv - fm.f_ccv) / (2 * eps));
            an_cvx.push_back(dot(psi_cvx.values(), v));
            an_ccv.push_back(dot(psi_ccv.values(), v));
        }
        for (const auto* pair : {&fd_cvx, &fd_ccv}) {
            const auto& an = pair == &fd_cvx ? an_cvx : an_ccv;
            double scale = 0.0, err = 0.0;
            for (std::size_t d = 0; d < an.size(); ++d) {
                scale = std::max(scale, std::abs(an[d]));
                err = std::max(err, std::abs((*pair)[d] - an[d]));
            }
            worst_fd = std::max(worst_fd, err / std::max(scale, 1e-8));
        }
        if (problem.compact()) {
            // Outer product of the output gradient with [z; 1].
            const auto& g = oracle.feature.out_grad;
            const bool bias = l != net.svm_index() && net.layer(l).has_bias();
            const std::size_t cols = z.size() + (bias ? 1 : 0);
            double scale = 1.0, err = 0.0;
            for (std::size_t r = 0; r < g.size(); ++r) {
                for (std::size_t j = 0; j < cols; ++j) {
                    const double full = g[r] * (j < z.size() ? z[j] : 1.0);
                    scale = std::max(scale, std::abs(full));
                    err = std::max(err, std::abs(psi_cvx[r * cols + j] - full));
                }
            }
            worst_compact = std::max(worst_compact, err / scale);
        }
    }
    CheckResult r;
    r.name = "features";
    r.passed = points >= opt.points && worst_fd <= 1e-4 && worst_compact <= 1e-10;
    r.detail = format("%zu generic points (margin > 1e-3, %zu draws rejected), max finite-difference error %.2e "
                      "(tol 1e-4), compact reconstruction error %.2e (tol 1e-10)",
                      points, rejected, worst_fd, worst_compact);
    return r;
}

CheckResult check_backprop(const BackpropOptions& opt) {
    Rng rng(opt.seed);
    const double eps = 1e-5;
    const double lambda = 1e-3;
    double worst = 0.0;
    std::size_t points = 0;
    std::size_t rejected = 0;
    while (points < opt.points && rejected < 1000 * opt.points) {
        NetworkState net = tiny_net(rng.next());
        randomize(net, rng);
        const auto batch = random_samples(net, 4, rng);
        const LossTable loss = LossTable::zero_one(net.classes());
        double margin = std::numeric_limits<double>::infinity();
        for (const auto& s : batch) {
            margin = std::min(margin, kink_margin(net, s, loss));
        }
        if (!(margin > 1e-3)) {
            ++rejected;
            continue;
        }
        ++points;
        const Gradients g = backprop_subgradient(net, batch, lambda, LossKind::Hinge, loss);
        const auto idx = net.parametric_indices();
        double scale = 0.0, err = 0.0;
        for (std::size_t d = 0; d < opt.directions; ++d) {
            std::vector<std::vector<double>> v;
            double an = 0.0;
            for (std::size_t k : idx) {
                v.push_back(random_unit(net.weights(k).size(), rng));
                an += dot(g.tensors[k].values(), v.back());
            }
            NetworkState plus = net, minus = net;
            for (std::size_t n = 0; n < idx.size(); ++n) {
                axpy(eps, v[n], plus.weights(idx[n]).values());
                axpy(-eps, v[n], minus.weights(idx[n]).values());
            }
            const double fd =
                (ref::objective(plus, batch, lambda, loss) - ref::objective(minus, batch, lambda, loss)) / (2 * eps);
            scale = std::max(scale, std::abs(an));
            err = std::max(err, std::abs(fd - an));
        }
        worst = std::max(worst, err / std::max(scale, 1e-8));
    }
    CheckResult r;
    r.name = "backprop";
    r.passed = points >= opt.points && worst <= 1e-4;
    r.detail = format("%zu generic batches (%zu draws rejected), max finite-difference error %.2e (tol 1e-4)", points,
                      rejected, worst);
    return r;
}

ReductionReport check_constraint_reduction(const ReductionOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(opt.seed);
    ReductionReport rep;
    const double lambda = 1e-3;
    const double mu = 1e-2;
    double worst_y = 0.0, worst_esc = 0.0;
    for (std::size_t k = 0; k < opt.instances; ++k) {
        // A CCCP sub-problem of a convolution at a pretrained solution: labels
        // come from a planted teacher, the student gets a short Adam run first.
        NetworkState teacher = enumerable_conv_net(rng.next());
        randomize(teacher, rng);
        auto data = random_samples(teacher, opt.samples, rng);
        for (auto& s : data) {
            s.label = predict(teacher, s.input);
        }
        const LossTable loss = LossTable::zero_one(teacher.classes());
        NetworkState net = enumerable_conv_net(rng.next());
        SgdConfig adam = SgdConfig::mnist_defaults(SgdSolver::Adam);
        adam.eta = 0.01;
        adam.batch_size = 8;
        adam.epochs = opt.pretrain_epochs;
        adam.seed = rng.next();
        TrainLog pretrain;
        sgd_train(net, adam, data, {}, pretrain, loss);
        const LayerProblem problem(net, 0, data, loss);
        const std::vector<double> w0 = net.weights(0).storage();
        std::vector<GroundTruthAnchor> anchors;
        std::vector<ActivationPath> paths;
        for (std::size_t i = 0; i < problem.size(); ++i) {
            anchors.push_back(impute_latent(problem, i, w0));
            paths.push_back(anchors.back().h_star);
        }
        const auto full = ref::extract_constraints(net, 0, data, paths, problem.latent_layer_count(), loss);
        // The certified lower bound is the reference, so an inexact reference
        // solve cannot widen the 1% band.
        const auto best = ref::solve_explicit(full, w0, lambda, mu);

        SolverConfig sc;
        sc.lambda = lambda;
        sc.mu = mu;
        sc.inner_stop = 1e-7;
        sc.max_epochs = 5000;
        sc.seed = opt.seed + k;
        sc.start_space = SearchSpace::labels_only();
        sc.escalate = false;
        const SolveResult tier_y = solve_layer_svm(problem, anchors, w0, sc);
        const double obj_y = ref::explicit_primal(full, tier_y.w.values(), w0, lambda, mu);

        sc.escalate = true;
        sc.gap_tol = 1e-4;
        sc.require_gap = true;
        const SolveResult esc = solve_layer_svm(problem, anchors, w0, sc);
        const double obj_esc = ref::explicit_primal(full, esc.w.values(), w0, lambda, mu);

        const double denom = std::abs(best.dual);
        const double ry = (obj_y - best.dual) / denom;
        const double re = (obj_esc - best.dual) / denom;
        worst_y = std::max(worst_y, ry);
        worst_esc = std::max(worst_esc, re);
        rep.tier_y_within += ry <= 0.01 ? 1 : 0;
        rep.escalation_converged += re <= 0.01 ? 1 : 0;
    }
    rep.result.name = "constraint-reduction";
    rep.result.passed =
        rep.tier_y_within * 10 >= 8 * opt.instances && rep.escalation_converged == opt.instances;
    rep.result.detail = format("tier Y within 1%% of the exhaustive optimum on %zu/%zu (worst %.3e), escalation on "
                               "%zu/%zu (worst %.3e), %.1f s",
                               rep.tier_y_within, opt.instances, worst_y, rep.escalation_converged, opt.instances,
                               worst_esc, seconds_since(t0));
    return rep;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {"dc-residual", "cccp",      "monotonicity", "dual",
                                                   "step-size",   "warm-start", "oracle",       "gradients",
                                                   "constraint-reduction"};
    return names;
}

std::vector<CheckResult> run_suite(const std::string& name, const SuiteOptions& opt) {
    const std::uint64_t s = opt.seed;
    if (name == "dc-residual") {
        DcOptions o;
        o.seed += s;
        o.inject_fault = opt.inject_split_fault;
        return {check_dc_equality(o)};
    }
    if (name == "cccp") {
        CccpOptions o;
        o.seed += s;
        return {check_cccp_monotonicity(o)};
    }
    if (name == "monotonicity") {
        GlobalOptions o;
        o.seed += s;
        return {check_global_monotonicity(o)};
    }
    if (name == "dual") {
        DualOptions o;
        o.seed += s;
        return {check_dual_monotonicity(o)};
    }
    if (name == "step-size") {
        StepOptions o;
        o.seed += s;
        return {check_step_size(o)};
    }
    if (name == "warm-start") {
        WarmStartOptions o;
        o.seed += s;
        return {check_warm_start(o)};
    }
    if (name == "oracle") {
        OracleOptions o;
        o.seed += s;
        return {check_oracle(o)};
    }
    if (name == "gradients") {
        FeatureOptions f;
        f.seed += s;
        BackpropOptions b;
        b.seed += s;
        return {check_features(f), check_backprop(b)};
    }
    if (name == "constraint-reduction") {
        ReductionOptions o;
        o.seed += s;
        return {check_constraint_reduction(o).result};
    }
    throw ConfigError("unknown suite '" + name + "'");
}

} // namespace plcnn::checks
