#include "plcnn/cccp.hpp"

#include "plcnn/errors.hpp"

#include <cmath>
#include <limits>

namespace plcnn {

void TrainLog::add(TrainRecord r) {
    if (on_record) {
        on_record(r);
    }
    records.push_back(std::move(r));
}

Evaluation evaluate(const NetworkState& net, std::span<const LabeledSample> data, double lambda,
                    const LossTable& loss) {
    if (data.empty()) {
        throw DataError("cannot evaluate on an empty dataset");
    }
    Evaluation e;
    std::size_t correct = 0;
    double hinge = 0.0;
    for (const auto& s : data) {
        const auto phi = forward(net, s.input).phi;
        const auto scores = class_scores(net, phi.values());
        const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
        correct += best == s.label ? 1 : 0;
        hinge += hinge_upper_bound(scores, s.label, loss).value;
    }
    const double n = static_cast<double>(data.size());
    e.accuracy = static_cast<double>(correct) / n;
    e.mean_hinge = hinge / n;
    e.objective = 0.5 * lambda * net.squared_weight_norm() + e.mean_hinge;
    return e;
}

Evaluation evaluate(const NetworkState& net, std::span<const LabeledSample> data, double lambda) {
    return evaluate(net, data, lambda, LossTable::zero_one(net.classes()));
}

double layer_objective(const NetworkState& net, std::size_t l, std::span<const LabeledSample> data, double lambda,
                       const LossTable& loss) {
    return 0.5 * lambda * squared_norm(net.weights(l)) + mean_hinge(net, data, loss);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t x = seed ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xbf58476d1ce4e5b9ull) ^ (c * 0x94d049bb133111ebull);
    x ^= x >> 31;
    x *= 0xd6e8feb86659fd93ull;
    x ^= x >> 32;
    return x;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

} // namespace

LayerReport optimize_layer(NetworkState& net, std::size_t l, const TrainConfig& cfg,
                           std::span<const LabeledSample> data, const LayerContext& ctx) {
    if (data.empty()) {
        throw DataError("cannot optimize a layer on an empty dataset");
    }
    if (!(cfg.lambda > 0.0) || !(cfg.mu >= 0.0)) {
        throw ConfigError("lambda must be positive and mu nonnegative");
    }
    const LossTable loss = ctx.loss.classes() == net.classes() ? ctx.loss : LossTable::zero_one(net.classes());
    LayerReport rep;
    const LayerProblem problem(net, l, data, loss);
    Tensor& weights = net.weights(l);

    Evaluation ev = evaluate(net, data, cfg.lambda, loss);
    double obj = 0.5 * cfg.lambda * squared_norm(weights) + ev.mean_hinge;
    rep.layer_objectives.push_back(obj);

    std::size_t max_iters = std::max(cfg.cccp_max_iters, cfg.cccp_min_iters);
    if (problem.latent_layer_count() == 0) {
        // Convex layer: the linearization is exact.
        max_iters = std::max<std::size_t>(1, cfg.cccp_min_iters);
    }

    for (std::size_t it = 1; it <= max_iters; ++it) {
        const std::vector<double> w_t = weights.storage();
        std::vector<GroundTruthAnchor> anchors;
        anchors.reserve(problem.size());
        for (std::size_t i = 0; i < problem.size(); ++i) {
            anchors.push_back(impute_latent(problem, i, w_t));
        }

        SolverConfig sc;
        sc.lambda = cfg.lambda;
        sc.mu = cfg.mu;
        sc.inner_stop = cfg.inner_stop;
        sc.max_epochs = cfg.inner_max_epochs;
        sc.batch_size = cfg.batch_size;
        sc.threads = cfg.threads;
        sc.seed = mix_seed(cfg.seed, ctx.pass, l, it);
        sc.escalate = cfg.escalate;
        sc.gap_tol = cfg.gap_tol;
        sc.gap_samples = cfg.gap_samples;
        sc.require_descent = cfg.require_descent;
        SolveResult sr = solve_layer_svm(problem, anchors, w_t, sc);

        weights.storage() = sr.w.storage();
        const Evaluation candidate = evaluate(net, data, cfg.lambda, loss);
        const double new_obj = 0.5 * cfg.lambda * squared_norm(weights) + candidate.mean_hinge;
        ++rep.iterations;
        rep.solves.push_back(std::move(sr));

        const bool accept = new_obj <= obj;
        double rel = 0.0;
        if (accept) {
            ++rep.accepted;
            rel = (obj - new_obj) / std::max(std::abs(obj), std::numeric_limits<double>::min());
            obj = new_obj;
            ev = candidate;
            rep.layer_objectives.push_back(obj);
        } else {
            ++rep.rejected;
            weights.storage() = w_t;
        }

        if (ctx.log) {
            TrainRecord r;
            r.phase = "lwsvm";
            r.pass = ctx.pass;
            r.layer = static_cast<long>(l);
            r.epoch = it;
            r.objective = ev.objective;
            r.layer_objective = obj;
            r.train_acc = ev.accuracy;
            r.val_acc = ctx.val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : evaluate(net, ctx.val, cfg.lambda, loss).accuracy;
            r.wall_s = seconds_since(ctx.start);
            ctx.log->add(std::move(r));
        }
        if (!accept || (it >= cfg.cccp_min_iters && rel < cfg.cccp_tolerance)) {
            break;
        }
    }
    return rep;
}

void train_lwsvm(NetworkState& net, const TrainConfig& cfg, std::span<const LabeledSample> train,
                 std::span<const LabeledSample> val, TrainLog& log, const LossTable& loss) {
    LayerContext ctx;
    ctx.val = val;
    ctx.log = &log;
    ctx.loss = loss;

    const Evaluation start = evaluate(net, train, cfg.lambda, loss);
    double best_val = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                                  : evaluate(net, val, cfg.lambda, loss).accuracy;
    TrainRecord r0;
    r0.phase = "lwsvm";
    r0.objective = start.objective;
    r0.layer_objective = std::numeric_limits<double>::quiet_NaN();
    r0.train_acc = start.accuracy;
    r0.val_acc = best_val;
    log.add(r0);

    const auto order = net.parametric_indices();
    for (std::size_t pass = 1; pass <= cfg.max_passes; ++pass) {
        ctx.pass = pass;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            optimize_layer(net, *it, cfg, train, ctx);
        }
        if (cfg.stop_on_validation && !val.empty()) {
            const double acc = evaluate(net, val, cfg.lambda, loss).accuracy;
            if (!(acc > best_val)) {
                break;
            }
            best_val = acc;
        }
    }
}

} // namespace plcnn
