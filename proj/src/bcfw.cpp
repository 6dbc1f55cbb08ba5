#include "plcnn/bcfw.hpp"

#include "plcnn/errors.hpp"
#include "plcnn/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace plcnn {

DualState init_dual(const LayerProblem& problem, std::span<const double> w0, double lambda, double mu) {
    if (!(lambda > 0.0)) {
        throw ConfigError("lambda must be positive");
    }
    if (!(mu >= 0.0)) {
        throw ConfigError("mu must be nonnegative");
    }
    if (w0.size() != problem.weight_size()) {
        throw ShapeError("proximal center does not match the layer weights");
    }
    DualState s;
    s.lambda = lambda;
    s.mu = mu;
    s.rho = mu / (lambda + mu);
    s.n = problem.size();
    s.w0.assign(w0.begin(), w0.end());
    s.w = s.w0;
    scale(s.rho, s.w);
    s.blocks.reserve(s.n);
    for (std::size_t i = 0; i < s.n; ++i) {
        s.blocks.push_back(problem.zero_feature(i));
    }
    s.block_loss.assign(s.n, 0.0);
    s.l = 0.0;
    s.dual = 0.0;
    return s;
}

double dual_objective(std::span<const double> w, std::span<const double> w0, double l, double lambda, double mu) {
    const double rho = mu / (lambda + mu);
    double dev = 0.0;
    double cross = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double d = w[k] - rho * w0[k];
        dev += d * d;
        cross -= w0[k] * d;
    }
    return -0.5 * (lambda + mu) * dev + mu * cross + l;
}

std::vector<double> reconstruct_primal(const LayerProblem& problem, const DualState& state) {
    std::vector<double> w = state.w0;
    scale(state.rho, w);
    for (const auto& b : state.blocks) {
        problem.add_to(1.0, b, w);
    }
    return w;
}

double dual_from_scratch(const LayerProblem& problem, const DualState& state) {
    const auto w = reconstruct_primal(problem, state);
    const double l = std::accumulate(state.block_loss.begin(), state.block_loss.end(), 0.0);
    return dual_objective(w, state.w0, l, state.lambda, state.mu);
}

Corner corner_from_oracle(const DualState& state, const GroundTruthAnchor& anchor, const OracleResult& oracle) {
    Corner c;
    c.w_s = subtract(oracle.feature, anchor.feature);
    const double n = static_cast<double>(state.n);
    scale(-1.0 / (n * (state.lambda + state.mu)), coefficients(c.w_s));
    c.l_s = (oracle.offset - anchor.offset) / n;
    return c;
}

namespace {

// d = w_s - w_i with the quantities the step needs.
struct Direction {
    JointFeature d;
    double dl = 0.0;
    double w_dot_d = 0.0;
    double d_norm2 = 0.0;
};

Direction direction(const LayerProblem& problem, const DualState& state, std::size_t i, const Corner& corner) {
    Direction dir;
    dir.d = subtract(corner.w_s, state.blocks[i]);
    dir.dl = corner.l_s - state.block_loss[i];
    dir.w_dot_d = problem.inner(dir.d, state.w);
    dir.d_norm2 = problem.squared_norm(dir.d);
    return dir;
}

double step_from(const DualState& state, const Direction& dir) {
    if (!(dir.d_norm2 > 0.0)) {
        // The dual is linear along a pure loss direction.
        return dir.dl > 0.0 ? 1.0 : 0.0;
    }
    const double g = (-dir.w_dot_d + dir.dl / (state.lambda + state.mu)) / dir.d_norm2;
    return std::clamp(g, 0.0, 1.0);
}

} // namespace

double optimal_step(const LayerProblem& problem, const DualState& state, std::size_t i, const Corner& corner) {
    return step_from(state, direction(problem, state, i, corner));
}

double block_gap(const LayerProblem& problem, const DualState& state, std::size_t i, const Corner& corner) {
    const Direction dir = direction(problem, state, i, corner);
    return -(state.lambda + state.mu) * dir.w_dot_d + dir.dl;
}

StepRecord apply_step(const LayerProblem& problem, DualState& state, std::size_t i, const Corner& corner) {
    const Direction dir = direction(problem, state, i, corner);
    StepRecord rec;
    rec.sample = i;
    rec.gamma = step_from(state, dir);
    if (rec.gamma == 0.0) {
        return rec;
    }
    const double lm = state.lambda + state.mu;
    const double g = rec.gamma;
    rec.dual_increase = g * (-lm * dir.w_dot_d + dir.dl) - 0.5 * lm * g * g * dir.d_norm2;

    auto& wi = coefficients(state.blocks[i]);
    axpy(g, coefficients(dir.d), wi);
    state.block_loss[i] += g * dir.dl;
    problem.add_to(g, dir.d, state.w);
    state.l += g * dir.dl;
    state.dual += rec.dual_increase;
    return rec;
}

StepRecord block_step(const LayerProblem& problem, DualState& state, std::size_t i,
                      const std::vector<GroundTruthAnchor>& anchors, SearchSpace space) {
    const auto oracle = loss_augmented_oracle(problem, i, anchors[i], state.w, space);
    return apply_step(problem, state, i, corner_from_oracle(state, anchors[i], oracle));
}

double proximal_objective(const LayerProblem& problem, const std::vector<GroundTruthAnchor>& anchors,
                          std::span<const double> w, std::span<const double> w0, double lambda, double mu,
                          SearchSpace space) {
    double hinge = 0.0;
    for (std::size_t i = 0; i < problem.size(); ++i) {
        hinge += loss_augmented_oracle(problem, i, anchors[i], w, space).score;
    }
    double reg = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double d = w[k] - w0[k];
        reg += 0.5 * lambda * w[k] * w[k] + 0.5 * mu * d * d;
    }
    return reg + hinge / static_cast<double>(problem.size());
}

namespace {

// Runs oracles for `indices` at the frozen w, fanning out over threads.
std::vector<Corner> batch_corners(const LayerProblem& problem, const DualState& state,
                                  const std::vector<GroundTruthAnchor>& anchors, std::span<const std::size_t> indices,
                                  SearchSpace space, std::size_t threads) {
    std::vector<Corner> out(indices.size());
    const auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const std::size_t i = indices[k];
            const auto oracle = loss_augmented_oracle(problem, i, anchors[i], state.w, space);
            out[k] = corner_from_oracle(state, anchors[i], oracle);
        }
    };
    const std::size_t t = std::max<std::size_t>(1, std::min(threads, indices.size()));
    if (t == 1) {
        work(0, indices.size());
        return out;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (indices.size() + t - 1) / t;
    for (std::size_t b = 0; b < indices.size(); b += chunk) {
        pool.emplace_back(work, b, std::min(indices.size(), b + chunk));
    }
    for (auto& th : pool) {
        th.join();
    }
    return out;
}

struct GapEstimate {
    double primal = 0.0;
    double gap = 0.0;
};

GapEstimate estimate_gap(const LayerProblem& problem, const DualState& state,
                         const std::vector<GroundTruthAnchor>& anchors, std::span<const std::size_t> sample,
                         SearchSpace space) {
    GapEstimate e;
    double hinge = 0.0;
    double gap = 0.0;
    for (std::size_t i : sample) {
        const auto oracle = loss_augmented_oracle(problem, i, anchors[i], state.w, space);
        hinge += oracle.score;
        gap += block_gap(problem, state, i, corner_from_oracle(state, anchors[i], oracle));
    }
    const double scale_up = static_cast<double>(problem.size()) / static_cast<double>(sample.size());
    double dev = 0.0;
    for (std::size_t k = 0; k < state.w.size(); ++k) {
        const double d = state.w[k] - state.rho * state.w0[k];
        dev += d * d;
    }
    e.primal = 0.5 * (state.lambda + state.mu) * dev + hinge / static_cast<double>(sample.size());
    e.gap = gap * scale_up;
    return e;
}

} // namespace

SolveResult solve_layer_svm(const LayerProblem& problem, const std::vector<GroundTruthAnchor>& anchors,
                            std::span<const double> w0, const SolverConfig& cfg) {
    if (anchors.size() != problem.size()) {
        throw ShapeError("one anchor per sample is required");
    }
    if (!(cfg.inner_stop > 0.0 && cfg.inner_stop < 1.0)) {
        throw ConfigError("inner stop threshold must lie in (0, 1)");
    }
    DualState state = init_dual(problem, w0, cfg.lambda, cfg.mu);
    const SearchSpace full = problem.full_space();
    SearchSpace space = cfg.start_space.value_or(problem.default_space());
    if (space.free_tail > full.free_tail) {
        throw ConfigError("start search space exceeds the layer's latent space");
    }
    const bool dense = !problem.pair().targets_svm() &&
                       problem.net().layer(problem.layer()).spec.kind == LayerKind::Dense;
    const bool escalate = cfg.escalate.value_or(dense);

    SolveResult result;
    const double slack = 1e-12;
    if (cfg.require_descent) {
        result.start_objective = proximal_objective(problem, anchors, w0, w0, cfg.lambda, cfg.mu, full);
    }

    const std::size_t n = problem.size();
    Rng rng(cfg.seed);
    std::vector<std::size_t> gap_sample(n);
    std::iota(gap_sample.begin(), gap_sample.end(), 0);
    {
        Rng gap_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
        gap_rng.shuffle(gap_sample);
        gap_sample.resize(std::min(n, std::max<std::size_t>(1, cfg.gap_samples)));
    }

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        const double dual_before = state.dual;
        EpochRecord rec;
        rec.epoch = epoch;
        rec.tier = space.free_tail;
        double gamma_sum = 0.0;
        const auto account = [&](const StepRecord& s) {
            ++rec.steps;
            if (s.gamma > 0.0) {
                ++rec.nonzero_steps;
            }
            gamma_sum += s.gamma;
            if (cfg.on_step) {
                cfg.on_step(s);
            }
        };
        if (cfg.batch_size <= 1) {
            for (std::size_t i : order) {
                account(block_step(problem, state, i, anchors, space));
            }
        } else {
            for (std::size_t b = 0; b < n; b += cfg.batch_size) {
                const auto idx = std::span<const std::size_t>(order).subspan(b, std::min(cfg.batch_size, n - b));
                const auto corners = batch_corners(problem, state, anchors, idx, space, cfg.threads);
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    account(apply_step(problem, state, idx[k], corners[k]));
                }
            }
        }
        result.steps += rec.steps;
        rec.mean_gamma = rec.steps ? gamma_sum / static_cast<double>(rec.steps) : 0.0;

        // Guard against drift of the incrementally maintained quantities.
        const double scratch = dual_from_scratch(problem, state);
        rec.dual_drift = std::abs(scratch - state.dual);
        if (rec.dual_drift > 1e-9 * (1.0 + std::abs(scratch))) {
            state.w = reconstruct_primal(problem, state);
            state.l = std::accumulate(state.block_loss.begin(), state.block_loss.end(), 0.0);
            state.dual = scratch;
        }
        rec.dual = state.dual;

        const double increase = state.dual - dual_before;
        const bool fired = epoch >= cfg.min_epochs && increase <= cfg.inner_stop * std::abs(state.dual);
        bool done = false;
        if (fired) {
            const auto est = estimate_gap(problem, state, anchors, gap_sample, full);
            rec.primal_estimate = est.primal;
            rec.gap_estimate = est.gap;
            const bool at_full = space.free_tail == full.free_tail;
            const bool gap_open = est.gap > cfg.gap_tol * std::max(std::abs(est.primal), 1e-12);
            done = !(escalate && gap_open && (!at_full || cfg.require_gap));
            if (done && cfg.require_descent) {
                const double obj =
                    proximal_objective(problem, anchors, state.w, w0, cfg.lambda, cfg.mu, full);
                result.final_objective = obj;
                if (obj > *result.start_objective + slack * (1.0 + std::abs(*result.start_objective))) {
                    done = false;
                }
            }
            if (!done && !at_full) {
                ++space.free_tail;
                rec.escalated = true;
            }
        }
        if (cfg.on_epoch) {
            cfg.on_epoch(rec);
        }
        result.epochs.push_back(rec);
        if (done) {
            break;
        }
    }
    result.final_space = space;
    result.dual = state.dual;
    result.w = Tensor(problem.weight_shape(), state.w);
    return result;
}

} // namespace plcnn
