#pragma once

// Forward method-of-steps integration of x' = f(t, X_h(t), u(t)) on a
// uniform grid. Every delay is a whole number of steps, so delayed
// arguments are plain node lookups.

#include "essa/core.hpp"

#include <limits>

namespace essa {

enum class Scheme { ExplicitEuler, Heun2 };

struct ClipEvent {
    Index node;
    Index component;
    double value;  // value before clipping
};

struct IntegratorSettings {
    Scheme scheme = Scheme::ExplicitEuler;
    bool nonneg_clip = false;
    /// Called for every clipped component when nonneg_clip is on.
    std::function<void(const ClipEvent&)> on_clip;
};

namespace detail {

inline void check_finite_state(const Mat& values, Index node) {
    if (!values.col(node).allFinite())
        throw NonFiniteState("integrate_forward: non-finite state at node " + std::to_string(node), node);
}

inline void clip_node(Mat& values, Index node, const IntegratorSettings& settings) {
    if (!settings.nonneg_clip) return;
    for (Index c = 0; c < values.rows(); ++c) {
        if (values(c, node) < 0.0) {
            if (settings.on_clip) settings.on_clip({node, c, values(c, node)});
            values(c, node) = 0.0;
        }
    }
}

} // namespace detail

/// A single explicit Euler step from node j; the state at node j+1 depends
/// only on states up to node j and on the node-j control.
template <typename Values>
Vec euler_step(const ProblemDef& problem, const Grid& grid, const Values& state, const History& history,
               Index node, const Vec& u) {
    const Mat X = stacked_state(state, history, grid, node);
    return state.col(node) + grid.delta() * problem.f(grid.time(node), X, u);
}

/// Integrates the state forward under a piecewise-constant control given on
/// all N+1 nodes (the node-N value is never read).
inline Trajectory integrate_forward(const ProblemDef& problem, const Grid& grid, const Trajectory& control,
                                    const History& history, const IntegratorSettings& settings = {}) {
    if (control.num_nodes() != grid.num_nodes())
        throw InvalidArgument("integrate_forward: control must be defined on every node");
    if (control.dim() != problem.m) throw InvalidArgument("integrate_forward: control dimension mismatch");
    if (history.dim() != problem.n) throw InvalidArgument("integrate_forward: history dimension mismatch");
    history.validate(grid);

    Mat x(problem.n, grid.num_nodes());
    x.col(0) = history.initial();
    detail::check_finite_state(x, 0);

    const double dt = grid.delta();
    for (Index j = 0; j < grid.N(); ++j) {
        const Vec u = control.node(j);
        const Mat X = stacked_state(x, history, grid, j);
        const Vec k1 = problem.f(grid.time(j), X, u);
        if (settings.scheme == Scheme::ExplicitEuler) {
            x.col(j + 1) = x.col(j) + dt * k1;
        } else {
            // Predictor, then the corrector at node j+1. Delayed slots with
            // offset >= 1 read already-computed nodes; slot 0 takes the
            // predicted value. The control stays at the node-j value.
            x.col(j + 1) = x.col(j) + dt * k1;
            const Mat Xp = stacked_state(x, history, grid, j + 1);
            const Vec k2 = problem.f(grid.time(j + 1), Xp, u);
            x.col(j + 1) = x.col(j) + 0.5 * dt * (k1 + k2);
        }
        detail::clip_node(x, j + 1, settings);
        detail::check_finite_state(x, j + 1);
    }
    return Trajectory(std::move(x));
}

/// Result of an empirical convergence study.
struct OrderEstimate {
    /// Sup-norm gaps between successive refinements, coarse to fine.
    std::vector<double> gaps;
    /// log2 of successive gap ratios.
    std::vector<double> orders;
    /// All gaps vanished; the scheme is exact on this problem.
    bool exact = false;

    double order() const {
        return orders.empty() ? std::numeric_limits<double>::quiet_NaN() : orders.back();
    }
};

namespace detail {

inline Trajectory refine_control(const Trajectory& control, Index factor) {
    const Index N = control.num_nodes() - 1;
    Trajectory out(control.dim(), N * factor + 1);
    for (Index j = 0; j < N; ++j)
        for (Index r = 0; r < factor; ++r) out.node(j * factor + r) = control.node(j);
    out.node(N * factor) = control.node(N);
    return out;
}

/// Linear interpolation of a sampled history onto a finer pre-horizon mesh.
inline History refine_history(const History& history, Index factor) {
    if (history.is_constant()) return history;
    const Mat& s = history.samples();
    const Index cols = s.cols();
    Mat fine(s.rows(), (cols - 1) * factor + 1);
    for (Index c = 0; c + 1 < cols; ++c)
        for (Index r = 0; r < factor; ++r) {
            const double w = static_cast<double>(r) / static_cast<double>(factor);
            fine.col(c * factor + r) = (1.0 - w) * s.col(c) + w * s.col(c + 1);
        }
    fine.col(fine.cols() - 1) = s.col(cols - 1);
    return History::sampled(std::move(fine));
}

} // namespace detail

/// Integrates on grids refined by 1, 2, 4, ... (`refinements` levels) and
/// estimates the order from the sup-norm gaps between successive levels,
/// measured on the base-grid nodes.
inline OrderEstimate convergence_order(const ProblemDef& problem, const Grid& grid, const Trajectory& control,
                                       const History& history, int refinements,
                                       const IntegratorSettings& settings = {}) {
    if (refinements < 3) throw InvalidArgument("convergence_order: need at least three refinement levels");
    std::vector<Mat> coarse;
    Index factor = 1;
    for (int level = 0; level < refinements; ++level, factor *= 2) {
        const Grid g = grid.refined(factor);
        const Trajectory x = integrate_forward(problem, g, detail::refine_control(control, factor),
                                               detail::refine_history(history, factor), settings);
        Mat restricted(problem.n, grid.num_nodes());
        for (Index j = 0; j < grid.num_nodes(); ++j) restricted.col(j) = x.node(j * factor);
        coarse.push_back(std::move(restricted));
    }
    OrderEstimate est;
    for (std::size_t i = 0; i + 1 < coarse.size(); ++i)
        est.gaps.push_back((coarse[i] - coarse[i + 1]).lpNorm<Eigen::Infinity>());
    est.exact = std::all_of(est.gaps.begin(), est.gaps.end(), [](double g) { return g == 0.0; });
    if (!est.exact)
        for (std::size_t i = 0; i + 1 < est.gaps.size(); ++i) est.orders.push_back(std::log2(est.gaps[i] / est.gaps[i + 1]));
    return est;
}

} // namespace essa
