#pragma once

// Backward costate sweep. The costate equation carries advanced arguments
// t + h_j; contributions that would land beyond the horizon are dropped,
// which is the indicator on (-inf, T] in the Hamiltonian.

#include "essa/core.hpp"

namespace essa {

struct AdjointOptions {
    /// Observer for every node index at which the costate is read.
    std::function<void(Index)> on_costate_read;
    /// n x (N+1) mask with 0 where the forward pass clipped a component at
    /// a node and 1 elsewhere; null when no clipping was applied.
    const Mat* clip_mask = nullptr;
};

/// Costate on the grid for a given state/control pair, lambda(rho_N) = 0.
///
/// The recursion is the exact adjoint of the explicit Euler forward map:
///
///   lambda_j = lambda_{j+1}
///            + delta * sum_s [ l_{x_s} + f_{x_s}^T lambda_{i+1} ](rho_i),  i = j + d_s
///
/// with the term dropped whenever i > N - 1. Each interval [rho_i, rho_{i+1})
/// pairs its left-node state and control with the costate at its right node,
/// so the node-i control gradient is l_u + f_u^T lambda_{i+1}. The control
/// at node N is never read. With a clip mask the stored value is the
/// costate seen by the step that produced the node.
inline Trajectory integrate_costate(const ProblemDef& problem, const Grid& grid, const Trajectory& state,
                                    const Trajectory& control, const History& history,
                                    const AdjointOptions& options = {}) {
    if (state.num_nodes() != grid.num_nodes() || control.num_nodes() != grid.num_nodes())
        throw InvalidArgument("integrate_costate: trajectories must cover every node");
    const Index n = problem.n;
    const Index N = grid.N();
    const double dt = grid.delta();

    Mat lambda = Mat::Zero(n, grid.num_nodes());
    // Pending advanced-argument contributions, indexed by receiving node.
    Mat pending = Mat::Zero(n, grid.num_nodes());

    auto read = [&](Index idx) {
        if (idx > N) throw std::logic_error("integrate_costate: read beyond the horizon");
        if (options.on_costate_read) options.on_costate_read(idx);
        return lambda.col(idx);
    };

    for (Index i = N - 1; i >= 0; --i) {
        const Mat X = stacked_state(state.values(), history, grid, i);
        const Vec u = control.node(i);
        const double t = grid.time(i);
        const Vec lam_next = read(i + 1);
        for (Index s = 0; s < grid.num_slots(); ++s) {
            const Index target = i - grid.offset(s);
            if (target < 0) continue;  // lands on the pre-horizon history
            pending.col(target) += dt * (problem.l_x(t, X, u, s) + problem.f_x(t, X, u, s).transpose() * lam_next);
        }
        lambda.col(i) = lam_next + pending.col(i);
        // A clipped component no longer depends on its inputs.
        if (options.clip_mask && i > 0) lambda.col(i) = lambda.col(i).cwiseProduct(options.clip_mask->col(i));
        if (!lambda.col(i).allFinite())
            throw NonFiniteCostate("integrate_costate: non-finite costate at node " + std::to_string(i), i);
    }
    return Trajectory(std::move(lambda));
}

} // namespace essa
