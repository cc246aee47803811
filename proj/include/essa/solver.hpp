#pragma once

// Outer proximal sweep: costate pass, node-by-node minimization of the
// augmented Hamiltonian with simultaneous state advance, and cost-gated
// acceptance with growth of the regularization on failure.

#include "essa/adjoint.hpp"
#include "essa/core.hpp"
#include "essa/dde.hpp"
#include "essa/hamiltonian.hpp"

#include <memory>

namespace essa {

/// Folds a terminal cost gamma(x(T)) into the running cost using
/// gamma(x(T)) - gamma(x(t0)) = int grad gamma(x(t)) f dt. The returned
/// problem has no terminal cost; its cost differs from the original by the
/// constant gamma(x(t0)).
inline ProblemDef absorb_terminal_cost(const ProblemDef& problem) {
    if (!problem.terminal) return problem;
    if (!problem.terminal->hessian) throw MissingHessian("absorb_terminal_cost: terminal cost needs a Hessian");

    auto base = std::make_shared<const ProblemDef>(problem);
    const TerminalCost term = *problem.terminal;
    ProblemDef out = problem;
    out.terminal.reset();

    out.l = [base, term](double t, const Mat& X, const Vec& u) {
        return base->l(t, X, u) + term.gradient(X.col(0)).dot(base->f(t, X, u));
    };
    out.l_x = [base, term](double t, const Mat& X, const Vec& u, Index s) -> Vec {
        const Vec g = term.gradient(X.col(0));
        Vec r = base->l_x(t, X, u, s) + base->f_x(t, X, u, s).transpose() * g;
        if (s == 0) r += term.hessian(X.col(0)).transpose() * base->f(t, X, u);
        return r;
    };
    out.l_u = [base, term](double t, const Mat& X, const Vec& u) -> Vec {
        return base->l_u(t, X, u) + base->f_u(t, X, u).transpose() * term.gradient(X.col(0));
    };
    if (base->H_uu) {
        // l1_uu + lambda^T f_uu = H_uu evaluated at lambda + grad gamma.
        out.H_uu = [base, term](double t, const Mat& X, const Vec& u, const Vec& lambda) -> Mat {
            return base->H_uu(t, X, u, lambda + term.gradient(X.col(0)));
        };
    }
    // grad gamma . G u only adds a linear-in-u term when f is control-affine.
    out.quadratic_control_cost = problem.quadratic_control_cost && problem.control_affine;
    return out;
}

/// Left-endpoint rectangle rule: delta * sum_{j<N} l(rho_j, X_h(rho_j), u_j).
inline double eval_cost(const ProblemDef& problem, const Grid& grid, const Trajectory& state,
                        const Trajectory& control, const History& history) {
    double J = 0.0;
    for (Index j = 0; j < grid.N(); ++j)
        J += problem.l(grid.time(j), stacked_state(state.values(), history, grid, j), control.node(j));
    return grid.delta() * J;
}

/// delta * sum_{j<N} |a_j - b_j|^2 for piecewise-constant controls.
inline double l2_sq_distance(const Grid& grid, const Trajectory& a, const Trajectory& b) {
    return grid.delta() * (a.values().leftCols(grid.N()) - b.values().leftCols(grid.N())).squaredNorm();
}

/// L2 norm of u - P_U(u - H_u) over [t0, T]; vanishes exactly at
/// first-order stationary controls. Node j uses the interval's costate
/// lambda_{j+1}, matching integrate_costate.
inline double optimality_residual(const ProblemDef& problem, const Grid& grid, const Trajectory& control,
                                  const Trajectory& state, const Trajectory& costate, const History& history) {
    double acc = 0.0;
    for (Index j = 0; j < grid.N(); ++j) {
        const Mat X = stacked_state(state.values(), history, grid, j);
        const Vec u = control.node(j);
        const Vec g = grad_H_u(problem, grid.time(j), X, u, costate.node(j + 1));
        acc += (u - problem.controls.project(u - g)).squaredNorm();
    }
    return std::sqrt(grid.delta() * acc);
}

/// Upper bound on the number of accepted iterations, floor((J0 - J*) / (xi0 eta_tol)).
inline long long termination_bound(double J0, double J_star, double xi0, double eta_tol) {
    if (J_star > J0) throw InvalidArgument("termination_bound: J* must not exceed J0");
    if (!(xi0 > 0.0) || !(eta_tol > 0.0)) throw InvalidArgument("termination_bound: xi0 and eta_tol must be positive");
    return static_cast<long long>(std::floor((J0 - J_star) / (xi0 * eta_tol)));
}

struct IterationRecord {
    int index = 0;
    double J = 0.0;
    double delta_u_sq = 0.0;
    double eps_min = 0.0;
    /// Regularization increases performed in this iteration before this attempt.
    int c_increases = 0;
    std::optional<double> residual;
    bool accepted = false;
    /// Identifies the costate the attempt was built from.
    int costate_version = 0;
    int inner_stalls = 0;
    int clip_events = 0;
};

enum class Termination { ToleranceMet, MaxIters, CIncreaseCap };

inline const char* to_string(Termination t) {
    switch (t) {
    case Termination::ToleranceMet: return "ToleranceMet";
    case Termination::MaxIters: return "MaxIters";
    case Termination::CIncreaseCap: return "CIncreaseCap";
    }
    return "unknown";
}

struct Solution {
    Trajectory control;
    Trajectory state;
    Trajectory costate;
    std::vector<IterationRecord> log;
    Termination termination = Termination::MaxIters;
    double J = 0.0;
    /// J plus gamma(x(t0)) when a terminal cost was absorbed.
    double objective = 0.0;
    double residual = 0.0;
    double eta_tol = 0.0;
    Vec C_final;
    double closure_gap = 0.0;
    /// Cost of the projected initial control.
    double J_initial = 0.0;
    int accepted_iterations = 0;
    /// Components clipped at zero in the returned state.
    int clip_events = 0;
};

using IterationSink = std::function<void(const IterationRecord&)>;

namespace detail {

/// Control, state and (when clipping) the clip mask of one iterate.
struct Iterate {
    Trajectory control;
    Trajectory state;
    Mat mask;  // empty without clipping
    int clips = 0;
    bool finite = true;
    int stalls = 0;

    AdjointOptions adjoint_options() const {
        AdjointOptions o;
        if (mask.size() > 0) o.clip_mask = &mask;
        return o;
    }
};

inline Iterate forward(const ProblemDef& p, const Grid& grid, const Trajectory& u, const History& history,
                       bool clip) {
    Iterate it;
    IntegratorSettings settings;
    if (clip) {
        it.mask = Mat::Ones(p.n, grid.num_nodes());
        settings.nonneg_clip = true;
        settings.on_clip = [&it](const ClipEvent& e) {
            it.mask(e.component, e.node) = 0.0;
            ++it.clips;
        };
    }
    it.state = integrate_forward(p, grid, u, history, settings);
    it.control = u;
    return it;
}

/// One pass of the simultaneous state/control update. Under explicit Euler
/// the stacked state at node j depends only on controls at earlier nodes,
/// so minimizing node by node and stepping forward solves the coupled
/// system exactly on the grid.
inline Iterate sweep(const ProblemDef& p, const Grid& grid, const History& history, const Trajectory& costate,
                     const Trajectory& u_prev, const RegMatrix& C, const InnerMinSettings& inner, bool clip) {
    Iterate r;
    r.control = Trajectory(p.m, grid.num_nodes());
    r.state = Trajectory(p.n, grid.num_nodes());
    if (clip) r.mask = Mat::Ones(p.n, grid.num_nodes());
    Mat& x = r.state.values();
    x.col(0) = history.initial();
    const double dt = grid.delta();
    for (Index j = 0; j < grid.N(); ++j) {
        const double t = grid.time(j);
        const Mat X = stacked_state(x, history, grid, j);
        const InnerResult v = minimize_K(p, t, X, costate.node(j + 1), u_prev.node(j), C, inner);
        if (v.status == InnerStatus::Stalled) ++r.stalls;
        r.control.node(j) = v.v;
        x.col(j + 1) = x.col(j) + dt * p.f(t, X, v.v);
        if (clip) {
            for (Index c = 0; c < p.n; ++c)
                if (x(c, j + 1) < 0.0) {
                    x(c, j + 1) = 0.0;
                    r.mask(c, j + 1) = 0.0;
                    ++r.clips;
                }
        }
        if (!x.col(j + 1).allFinite()) {
            // The trial diverged; keep the previous control on the rest of
            // the horizon and let the caller treat it as a failed descent.
            r.finite = false;
            r.control.values().rightCols(grid.N() - j) = u_prev.values().rightCols(grid.N() - j);
            return r;
        }
    }
    r.control.node(grid.N()) = r.control.node(grid.N() - 1);
    return r;
}

} // namespace detail

/// Runs the proximal sweep from u0 until the control update falls below
/// eta_tol, the outer iteration cap is reached, or the regularization has
/// been grown max_c_increases_per_iter times without descent.
inline Solution solve(const ProblemDef& problem_in, const Grid& grid, const History& history,
                      const SolverConfig& config, const Trajectory& u0, const IterationSink& sink = {}) {
    config.validate();
    problem_in.validate();
    const ProblemDef problem = absorb_terminal_cost(problem_in);
    if (grid.num_slots() != problem.num_slots())
        throw InvalidArgument("solve: grid delay count does not match the problem");
    if (u0.num_nodes() != grid.num_nodes() || u0.dim() != problem.m)
        throw InvalidArgument("solve: initial control must cover every node");
    history.validate(grid);

    const double eta_tol = config.resolved_eta_tol(grid, problem.m);
    const double gamma0 = problem_in.terminal ? problem_in.terminal->value(history.initial()) : 0.0;
    const bool clip = config.nonneg_clip;

    Trajectory u_start = u0;
    for (Index j = 0; j < grid.num_nodes(); ++j) u_start.node(j) = problem.controls.project(u0.node(j));
    u_start.node(grid.N()) = u_start.node(grid.N() - 1);
    detail::Iterate cur = detail::forward(problem, grid, u_start, history, clip);
    double J = eval_cost(problem, grid, cur.state, cur.control, history);
    RegMatrix C(config.resolved_C0(problem.m));

    Solution sol;
    sol.eta_tol = eta_tol;
    sol.J_initial = J;
    auto emit = [&](const IterationRecord& rec) {
        sol.log.push_back(rec);
        if (sink) sink(rec);
    };

    bool done = false;
    int costate_version = 0;
    for (int i = 1; i <= config.max_outer_iters && !done; ++i) {
        const Trajectory lambda =
            integrate_costate(problem, grid, cur.state, cur.control, history, cur.adjoint_options());
        ++costate_version;
        for (int increases = 0;; ++increases) {
            detail::Iterate cand = detail::sweep(problem, grid, history, lambda, cur.control, C, config.inner, clip);
            IterationRecord rec;
            rec.index = i;
            rec.delta_u_sq = l2_sq_distance(grid, cand.control, cur.control);
            rec.eps_min = C.eps_min();
            rec.c_increases = increases;
            rec.costate_version = costate_version;
            rec.inner_stalls = cand.stalls;
            rec.clip_events = cand.clips;
            rec.J = cand.finite ? eval_cost(problem, grid, cand.state, cand.control, history)
                                : std::numeric_limits<double>::infinity();
            const bool descent = rec.J < J;

            if (cand.finite && rec.delta_u_sq <= eta_tol) {
                const detail::Iterate& fin = descent ? cand : cur;
                const Trajectory lf =
                    integrate_costate(problem, grid, fin.state, fin.control, history, fin.adjoint_options());
                const double res = optimality_residual(problem, grid, fin.control, fin.state, lf, history);
                rec.residual = res;
                if (!config.strict || res <= config.residual_tol) {
                    rec.accepted = descent;
                    emit(rec);
                    if (descent) {
                        cur = std::move(cand);
                        J = rec.J;
                    }
                    sol.termination = Termination::ToleranceMet;
                    done = true;
                    break;
                }
            }
            if (descent) {
                rec.accepted = true;
                emit(rec);
                cur = std::move(cand);
                J = rec.J;
                if (config.c_relax != 1.0) C = C.scaled(config.c_relax);
                break;
            }
            emit(rec);
            if (increases >= config.max_c_increases_per_iter) {
                sol.termination = Termination::CIncreaseCap;
                done = true;
                break;
            }
            C = C.scaled(config.c_growth);
        }
    }

    sol.accepted_iterations = static_cast<int>(std::count_if(sol.log.begin(), sol.log.end(),
                                                             [](const IterationRecord& r) { return r.accepted; }));
    // Closure: the returned state is a fresh integration of the returned control.
    detail::Iterate fin = detail::forward(problem, grid, cur.control, history, clip);
    sol.closure_gap = (fin.state.values() - cur.state.values()).lpNorm<Eigen::Infinity>();
    if (sol.closure_gap > 1e-12) throw std::logic_error("solve: returned state does not match its control");
    sol.clip_events = fin.clips;
    sol.costate = integrate_costate(problem, grid, fin.state, fin.control, history, fin.adjoint_options());
    sol.residual = optimality_residual(problem, grid, fin.control, fin.state, sol.costate, history);
    sol.control = std::move(fin.control);
    sol.state = std::move(fin.state);
    sol.J = J;
    sol.objective = J + gamma0;
    sol.C_final = C.diag();
    return sol;
}

/// Constant initial control, projected onto U.
inline Solution solve(const ProblemDef& problem, const Grid& grid, const History& history,
                      const SolverConfig& config, const Vec& u0, const IterationSink& sink = {}) {
    return solve(problem, grid, history, config, Trajectory::constant(u0, grid.num_nodes()), sink);
}

/// Starts from the midpoint of the control set.
inline Solution solve(const ProblemDef& problem, const Grid& grid, const History& history,
                      const SolverConfig& config, const IterationSink& sink = {}) {
    return solve(problem, grid, history, config, problem.controls.midpoint(), sink);
}

} // namespace essa
