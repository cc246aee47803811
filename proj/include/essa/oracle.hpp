#pragma once

// Independent verification: finite-difference checks of the derivative
// callbacks, a brute-force solver for fully discretized delay-free
// problems, a Riccati reference for the scalar LQ problem and fine-grid
// reference integrations. Nothing here calls the costate sweep or the
// outer solver.

#include "essa/core.hpp"
#include "essa/dde.hpp"
#include "essa/models.hpp"

#include <map>
#include <random>

namespace essa::oracle {

// ---------------------------------------------------------------------------
// Finite-difference derivative check
// ---------------------------------------------------------------------------

struct FdSampling {
    double state_lo = 0.0;
    double state_hi = 1.0;
    double t_lo = 0.0;
    double t_hi = 1.0;
    std::uint64_t seed = 20240601;
};

struct FdReport {
    /// Largest relative error per derivative block, e.g. "f_x[1]", "l_u".
    std::map<std::string, double> block_errors;
    int samples = 0;

    double max_error() const {
        double m = 0.0;
        for (const auto& [k, v] : block_errors) m = std::max(m, v);
        return m;
    }
    bool passes(double tol) const { return max_error() <= tol; }
};

namespace detail {

inline double rel_err(const Mat& fd, const Mat& an) {
    double e = 0.0;
    for (Index i = 0; i < fd.size(); ++i)
        e = std::max(e, std::abs(fd.data()[i] - an.data()[i]) / std::max(1.0, std::abs(an.data()[i])));
    return e;
}

inline void record(FdReport& r, const std::string& key, double e) {
    auto [it, inserted] = r.block_errors.try_emplace(key, e);
    if (!inserted) it->second = std::max(it->second, e);
}

/// Central-difference Jacobian of a vector map; column c is d/dz_c.
template <typename F>
Mat central_jacobian(F&& fn, const Vec& z, double eps) {
    const Vec f0 = fn(z);
    Mat J(f0.size(), z.size());
    for (Index c = 0; c < z.size(); ++c) {
        const double h = eps * std::max(1.0, std::abs(z[c]));
        Vec zp = z, zm = z;
        zp[c] += h;
        zm[c] -= h;
        J.col(c) = (fn(zp) - fn(zm)) / (2.0 * h);
    }
    return J;
}

} // namespace detail

/// Compares every supplied derivative block against central differences of
/// the value callbacks at random points with controls drawn from U.
inline FdReport fd_check(const ProblemDef& p, int samples = 100, double eps = 1e-6, const FdSampling& sampling = {}) {
    if (!(eps > 0.0 && eps <= 1e-3)) throw InvalidArgument("fd_check: eps must lie in (0, 1e-3]");
    std::mt19937_64 rng(sampling.seed);
    std::uniform_real_distribution<double> ux(sampling.state_lo, sampling.state_hi);
    std::uniform_real_distribution<double> ut(sampling.t_lo, sampling.t_hi);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Index slots = p.num_slots();

    FdReport rep;
    rep.samples = samples;
    for (int k = 0; k < samples; ++k) {
        const double t = ut(rng);
        Mat X(p.n, slots);
        for (Index i = 0; i < X.size(); ++i) X.data()[i] = ux(rng);
        Vec u(p.m);
        if (p.controls.is_box()) {
            for (Index i = 0; i < p.m; ++i)
                u[i] = p.controls.lower()[i] + unit(rng) * (p.controls.upper()[i] - p.controls.lower()[i]);
        } else {
            for (Index i = 0; i < p.m; ++i) u[i] = normal(rng);
            u = p.controls.project(u);
        }
        Vec lam(p.n);
        for (Index i = 0; i < p.n; ++i) lam[i] = normal(rng);

        for (Index s = 0; s < slots; ++s) {
            auto f_of = [&](const Vec& z) {
                Mat Xz = X;
                Xz.col(s) = z;
                return p.f(t, Xz, u);
            };
            auto l_of = [&](const Vec& z) {
                Mat Xz = X;
                Xz.col(s) = z;
                return Vec::Constant(1, p.l(t, Xz, u));
            };
            const std::string tag = "[" + std::to_string(s) + "]";
            detail::record(rep, "f_x" + tag, detail::rel_err(detail::central_jacobian(f_of, X.col(s), eps), p.f_x(t, X, u, s)));
            detail::record(rep, "l_x" + tag,
                           detail::rel_err(detail::central_jacobian(l_of, X.col(s), eps).transpose(), p.l_x(t, X, u, s)));
        }
        auto fu_of = [&](const Vec& z) { return p.f(t, X, z); };
        auto lu_of = [&](const Vec& z) { return Vec::Constant(1, p.l(t, X, z)); };
        detail::record(rep, "f_u", detail::rel_err(detail::central_jacobian(fu_of, u, eps), p.f_u(t, X, u)));
        detail::record(rep, "l_u", detail::rel_err(detail::central_jacobian(lu_of, u, eps).transpose(), p.l_u(t, X, u)));
        if (p.H_uu) {
            auto hu_of = [&](const Vec& z) -> Vec { return p.l_u(t, X, z) + p.f_u(t, X, z).transpose() * lam; };
            detail::record(rep, "H_uu", detail::rel_err(detail::central_jacobian(hu_of, u, eps), p.H_uu(t, X, u, lam)));
        }
        if (p.terminal) {
            const Vec x = X.col(0);
            auto g_of = [&](const Vec& z) { return Vec::Constant(1, p.terminal->value(z)); };
            detail::record(rep, "terminal_grad",
                           detail::rel_err(detail::central_jacobian(g_of, x, eps).transpose(), p.terminal->gradient(x)));
            if (p.terminal->hessian)
                detail::record(rep, "terminal_hess",
                               detail::rel_err(detail::central_jacobian(p.terminal->gradient, x, eps), p.terminal->hessian(x)));
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Brute-force discrete solver
// ---------------------------------------------------------------------------

struct BruteForceResult {
    Trajectory control;
    Trajectory state;
    double J = 0.0;
    double projected_gradient_norm = 0.0;
    int iterations = 0;
};

namespace detail {

struct Rollout {
    Mat x;
    double J;
};

inline Rollout rollout(const ProblemDef& p, const Grid& g, const Vec& x0, const Mat& u) {
    Rollout r{Mat(p.n, g.num_nodes()), 0.0};
    r.x.col(0) = x0;
    for (Index j = 0; j < g.N(); ++j) {
        const Mat X = r.x.col(j);
        const double t = g.time(j);
        r.J += g.delta() * p.l(t, X, u.col(j));
        r.x.col(j + 1) = r.x.col(j) + g.delta() * p.f(t, X, u.col(j));
    }
    return r;
}

/// Gradient of the discrete cost with respect to each control node, divided
/// by delta so it approximates the L2 gradient.
inline Mat discrete_gradient(const ProblemDef& p, const Grid& g, const Mat& x, const Mat& u) {
    Mat grad(p.m, g.N());
    Vec adj = Vec::Zero(p.n);  // multiplier of the step ending at node j+1
    for (Index j = g.N() - 1; j >= 0; --j) {
        const Mat X = x.col(j);
        const double t = g.time(j);
        const Vec uj = u.col(j);
        grad.col(j) = p.l_u(t, X, uj) + p.f_u(t, X, uj).transpose() * adj;
        adj = adj + g.delta() * (p.l_x(t, X, uj, 0) + p.f_x(t, X, uj, 0).transpose() * adj);
    }
    return grad;
}

} // namespace detail

/// Solves the fully discretized delay-free problem with all N control nodes
/// as decision variables, by projected gradient with Armijo backtracking
/// along the projection arc, until the L2 projected-gradient norm <= tol.
inline BruteForceResult brute_force_lq(const ProblemDef& p, const Grid& grid, const Vec& x0, double tol = 1e-9,
                                       int max_iters = 200000) {
    if (p.num_slots() != 1 || grid.num_slots() != 1) throw InvalidArgument("brute_force_lq: problem must be delay-free");
    if (!p.controls.is_box()) throw InvalidArgument("brute_force_lq: box control set required");
    if (p.terminal) throw InvalidArgument("brute_force_lq: absorb the terminal cost first");

    auto project_all = [&](Mat u) {
        for (Index j = 0; j < u.cols(); ++j) u.col(j) = p.controls.project(u.col(j));
        return u;
    };
    const double dt = grid.delta();
    Mat u = project_all(Mat::Zero(p.m, grid.N()));
    detail::Rollout cur = detail::rollout(p, grid, x0, u);
    double alpha = 1.0;
    BruteForceResult res;
    for (int it = 0; it < max_iters; ++it) {
        const Mat G = detail::discrete_gradient(p, grid, cur.x, u);
        const double pg = std::sqrt(dt * (u - project_all(u - G)).squaredNorm());
        res.iterations = it;
        res.projected_gradient_norm = pg;
        if (pg <= tol) {
            res.control = Trajectory(p.m, grid.num_nodes());
            res.control.values().leftCols(grid.N()) = u;
            res.control.node(grid.N()) = u.col(grid.N() - 1);
            res.state = Trajectory(cur.x);
            res.J = cur.J;
            return res;
        }
        bool grow = true;
        for (int ls = 0;; ++ls) {
            const Mat cand = project_all(u - alpha * G);
            const detail::Rollout next = detail::rollout(p, grid, x0, cand);
            // J is the discrete sum, G the delta-scaled gradient.
            const double predicted = dt * (G.cwiseProduct(cand - u)).sum();
            // Below roundoff in J the Armijo test carries no information; keep
            // the last certified step length.
            const bool roundoff = std::abs(predicted) < 1e-13 * std::max(1.0, std::abs(cur.J));
            if (next.J <= cur.J + 1e-4 * predicted || roundoff || ls >= 60) {
                u = cand;
                cur = next;
                if (roundoff) grow = false;
                break;
            }
            alpha *= 0.5;
            grow = false;
        }
        if (grow) alpha = std::min(alpha * 2.0, 1e6);
    }
    throw NoConvergence("brute_force_lq: projected gradient did not converge");
}

// ---------------------------------------------------------------------------
// Riccati reference for the scalar LQ problem
// ---------------------------------------------------------------------------

struct RiccatiReference {
    Vec costate_gain;  // P at grid nodes
    Vec state;         // x at grid nodes
    Vec control;       // u at grid nodes
    Vec control_mid;   // u at interval midpoints
};

/// Unconstrained continuous-time optimum of the scalar LQ problem:
/// value x^2 P(t) with -P' = 2 a P + q - (b^2 / r) P^2, P(T) = w / 2 and
/// u = -(b / r) P x. Integrated by RK4 with `substeps` steps per interval.
inline RiccatiReference riccati_lq_reference(const models::LqParams& lq, const Grid& grid, int substeps = 8) {
    if (substeps < 2 || substeps % 2) throw InvalidArgument("riccati_lq_reference: substeps must be even");
    const Index M = grid.N() * substeps;  // fine intervals
    const double h = grid.delta() / substeps;
    auto dP = [&](double P) { return -(2.0 * lq.a * P + lq.q - lq.b * lq.b / lq.r * P * P); };

    // P on the half-step mesh, index k <-> t0 + k h / 2.
    Vec P(2 * M + 1);
    P[2 * M] = 0.5 * lq.terminal_weight;
    const double hh = 0.5 * h;
    for (Index k = 2 * M; k > 0; --k) {
        const double y = P[k];
        const double k1 = dP(y);
        const double k2 = dP(y - 0.5 * hh * k1);
        const double k3 = dP(y - 0.5 * hh * k2);
        const double k4 = dP(y - hh * k3);
        P[k - 1] = y - hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    auto gain = [&](Index k) { return lq.a - lq.b * lq.b / lq.r * P[k]; };
    Vec x(M + 1);
    x[0] = lq.x0;
    for (Index k = 0; k < M; ++k) {
        const double y = x[k];
        const double k1 = gain(2 * k) * y;
        const double k2 = gain(2 * k + 1) * (y + 0.5 * h * k1);
        const double k3 = gain(2 * k + 1) * (y + 0.5 * h * k2);
        const double k4 = gain(2 * k + 2) * (y + h * k3);
        x[k + 1] = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }

    RiccatiReference ref;
    ref.costate_gain.resize(grid.num_nodes());
    ref.state.resize(grid.num_nodes());
    ref.control.resize(grid.num_nodes());
    ref.control_mid.resize(grid.N());
    for (Index j = 0; j < grid.num_nodes(); ++j) {
        ref.costate_gain[j] = P[2 * j * substeps];
        ref.state[j] = x[j * substeps];
        ref.control[j] = -lq.b / lq.r * P[2 * j * substeps] * x[j * substeps];
    }
    for (Index j = 0; j < grid.N(); ++j) {
        const Index k = j * substeps + substeps / 2;  // fine node at the interval midpoint
        ref.control_mid[j] = -lq.b / lq.r * P[2 * k] * x[k];
    }
    return ref;
}

// ---------------------------------------------------------------------------
// Fine-grid reference
// ---------------------------------------------------------------------------

/// Integrates on a grid `refine` times finer (control held piecewise
/// constant, sampled history interpolated) and restricts to coarse nodes.
inline Trajectory reference_trajectory(const ProblemDef& problem, const Grid& grid, const Trajectory& control,
                                       const History& history, Index refine, const IntegratorSettings& settings = {}) {
    if (refine < 2) throw InvalidArgument("reference_trajectory: refine must be at least 2");
    const Grid fine = grid.refined(refine);
    const Trajectory xf = integrate_forward(problem, fine, essa::detail::refine_control(control, refine),
                                            essa::detail::refine_history(history, refine), settings);
    Trajectory out(problem.n, grid.num_nodes());
    for (Index j = 0; j < grid.num_nodes(); ++j) out.node(j) = xf.node(j * refine);
    return out;
}

} // namespace essa::oracle
