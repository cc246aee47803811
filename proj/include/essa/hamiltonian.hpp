#pragma once

// Hamiltonian H = l + lambda^T f, its proximal augmentation
// K = H + (v - u_prev)^T C (v - u_prev), and the per-node minimization of K
// over the control set.

#include "essa/core.hpp"

#include <cassert>

namespace essa {

/// Positive diagonal regularization matrix.
class RegMatrix {
public:
    explicit RegMatrix(Vec diag) : diag_(std::move(diag)) {
        if (diag_.size() < 1 || !(diag_.array() > 0.0).all())
            throw InvalidArgument("regularization: diagonal entries must be positive");
    }

    const Vec& diag() const noexcept { return diag_; }
    double eps_min() const { return diag_.minCoeff(); }
    Index dim() const noexcept { return diag_.size(); }

    RegMatrix scaled(double factor) const { return RegMatrix(diag_ * factor); }

private:
    Vec diag_;
};

inline double eval_H(const ProblemDef& p, double t, const Mat& X, const Vec& u, const Vec& lambda) {
    return p.l(t, X, u) + lambda.dot(p.f(t, X, u));
}

inline Vec grad_H_u(const ProblemDef& p, double t, const Mat& X, const Vec& u, const Vec& lambda) {
    return p.l_u(t, X, u) + p.f_u(t, X, u).transpose() * lambda;
}

inline double eval_K(const ProblemDef& p, double t, const Mat& X, const Vec& v, const Vec& lambda, const Vec& u_prev,
                     const RegMatrix& C) {
    const Vec d = v - u_prev;
    return eval_H(p, t, X, v, lambda) + d.dot(C.diag().cwiseProduct(d));
}

inline Vec grad_K(const ProblemDef& p, double t, const Mat& X, const Vec& v, const Vec& lambda, const Vec& u_prev,
                  const RegMatrix& C) {
    return grad_H_u(p, t, X, v, lambda) + 2.0 * C.diag().cwiseProduct(v - u_prev);
}

enum class InnerStatus { ClosedForm, Converged, StepCap, Stalled };

struct InnerResult {
    Vec v;
    InnerStatus status;
    int steps = 0;
};

/// True when the separable closed form applies: control-affine dynamics,
/// quadratic diagonal control cost and a box control set.
inline bool closed_form_applies(const ProblemDef& p) {
    return p.control_affine && p.quadratic_control_cost && p.controls.is_box() && static_cast<bool>(p.control_weight);
}

/// Coordinate-wise minimizer of K for the separable case, clamped to the box.
inline Vec minimize_K_closed_form(const ProblemDef& p, double t, const Mat& X, const Vec& lambda, const Vec& u_prev,
                                  const RegMatrix& C) {
    assert(closed_form_applies(p));
    const Vec zero = Vec::Zero(p.m);
    const Vec lin = p.l_u(t, X, zero) + p.f_u(t, X, zero).transpose() * lambda;
    const Vec Q = p.control_weight(t);
    const Vec num = 2.0 * C.diag().cwiseProduct(u_prev) - lin;
    const Vec den = 2.0 * (Q + C.diag());
    return p.controls.project(num.cwiseQuotient(den));
}

namespace detail {

/// Symmetric positive definite version of B by diagonal shifting.
inline Eigen::LLT<Mat> spd_factor(Mat B) {
    B = 0.5 * (B + B.transpose());
    double shift = 0.0;
    const double scale = std::max(1.0, B.diagonal().cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 60; ++attempt) {
        Eigen::LLT<Mat> llt(B + shift * Mat::Identity(B.rows(), B.cols()));
        if (llt.info() == Eigen::Success) return llt;
        shift = shift == 0.0 ? 1e-10 * scale : shift * 10.0;
    }
    return Eigen::LLT<Mat>(Mat::Identity(B.rows(), B.cols()) * scale);
}

} // namespace detail

/// Projected-Newton minimization of K started at u_prev. Uses the exact
/// control Hessian when the problem supplies one, else a BFGS secant model.
inline InnerResult minimize_K_newton(const ProblemDef& p, double t, const Mat& X, const Vec& lambda,
                                     const Vec& u_prev_in, const RegMatrix& C, const InnerMinSettings& settings) {
    const ControlSet& U = p.controls;
    const Vec u_prev = U.project(u_prev_in);
    const Index m = p.m;
    auto K = [&](const Vec& v) { return eval_K(p, t, X, v, lambda, u_prev, C); };
    auto G = [&](const Vec& v) { return grad_K(p, t, X, v, lambda, u_prev, C); };
    const Mat twoC = (2.0 * C.diag()).asDiagonal();

    Vec v = u_prev;
    double Kv = K(v);
    const double K_anchor = Kv;
    Vec g = G(v);
    Mat B = twoC;
    InnerResult res{v, InnerStatus::StepCap, 0};

    for (int step = 0; step < settings.max_steps; ++step) {
        res.steps = step + 1;
        const Vec pg = v - U.project(v - g);
        if (pg.norm() <= settings.step_tol) {
            res.status = InnerStatus::Converged;
            break;
        }
        const Mat Hess = p.H_uu ? Mat(p.H_uu(t, X, v, lambda) + twoC) : B;

        // Free set: coordinates not pinned by an active bound (box only).
        std::vector<Index> free;
        for (Index i = 0; i < m; ++i) {
            if (U.is_box()) {
                const double tol = 1e-12 * std::max(1.0, std::abs(v[i]));
                const bool at_lo = v[i] <= U.lower()[i] + tol && g[i] > 0.0;
                const bool at_hi = v[i] >= U.upper()[i] - tol && g[i] < 0.0;
                if (at_lo || at_hi) continue;
            }
            free.push_back(i);
        }
        Vec d = Vec::Zero(m);
        if (!free.empty()) {
            const Index nf = static_cast<Index>(free.size());
            Mat Bf(nf, nf);
            Vec gf(nf);
            for (Index a = 0; a < nf; ++a) {
                gf[a] = g[free[a]];
                for (Index b = 0; b < nf; ++b) Bf(a, b) = Hess(free[a], free[b]);
            }
            const Vec df = -detail::spd_factor(Bf).solve(gf);
            for (Index a = 0; a < nf; ++a) d[free[a]] = df[a];
        }

        auto line_search = [&](const Vec& dir, Vec& out, double& Kout) {
            double alpha = 1.0;
            for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
                const Vec cand = U.project(v + alpha * dir);
                const double Kc = K(cand);
                if (Kc <= Kv + 1e-4 * g.dot(cand - v) && Kc <= Kv) {
                    out = cand;
                    Kout = Kc;
                    return true;
                }
            }
            return false;
        };

        Vec next;
        double Knext = Kv;
        bool ok = d.squaredNorm() > 0.0 && line_search(d, next, Knext);
        if (!ok) {
            const double scale = std::max(Hess.diagonal().cwiseAbs().maxCoeff(), 1e-12);
            ok = line_search(-g / scale, next, Knext);
        }
        if (!ok) {
            res.status = InnerStatus::Converged;
            break;
        }
        const Vec s = next - v;
        const Vec g_next = G(next);
        if (!p.H_uu) {
            const Vec y = g_next - g;
            const double sy = s.dot(y);
            if (sy > 1e-14 * s.norm() * y.norm()) {
                const Vec Bs = B * s;
                B += (y * y.transpose()) / sy - (Bs * Bs.transpose()) / s.dot(Bs);
            }
        }
        v = next;
        Kv = Knext;
        g = g_next;
        if (s.norm() <= settings.step_tol) {
            res.status = InnerStatus::Converged;
            break;
        }
    }

    if (!(Kv <= K_anchor)) {
        res.v = u_prev;
        res.status = InnerStatus::Stalled;
        return res;
    }
    res.v = v;
    return res;
}

/// Minimizer of K over U for one node. The result is feasible and never
/// increases K relative to u_prev; a stalled search returns u_prev.
inline InnerResult minimize_K(const ProblemDef& p, double t, const Mat& X, const Vec& lambda, const Vec& u_prev,
                              const RegMatrix& C, const InnerMinSettings& settings = {}) {
    if (closed_form_applies(p)) return {minimize_K_closed_form(p, t, X, lambda, u_prev, C), InnerStatus::ClosedForm, 0};
    return minimize_K_newton(p, t, X, lambda, u_prev, C, settings);
}

} // namespace essa
