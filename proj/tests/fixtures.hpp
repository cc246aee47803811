#pragma once

// Small hand-built problems shared by the tests.

#include "essa/essa.hpp"

namespace fixtures {

using namespace essa;

/// x' = a x(t - h) + b u with l = q x^2 + r u^2. h = 0 gives an ODE.
inline ProblemDef scalar_delay(double a, double h, double b = 0.0, double q = 0.0, double r = 0.0,
                               double lo = -1.0, double hi = 1.0) {
    ProblemDef p;
    p.n = 1;
    p.m = 1;
    const Index sd = h > 0.0 ? 1 : 0;
    if (h > 0.0) p.delays = {h};
    p.f = [=](double, const Mat& X, const Vec& u) -> Vec { return Vec::Constant(1, a * X(0, sd) + b * u[0]); };
    p.f_x = [=](double, const Mat&, const Vec&, Index s) -> Mat { return Mat::Constant(1, 1, s == sd ? a : 0.0); };
    p.f_u = [=](double, const Mat&, const Vec&) -> Mat { return Mat::Constant(1, 1, b); };
    p.l = [=](double, const Mat& X, const Vec& u) { return q * X(0, 0) * X(0, 0) + r * u[0] * u[0]; };
    p.l_x = [=](double, const Mat& X, const Vec&, Index s) -> Vec {
        return Vec::Constant(1, s == 0 ? 2.0 * q * X(0, 0) : 0.0);
    };
    p.l_u = [=](double, const Mat&, const Vec& u) -> Vec { return Vec::Constant(1, 2.0 * r * u[0]); };
    p.control_weight = [=](double) -> Vec { return Vec::Constant(1, r); };
    p.controls = ControlSet::box(Vec::Constant(1, lo), Vec::Constant(1, hi));
    p.control_affine = true;
    p.quadratic_control_cost = r > 0.0;
    p.state_names = {"x"};
    p.control_names = {"u"};
    return p;
}

/// f = 0, l = 0.
inline ProblemDef zero_dynamics(Index n, std::vector<double> delays = {}) {
    ProblemDef p;
    p.n = n;
    p.m = 1;
    p.delays = std::move(delays);
    p.f = [n](double, const Mat&, const Vec&) -> Vec { return Vec::Zero(n); };
    p.f_x = [n](double, const Mat&, const Vec&, Index) -> Mat { return Mat::Zero(n, n); };
    p.f_u = [n](double, const Mat&, const Vec&) -> Mat { return Mat::Zero(n, 1); };
    p.l = [](double, const Mat&, const Vec&) { return 0.0; };
    p.l_x = [n](double, const Mat&, const Vec&, Index) -> Vec { return Vec::Zero(n); };
    p.l_u = [](double, const Mat&, const Vec&) -> Vec { return Vec::Zero(1); };
    p.controls = ControlSet::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
    return p;
}

/// Scalar node problem with H(v) = alpha v^2 + beta v, written as a
/// one-state problem with f = 0 so that H = l.
inline ProblemDef node_quadratic(double alpha, double beta, double lo, double hi) {
    ProblemDef p = zero_dynamics(1);
    p.l = [=](double, const Mat&, const Vec& u) { return alpha * u[0] * u[0] + beta * u[0]; };
    p.l_u = [=](double, const Mat&, const Vec& u) -> Vec { return Vec::Constant(1, 2.0 * alpha * u[0] + beta); };
    p.H_uu = [=](double, const Mat&, const Vec&, const Vec&) -> Mat { return Mat::Constant(1, 1, 2.0 * alpha); };
    p.controls = ControlSet::box(Vec::Constant(1, lo), Vec::Constant(1, hi));
    return p;
}

inline Trajectory zeros(Index dim, const Grid& g) { return Trajectory::constant(Vec::Zero(dim), g.num_nodes()); }

} // namespace fixtures
