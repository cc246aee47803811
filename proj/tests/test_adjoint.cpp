#include "fixtures.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace essa;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("costate vanishes when nothing depends on the state", "[adjoint]") {
    auto p = fixtures::zero_dynamics(2, {0.3});
    p.l = [](double, const Mat&, const Vec& u) { return u[0] * u[0]; };
    const Grid g = build_grid(p, 0.0, 1.0, 20);
    const Trajectory x = Trajectory::constant(Vec::Ones(2), g.num_nodes());
    const Trajectory u = Trajectory::constant(Vec::Constant(1, 0.4), g.num_nodes());
    const auto lam = integrate_costate(p, g, x, u, History(Vec::Ones(2)));
    CHECK(lam.values().isZero(0.0));
}

TEST_CASE("delay-free costate integrates 2x backwards", "[adjoint]") {
    // x' = u, l = x^2 + u^2: lambda(t) = int_t^T 2 x(s) ds
    const auto p = fixtures::scalar_delay(0.0, 0.0, 1.0, 1.0, 1.0, -5.0, 5.0);
    const Grid g = build_grid(p, 0.0, 1.0, 1000);
    Trajectory u(1, g.num_nodes());
    for (Index j = 0; j < g.num_nodes(); ++j) u.node(j)[0] = std::cos(2.0 * g.time(j));
    const History h(Vec::Constant(1, 0.5));
    const auto x = integrate_forward(p, g, u, h);
    const auto lam = integrate_costate(p, g, x, u, h);
    CHECK(lam.node(g.N())[0] == 0.0);
    double tail = 0.0, worst = 0.0;
    for (Index j = g.N() - 1; j >= 0; --j) {
        tail += 0.5 * g.delta() * 2.0 * (x.node(j)[0] + x.node(j + 1)[0]);
        worst = std::max(worst, std::abs(tail - lam.node(j)[0]));
    }
    CHECK(worst <= 1e-3);
}

TEST_CASE("terminal window of a delayed costate reduces to the delay-free form", "[adjoint]") {
    // x' = a x(t-h) + u, l = x^2; on [T-h, T] lambda' = -2x.
    const double a = -0.8, h = 0.25;
    const auto p = fixtures::scalar_delay(a, h, 1.0, 1.0, 0.0, -5.0, 5.0);
    const Grid g = build_grid(p, 0.0, 1.0, 1000);
    Trajectory u(1, g.num_nodes());
    for (Index j = 0; j < g.num_nodes(); ++j) u.node(j)[0] = 0.3 * std::sin(5.0 * g.time(j));
    const History hist(Vec::Constant(1, 1.0));
    const auto x = integrate_forward(p, g, u, hist);
    const auto lam = integrate_costate(p, g, x, u, hist);
    const Index d = g.offset(1);
    double tail = 0.0, worst = 0.0;
    for (Index j = g.N() - 1; j >= g.N() - d; --j) {
        tail += 0.5 * g.delta() * 2.0 * (x.node(j)[0] + x.node(j + 1)[0]);
        worst = std::max(worst, std::abs(tail - lam.node(j)[0]));
    }
    CHECK(worst <= 1e-3);
    // before the window the advanced term contributes
    CHECK(std::abs(lam.node(g.N() - d - 100)[0]) > 0.0);
}

TEST_CASE("costate never reads beyond the horizon", "[adjoint]") {
    const models::SirvParams sp;
    const auto p = models::sirv_problem(sp);
    const Grid g = build_grid(p, 0.0, 30.0, 300);
    const History h(models::sirv_initial_state(sp));
    const Trajectory u = Trajectory::constant(Vec::Constant(2, 0.05), g.num_nodes());
    const auto x = integrate_forward(p, g, u, h);
    Index max_read = -1;
    AdjointOptions opt;
    opt.on_costate_read = [&](Index i) { max_read = std::max(max_read, i); };
    const auto lam = integrate_costate(p, g, x, u, h, opt);
    CHECK(max_read == g.N());
    CHECK(lam.node(g.N()).isZero(0.0));
}

TEST_CASE("costate is linear in the cost", "[adjoint][property]") {
    models::LqParams lp;
    lp.a = -0.4;
    models::LqParams lp2 = lp;
    lp2.q *= 2.0;
    lp2.r *= 2.0;
    const Grid g = build_grid(0.0, 1.0, 500, {});
    Trajectory u(1, g.num_nodes());
    for (Index j = 0; j < g.num_nodes(); ++j) u.node(j)[0] = 1.0 - g.time(j);
    const History h(Vec::Constant(1, lp.x0));
    const auto p1 = models::lq_test_problem(lp), p2 = models::lq_test_problem(lp2);
    const auto x = integrate_forward(p1, g, u, h);
    const auto l1 = integrate_costate(p1, g, x, u, h);
    const auto l2 = integrate_costate(p2, g, x, u, h);
    for (Index j = 0; j < g.N(); ++j) CHECK_THAT(l2.node(j)[0], WithinRel(2.0 * l1.node(j)[0], 1e-10));
}

TEST_CASE("delay-free costate matches a hand-written discrete adjoint", "[adjoint]") {
    models::LqParams lp;
    lp.a = 0.6;
    lp.q = 1.5;
    const auto p = models::lq_test_problem(lp);
    const Grid g = build_grid(p, 0.0, 1.0, 1000);
    Trajectory u(1, g.num_nodes());
    for (Index j = 0; j < g.num_nodes(); ++j) u.node(j)[0] = std::sin(4.0 * g.time(j));
    const History h(Vec::Constant(1, lp.x0));
    const auto x = integrate_forward(p, g, u, h);
    const auto lam = integrate_costate(p, g, x, u, h);
    double l = 0.0, gap = 0.0;
    for (Index j = g.N() - 1; j >= 0; --j) {
        l = l + g.delta() * (2.0 * lp.q * x.node(j)[0] + lp.a * l);
        gap = std::max(gap, std::abs(l - lam.node(j)[0]));
    }
    CHECK(gap <= 1e-10);
}

TEST_CASE("costate gives the exact gradient of the discrete cost", "[adjoint][property]") {
    const models::SirvParams sp;
    const auto p = absorb_terminal_cost(models::sirv_problem(sp));
    const Grid g = build_grid(p, 0.0, 40.0, 400);
    const History h(models::sirv_initial_state(sp));
    Trajectory u(2, g.num_nodes());
    for (Index j = 0; j < g.num_nodes(); ++j) u.node(j) << 0.2 + 0.1 * std::sin(g.time(j)), 0.05;
    const auto x = integrate_forward(p, g, u, h);
    const auto lam = integrate_costate(p, g, x, u, h);
    for (Index j : {Index(0), Index(37), Index(200), Index(399)}) {
        for (Index c = 0; c < 2; ++c) {
            const double e = 1e-6;
            Trajectory up = u, um = u;
            up.values()(c, j) += e;
            um.values()(c, j) -= e;
            const double fd = (eval_cost(p, g, integrate_forward(p, g, up, h), up, h) -
                               eval_cost(p, g, integrate_forward(p, g, um, h), um, h)) /
                              (2.0 * e);
            const Mat X = stacked_state(x.values(), h, g, j);
            const double an = g.delta() * grad_H_u(p, g.time(j), X, u.node(j), lam.node(j + 1))[c];
            CHECK_THAT(fd, WithinAbs(an, 1e-6 * std::max(1.0, std::abs(an))));
        }
    }
}

TEST_CASE("non-finite costate is reported", "[adjoint]") {
    auto p = fixtures::scalar_delay(0.0, 0.0, 1.0, 1.0, 1.0);
    p.l_x = [](double, const Mat&, const Vec&, Index) -> Vec { return Vec::Constant(1, std::nan("")); };
    const Grid g = build_grid(p, 0.0, 1.0, 10);
    CHECK_THROWS_AS(integrate_costate(p, g, fixtures::zeros(1, g), fixtures::zeros(1, g), History(Vec::Zero(1))),
                    NonFiniteCostate);
}
