#include "fixtures.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace essa;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

void check_log_invariants(const Solution& s, const ProblemDef& p, const SolverConfig& cfg) {
    double last = std::numeric_limits<double>::infinity();
    double eps = 0.0;
    int version = 0, last_index = 0;
    for (const auto& r : s.log) {
        if (r.accepted) {
            CHECK(r.J < last);
            last = r.J;
        }
        CHECK(r.eps_min >= eps);
        eps = r.eps_min;
        CHECK(r.c_increases <= cfg.max_c_increases_per_iter);
        // one costate per outer iteration, shared by its retries
        if (r.index != last_index) {
            CHECK(r.costate_version == version + 1);
            version = r.costate_version;
            last_index = r.index;
        } else {
            CHECK(r.costate_version == version);
        }
    }
    for (Index j = 0; j < s.control.num_nodes(); ++j) CHECK(p.controls.contains(s.control.node(j)));
    CHECK(s.closure_gap <= 1e-12);
}

} // namespace

TEST_CASE("terminal cost absorption leaves a problem without gamma unchanged", "[solver][absorb]") {
    const auto p = fixtures::scalar_delay(0.2, 0.0, 1.0, 1.0, 1.0);
    const auto q = absorb_terminal_cost(p);
    const Mat X = Mat::Constant(1, 1, 0.7);
    const Vec u = Vec::Constant(1, 0.4);
    CHECK(q.l(0.0, X, u) == p.l(0.0, X, u));
    CHECK_FALSE(q.terminal.has_value());
}

TEST_CASE("absorbed running cost for gamma = x^2/2, f = u is l + x u", "[solver][absorb]") {
    models::LqParams lp;
    lp.terminal_weight = 1.0;
    const auto p = models::lq_test_problem(lp);
    const auto q = absorb_terminal_cost(p);
    const Mat X = Mat::Constant(1, 1, 0.7);
    const Vec u = Vec::Constant(1, -0.4);
    CHECK_THAT(q.l(0.0, X, u), WithinAbs(p.l(0.0, X, u) + 0.7 * -0.4, 1e-15));
    CHECK_THAT(q.l_x(0.0, X, u, 0)[0], WithinAbs(2.0 * 0.7 + -0.4, 1e-15));
    CHECK_THAT(q.l_u(0.0, X, u)[0], WithinAbs(2.0 * -0.4 + 0.7, 1e-15));
    CHECK(closed_form_applies(q));
}

TEST_CASE("gamma without a Hessian is rejected", "[solver][absorb]") {
    models::LqParams lp;
    lp.terminal_weight = 1.0;
    auto p = models::lq_test_problem(lp);
    p.terminal->hessian = nullptr;
    CHECK_THROWS_AS(absorb_terminal_cost(p), MissingHessian);
}

TEST_CASE("absorbed cost equals running cost plus gamma increment", "[solver][absorb]") {
    models::LqParams lp;
    lp.terminal_weight = 1.0;
    const auto p = models::lq_test_problem(lp);
    const auto q = absorb_terminal_cost(p);
    const Grid g = build_grid(p, 0.0, 1.0, 1000);
    Trajectory u(1, g.num_nodes());
    for (Index j = 0; j < g.num_nodes(); ++j) u.node(j)[0] = std::cos(3.0 * g.time(j));
    const History h(Vec::Constant(1, lp.x0));
    const auto x = integrate_forward(p, g, u, h);
    const double lhs = eval_cost(q, g, x, u, h);
    const double rhs = eval_cost(p, g, x, u, h) + 0.5 * std::pow(x.node(g.N())[0], 2) - 0.5 * lp.x0 * lp.x0;
    CHECK_THAT(lhs, WithinAbs(rhs, 1e-3));
}

TEST_CASE("cost quadrature", "[solver][cost]") {
    auto p = fixtures::zero_dynamics(1);
    const Grid g = build_grid(p, 0.5, 3.0, 37);
    const auto x = fixtures::zeros(1, g);
    CHECK(eval_cost(p, g, x, fixtures::zeros(1, g), History(Vec::Zero(1))) == 0.0);
    p.l = [](double, const Mat&, const Vec&) { return 1.0; };
    CHECK_THAT(eval_cost(p, g, x, fixtures::zeros(1, g), History(Vec::Zero(1))), WithinAbs(2.5, 1e-14));
}

TEST_CASE("left-rectangle cost is first-order consistent with the trapezoid rule", "[solver][cost]") {
    const models::LqParams lp;
    const auto p = models::lq_test_problem(lp);
    auto gap = [&](Index N) {
        const Grid g = build_grid(p, 0.0, 1.0, N);
        Trajectory u(1, g.num_nodes());
        for (Index j = 0; j < g.num_nodes(); ++j) u.node(j)[0] = -g.time(j);
        const History h(Vec::Ones(1));
        const auto x = integrate_forward(p, g, u, h);
        double trap = 0.0;
        for (Index j = 0; j < g.N(); ++j) {
            const Mat a = Mat::Constant(1, 1, x.node(j)[0]), b = Mat::Constant(1, 1, x.node(j + 1)[0]);
            trap += 0.5 * g.delta() * (p.l(0, a, u.node(j)) + p.l(0, b, u.node(j)));
        }
        return std::abs(eval_cost(p, g, x, u, h) - trap);
    };
    const double r = gap(500) / gap(1000);
    CHECK(r >= 1.8);
    CHECK(r <= 2.2);
}

TEST_CASE("residual is zero at interior and outward-active stationary points", "[solver][residual]") {
    // single node: H = v^2 + beta v
    const auto interior = fixtures::node_quadratic(1.0, -0.5, -1.0, 1.0);
    const Grid g = build_grid(interior, 0.0, 1.0, 1);
    const History h(Vec::Zero(1));
    Trajectory u = Trajectory::constant(Vec::Constant(1, 0.25), 2);
    CHECK(optimality_residual(interior, g, u, fixtures::zeros(1, g), fixtures::zeros(1, g), h) == 0.0);

    const auto outward = fixtures::node_quadratic(1.0, -5.0, -1.0, 1.0);
    u = Trajectory::constant(Vec::Constant(1, 1.0), 2);
    CHECK(optimality_residual(outward, g, u, fixtures::zeros(1, g), fixtures::zeros(1, g), h) == 0.0);
}

TEST_CASE("termination bound arithmetic", "[solver][bound]") {
    CHECK(termination_bound(3.0, 3.0, 1.0, 0.1) == 0);
    CHECK(termination_bound(10.0, 0.0, 1.0, 0.1) == 100);
    CHECK_THROWS_AS(termination_bound(1.0, 2.0, 1.0, 0.1), InvalidArgument);
}

TEST_CASE("singleton control set terminates at once", "[solver]") {
    auto p = fixtures::scalar_delay(-0.5, 0.2, 1.0, 1.0, 0.0, 0.3, 0.3);
    const Grid g = build_grid(p, 0.0, 1.0, 50);
    const auto s = solve(p, g, History(Vec::Ones(1)), SolverConfig{});
    CHECK(s.termination == Termination::ToleranceMet);
    REQUIRE(s.log.size() == 1);
    CHECK(s.log.front().index == 1);
    for (Index j = 0; j < g.num_nodes(); ++j) CHECK(s.control.node(j)[0] == 0.3);
}

TEST_CASE("delay-free LQ converges to the brute-force discrete optimum", "[solver][lq]") {
    const models::LqParams lp;
    const auto p = models::lq_test_problem(lp);
    const Grid g = build_grid(p, 0.0, 1.0, 1000);
    SolverConfig cfg;
    const auto s = solve(p, g, History(Vec::Constant(1, lp.x0)), cfg);
    CHECK(s.termination == Termination::ToleranceMet);
    check_log_invariants(s, p, cfg);
    const auto bf = oracle::brute_force_lq(p, g, Vec::Constant(1, lp.x0));
    CHECK(std::sqrt(l2_sq_distance(g, s.control, bf.control)) <= 1e-3);
    CHECK_THAT(s.J, WithinRel(bf.J, 1e-6));
    CHECK(s.residual <= 10.0 * std::sqrt(s.eta_tol));
    CHECK(s.log.back().delta_u_sq <= s.eta_tol);
}

TEST_CASE("delayed problem with active bounds keeps every invariant", "[solver]") {
    // x' = -x(t - 0.3) + u, l = x^2 + 0.1 u^2, u in [-0.5, 0.5]
    const auto p = fixtures::scalar_delay(-1.0, 0.3, 1.0, 1.0, 0.1, -0.5, 0.5);
    const Grid g = build_grid(p, 0.0, 3.0, 300);
    SolverConfig cfg;
    cfg.C0_diag = Vec::Constant(1, 0.05);
    const auto s = solve(p, g, History(Vec::Ones(1)), cfg);
    check_log_invariants(s, p, cfg);
    CHECK(s.termination == Termination::ToleranceMet);
    CHECK(s.residual <= cfg.residual_tol);
    CHECK(s.control.values().minCoeff() == -0.5);  // bound active early on
}

TEST_CASE("projected Newton path solves a non-quadratic problem", "[solver]") {
    // l = x^2 + cosh(u) - 1, x' = u
    auto p = fixtures::scalar_delay(0.0, 0.0, 1.0, 1.0, 0.0, -2.0, 2.0);
    p.l = [](double, const Mat& X, const Vec& u) { return X(0, 0) * X(0, 0) + std::cosh(u[0]) - 1.0; };
    p.l_u = [](double, const Mat&, const Vec& u) -> Vec { return Vec::Constant(1, std::sinh(u[0])); };
    p.H_uu = [](double, const Mat&, const Vec& u, const Vec&) -> Mat { return Mat::Constant(1, 1, std::cosh(u[0])); };
    p.quadratic_control_cost = false;
    const Grid g = build_grid(p, 0.0, 1.0, 200);
    SolverConfig cfg;
    const auto s = solve(p, g, History(Vec::Ones(1)), cfg);
    CHECK(s.termination == Termination::ToleranceMet);
    check_log_invariants(s, p, cfg);
    CHECK(s.residual <= cfg.residual_tol);
}

TEST_CASE("tiny C0 forces regularization growth before descent", "[solver][step3]") {
    models::LqParams lp;
    lp.a = 2.0;
    lp.b = 3.0;
    lp.u_lo = -3.0;
    lp.u_hi = 3.0;
    const auto p = models::lq_test_problem(lp);
    const Grid g = build_grid(p, 0.0, 1.0, 200);
    SolverConfig cfg;
    cfg.C0_diag = Vec::Constant(1, 1e-8);
    const auto s = solve(p, g, History(Vec::Ones(1)), cfg);
    check_log_invariants(s, p, cfg);
    bool grew_then_accepted = false;
    for (const auto& r : s.log)
        if (r.accepted && r.c_increases > 0) grew_then_accepted = true;
    CHECK(grew_then_accepted);
}

TEST_CASE("increase cap ends the run with the best iterate", "[solver][step3]") {
    const models::LqParams lp;
    const auto p = models::lq_test_problem(lp);
    const Grid g = build_grid(p, 0.0, 1.0, 100);
    SolverConfig cfg;
    cfg.eta_tol = 1e-300;
    cfg.strict = false;
    cfg.max_c_increases_per_iter = 3;
    const auto s = solve(p, g, History(Vec::Ones(1)), cfg);
    CHECK(s.termination == Termination::CIncreaseCap);
    CHECK(s.log.back().c_increases == 3);
    CHECK_FALSE(s.log.back().accepted);
    check_log_invariants(s, p, cfg);
}

TEST_CASE("iteration cap", "[solver]") {
    const models::LqParams lp;
    const auto p = models::lq_test_problem(lp);
    const Grid g = build_grid(p, 0.0, 1.0, 100);
    SolverConfig cfg;
    cfg.max_outer_iters = 2;
    const auto s = solve(p, g, History(Vec::Ones(1)), cfg);
    CHECK(s.termination == Termination::MaxIters);
    CHECK(s.log.back().index == 2);
}

TEST_CASE("sink sees every record in order", "[solver]") {
    const models::LqParams lp;
    const auto p = models::lq_test_problem(lp);
    const Grid g = build_grid(p, 0.0, 1.0, 100);
    std::vector<IterationRecord> seen;
    const auto s = solve(p, g, History(Vec::Ones(1)), SolverConfig{}, [&](const IterationRecord& r) { seen.push_back(r); });
    REQUIRE(seen.size() == s.log.size());
    for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i].J == s.log[i].J);
}

TEST_CASE("clipped solve keeps the state nonnegative and closes", "[solver][clip]") {
    const models::SirvParams sp;
    const auto p = models::sirv_problem(sp);
    const Grid g = build_grid(p, 0.0, 60.0, 600);
    SolverConfig cfg;
    cfg.C0_diag = Vec::Constant(1, 10.0);
    cfg.nonneg_clip = true;
    cfg.max_outer_iters = 40;
    const auto s = solve(p, g, History(models::sirv_initial_state(sp)), cfg, Vec(Vec::Zero(2)));
    CHECK(s.state.values().minCoeff() >= 0.0);
    check_log_invariants(s, p, cfg);
}

TEST_CASE("solver rejects mismatched inputs", "[solver]") {
    const models::LqParams lp;
    const auto p = models::lq_test_problem(lp);
    const Grid g = build_grid(p, 0.0, 1.0, 100);
    const Grid other = build_grid(0.0, 1.0, 100, {0.1});
    CHECK_THROWS_AS(solve(p, other, History(Vec::Ones(1)), SolverConfig{}), InvalidArgument);
    CHECK_THROWS_AS(solve(p, g, History(Vec::Ones(1)), SolverConfig{}, Trajectory(1, 5)), InvalidArgument);
    SolverConfig bad;
    bad.c_growth = 0.5;
    CHECK_THROWS_AS(solve(p, g, History(Vec::Ones(1)), bad), InvalidArgument);
}
