#pragma once

// Shipped problem definitions: a delayed SIRV model with distancing and
// vaccination controls, a delayed SIDARTHE-V structure with externally
// supplied coefficients, and a delay-free scalar LQ problem.

#include "essa/core.hpp"

#include <array>
#include <map>

namespace essa::models {

namespace detail {

/// Distinct sorted delays for two delays that may coincide, plus the slot
/// each of them lands in.
struct TwoDelaySlots {
    std::vector<double> delays;
    Index slot1;
    Index slot2;
};

inline TwoDelaySlots two_delay_slots(double h1, double h2) {
    if (h1 == h2) return {{h1}, 1, 1};
    if (h1 < h2) return {{h1, h2}, 1, 2};
    return {{h2, h1}, 2, 1};
}

inline Mat diag_hessian(Index n, const std::vector<std::pair<Index, double>>& entries) {
    Mat H = Mat::Zero(n, n);
    for (const auto& [i, w] : entries) H(i, i) = w;
    return H;
}

} // namespace detail

// ---------------------------------------------------------------------------
// SIRV
// ---------------------------------------------------------------------------

struct SirvParams {
    double Lambda = 2.91e-5;
    double mu_S = 2.90e-5;
    double mu_I = 2.90e-5;
    double mu_R = 2.90e-5;
    double mu_V = 2.90e-5;
    double beta = 1.0;
    double gamma = 1.0 / 6.0;
    double sigma_R = 1.0 / 500.0;
    double sigma_V = 1.0 / 500.0;
    double theta_R = 0.0021;
    double theta_V = 0.0013;
    double h1 = 5.0;  // incubation
    double h2 = 7.0;  // vaccine build-up
    double u_max = 0.4;
    double v_max = 0.8;
    double w_I = 1e4;
    double w_u = 1.0;
    double w_v = 10.0;
    /// Coefficient of I(T)^2 / 2.
    double terminal_weight = 1.0;
    double I0 = 1e-6;

    /// Names of offending fields, empty when valid.
    std::vector<std::string> invalid_fields() const {
        std::vector<std::string> bad;
        auto nonneg = [&](const char* name, double v) {
            if (!(v >= 0.0) || !std::isfinite(v)) bad.emplace_back(name);
        };
        nonneg("Lambda", Lambda);
        nonneg("mu_S", mu_S);
        nonneg("mu_I", mu_I);
        nonneg("mu_R", mu_R);
        nonneg("mu_V", mu_V);
        nonneg("beta", beta);
        nonneg("gamma", gamma);
        nonneg("sigma_R", sigma_R);
        nonneg("sigma_V", sigma_V);
        if (!(theta_R >= 0.0 && theta_R <= 1.0)) bad.emplace_back("theta_R");
        if (!(theta_V >= 0.0 && theta_V <= 1.0)) bad.emplace_back("theta_V");
        if (!(h1 > 0.0)) bad.emplace_back("h1");
        if (!(h2 > 0.0)) bad.emplace_back("h2");
        nonneg("u_max", u_max);
        nonneg("v_max", v_max);
        nonneg("w_I", w_I);
        nonneg("w_u", w_u);
        nonneg("w_v", w_v);
        nonneg("terminal_weight", terminal_weight);
        if (!(I0 >= 0.0 && I0 <= 1.0)) bad.emplace_back("I0");
        return bad;
    }
};

enum SirvState : Index { kS = 0, kI = 1, kR = 2, kV = 3 };

inline Vec sirv_initial_state(const SirvParams& p) {
    Vec x0(4);
    x0 << 1.0 - p.I0, p.I0, 0.0, 0.0;
    return x0;
}

/// State (S, I, R, V), controls (u, v) in [0, u_max] x [0, v_max]. Contagion
/// uses I(t - h1); vaccination draws on S(t - h2).
inline ProblemDef sirv_problem(const SirvParams& p) {
    if (const auto bad = p.invalid_fields(); !bad.empty()) {
        std::string msg = "sirv: invalid parameters:";
        for (const auto& b : bad) msg += " " + b;
        throw InvalidParams(msg);
    }
    const auto slots = detail::two_delay_slots(p.h1, p.h2);
    const Index sI = slots.slot1;
    const Index sS = slots.slot2;

    ProblemDef d;
    d.n = 4;
    d.m = 2;
    d.delays = slots.delays;
    d.state_names = {"S", "I", "R", "V"};
    d.control_names = {"u", "v"};

    d.f = [p, sI, sS](double, const Mat& X, const Vec& c) -> Vec {
        const double S = X(kS, 0), I = X(kI, 0), R = X(kR, 0), V = X(kV, 0);
        const double Ih = X(kI, sI), Sh = X(kS, sS);
        const double u = c[0], v = c[1];
        const double b = p.beta * (1.0 - u) * Ih;
        Vec dx(4);
        dx[kS] = p.Lambda - b * S + p.sigma_R * R + p.sigma_V * V - v * Sh - p.mu_S * S;
        dx[kI] = b * (S + p.theta_V * V + p.theta_R * R) - p.gamma * I - p.mu_I * I;
        dx[kR] = p.gamma * I - p.sigma_R * R - p.theta_R * b * R - p.mu_R * R;
        dx[kV] = v * Sh - p.sigma_V * V - p.theta_V * b * V - p.mu_V * V;
        return dx;
    };

    d.f_x = [p, sI, sS](double, const Mat& X, const Vec& c, Index s) -> Mat {
        const double S = X(kS, 0), R = X(kR, 0), V = X(kV, 0);
        const double Ih = X(kI, sI);
        const double u = c[0], v = c[1];
        const double bu = p.beta * (1.0 - u);
        Mat J = Mat::Zero(4, 4);
        if (s == 0) {
            const double b = bu * Ih;
            J(kS, kS) = -b - p.mu_S;
            J(kS, kR) = p.sigma_R;
            J(kS, kV) = p.sigma_V;
            J(kI, kS) = b;
            J(kI, kI) = -p.gamma - p.mu_I;
            J(kI, kR) = p.theta_R * b;
            J(kI, kV) = p.theta_V * b;
            J(kR, kI) = p.gamma;
            J(kR, kR) = -p.sigma_R - p.theta_R * b - p.mu_R;
            J(kV, kV) = -p.sigma_V - p.theta_V * b - p.mu_V;
        }
        if (s == sI) {
            J(kS, kI) += -bu * S;
            J(kI, kI) += bu * (S + p.theta_V * V + p.theta_R * R);
            J(kR, kI) += -p.theta_R * bu * R;
            J(kV, kI) += -p.theta_V * bu * V;
        }
        if (s == sS) {
            J(kS, kS) += -v;
            J(kV, kS) += v;
        }
        return J;
    };

    d.f_u = [p, sI, sS](double, const Mat& X, const Vec&) -> Mat {
        const double S = X(kS, 0), R = X(kR, 0), V = X(kV, 0);
        const double Ih = X(kI, sI), Sh = X(kS, sS);
        Mat G = Mat::Zero(4, 2);
        G(kS, 0) = p.beta * S * Ih;
        G(kI, 0) = -p.beta * Ih * (S + p.theta_V * V + p.theta_R * R);
        G(kR, 0) = p.theta_R * p.beta * R * Ih;
        G(kV, 0) = p.theta_V * p.beta * V * Ih;
        G(kS, 1) = -Sh;
        G(kV, 1) = Sh;
        return G;
    };

    d.l = [p](double, const Mat& X, const Vec& c) {
        return p.w_I * X(kI, 0) + p.w_u * c[0] * c[0] + p.w_v * c[1] * c[1];
    };
    d.l_x = [p](double, const Mat&, const Vec&, Index s) -> Vec {
        Vec g = Vec::Zero(4);
        if (s == 0) g[kI] = p.w_I;
        return g;
    };
    d.l_u = [p](double, const Mat&, const Vec& c) -> Vec {
        Vec g(2);
        g << 2.0 * p.w_u * c[0], 2.0 * p.w_v * c[1];
        return g;
    };
    d.H_uu = [p](double, const Mat&, const Vec&, const Vec&) -> Mat {
        Mat H = Mat::Zero(2, 2);
        H(0, 0) = 2.0 * p.w_u;
        H(1, 1) = 2.0 * p.w_v;
        return H;
    };
    d.control_weight = [p](double) -> Vec {
        Vec q(2);
        q << p.w_u, p.w_v;
        return q;
    };

    if (p.terminal_weight > 0.0) {
        const double tw = p.terminal_weight;
        d.terminal = TerminalCost{
            [tw](const Vec& x) { return 0.5 * tw * x[kI] * x[kI]; },
            [tw](const Vec& x) -> Vec {
                Vec g = Vec::Zero(4);
                g[kI] = tw * x[kI];
                return g;
            },
            [tw](const Vec&) -> Mat { return detail::diag_hessian(4, {{kI, tw}}); },
        };
    }

    Vec lo = Vec::Zero(2), hi(2);
    hi << p.u_max, p.v_max;
    d.controls = ControlSet::box(lo, hi);
    d.control_affine = true;
    d.quadratic_control_cost = true;
    return d;
}

// ---------------------------------------------------------------------------
// SIDARTHE-V
// ---------------------------------------------------------------------------

/// Compartments S, I, D, A, R, T, H, E, V. Coefficient names follow the
/// SIDARTHE literature; none has a built-in default.
struct SidartheVParams {
    // contagion by I, D, A, R
    double alpha, beta, gamma, delta;
    // diagnosis / symptom transitions
    double epsilon, zeta, eta, theta, mu, nu;
    // healing
    double lambda, kappa, xi, rho, sigma;
    // mortality of threatened
    double tau;
    // relative susceptibility of vaccinated and healed
    double vaccine_susceptibility, reinfection_susceptibility;
    // waning of vaccine and infection immunity
    double vaccine_waning, immunity_waning;
    double h1, h2;
    double u_max;
    double w_u;
    std::array<double, 5> w;               // running weights on I, D, A, R, T
    std::array<double, 5> terminal_weights;  // coefficients of y(T)^2 / 2
    std::array<double, 9> initial_state;

    static const std::vector<std::string>& coefficient_names() {
        static const std::vector<std::string> names = {
            "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "mu", "nu",
            "lambda", "kappa", "xi", "rho", "sigma", "tau", "vaccine_susceptibility",
            "reinfection_susceptibility", "vaccine_waning", "immunity_waning", "h1", "h2", "u_max", "w_u"};
        return names;
    }

    /// Builds from a flat coefficient map plus the weight and initial-state
    /// arrays. Missing keys are reported all at once.
    static SidartheVParams from_map(const std::map<std::string, double>& c, const std::vector<double>& weights,
                                    const std::vector<double>& terminal, const std::vector<double>& x0) {
        std::vector<std::string> missing;
        for (const auto& k : coefficient_names())
            if (!c.count(k)) missing.push_back(k);
        if (weights.size() != 5) missing.emplace_back("weights[5]");
        if (terminal.size() != 5) missing.emplace_back("terminal_weights[5]");
        if (x0.size() != 9) missing.emplace_back("initial_state[9]");
        if (!missing.empty()) {
            std::string msg = "sidarthe_v: missing coefficients:";
            for (const auto& k : missing) msg += " " + k;
            throw MissingCoefficients(msg);
        }
        SidartheVParams p{};
        auto g = [&](const char* k) { return c.at(k); };
        p.alpha = g("alpha"); p.beta = g("beta"); p.gamma = g("gamma"); p.delta = g("delta");
        p.epsilon = g("epsilon"); p.zeta = g("zeta"); p.eta = g("eta"); p.theta = g("theta");
        p.mu = g("mu"); p.nu = g("nu");
        p.lambda = g("lambda"); p.kappa = g("kappa"); p.xi = g("xi"); p.rho = g("rho"); p.sigma = g("sigma");
        p.tau = g("tau");
        p.vaccine_susceptibility = g("vaccine_susceptibility");
        p.reinfection_susceptibility = g("reinfection_susceptibility");
        p.vaccine_waning = g("vaccine_waning");
        p.immunity_waning = g("immunity_waning");
        p.h1 = g("h1"); p.h2 = g("h2"); p.u_max = g("u_max"); p.w_u = g("w_u");
        std::copy(weights.begin(), weights.end(), p.w.begin());
        std::copy(terminal.begin(), terminal.end(), p.terminal_weights.begin());
        std::copy(x0.begin(), x0.end(), p.initial_state.begin());
        return p;
    }

    std::vector<std::string> invalid_fields() const {
        std::vector<std::string> bad;
        const std::array<std::pair<const char*, double>, 22> rates = {{
            {"alpha", alpha}, {"beta", beta}, {"gamma", gamma}, {"delta", delta}, {"epsilon", epsilon},
            {"zeta", zeta}, {"eta", eta}, {"theta", theta}, {"mu", mu}, {"nu", nu}, {"lambda", lambda},
            {"kappa", kappa}, {"xi", xi}, {"rho", rho}, {"sigma", sigma}, {"tau", tau},
            {"vaccine_susceptibility", vaccine_susceptibility},
            {"reinfection_susceptibility", reinfection_susceptibility}, {"vaccine_waning", vaccine_waning},
            {"immunity_waning", immunity_waning}, {"u_max", u_max}, {"w_u", w_u},
        }};
        for (const auto& [name, v] : rates)
            if (!(v >= 0.0) || !std::isfinite(v)) bad.emplace_back(name);
        if (!(h1 > 0.0)) bad.emplace_back("h1");
        if (!(h2 > 0.0)) bad.emplace_back("h2");
        for (double v : w)
            if (!(v >= 0.0)) { bad.emplace_back("weights"); break; }
        for (double v : terminal_weights)
            if (!(v >= 0.0)) { bad.emplace_back("terminal_weights"); break; }
        return bad;
    }
};

enum SidartheState : Index { sS = 0, sI = 1, sD = 2, sA = 3, sR = 4, sT = 5, sH = 6, sE = 7, sV = 8 };

inline constexpr std::array<Index, 5> kSidartheCostStates = {sI, sD, sA, sR, sT};

/// Contagion products of S, V and H with I, D, A, R use the infectious
/// compartments at t - h1; the vaccination inflow uses S at t - h2.
inline ProblemDef sidarthe_v_problem(const SidartheVParams& p) {
    if (const auto bad = p.invalid_fields(); !bad.empty()) {
        std::string msg = "sidarthe_v: invalid parameters:";
        for (const auto& b : bad) msg += " " + b;
        throw InvalidParams(msg);
    }
    const auto slots = detail::two_delay_slots(p.h1, p.h2);
    const Index s1 = slots.slot1;
    const Index s2 = slots.slot2;

    ProblemDef d;
    d.n = 9;
    d.m = 1;
    d.delays = slots.delays;
    d.state_names = {"S", "I", "D", "A", "R", "T", "H", "E", "V"};
    d.control_names = {"u"};

    auto force = [p, s1](const Mat& X) {
        return p.alpha * X(sI, s1) + p.beta * X(sD, s1) + p.gamma * X(sA, s1) + p.delta * X(sR, s1);
    };

    d.f = [p, s2, force](double, const Mat& X, const Vec& c) -> Vec {
        const double S = X(sS, 0), I = X(sI, 0), D = X(sD, 0), A = X(sA, 0), R = X(sR, 0), T = X(sT, 0),
                     H = X(sH, 0), V = X(sV, 0);
        const double Sh = X(sS, s2);
        const double F = force(X);
        const double u = c[0];
        const double sv = p.vaccine_susceptibility, sh = p.reinfection_susceptibility;
        Vec dx(9);
        dx[sS] = -S * F - u * Sh + p.vaccine_waning * V + p.immunity_waning * H;
        dx[sI] = (S + sv * V + sh * H) * F - (p.epsilon + p.zeta + p.lambda) * I;
        dx[sD] = p.epsilon * I - (p.eta + p.rho) * D;
        dx[sA] = p.zeta * I - (p.theta + p.mu + p.kappa) * A;
        dx[sR] = p.eta * D + p.theta * A - (p.nu + p.xi) * R;
        dx[sT] = p.mu * A + p.nu * R - (p.sigma + p.tau) * T;
        dx[sH] = p.lambda * I + p.rho * D + p.kappa * A + p.xi * R + p.sigma * T - sh * H * F -
                 p.immunity_waning * H;
        dx[sE] = p.tau * T;
        dx[sV] = u * Sh - sv * V * F - p.vaccine_waning * V;
        return dx;
    };

    d.f_x = [p, s1, s2, force](double, const Mat& X, const Vec& c, Index s) -> Mat {
        const double S = X(sS, 0), H = X(sH, 0), V = X(sV, 0);
        const double sv = p.vaccine_susceptibility, sh = p.reinfection_susceptibility;
        Mat J = Mat::Zero(9, 9);
        if (s == 0) {
            const double F = force(X);
            J(sS, sS) = -F;
            J(sS, sV) = p.vaccine_waning;
            J(sS, sH) = p.immunity_waning;
            J(sI, sS) = F;
            J(sI, sV) = sv * F;
            J(sI, sH) = sh * F;
            J(sI, sI) = -(p.epsilon + p.zeta + p.lambda);
            J(sD, sI) = p.epsilon;
            J(sD, sD) = -(p.eta + p.rho);
            J(sA, sI) = p.zeta;
            J(sA, sA) = -(p.theta + p.mu + p.kappa);
            J(sR, sD) = p.eta;
            J(sR, sA) = p.theta;
            J(sR, sR) = -(p.nu + p.xi);
            J(sT, sA) = p.mu;
            J(sT, sR) = p.nu;
            J(sT, sT) = -(p.sigma + p.tau);
            J(sH, sI) = p.lambda;
            J(sH, sD) = p.rho;
            J(sH, sA) = p.kappa;
            J(sH, sR) = p.xi;
            J(sH, sT) = p.sigma;
            J(sH, sH) = -sh * F - p.immunity_waning;
            J(sE, sT) = p.tau;
            J(sV, sV) = -sv * F - p.vaccine_waning;
        }
        if (s == s1) {
            const std::array<std::pair<Index, double>, 4> coef = {
                {{sI, p.alpha}, {sD, p.beta}, {sA, p.gamma}, {sR, p.delta}}};
            for (const auto& [col, k] : coef) {
                J(sS, col) += -S * k;
                J(sI, col) += (S + sv * V + sh * H) * k;
                J(sH, col) += -sh * H * k;
                J(sV, col) += -sv * V * k;
            }
        }
        if (s == s2) {
            J(sS, sS) += -c[0];
            J(sV, sS) += c[0];
        }
        return J;
    };

    d.f_u = [s2](double, const Mat& X, const Vec&) -> Mat {
        Mat G = Mat::Zero(9, 1);
        G(sS, 0) = -X(sS, s2);
        G(sV, 0) = X(sS, s2);
        return G;
    };

    d.l = [p](double, const Mat& X, const Vec& c) {
        double v = p.w_u * c[0] * c[0];
        for (std::size_t i = 0; i < kSidartheCostStates.size(); ++i) v += p.w[i] * X(kSidartheCostStates[i], 0);
        return v;
    };
    d.l_x = [p](double, const Mat&, const Vec&, Index s) -> Vec {
        Vec g = Vec::Zero(9);
        if (s == 0)
            for (std::size_t i = 0; i < kSidartheCostStates.size(); ++i) g[kSidartheCostStates[i]] = p.w[i];
        return g;
    };
    d.l_u = [p](double, const Mat&, const Vec& c) -> Vec { return Vec::Constant(1, 2.0 * p.w_u * c[0]); };
    d.H_uu = [p](double, const Mat&, const Vec&, const Vec&) -> Mat { return Mat::Constant(1, 1, 2.0 * p.w_u); };
    d.control_weight = [p](double) -> Vec { return Vec::Constant(1, p.w_u); };

    const auto tw = p.terminal_weights;
    if (std::any_of(tw.begin(), tw.end(), [](double v) { return v > 0.0; })) {
        d.terminal = TerminalCost{
            [tw](const Vec& x) {
                double v = 0.0;
                for (std::size_t i = 0; i < tw.size(); ++i) v += 0.5 * tw[i] * x[kSidartheCostStates[i]] * x[kSidartheCostStates[i]];
                return v;
            },
            [tw](const Vec& x) -> Vec {
                Vec g = Vec::Zero(9);
                for (std::size_t i = 0; i < tw.size(); ++i) g[kSidartheCostStates[i]] = tw[i] * x[kSidartheCostStates[i]];
                return g;
            },
            [tw](const Vec&) -> Mat {
                Mat H = Mat::Zero(9, 9);
                for (std::size_t i = 0; i < tw.size(); ++i) H(kSidartheCostStates[i], kSidartheCostStates[i]) = tw[i];
                return H;
            },
        };
    }

    d.controls = ControlSet::box(Vec::Zero(1), Vec::Constant(1, p.u_max));
    d.control_affine = true;
    d.quadratic_control_cost = true;
    return d;
}

inline Vec sidarthe_v_initial_state(const SidartheVParams& p) {
    return Eigen::Map<const Vec>(p.initial_state.data(), 9);
}

// ---------------------------------------------------------------------------
// Scalar LQ
// ---------------------------------------------------------------------------

struct LqParams {
    double a = 0.0;
    double b = 1.0;
    double q = 1.0;
    double r = 1.0;
    double T = 1.0;
    double u_lo = -10.0;
    double u_hi = 10.0;
    double x0 = 1.0;
    /// Coefficient of x(T)^2 / 2; zero disables the terminal cost.
    double terminal_weight = 0.0;

    std::vector<std::string> invalid_fields() const {
        std::vector<std::string> bad;
        if (!(q >= 0.0)) bad.emplace_back("q");
        if (!(r > 0.0)) bad.emplace_back("r");
        if (!(T > 0.0)) bad.emplace_back("T");
        if (!(u_lo <= u_hi)) bad.emplace_back("u_bounds");
        if (!(terminal_weight >= 0.0)) bad.emplace_back("terminal_weight");
        return bad;
    }
};

/// x' = a x + b u, l = q x^2 + r u^2, no delays, u in [u_lo, u_hi].
inline ProblemDef lq_test_problem(const LqParams& p) {
    if (const auto bad = p.invalid_fields(); !bad.empty()) {
        std::string msg = "lq: invalid parameters:";
        for (const auto& b : bad) msg += " " + b;
        throw InvalidParams(msg);
    }
    ProblemDef d;
    d.n = 1;
    d.m = 1;
    d.state_names = {"x"};
    d.control_names = {"u"};
    d.f = [p](double, const Mat& X, const Vec& u) -> Vec { return Vec::Constant(1, p.a * X(0, 0) + p.b * u[0]); };
    d.f_x = [p](double, const Mat&, const Vec&, Index) -> Mat { return Mat::Constant(1, 1, p.a); };
    d.f_u = [p](double, const Mat&, const Vec&) -> Mat { return Mat::Constant(1, 1, p.b); };
    d.l = [p](double, const Mat& X, const Vec& u) { return p.q * X(0, 0) * X(0, 0) + p.r * u[0] * u[0]; };
    d.l_x = [p](double, const Mat& X, const Vec&, Index) -> Vec { return Vec::Constant(1, 2.0 * p.q * X(0, 0)); };
    d.l_u = [p](double, const Mat&, const Vec& u) -> Vec { return Vec::Constant(1, 2.0 * p.r * u[0]); };
    d.H_uu = [p](double, const Mat&, const Vec&, const Vec&) -> Mat { return Mat::Constant(1, 1, 2.0 * p.r); };
    d.control_weight = [p](double) -> Vec { return Vec::Constant(1, p.r); };
    if (p.terminal_weight > 0.0) {
        const double w = p.terminal_weight;
        d.terminal = TerminalCost{
            [w](const Vec& x) { return 0.5 * w * x[0] * x[0]; },
            [w](const Vec& x) -> Vec { return Vec::Constant(1, w * x[0]); },
            [w](const Vec&) -> Mat { return Mat::Constant(1, 1, w); },
        };
    }
    d.controls = ControlSet::box(Vec::Constant(1, p.u_lo), Vec::Constant(1, p.u_hi));
    d.control_affine = true;
    d.quadratic_control_cost = true;
    return d;
}

} // namespace essa::models
