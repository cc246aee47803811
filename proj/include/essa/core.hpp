#pragma once

// Domain types shared by every part of the solver: time grids with delays
// expressed as node counts, node-sampled trajectories, pre-horizon history,
// control sets and problem definitions.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace essa {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonIntegerDelay : public Error {
public:
    NonIntegerDelay(const std::string& what, Index suggested_N)
        : Error(what), suggested_N_(suggested_N) {}
    /// Smallest N' >= N for which every delay is a whole number of steps,
    /// or 0 when none was found within the search cap.
    Index suggested_N() const noexcept { return suggested_N_; }

private:
    Index suggested_N_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NonFiniteState : public Error {
public:
    NonFiniteState(const std::string& what, Index node) : Error(what), node_(node) {}
    Index node() const noexcept { return node_; }

private:
    Index node_;
};

class NonFiniteCostate : public Error {
public:
    NonFiniteCostate(const std::string& what, Index node) : Error(what), node_(node) {}
    Index node() const noexcept { return node_; }

private:
    Index node_;
};

class MissingHessian : public Error {
public:
    using Error::Error;
};

class InvalidParams : public Error {
public:
    using Error::Error;
};

class MissingCoefficients : public Error {
public:
    using Error::Error;
};

class NoConvergence : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Uniform mesh t0 = rho_0 < ... < rho_N = T. Delay slot 0 is the current
/// state; slot j >= 1 is the state delay_steps[j-1] nodes in the past.
class Grid {
public:
    Grid(double t0, double T, Index N, std::vector<Index> delay_steps)
        : t0_(t0), T_(T), N_(N), delta_((T - t0) / static_cast<double>(N)),
          delay_steps_(std::move(delay_steps)) {
        if (!(T > t0)) throw InvalidArgument("grid: horizon must exceed t0");
        if (N < 1) throw InvalidArgument("grid: N must be at least 1");
        for (std::size_t j = 0; j < delay_steps_.size(); ++j) {
            if (delay_steps_[j] < 1) throw InvalidArgument("grid: delay steps must be positive");
            if (j > 0 && delay_steps_[j] <= delay_steps_[j - 1])
                throw InvalidArgument("grid: delay steps must be strictly increasing");
        }
    }

    double t0() const noexcept { return t0_; }
    double T() const noexcept { return T_; }
    Index N() const noexcept { return N_; }
    double delta() const noexcept { return delta_; }
    Index num_nodes() const noexcept { return N_ + 1; }

    /// Number of positive delays (k).
    Index num_delays() const noexcept { return static_cast<Index>(delay_steps_.size()); }
    /// Number of slots in the stacked state tuple (k + 1).
    Index num_slots() const noexcept { return num_delays() + 1; }
    const std::vector<Index>& delay_steps() const noexcept { return delay_steps_; }

    /// Node offset of a slot; slot 0 has offset 0.
    Index offset(Index slot) const { return slot == 0 ? 0 : delay_steps_.at(static_cast<std::size_t>(slot - 1)); }
    /// Largest node offset d_k (0 without delays).
    Index max_offset() const noexcept { return delay_steps_.empty() ? 0 : delay_steps_.back(); }
    double delay(Index slot) const { return static_cast<double>(offset(slot)) * delta_; }

    double time(Index node) const noexcept { return t0_ + static_cast<double>(node) * delta_; }

    /// Same horizon and delays with `factor` times as many nodes.
    Grid refined(Index factor) const {
        std::vector<Index> d = delay_steps_;
        for (auto& v : d) v *= factor;
        return Grid(t0_, T_, N_ * factor, std::move(d));
    }

private:
    double t0_;
    double T_;
    Index N_;
    double delta_;
    std::vector<Index> delay_steps_;
};

namespace detail {

inline bool near_integer(double r) {
    return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, std::abs(r));
}

} // namespace detail

/// Builds a uniform grid on [t0, T] with N intervals and converts each delay
/// to a node count. Throws NonIntegerDelay when some delay is not a whole
/// number of steps; the exception carries the smallest repairing N.
inline Grid build_grid(double t0, double T, Index N, const std::vector<double>& delays) {
    if (!(T > t0)) throw InvalidArgument("build_grid: T must exceed t0");
    if (N < 1) throw InvalidArgument("build_grid: N must be at least 1");
    for (std::size_t j = 0; j < delays.size(); ++j) {
        if (!(delays[j] > 0.0)) throw InvalidArgument("build_grid: delays must be positive");
        if (j > 0 && !(delays[j] > delays[j - 1]))
            throw InvalidArgument("build_grid: delays must be strictly increasing");
    }
    const double span = T - t0;
    auto all_integral = [&](Index n) {
        const double d = span / static_cast<double>(n);
        return std::all_of(delays.begin(), delays.end(), [&](double h) { return detail::near_integer(h / d); });
    };
    if (!all_integral(N)) {
        Index suggestion = 0;
        const Index cap = std::max<Index>(N * 1000, 1000000);
        for (Index n = N + 1; n <= cap; ++n) {
            if (all_integral(n)) {
                suggestion = n;
                break;
            }
        }
        std::ostringstream msg;
        msg << "build_grid: delays are not integer multiples of the step " << span / static_cast<double>(N);
        if (suggestion > 0) msg << "; use N = " << suggestion;
        throw NonIntegerDelay(msg.str(), suggestion);
    }
    const double d = span / static_cast<double>(N);
    std::vector<Index> steps;
    steps.reserve(delays.size());
    for (double h : delays) steps.push_back(static_cast<Index>(std::llround(h / d)));
    return Grid(t0, T, N, std::move(steps));
}

// ---------------------------------------------------------------------------
// Trajectories and history
// ---------------------------------------------------------------------------

/// Node samples of a vector quantity; column j is the value at rho_j.
/// Controls are read as piecewise constant: the node-j value holds on
/// [rho_j, rho_{j+1}).
class Trajectory {
public:
    Trajectory() = default;
    Trajectory(Index dim, Index num_nodes) : values_(Mat::Zero(dim, num_nodes)) {}
    explicit Trajectory(Mat values) : values_(std::move(values)) {}

    static Trajectory constant(const Vec& value, Index num_nodes) {
        Trajectory t(value.size(), num_nodes);
        t.values_.colwise() = value;
        return t;
    }

    Index dim() const noexcept { return values_.rows(); }
    Index num_nodes() const noexcept { return values_.cols(); }

    auto node(Index j) { return values_.col(j); }
    auto node(Index j) const { return values_.col(j); }

    const Mat& values() const noexcept { return values_; }
    Mat& values() noexcept { return values_; }

private:
    Mat values_;
};

/// Pre-horizon initial function: either a constant vector or samples at the
/// d_k + 1 nodes t0 - h_k, ..., t0. The value at t0 is the initial state.
class History {
public:
    explicit History(Vec constant) : data_(std::move(constant)) {}

    /// Column i holds the state at t0 - h_k + i * delta.
    static History sampled(Mat samples) {
        History h(Vec{});
        h.data_ = std::move(samples);
        return h;
    }

    bool is_constant() const noexcept { return std::holds_alternative<Vec>(data_); }

    Index dim() const {
        return is_constant() ? std::get<Vec>(data_).size() : std::get<Mat>(data_).rows();
    }

    /// Number of samples for the sampled form.
    Index num_samples() const { return is_constant() ? 1 : std::get<Mat>(data_).cols(); }

    /// Value at node index `node` <= 0 relative to t0.
    Vec at(Index node) const {
        if (is_constant()) return std::get<Vec>(data_);
        const Mat& m = std::get<Mat>(data_);
        const Index col = m.cols() - 1 + node;
        if (node > 0 || col < 0) throw InvalidArgument("history: node outside the pre-horizon window");
        return m.col(col);
    }

    Vec initial() const { return at(0); }

    const Mat& samples() const { return std::get<Mat>(data_); }
    const Vec& constant_value() const { return std::get<Vec>(data_); }

    /// Checks the sampled length against a grid.
    void validate(const Grid& grid) const {
        if (!is_constant() && num_samples() != grid.max_offset() + 1)
            throw InvalidArgument("history: sampled form needs d_k + 1 columns");
    }

private:
    std::variant<Vec, Mat> data_;
};

/// x(rho_node - h_slot): trajectory value when the index is on the horizon,
/// history value otherwise.
template <typename Values>
Vec delayed_state(const Values& traj, const History& history, const Grid& grid, Index node, Index slot) {
    const Index idx = node - grid.offset(slot);
    if (idx >= 0) return traj.col(idx);
    return history.at(idx);
}

inline Vec delayed_state(const Trajectory& traj, const History& history, const Grid& grid, Index node,
                         Index slot) {
    return delayed_state(traj.values(), history, grid, node, slot);
}

/// Stacked tuple X = (x(t - h_0), ..., x(t - h_k)) as an n x (k+1) matrix.
template <typename Values>
Mat stacked_state(const Values& traj, const History& history, const Grid& grid, Index node) {
    Mat X(traj.rows(), grid.num_slots());
    for (Index s = 0; s < grid.num_slots(); ++s) {
        const Index idx = node - grid.offset(s);
        if (idx >= 0)
            X.col(s) = traj.col(idx);
        else
            X.col(s) = history.at(idx);
    }
    return X;
}

// ---------------------------------------------------------------------------
// Control sets
// ---------------------------------------------------------------------------

class ControlSet {
public:
    using Projection = std::function<Vec(const Vec&)>;

    static ControlSet box(Vec lo, Vec hi) {
        if (lo.size() != hi.size()) throw InvalidArgument("control set: bound sizes differ");
        for (Index i = 0; i < lo.size(); ++i)
            if (!(lo[i] <= hi[i])) throw InvalidArgument("control set: lower bound exceeds upper bound");
        ControlSet s;
        s.lo_ = std::move(lo);
        s.hi_ = std::move(hi);
        return s;
    }

    static ControlSet custom(Index dim, Projection projection) {
        ControlSet s;
        s.dim_ = dim;
        s.projection_ = std::move(projection);
        return s;
    }

    bool is_box() const noexcept { return !projection_; }
    Index dim() const noexcept { return is_box() ? lo_.size() : dim_; }
    const Vec& lower() const noexcept { return lo_; }
    const Vec& upper() const noexcept { return hi_; }

    Vec midpoint() const {
        if (!is_box()) return project(Vec::Zero(dim_));
        return 0.5 * (lo_ + hi_);
    }

    bool contains(const Vec& q, double tol = 0.0) const {
        if (is_box()) return ((q - lo_).array() >= -tol).all() && ((hi_ - q).array() >= -tol).all();
        return (project(q) - q).lpNorm<Eigen::Infinity>() <= tol;
    }

    Vec project(const Vec& q) const {
        if (q.size() != dim()) throw InvalidArgument("project: dimension mismatch");
        if (is_box()) return q.cwiseMax(lo_).cwiseMin(hi_);
        return projection_(q);
    }

private:
    Vec lo_;
    Vec hi_;
    Index dim_ = 0;
    Projection projection_;
};

// ---------------------------------------------------------------------------
// Problem definition
// ---------------------------------------------------------------------------

/// Terminal cost gamma(x(T)) with gradient and Hessian.
struct TerminalCost {
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;
    std::function<Mat(const Vec&)> hessian;
};

/// Optimal control problem with discrete state delays.
///
/// Callbacks take (t, X, u) where X is the n x (k+1) stacked tuple of
/// current and delayed states. Derivative callbacks take the slot index
/// for the state blocks. Row gradients are returned as column vectors.
struct ProblemDef {
    Index n = 0;
    Index m = 0;
    std::vector<double> delays;  // h_1 < ... < h_k in time units

    std::function<Vec(double, const Mat&, const Vec&)> f;
    std::function<Mat(double, const Mat&, const Vec&, Index)> f_x;
    std::function<Mat(double, const Mat&, const Vec&)> f_u;

    std::function<double(double, const Mat&, const Vec&)> l;
    std::function<Vec(double, const Mat&, const Vec&, Index)> l_x;
    std::function<Vec(double, const Mat&, const Vec&)> l_u;

    /// Optional control Hessian of H = l + lambda^T f.
    std::function<Mat(double, const Mat&, const Vec&, const Vec&)> H_uu;

    std::optional<TerminalCost> terminal;
    ControlSet controls = ControlSet::box(Vec::Zero(0), Vec::Zero(0));

    /// f = f0(t, X) + G(t, X) u.
    bool control_affine = false;
    /// l = l0(t, X) + q_lin(t, X)^T u + u^T Q(t) u with Q diagonal >= 0.
    bool quadratic_control_cost = false;
    /// Diagonal of Q(t); required when quadratic_control_cost is set.
    std::function<Vec(double)> control_weight;

    std::vector<std::string> state_names;
    std::vector<std::string> control_names;

    Index num_slots() const noexcept { return static_cast<Index>(delays.size()) + 1; }

    void validate() const {
        std::vector<std::string> bad;
        if (n < 1) bad.emplace_back("n");
        if (m < 1) bad.emplace_back("m");
        if (!f) bad.emplace_back("f");
        if (!f_x) bad.emplace_back("f_x");
        if (!f_u) bad.emplace_back("f_u");
        if (!l) bad.emplace_back("l");
        if (!l_x) bad.emplace_back("l_x");
        if (!l_u) bad.emplace_back("l_u");
        if (controls.dim() != m) bad.emplace_back("controls");
        if (quadratic_control_cost && !control_weight) bad.emplace_back("control_weight");
        if (terminal && (!terminal->value || !terminal->gradient)) bad.emplace_back("terminal");
        if (!bad.empty()) {
            std::string msg = "problem definition incomplete:";
            for (const auto& b : bad) msg += " " + b;
            throw InvalidArgument(msg);
        }
    }
};

/// Grid for a problem's own delay set.
inline Grid build_grid(const ProblemDef& problem, double t0, double T, Index N) {
    return build_grid(t0, T, N, problem.delays);
}

// ---------------------------------------------------------------------------
// Solver settings
// ---------------------------------------------------------------------------

struct InnerMinSettings {
    int max_steps = 30;
    double step_tol = 1e-12;
};

struct SolverConfig {
    /// Diagonal of the initial regularization matrix; a single entry is
    /// broadcast to all m controls.
    Vec C0_diag = Vec::Constant(1, 1.0);
    /// Termination threshold on ||u^i - u^{i-1}||^2 in L2; defaults to
    /// 1e-8 (T - t0) m when unset.
    std::optional<double> eta_tol;
    double c_growth = 2.0;
    /// Multiplier applied to C after an accepted step; 1 keeps C fixed.
    double c_relax = 1.0;
    int max_outer_iters = 500;
    int max_c_increases_per_iter = 40;
    double residual_tol = 1e-3;
    /// Require the optimality residual to meet residual_tol before a
    /// tolerance exit.
    bool strict = true;
    /// Clamp state components at zero after every Euler step (positivity
    /// safeguard for compartmental models). Clipped nodes are masked out of
    /// the costate, which keeps it the exact adjoint of the clipped map.
    bool nonneg_clip = false;
    InnerMinSettings inner;
    double J_lower_bound = 0.0;
    std::optional<double> xi0;

    double resolved_eta_tol(const Grid& grid, Index m) const {
        return eta_tol ? *eta_tol : 1e-8 * (grid.T() - grid.t0()) * static_cast<double>(m);
    }

    Vec resolved_C0(Index m) const {
        if (C0_diag.size() == 1) return Vec::Constant(m, C0_diag[0]);
        if (C0_diag.size() != m) throw InvalidArgument("solver: C0 length must be 1 or m");
        return C0_diag;
    }

    /// Names of offending fields, empty when valid.
    std::vector<std::string> invalid_fields() const {
        std::vector<std::string> bad;
        if (C0_diag.size() < 1 || !(C0_diag.array() > 0.0).all()) bad.emplace_back("C0");
        if (eta_tol && !(*eta_tol > 0.0)) bad.emplace_back("eta_tol");
        if (!(c_growth > 1.0)) bad.emplace_back("c_growth");
        if (!(c_relax > 0.0 && c_relax <= 1.0)) bad.emplace_back("c_relax");
        if (max_outer_iters < 1) bad.emplace_back("max_outer_iters");
        if (max_c_increases_per_iter < 0) bad.emplace_back("max_c_increases_per_iter");
        if (!(residual_tol > 0.0)) bad.emplace_back("residual_tol");
        if (inner.max_steps < 1) bad.emplace_back("inner.max_steps");
        if (!(inner.step_tol > 0.0)) bad.emplace_back("inner.step_tol");
        if (xi0 && !(*xi0 > 0.0)) bad.emplace_back("xi0");
        return bad;
    }

    void validate() const {
        if (const auto bad = invalid_fields(); !bad.empty()) {
            std::string msg = "solver config invalid:";
            for (const auto& b : bad) msg += " " + b;
            throw InvalidArgument(msg);
        }
    }
};

} // namespace essa
