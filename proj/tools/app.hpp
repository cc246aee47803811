#pragma once

// Config loading, model registry and CSV output for the essa command line
// tool. Kept in a header so the tests can drive the commands in-process.

#include "essa/essa.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace essa::app {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class LogLevel { Quiet, Info, Debug };

inline LogLevel log_level_from_env() {
    const char* v = std::getenv("ESSA_LOG");
    if (!v || !*v) return LogLevel::Info;
    const std::string s(v);
    if (s == "quiet") return LogLevel::Quiet;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    std::cerr << "essa: unknown ESSA_LOG value '" << s << "', using info\n";
    return LogLevel::Info;
}

struct Log {
    LogLevel level = LogLevel::Info;
    std::ostream* out = &std::cerr;

    bool info() const { return level != LogLevel::Quiet; }
    bool debug() const { return level == LogLevel::Debug; }
};

/// Every problem found while reading a config, reported together.
class ConfigError : public Error {
  public:
    explicit ConfigError(std::vector<std::string> issues)
        : Error(join(issues)), issues_(std::move(issues)) {}
    const std::vector<std::string>& issues() const noexcept { return issues_; }

  private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "config invalid:";
        for (const auto& i : v) s += "\n  " + i;
        return s;
    }
    std::vector<std::string> issues_;
};

// ---------------------------------------------------------------------------
// Reading helpers
// ---------------------------------------------------------------------------

namespace detail {

class Reader {
  public:
    void issue(const std::string& key, const std::string& why) { issues_.push_back(key + ": " + why); }
    const std::vector<std::string>& issues() const { return issues_; }

    /// Flags keys of `obj` that are not in `allowed`.
    void only(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
        if (!obj.is_object()) return;
        for (const auto& [k, v] : obj.items())
            if (!allowed.count(k)) issue(path + k, "unknown key");
    }

    const json* section(const json& root, const std::string& key, bool required) {
        if (!root.contains(key)) {
            if (required) issue(key, "missing section");
            return nullptr;
        }
        if (!root[key].is_object()) {
            issue(key, "must be an object");
            return nullptr;
        }
        return &root[key];
    }

    void number(const json& obj, const std::string& path, const std::string& key, double& out,
                bool required = false) {
        if (!obj.contains(key)) {
            if (required) issue(path + key, "missing");
            return;
        }
        const json& v = obj[key];
        if (!v.is_number()) return issue(path + key, "must be a number");
        out = v.get<double>();
    }

    void optional_number(const json& obj, const std::string& path, const std::string& key,
                         std::optional<double>& out) {
        if (!obj.contains(key)) return;
        double d = 0.0;
        number(obj, path, key, d);
        if (obj[key].is_number()) out = d;
    }

    void integer(const json& obj, const std::string& path, const std::string& key, long long& out,
                 bool required = false) {
        if (!obj.contains(key)) {
            if (required) issue(path + key, "missing");
            return;
        }
        const json& v = obj[key];
        if (!v.is_number_integer()) return issue(path + key, "must be an integer");
        out = v.get<long long>();
    }

    void boolean(const json& obj, const std::string& path, const std::string& key, bool& out) {
        if (!obj.contains(key)) return;
        if (!obj[key].is_boolean()) return issue(path + key, "must be true or false");
        out = obj[key].get<bool>();
    }

    void string(const json& obj, const std::string& path, const std::string& key, std::string& out) {
        if (!obj.contains(key)) return;
        if (!obj[key].is_string()) return issue(path + key, "must be a string");
        out = obj[key].get<std::string>();
    }

    /// Number or array of numbers.
    bool numbers(const json& obj, const std::string& path, const std::string& key, std::vector<double>& out) {
        if (!obj.contains(key)) return false;
        const json& v = obj[key];
        if (v.is_number()) {
            out = {v.get<double>()};
            return true;
        }
        if (v.is_array() && !v.empty() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
            out = v.get<std::vector<double>>();
            return true;
        }
        issue(path + key, "must be a number or a non-empty array of numbers");
        return false;
    }

  private:
    std::vector<std::string> issues_;
};

inline Vec to_vec(const std::vector<double>& v) {
    return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Model registry
// ---------------------------------------------------------------------------

/// Deliberate damage to one derivative entry, used to prove that the
/// derivative check catches it.
struct FaultInjection {
    std::string block = "f_x";  // f_x or f_u
    Index slot = 0;
    Index row = 0;
    Index col = 0;
    double scale = 1.1;
};

struct ModelInstance {
    std::string name;
    ProblemDef problem;
    Vec initial_state;
    /// Sampling box for derivative checks.
    oracle::FdSampling sampling;
    std::optional<models::LqParams> lq;
    double control_scale = 1.0;  // largest control bound, for residual scaling
};

// The offset term makes structurally zero entries wrong as well.
inline ProblemDef inject_fault(ProblemDef p, const FaultInjection& fi) {
    if (fi.block == "f_x") {
        auto base = p.f_x;
        p.f_x = [base, fi](double t, const Mat& X, const Vec& u, Index s) -> Mat {
            Mat J = base(t, X, u, s);
            if (s == fi.slot) J(fi.row, fi.col) = J(fi.row, fi.col) * fi.scale + (fi.scale - 1.0);
            return J;
        };
    } else {
        auto base = p.f_u;
        p.f_u = [base, fi](double t, const Mat& X, const Vec& u) -> Mat {
            Mat G = base(t, X, u);
            G(fi.row, fi.col) = G(fi.row, fi.col) * fi.scale + (fi.scale - 1.0);
            return G;
        };
    }
    return p;
}

namespace detail {

inline void read_sirv(Reader& r, const json& params, ModelInstance& m, double horizon) {
    const std::string path = "model.parameters.";
    models::SirvParams p;
    const std::vector<std::pair<const char*, double*>> fields = {
        {"Lambda", &p.Lambda}, {"mu_S", &p.mu_S}, {"mu_I", &p.mu_I}, {"mu_R", &p.mu_R},
        {"mu_V", &p.mu_V}, {"beta", &p.beta}, {"gamma", &p.gamma}, {"sigma_R", &p.sigma_R},
        {"sigma_V", &p.sigma_V}, {"theta_R", &p.theta_R}, {"theta_V", &p.theta_V}, {"h1", &p.h1},
        {"h2", &p.h2}, {"u_max", &p.u_max}, {"v_max", &p.v_max}, {"w_I", &p.w_I},
        {"w_u", &p.w_u}, {"w_v", &p.w_v}, {"terminal_weight", &p.terminal_weight}, {"I0", &p.I0}};
    std::set<std::string> allowed;
    for (const auto& [k, dst] : fields) {
        allowed.insert(k);
        r.number(params, path, k, *dst);
    }
    r.only(params, path, allowed);
    for (const auto& b : p.invalid_fields()) r.issue(path + b, "out of range");
    if (!p.invalid_fields().empty()) return;
    m.problem = models::sirv_problem(p);
    m.initial_state = models::sirv_initial_state(p);
    m.sampling.t_hi = horizon;
    m.control_scale = std::max(p.u_max, p.v_max);
}

inline void read_sidarthe(Reader& r, const json& params, ModelInstance& m, double horizon) {
    const std::string path = "model.parameters.";
    r.only(params, path, {"coefficients", "weights", "terminal_weights", "initial_state", "note"});
    std::map<std::string, double> coeffs;
    if (!params.contains("coefficients") || !params["coefficients"].is_object()) {
        r.issue(path + "coefficients", "missing object");
    } else {
        const json& c = params["coefficients"];
        const auto& names = models::SidartheVParams::coefficient_names();
        r.only(c, path + "coefficients.", std::set<std::string>(names.begin(), names.end()));
        for (const auto& k : names) {
            if (!c.contains(k)) {
                r.issue(path + "coefficients." + k, "missing");
                continue;
            }
            double v = 0.0;
            r.number(c, path + "coefficients.", k, v);
            coeffs[k] = v;
        }
    }
    auto arr = [&](const char* key, std::size_t n) {
        std::vector<double> v;
        if (!params.contains(key)) {
            r.issue(path + key, "missing");
        } else if (r.numbers(params, path, key, v) && v.size() != n) {
            r.issue(path + key, "must have " + std::to_string(n) + " entries");
            v.clear();
        }
        return v;
    };
    const auto w = arr("weights", 5);
    const auto tw = arr("terminal_weights", 5);
    const auto x0 = arr("initial_state", 9);
    if (!r.issues().empty()) return;
    const auto p = models::SidartheVParams::from_map(coeffs, w, tw, x0);
    for (const auto& b : p.invalid_fields())
        r.issue(path + (b == "weights" || b == "terminal_weights" ? b : "coefficients." + b), "out of range");
    if (!p.invalid_fields().empty()) return;
    for (double v : x0)
        if (!(v >= 0.0)) {
            r.issue(path + "initial_state", "entries must be nonnegative");
            return;
        }
    m.problem = models::sidarthe_v_problem(p);
    m.initial_state = models::sidarthe_v_initial_state(p);
    m.sampling.t_hi = horizon;
    m.control_scale = p.u_max;
}

inline void read_lq(Reader& r, const json& params, ModelInstance& m, double t0, double horizon) {
    const std::string path = "model.parameters.";
    models::LqParams p;
    const std::vector<std::pair<const char*, double*>> fields = {
        {"a", &p.a}, {"b", &p.b}, {"q", &p.q}, {"r", &p.r}, {"u_lo", &p.u_lo},
        {"u_hi", &p.u_hi}, {"x0", &p.x0}, {"terminal_weight", &p.terminal_weight}};
    std::set<std::string> allowed;
    for (const auto& [k, dst] : fields) {
        allowed.insert(k);
        r.number(params, path, k, *dst);
    }
    r.only(params, path, allowed);
    p.T = horizon - t0;
    for (const auto& b : p.invalid_fields()) {
        if (b == "u_bounds") {
            r.issue(path + "u_lo", "must not exceed u_hi");
            r.issue(path + "u_hi", "must not be below u_lo");
        } else if (b != "T") {
            r.issue(path + b, "out of range");
        }
    }
    if (!p.invalid_fields().empty()) return;
    m.problem = models::lq_test_problem(p);
    m.initial_state = Vec::Constant(1, p.x0);
    m.sampling = {-2.0, 2.0, t0, horizon, 20240601};
    m.lq = p;
    m.control_scale = std::max(std::abs(p.u_lo), std::abs(p.u_hi));
}

} // namespace detail

inline const std::vector<std::string>& registered_models() {
    static const std::vector<std::string> names = {"sirv", "sidarthe_v", "lq"};
    return names;
}

// ---------------------------------------------------------------------------
// Full config
// ---------------------------------------------------------------------------

struct InitialControl {
    enum class Kind { Midpoint, Constant, File } kind = Kind::Midpoint;
    std::vector<double> constant;
    std::string file;
};

struct RunConfig {
    fs::path source;
    ModelInstance model;
    double t0 = 0.0;
    double horizon = 0.0;
    Index N = 0;
    std::optional<Grid> grid;
    SolverConfig solver;
    InitialControl u0;
    fs::path output_dir = "essa_out";
    int precision = 17;
    std::optional<FaultInjection> fault;
};

namespace detail {

inline void read_solver(Reader& r, const json& s, RunConfig& cfg) {
    const std::string path = "solver.";
    r.only(s, path,
           {"C0", "eta_tol", "c_growth", "c_relax", "max_outer_iters", "max_c_increases_per_iter", "residual_tol",
            "strict", "nonneg_clip", "inner", "J_lower_bound", "xi0", "u0"});
    SolverConfig& c = cfg.solver;
    std::vector<double> c0;
    if (r.numbers(s, path, "C0", c0)) c.C0_diag = to_vec(c0);
    r.optional_number(s, path, "eta_tol", c.eta_tol);
    r.number(s, path, "c_growth", c.c_growth);
    r.number(s, path, "c_relax", c.c_relax);
    long long it = c.max_outer_iters, ci = c.max_c_increases_per_iter;
    r.integer(s, path, "max_outer_iters", it);
    r.integer(s, path, "max_c_increases_per_iter", ci);
    c.max_outer_iters = static_cast<int>(it);
    c.max_c_increases_per_iter = static_cast<int>(ci);
    r.number(s, path, "residual_tol", c.residual_tol);
    r.boolean(s, path, "strict", c.strict);
    r.boolean(s, path, "nonneg_clip", c.nonneg_clip);
    r.number(s, path, "J_lower_bound", c.J_lower_bound);
    r.optional_number(s, path, "xi0", c.xi0);
    if (s.contains("inner")) {
        const json& in = s["inner"];
        if (!in.is_object()) {
            r.issue(path + "inner", "must be an object");
        } else {
            r.only(in, path + "inner.", {"max_steps", "step_tol"});
            long long ms = c.inner.max_steps;
            r.integer(in, path + "inner.", "max_steps", ms);
            c.inner.max_steps = static_cast<int>(ms);
            r.number(in, path + "inner.", "step_tol", c.inner.step_tol);
        }
    }
    if (s.contains("u0")) {
        const json& u = s["u0"];
        if (u.is_string() && u.get<std::string>() == "midpoint") {
            cfg.u0.kind = InitialControl::Kind::Midpoint;
        } else if (u.is_object() && u.contains("file") && u["file"].is_string()) {
            cfg.u0.kind = InitialControl::Kind::File;
            cfg.u0.file = u["file"].get<std::string>();
        } else if (r.numbers(s, path, "u0", cfg.u0.constant)) {
            cfg.u0.kind = InitialControl::Kind::Constant;
        }
    }
    for (const auto& b : c.invalid_fields()) r.issue(path + b, "out of range");
}

inline void read_fault(Reader& r, const json& f, RunConfig& cfg) {
    const std::string path = "model.fault_injection.";
    if (!f.is_object()) return r.issue("model.fault_injection", "must be an object");
    r.only(f, path, {"block", "slot", "row", "col", "scale"});
    FaultInjection fi;
    r.string(f, path, "block", fi.block);
    if (fi.block != "f_x" && fi.block != "f_u") r.issue(path + "block", "must be f_x or f_u");
    long long slot = 0, row = 0, col = 0;
    r.integer(f, path, "slot", slot);
    r.integer(f, path, "row", row);
    r.integer(f, path, "col", col);
    r.number(f, path, "scale", fi.scale);
    fi.slot = slot;
    fi.row = row;
    fi.col = col;
    cfg.fault = fi;
}

} // namespace detail

inline RunConfig parse_config(const json& root, const fs::path& source = {}) {
    detail::Reader r;
    RunConfig cfg;
    cfg.source = source;
    if (!root.is_object()) throw ConfigError({"(root): must be a JSON object"});
    r.only(root, "", {"model", "grid", "solver", "output", "description"});

    const json* grid = r.section(root, "grid", true);
    if (grid) {
        r.only(*grid, "grid.", {"t0", "horizon", "N"});
        r.number(*grid, "grid.", "t0", cfg.t0);
        r.number(*grid, "grid.", "horizon", cfg.horizon, true);
        long long N = 0;
        r.integer(*grid, "grid.", "N", N, true);
        cfg.N = N;
        if (grid->contains("horizon") && (*grid)["horizon"].is_number() && !(cfg.horizon > cfg.t0))
            r.issue("grid.horizon", "must exceed grid.t0");
        if (grid->contains("N") && (*grid)["N"].is_number_integer() && N < 1) r.issue("grid.N", "must be positive");
    }
    const bool grid_ok = r.issues().empty();

    const json* model = r.section(root, "model", true);
    if (model) {
        r.only(*model, "model.", {"name", "parameters", "fault_injection"});
        std::string name;
        r.string(*model, "model.", "name", name);
        if (!model->contains("name")) r.issue("model.name", "missing");
        const json empty = json::object();
        const json* params = &empty;
        if (model->contains("parameters")) {
            if ((*model)["parameters"].is_object()) params = &(*model)["parameters"];
            else r.issue("model.parameters", "must be an object");
        }
        cfg.model.name = name;
        const double t_end = grid_ok ? cfg.horizon : 1.0;
        if (name == "sirv") detail::read_sirv(r, *params, cfg.model, t_end);
        else if (name == "sidarthe_v") detail::read_sidarthe(r, *params, cfg.model, t_end);
        else if (name == "lq") detail::read_lq(r, *params, cfg.model, cfg.t0, t_end);
        else if (!name.empty()) r.issue("model.name", "unknown model '" + name + "' (known: sirv, sidarthe_v, lq)");
        if (model->contains("fault_injection")) detail::read_fault(r, (*model)["fault_injection"], cfg);
    }

    if (const json* s = r.section(root, "solver", false)) detail::read_solver(r, *s, cfg);

    if (const json* o = r.section(root, "output", false)) {
        r.only(*o, "output.", {"directory", "precision"});
        std::string dir;
        r.string(*o, "output.", "directory", dir);
        if (!dir.empty()) cfg.output_dir = dir;
        long long prec = cfg.precision;
        r.integer(*o, "output.", "precision", prec);
        if (prec < 1 || prec > 17) r.issue("output.precision", "must be in [1, 17]");
        cfg.precision = static_cast<int>(prec);
    }

    if (r.issues().empty()) {
        ProblemDef& p = cfg.model.problem;
        if (cfg.fault) {
            const FaultInjection& fi = *cfg.fault;
            const Index rows = p.n, cols = fi.block == "f_x" ? p.n : p.m;
            if (fi.row < 0 || fi.row >= rows) r.issue("model.fault_injection.row", "out of range");
            if (fi.col < 0 || fi.col >= cols) r.issue("model.fault_injection.col", "out of range");
            if (fi.slot < 0 || fi.slot >= p.num_slots()) r.issue("model.fault_injection.slot", "out of range");
            if (r.issues().empty()) p = inject_fault(p, fi);
        }
        if (cfg.solver.C0_diag.size() != 1 && cfg.solver.C0_diag.size() != p.m)
            r.issue("solver.C0", "must have 1 or " + std::to_string(p.m) + " entries");
        if (cfg.u0.kind == InitialControl::Kind::Constant && static_cast<Index>(cfg.u0.constant.size()) != p.m &&
            cfg.u0.constant.size() != 1)
            r.issue("solver.u0", "must have 1 or " + std::to_string(p.m) + " entries");
        try {
            cfg.grid = build_grid(p, cfg.t0, cfg.horizon, cfg.N);
        } catch (const NonIntegerDelay& e) {
            r.issue("grid.N", std::string("delays are not whole multiples of the step; smallest valid N is ") +
                                  std::to_string(e.suggested_N()));
        }
    }
    if (!r.issues().empty()) throw ConfigError(r.issues());
    return cfg;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({path.string() + ": cannot open"});
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({path.string() + ": " + e.what()});
    }
    return parse_config(root, path);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string fmt(double v, int precision) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    return buf;
}

inline void write_node_csv(const fs::path& file, const Grid& grid, const Trajectory& traj,
                           const std::vector<std::string>& names, int precision) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    out << "t";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (Index j = 0; j < traj.num_nodes(); ++j) {
        out << fmt(grid.time(j), precision);
        for (Index c = 0; c < traj.dim(); ++c) out << ',' << fmt(traj.values()(c, j), precision);
        out << '\n';
    }
}

inline void write_iterations_csv(const fs::path& file, const std::vector<IterationRecord>& log, int precision) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error("cannot write " + file.string());
    out << "i,J,delta_u_sq,eps_min,c_increases,accepted,residual\n";
    for (const auto& r : log) {
        out << r.index << ',' << fmt(r.J, precision) << ',' << fmt(r.delta_u_sq, precision) << ','
            << fmt(r.eps_min, precision) << ',' << r.c_increases << ',' << (r.accepted ? 1 : 0) << ',';
        if (r.residual) out << fmt(*r.residual, precision);
        out << '\n';
    }
}

/// Reads a node table with header `t,<names>`; one row per grid node.
inline Trajectory read_control_csv(const fs::path& file, const Grid& grid, const std::vector<std::string>& names) {
    std::ifstream in(file);
    if (!in) throw ConfigError({file.string() + ": cannot open"});
    std::string line;
    std::getline(in, line);
    std::string expect = "t";
    for (const auto& n : names) expect += "," + n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expect) throw ConfigError({file.string() + ": header must be '" + expect + "'"});
    std::vector<std::vector<double>> rows;
    Index lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw ConfigError({file.string() + ":" + std::to_string(lineno) + ": not a number '" + cell + "'"});
            vals.push_back(v);
        }
        if (vals.size() != names.size() + 1)
            throw ConfigError({file.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(names.size() + 1) + " columns"});
        rows.push_back(std::move(vals));
    }
    if (static_cast<Index>(rows.size()) != grid.num_nodes())
        throw ConfigError({file.string() + ": has " + std::to_string(rows.size()) + " rows, grid has " +
                           std::to_string(grid.num_nodes()) + " nodes"});
    Trajectory u(static_cast<Index>(names.size()), grid.num_nodes());
    for (Index j = 0; j < grid.num_nodes(); ++j)
        for (Index c = 0; c < u.dim(); ++c) u.values()(c, j) = rows[static_cast<std::size_t>(j)][c + 1];
    return u;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

enum ExitCode : int { kOk = 0, kConfigError = 1, kNotConverged = 2, kCheckFailed = 3 };

inline Trajectory initial_control(const RunConfig& cfg) {
    const ProblemDef& p = cfg.model.problem;
    const Grid& g = *cfg.grid;
    switch (cfg.u0.kind) {
    case InitialControl::Kind::Midpoint:
        return Trajectory::constant(p.controls.midpoint(), g.num_nodes());
    case InitialControl::Kind::Constant: {
        const Vec c = cfg.u0.constant.size() == 1 ? Vec::Constant(p.m, cfg.u0.constant[0])
                                                  : detail::to_vec(cfg.u0.constant);
        return Trajectory::constant(c, g.num_nodes());
    }
    case InitialControl::Kind::File: {
        fs::path f = cfg.u0.file;
        if (f.is_relative() && !cfg.source.empty()) f = cfg.source.parent_path() / f;
        return read_control_csv(f, g, p.control_names);
    }
    }
    return {};
}

inline void print_grid(std::ostream& os, const RunConfig& cfg) {
    const Grid& g = *cfg.grid;
    os << "model " << cfg.model.name << "\n";
    os << "grid t0=" << fmt(g.t0(), 17) << " T=" << fmt(g.T(), 17) << " N=" << g.N()
       << " delta=" << fmt(g.delta(), 17) << "\n";
    for (Index s = 1; s < g.num_slots(); ++s)
        os << "delay " << s << ": " << fmt(g.delay(s), 17) << " = " << g.offset(s) << " nodes\n";
    os << "eta_tol " << fmt(cfg.solver.resolved_eta_tol(g, cfg.model.problem.m), 17) << "\n";
    os << "C0 " << cfg.solver.resolved_C0(cfg.model.problem.m).transpose() << "\n";
}

struct SolveOutcome {
    Solution solution;
    double wall_seconds = 0.0;
    int exit_code = kOk;
};

inline SolveOutcome run_solve(const RunConfig& cfg, const fs::path& out_dir, const Log& log) {
    const ProblemDef& p = cfg.model.problem;
    const Grid& g = *cfg.grid;
    const History history(cfg.model.initial_state);
    const Trajectory u0 = initial_control(cfg);

    IterationSink sink = [&log](const IterationRecord& r) {
        if (log.debug() || (log.info() && r.accepted && r.index % 10 == 0))
            *log.out << "iter " << r.index << " J=" << fmt(r.J, 10) << " du2=" << fmt(r.delta_u_sq, 4)
                     << " eps_min=" << fmt(r.eps_min, 4) << (r.accepted ? " accepted" : " rejected")
                     << (r.clip_events ? " clips=" + std::to_string(r.clip_events) : std::string()) << "\n";
    };
    const auto start = std::chrono::steady_clock::now();
    SolveOutcome oc{solve(p, g, history, cfg.solver, u0, sink), 0.0, kOk};
    oc.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const Solution& s = oc.solution;
    oc.exit_code = s.termination == Termination::ToleranceMet ? kOk : kNotConverged;

    fs::create_directories(out_dir);
    write_node_csv(out_dir / "trajectories.csv", g, s.state, p.state_names, cfg.precision);
    write_node_csv(out_dir / "controls.csv", g, s.control, p.control_names, cfg.precision);
    write_iterations_csv(out_dir / "iterations.csv", s.log, cfg.precision);

    // Clip events of the returned state, one line each in debug mode.
    if (cfg.solver.nonneg_clip && log.debug()) {
        IntegratorSettings is;
        is.nonneg_clip = true;
        is.on_clip = [&](const ClipEvent& e) {
            *log.out << "clip node=" << e.node << " t=" << fmt(g.time(e.node), 10) << " "
                     << p.state_names[static_cast<std::size_t>(e.component)] << " value=" << fmt(e.value, 6) << "\n";
        };
        integrate_forward(p, g, s.control, history, is);
    }

    std::ofstream sum(out_dir / "summary.txt", std::ios::binary);
    sum << "model " << cfg.model.name << "\n";
    sum << "termination " << to_string(s.termination) << "\n";
    sum << "J " << fmt(s.J, 17) << "\n";
    sum << "objective " << fmt(s.objective, 17) << "\n";
    sum << "residual " << fmt(s.residual, 17) << "\n";
    sum << "residual_tol " << fmt(cfg.solver.residual_tol, 17) << "\n";
    sum << "eta_tol " << fmt(s.eta_tol, 17) << "\n";
    sum << "iterations " << (s.log.empty() ? 0 : s.log.back().index) << "\n";
    sum << "accepted_iterations " << s.accepted_iterations << "\n";
    sum << "C_final";
    for (Index i = 0; i < s.C_final.size(); ++i) sum << ' ' << fmt(s.C_final[i], 17);
    sum << "\n";
    sum << "clip_events " << s.clip_events << "\n";
    sum << "closure_gap " << fmt(s.closure_gap, 17) << "\n";
    sum << "wall_time_s " << fmt(oc.wall_seconds, 6) << "\n";
    if (cfg.solver.xi0 && !s.log.empty()) {
        try {
            sum << "termination_bound "
                << termination_bound(s.J_initial, cfg.solver.J_lower_bound, *cfg.solver.xi0, s.eta_tol) << "\n";
        } catch (const Error&) {
        }
    }

    if (log.info())
        *log.out << "essa: " << to_string(s.termination) << " J=" << fmt(s.J, 12) << " residual=" << fmt(s.residual, 6)
                 << " iterations=" << (s.log.empty() ? 0 : s.log.back().index) << " clip_events=" << s.clip_events
                 << " wall=" << fmt(oc.wall_seconds, 4) << "s -> " << out_dir.string() << "\n";
    return oc;
}

struct CheckReport {
    oracle::FdReport fd;
    bool fd_pass = false;
    std::optional<double> essa_vs_brute;
    std::optional<double> brute_vs_riccati;
    std::optional<double> essa_vs_riccati;
    bool pass = false;
};

/// L2 distance between a node control and a per-interval reference on the
/// nodes where the reference lies strictly inside the box.
inline double l2_on_interior(const Grid& g, const Trajectory& u, const Vec& ref, double lo, double hi) {
    double s = 0.0;
    for (Index j = 0; j < g.N(); ++j)
        if (ref[j] > lo && ref[j] < hi) s += g.delta() * std::pow(u.values()(0, j) - ref[j], 2);
    return std::sqrt(s);
}

inline CheckReport run_check(const RunConfig& cfg, const Log& log, double fd_tol = 1e-6, double oracle_tol = 1e-3) {
    CheckReport rep;
    const ProblemDef& p = cfg.model.problem;
    rep.fd = oracle::fd_check(p, 100, 1e-6, cfg.model.sampling);
    rep.fd_pass = rep.fd.passes(fd_tol);
    if (log.info()) {
        for (const auto& [k, v] : rep.fd.block_errors)
            *log.out << "fd " << k << " max_rel_err=" << fmt(v, 3) << (v <= fd_tol ? " ok" : " FAIL") << "\n";
    }
    rep.pass = rep.fd_pass;
    if (cfg.model.lq && !rep.fd_pass && log.info()) *log.out << "lq oracle comparison skipped: derivatives are wrong\n";
    if (cfg.model.lq && rep.fd_pass) {
        const Grid& g = *cfg.grid;
        const models::LqParams& lp = *cfg.model.lq;
        const ProblemDef pa = absorb_terminal_cost(p);
        const Solution sol = solve(p, g, History(cfg.model.initial_state), cfg.solver, initial_control(cfg));
        const auto bf = oracle::brute_force_lq(pa, g, cfg.model.initial_state);
        const auto ric = oracle::riccati_lq_reference(lp, g);
        rep.essa_vs_brute = std::sqrt(l2_sq_distance(g, sol.control, bf.control));
        rep.brute_vs_riccati = l2_on_interior(g, bf.control, ric.control_mid, lp.u_lo, lp.u_hi);
        rep.essa_vs_riccati = l2_on_interior(g, sol.control, ric.control_mid, lp.u_lo, lp.u_hi);
        const bool ok = *rep.essa_vs_brute <= oracle_tol && *rep.brute_vs_riccati <= oracle_tol &&
                        *rep.essa_vs_riccati <= oracle_tol && sol.termination == Termination::ToleranceMet;
        if (log.info())
            *log.out << "lq essa=" << to_string(sol.termination) << " J=" << fmt(sol.J, 12) << " brute J=" << fmt(bf.J, 12)
                     << "\nlq L2 essa-brute=" << fmt(*rep.essa_vs_brute, 3)
                     << " brute-riccati=" << fmt(*rep.brute_vs_riccati, 3)
                     << " essa-riccati=" << fmt(*rep.essa_vs_riccati, 3) << (ok ? " ok" : " FAIL") << "\n";
        rep.pass = rep.pass && ok;
    }
    if (log.info()) *log.out << "essa check: " << (rep.pass ? "pass" : "FAIL") << "\n";
    return rep;
}

struct SimulateOutcome {
    Trajectory state;
    Index projected_nodes = 0;
    Index clip_events = 0;
};

inline SimulateOutcome run_simulate(const RunConfig& cfg, const fs::path& control_file, const fs::path& out_dir,
                                    const Log& log) {
    const ProblemDef& p = cfg.model.problem;
    const Grid& g = *cfg.grid;
    Trajectory u = read_control_csv(control_file, g, p.control_names);
    SimulateOutcome oc;
    for (Index j = 0; j < g.num_nodes(); ++j) {
        const Vec q = u.node(j);
        if (!p.controls.contains(q)) {
            u.node(j) = p.controls.project(q);
            ++oc.projected_nodes;
        }
    }
    if (oc.projected_nodes && log.info())
        *log.out << "essa: warning: " << oc.projected_nodes << " control nodes outside the admissible set were projected\n";
    IntegratorSettings is;
    is.nonneg_clip = cfg.solver.nonneg_clip;
    is.on_clip = [&](const ClipEvent& e) {
        ++oc.clip_events;
        if (log.debug())
            *log.out << "clip node=" << e.node << " " << p.state_names[static_cast<std::size_t>(e.component)]
                     << " value=" << fmt(e.value, 6) << "\n";
    };
    oc.state = integrate_forward(p, g, u, History(cfg.model.initial_state), is);
    fs::create_directories(out_dir);
    write_node_csv(out_dir / "trajectories.csv", g, oc.state, p.state_names, cfg.precision);
    if (log.info())
        *log.out << "essa: simulated " << g.N() << " steps, clip_events=" << oc.clip_events << " -> "
                 << (out_dir / "trajectories.csv").string() << "\n";
    return oc;
}

} // namespace essa::app
