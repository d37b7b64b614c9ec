#include "vem/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "vem/errors.hpp"

namespace vem {

namespace {

using Json = nlohmann::ordered_json;

// Shortest text that reads back to the same double.
std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw UsageError("cannot write output file '" + path.string() + "'");
    return f;
}

void prepare_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw UsageError("cannot create output directory '" + dir.string() + "'");
    }
}

// Node-major values of every component, in component_names() order.
Mat stacked(const Profile& y) { return y.values; }

Mat stacked(const FlowState& s) {
    Mat out(s.x.values.rows(), s.x.values.cols() + s.lam.values.cols() + s.u.values.cols());
    out << s.x.values, s.lam.values, s.u.values;
    return out;
}

void write_snapshot_rows(std::ostream& os, double tau, const TimeGrid& grid, const Mat& v) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        os << num(tau) << ',' << i << ',' << num(grid.time(static_cast<std::size_t>(i)));
        for (Eigen::Index j = 0; j < v.cols(); ++j) os << ',' << num(v(i, j));
        os << '\n';
    }
}

double max_error_vs(const BenchmarkCase& c, const TimeGrid& grid, const Mat& v) {
    double err = 0.0;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const Vec ref = c.reference(grid.time(static_cast<std::size_t>(i)));
        err = std::max(err, (v.row(i).transpose() - ref).cwiseAbs().maxCoeff());
    }
    return err;
}

template <typename State, typename GridOf>
void write_outputs(const RunConfig& cfg, const BenchmarkCase& c, const Evolution<State>& ev,
                   GridOf grid_of) {
    std::ofstream snaps = open_out(cfg.out_dir / "snapshots.csv");
    snaps << "tau,node_index,t";
    for (const std::string& name : c.component_names()) snaps << ',' << name;
    snaps << '\n';
    for (const auto& snap : ev.snapshots) {
        write_snapshot_rows(snaps, snap.tau, grid_of(snap.state), stacked(snap.state));
    }

    std::ofstream diag = open_out(cfg.out_dir / "diagnostics.csv");
    diag << "tau,J,J1,residual_norm,tf,descent_ok\n";
    for (const DiagnosticsRecord& d : ev.diagnostics) {
        diag << num(d.tau) << ',' << num(d.J) << ',' << opt_num(d.J1) << ',' << num(d.residual_norm)
             << ',' << opt_num(d.tf) << ',' << (d.descent_ok ? 1 : 0) << '\n';
    }
    if (!snaps || !diag) throw UsageError("failed writing to '" + cfg.out_dir.string() + "'");
}

void write_summary(const RunConfig& cfg, const RunSummary& s) {
    Json j;
    j["case"] = s.case_name;
    j["status"] = to_string(s.status);
    j["tau"] = s.tau;
    j["state_dimension"] = s.state_dimension;
    j["final_residual"] = s.final_residual;
    j["final_J"] = s.final_J;
    j["final_J1"] = opt_json(s.final_J1);
    j["final_tf"] = opt_json(s.final_tf);
    j["max_error"] = opt_json(s.max_error);
    j["tf_error"] = opt_json(s.tf_error);
    j["transversality"] = opt_json(s.transversality);
    j["descent_ok"] = s.descent_ok;
    j["steps"] = {{"accepted", s.stats.accepted},
                  {"rejected", s.stats.rejected},
                  {"rhs_evaluations", s.stats.rhs_evaluations},
                  {"jacobians", s.stats.jacobians}};
    j["wall_time_s"] = s.wall_time;
    std::ofstream f = open_out(cfg.out_dir / "summary.json");
    f << j.dump(2) << '\n';
    if (!f) throw UsageError("failed writing to '" + cfg.out_dir.string() + "'");
}

const char* end_text(const EndCondition& e) { return e.fixed ? "fixed" : "free"; }

}  // namespace

std::string boundary_to_json(const BoundarySpec& b) {
    auto side = [](const std::vector<EndCondition>& ends) {
        Json arr = Json::array();
        for (const EndCondition& e : ends) {
            Json j;
            j["fixed"] = e.fixed;
            if (e.fixed) j["value"] = e.value;
            arr.push_back(j);
        }
        return arr;
    };
    Json j;
    j["initial"] = side(b.initial);
    j["terminal"] = side(b.terminal);
    return j.dump();
}

BoundarySpec boundary_from_json(const std::string& text) {
    try {
        const Json j = Json::parse(text);
        auto side = [](const Json& arr) {
            std::vector<EndCondition> ends;
            for (const Json& e : arr) {
                ends.push_back(e.at("fixed").get<bool>() ? EndCondition::Fixed(e.at("value").get<double>())
                                                         : EndCondition::Free());
            }
            return ends;
        };
        return BoundarySpec{side(j.at("initial")), side(j.at("terminal"))};
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("malformed boundary spec: ") + e.what());
    }
}

EvolveOptions resolve_options(const RunConfig& cfg, const BenchmarkCase& c) {
    EvolveOptions o;
    o.method = cfg.method.value_or(c.default_method);
    o.rel_tol = cfg.rel_tol.value_or(c.rel_tol);
    o.abs_tol = cfg.abs_tol.value_or(c.abs_tol);
    o.tau_max = cfg.tau_max.value_or(c.published_tau);
    o.residual_tol = cfg.residual_tol;
    o.snapshot_every = cfg.snapshot_every;
    o.validate();
    return o;
}

RunSummary run(const RunConfig& cfg) {
    const BenchmarkCase c = builtin_case(cfg.case_name);
    const std::size_t nodes = cfg.nodes.value_or(c.default_nodes);
    if (nodes < TimeGrid::kMinNodes) {
        throw UsageError("n-points must be at least " + std::to_string(TimeGrid::kMinNodes));
    }
    const EvolveOptions opts = resolve_options(cfg, c);
    const TimeGrid grid = c.grid(nodes);

    Vec K = c.default_K();
    if (cfg.gain_k) K.setConstant(*cfg.gain_k);

    prepare_dir(cfg.out_dir);

    RunSummary s;
    s.case_name = c.name;
    s.state_dimension = c.state_dimension(nodes);
    const auto start = std::chrono::steady_clock::now();

    auto fill_common = [&](const auto& ev) {
        const DiagnosticsRecord& last = ev.diagnostics.back();
        s.status = ev.status;
        s.tau = last.tau;
        s.final_J = last.J;
        s.final_J1 = last.J1;
        s.final_tf = last.tf;
        s.stats = ev.stats;
        s.descent_ok = std::all_of(ev.diagnostics.begin(), ev.diagnostics.end(),
                                   [](const DiagnosticsRecord& d) { return d.descent_ok; });
    };

    if (!c.is_ocp()) {
        const VariationalProblem& p = c.cov();
        const auto ev = evolve(p, c.cov_guess(grid), grid, c.cov_gains(K), opts);
        fill_common(ev);
        s.final_residual = cov_optimality_residual(p, ev.final_state, grid);
        if (c.reference) s.max_error = max_error_vs(c, grid, ev.final_state.values);
        s.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_outputs(cfg, c, ev, [&](const Profile&) { return grid; });
    } else {
        const OcpProblem& p = c.ocp();
        const double k_tf = cfg.gain_ktf.value_or(c.gain_ktf);
        const auto ev = evolve(p, c.ocp_guess(grid, cfg.guess), grid, c.zs_gains(K, k_tf), opts);
        fill_common(ev);
        const TimeGrid final_grid = grid_for(ev.final_state, grid);
        s.final_residual = optimality_residual(p, ev.final_state, final_grid);
        if (c.reference) s.max_error = max_error_vs(c, final_grid, stacked(ev.final_state));
        if (c.reference_tf && s.final_tf) s.tf_error = std::abs(*s.final_tf - *c.reference_tf);
        if (p.terminal_time.free) s.transversality = transversality_residual(p, ev.final_state, final_grid);
        s.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_outputs(cfg, c, ev, [&](const FlowState& st) { return grid_for(st, grid); });
    }
    write_summary(cfg, s);
    return s;
}

int exit_status(const RunSummary& s, const RunConfig& cfg) {
    if (s.status == Termination::Converged) return 0;
    if (s.status == Termination::TauMax && cfg.tau_max) return 0;
    return 2;
}

std::string describe(const BenchmarkCase& c, std::optional<std::size_t> nodes) {
    const std::size_t N = nodes.value_or(c.default_nodes);
    std::ostringstream os;
    os << "case: " << c.name << '\n' << "problem: " << c.summary << '\n';
    if (!c.is_ocp()) {
        const VariationalProblem& p = c.cov();
        os << "kind: calculus of variations\n"
           << "n=" << p.n << '\n'
           << "interval: [" << p.t0 << ", " << p.tf << "]\n";
        const bool all_fixed =
            std::all_of(p.boundary.initial.begin(), p.boundary.initial.end(), [](auto& e) { return e.fixed; }) &&
            std::all_of(p.boundary.terminal.begin(), p.boundary.terminal.end(), [](auto& e) { return e.fixed; });
        os << "boundary: " << (all_fixed ? "fixed both ends" : "mixed") << ' ' << boundary_to_json(p.boundary)
           << '\n';
        for (std::size_t j = 0; j < p.n; ++j) {
            os << "  y" << j + 1 << ": t0 " << end_text(p.boundary.initial[j]);
            if (p.boundary.initial[j].fixed) os << " = " << p.boundary.initial[j].value;
            os << ", tf " << end_text(p.boundary.terminal[j]);
            if (p.boundary.terminal[j].fixed) os << " = " << p.boundary.terminal[j].value;
            os << '\n';
        }
    } else {
        const OcpProblem& p = c.ocp();
        os << "kind: optimal control\n"
           << "n=" << p.n << ", m=" << p.m << '\n';
        if (p.terminal_time.free) {
            os << "terminal time: free tf (initial guess " << p.terminal_time.value << ")\n";
        } else {
            os << "terminal time: fixed tf=" << p.terminal_time.value << '\n';
        }
        os << "initial state: x(" << p.t0 << ") = (";
        for (Eigen::Index j = 0; j < p.x0.size(); ++j) os << (j ? ", " : "") << p.x0(j);
        os << ")\n";
        const bool mixed = p.any_terminal_fixed() && !p.all_terminal_fixed();
        os << "terminal state: " << (mixed ? "mixed" : p.all_terminal_fixed() ? "all fixed" : "all free")
           << '\n';
        for (std::size_t j = 0; j < p.n; ++j) {
            os << "  x" << j + 1 << "(tf): " << end_text(p.terminal_state[j]);
            if (p.terminal_state[j].fixed) os << " = " << p.terminal_state[j].value;
            os << '\n';
        }
    }
    os << "components: ";
    const auto names = c.component_names();
    for (std::size_t j = 0; j < names.size(); ++j) os << (j ? ", " : "") << names[j];
    os << '\n'
       << "default N: " << c.default_nodes << '\n'
       << "integrated values at N=" << N << ": " << c.state_dimension(N) << '\n'
       << "default method: " << (c.default_method == Method::ImplicitStiff ? "stiff" : "rk45") << '\n'
       << "default gains K: ";
    const Vec K = c.default_K();
    for (Eigen::Index j = 0; j < K.size(); ++j) os << (j ? ", " : "") << K(j);
    os << '\n';
    if (c.is_ocp() && c.ocp().terminal_time.free) os << "default k_tf: " << c.gain_ktf << '\n';
    os << "default tau_max: " << c.published_tau << '\n'
       << "tolerances: rel " << c.rel_tol << ", abs " << c.abs_tol << '\n'
       << "reference solution: " << (c.reference ? "closed form" : "none") << '\n';
    if (c.reference_tf) os << "reference tf: " << *c.reference_tf << '\n';
    return os.str();
}

}  // namespace vem
