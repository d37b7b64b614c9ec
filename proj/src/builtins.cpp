#include "vem/builtins.hpp"

#include <cmath>
#include <numbers>

#include "vem/errors.hpp"

namespace vem {

namespace {

Vec vec(std::initializer_list<double> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

}  // namespace

std::vector<std::string> BenchmarkCase::component_names() const {
    std::vector<std::string> names;
    if (!is_ocp()) {
        for (std::size_t j = 0; j < cov().n; ++j) names.push_back("y" + std::to_string(j + 1));
        return names;
    }
    const OcpProblem& p = ocp();
    for (std::size_t j = 0; j < p.n; ++j) names.push_back("x" + std::to_string(j + 1));
    for (std::size_t j = 0; j < p.n; ++j) names.push_back("lam" + std::to_string(j + 1));
    for (std::size_t j = 0; j < p.m; ++j) names.push_back("u" + std::to_string(j + 1));
    return names;
}

TimeGrid BenchmarkCase::grid(std::size_t nodes) const {
    if (!is_ocp()) return make_grid(cov().t0, cov().tf, nodes);
    return make_grid(ocp().t0, ocp().terminal_time.value, nodes);
}

std::size_t BenchmarkCase::state_dimension(std::size_t nodes) const {
    if (!is_ocp()) return nodes * cov().n;
    const OcpProblem& p = ocp();
    return nodes * (2 * p.n + p.m) + (p.terminal_time.free ? 1 : 0);
}

Profile BenchmarkCase::cov_guess(const TimeGrid& grid) const {
    return cov_linear_guess(cov(), grid);
}

FlowState BenchmarkCase::ocp_guess(const TimeGrid& grid, GuessKind kind) const {
    const OcpProblem& p = ocp();
    FlowState s = default_guess(p, grid);
    if (kind == GuessKind::Published && name == "example3") {
        // Published guess x = (1 - t, 1 - t, 0); the boundary pins override it.
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double t = grid.time(i);
            const auto r = static_cast<Eigen::Index>(i);
            s.x.values(r, 0) = 1.0 - t;
            s.x.values(r, 1) = 1.0 - t;
            s.x.values(r, 2) = 0.0;
        }
        apply_pins(p, s, grid);
    }
    return s;
}

CovGains BenchmarkCase::cov_gains(const Vec& K) const {
    CovGains g{K, CovVariant::Asymptotic, 0.0};
    g.validate(cov().n);
    return g;
}

ZsGains BenchmarkCase::zs_gains(const Vec& K, double k_tf) const {
    ZsGains g{K, k_tf, convective};
    g.validate(ocp().n, ocp().m);
    return g;
}

Vec BenchmarkCase::default_K() const {
    if (gain_vector.size() > 0) return gain_vector;
    const std::size_t len = is_ocp() ? 2 * ocp().n + ocp().m : cov().n;
    return Vec::Constant(static_cast<Eigen::Index>(len), gain_k);
}

BenchmarkCase example1() {
    VariationalProblem p;
    p.n = 1;
    p.t0 = 0.0;
    p.tf = std::numbers::pi;
    p.F = [](const Vec& y, const Vec& yd, double t) { return yd(0) * yd(0) - 2.0 * y(0) * std::cos(t); };
    p.F_y = [](const Vec&, const Vec&, double t) { return vec({-2.0 * std::cos(t)}); };
    p.F_ydot = [](const Vec&, const Vec& yd, double) { return vec({2.0 * yd(0)}); };
    p.boundary = BoundarySpec::all_fixed(vec({0.0}), vec({0.0}));

    BenchmarkCase c;
    c.name = "example1";
    c.summary = "minimize integral of ydot^2 - 2 y cos t on [0, pi], y(0) = y(pi) = 0";
    c.problem = std::move(p);
    c.reference = [](double t) { return vec({std::cos(t) + 2.0 * t / std::numbers::pi - 1.0}); };
    c.gain_k = 0.1;
    c.default_nodes = 101;
    c.published_tau = 6.0;
    c.default_method = Method::ExplicitRK45;
    // At 1e-6 / 1e-8 the explicit steps sit on the stability limit and J
    // chatters upward by up to ~1e-7 per step; these cost the same and do not.
    c.rel_tol = 1e-9;
    c.abs_tol = 1e-12;
    return c;
}

BenchmarkCase example2() {
    OcpProblem p;
    p.n = 2;
    p.m = 1;
    p.t0 = 0.0;
    p.x0 = vec({1.0, 1.0});
    p.terminal_time = TerminalTime::Fixed(2.0);
    p.terminal_state = {EndCondition::Fixed(0.0), EndCondition::Fixed(0.0)};
    p.f = [](const Vec& x, const Vec& u, double) { return vec({x(1), u(0)}); };
    p.L = [](const Vec&, const Vec& u, double) { return 0.5 * u(0) * u(0); };
    p.phi = [](const Vec&, double) { return 0.0; };

    OcpPartials& d = p.d;
    d.f_x = [](const Vec&, const Vec&, double) {
        Mat a(2, 2);
        a << 0.0, 1.0, 0.0, 0.0;
        return a;
    };
    d.f_u = [](const Vec&, const Vec&, double) {
        Mat b(2, 1);
        b << 0.0, 1.0;
        return b;
    };
    d.f_t = [](const Vec&, const Vec&, double) { return Vec(Vec::Zero(2)); };
    d.L_x = [](const Vec&, const Vec&, double) { return Vec(Vec::Zero(2)); };
    d.L_u = [](const Vec&, const Vec& u, double) { return vec({u(0)}); };
    d.L_t = [](const Vec&, const Vec&, double) { return 0.0; };
    d.phi_x = [](const Vec&, double) { return Vec(Vec::Zero(2)); };
    d.phi_tf = [](const Vec&, double) { return 0.0; };
    d.H_xx = [](const Vec&, const Vec&, const Vec&, double) { return Mat(Mat::Zero(2, 2)); };
    d.H_xu = [](const Vec&, const Vec&, const Vec&, double) { return Mat(Mat::Zero(2, 1)); };
    d.H_uu = [](const Vec&, const Vec&, const Vec&, double) { return Mat(Mat::Ones(1, 1)); };
    d.H_xt = [](const Vec&, const Vec&, const Vec&, double) { return Vec(Vec::Zero(2)); };
    d.H_ut = [](const Vec&, const Vec&, const Vec&, double) { return Vec(Vec::Zero(1)); };
    d.phi_xtf = [](const Vec&, double) { return Vec(Vec::Zero(2)); };
    d.phi_tftf = [](const Vec&, double) { return 0.0; };

    BenchmarkCase c;
    c.name = "example2";
    c.summary = "double integrator, J = 1/2 integral u^2, x(0) = (1, 1), x(2) = (0, 0)";
    c.problem = std::move(p);
    c.reference = [](double t) {
        return vec({0.5 * t * t * t - 1.75 * t * t + t + 1.0, 1.5 * t * t - 3.5 * t + 1.0, 3.0,
                    -3.0 * t + 3.5, 3.0 * t - 3.5});
    };
    c.gain_k = 1.0;
    c.gain_ktf = 1.0;
    c.default_nodes = 41;
    c.published_tau = 300.0;
    c.default_method = Method::ImplicitStiff;
    return c;
}

BenchmarkCase example3() {
    constexpr double g = 10.0;
    OcpProblem p;
    p.n = 3;
    p.m = 1;
    p.t0 = 0.0;
    p.x0 = vec({0.0, 0.0, 0.0});
    p.terminal_time = TerminalTime::Free(1.0);
    p.terminal_state = {EndCondition::Fixed(2.0), EndCondition::Fixed(-2.0), EndCondition::Free()};
    p.f = [](const Vec& x, const Vec& u, double) {
        return vec({x(2) * std::sin(u(0)), -x(2) * std::cos(u(0)), g * std::cos(u(0))});
    };
    p.L = [](const Vec&, const Vec&, double) { return 0.0; };
    p.phi = [](const Vec&, double tf) { return tf; };

    OcpPartials& d = p.d;
    d.f_x = [](const Vec&, const Vec& u, double) {
        Mat a = Mat::Zero(3, 3);
        a(0, 2) = std::sin(u(0));
        a(1, 2) = -std::cos(u(0));
        return a;
    };
    d.f_u = [](const Vec& x, const Vec& u, double) {
        Mat b(3, 1);
        b << x(2) * std::cos(u(0)), x(2) * std::sin(u(0)), -g * std::sin(u(0));
        return b;
    };
    d.f_t = [](const Vec&, const Vec&, double) { return Vec(Vec::Zero(3)); };
    d.L_x = [](const Vec&, const Vec&, double) { return Vec(Vec::Zero(3)); };
    d.L_u = [](const Vec&, const Vec&, double) { return Vec(Vec::Zero(1)); };
    d.L_t = [](const Vec&, const Vec&, double) { return 0.0; };
    d.phi_x = [](const Vec&, double) { return Vec(Vec::Zero(3)); };
    d.phi_tf = [](const Vec&, double) { return 1.0; };
    d.H_xx = [](const Vec&, const Vec&, const Vec&, double) { return Mat(Mat::Zero(3, 3)); };
    d.H_xu = [](const Vec&, const Vec& lam, const Vec& u, double) {
        Mat h = Mat::Zero(3, 1);
        h(2, 0) = lam(0) * std::cos(u(0)) + lam(1) * std::sin(u(0));
        return h;
    };
    d.H_uu = [](const Vec& x, const Vec& lam, const Vec& u, double) {
        Mat h(1, 1);
        h(0, 0) = -lam(0) * x(2) * std::sin(u(0)) + lam(1) * x(2) * std::cos(u(0)) -
                  lam(2) * g * std::cos(u(0));
        return h;
    };
    d.H_xt = [](const Vec&, const Vec&, const Vec&, double) { return Vec(Vec::Zero(3)); };
    d.H_ut = [](const Vec&, const Vec&, const Vec&, double) { return Vec(Vec::Zero(1)); };
    d.phi_xtf = [](const Vec&, double) { return Vec(Vec::Zero(3)); };
    d.phi_tftf = [](const Vec&, double) { return 0.0; };

    BenchmarkCase c;
    c.name = "example3";
    c.summary = "brachistochrone to (2, -2) with g = 10, free final time and speed, J = tf";
    c.problem = std::move(p);
    c.reference_tf = 0.8165;
    c.gain_k = 1.0;
    c.gain_ktf = 0.1;
    // Unit gains drift into a branch where V changes sign and tf grows without
    // bound. A faster state block with the physical-time tf coupling reaches
    // the minimum-time extremal from the published guess.
    c.gain_vector = vec({5.0, 5.0, 5.0, 0.5, 0.5, 0.5, 0.5});
    c.convective = true;
    c.default_nodes = 101;
    c.published_tau = 400.0;
    c.default_method = Method::ImplicitStiff;
    return c;
}

std::vector<std::string> builtin_names() { return {"example1", "example2", "example3"}; }

BenchmarkCase builtin_case(const std::string& name) {
    if (name == "example1") return example1();
    if (name == "example2") return example2();
    if (name == "example3") return example3();
    throw UsageError("unknown case '" + name + "' (known: example1, example2, example3)");
}

}  // namespace vem
