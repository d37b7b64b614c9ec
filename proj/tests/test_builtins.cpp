#include <cmath>
#include <numbers>

#include "doctest.h"
#include "vem/builtins.hpp"
#include "vem/errors.hpp"

using namespace vem;

namespace {
constexpr double pi = std::numbers::pi;
}

TEST_CASE("example1") {
    const BenchmarkCase c = example1();
    CHECK(c.name == "example1");
    CHECK_FALSE(c.is_ocp());
    CHECK(c.cov().n == 1);
    CHECK(c.cov().boundary.initial[0] == EndCondition::Fixed(0.0));
    CHECK(c.cov().boundary.terminal[0] == EndCondition::Fixed(0.0));
    CHECK(c.default_nodes == 101);
    CHECK(c.default_K()(0) == 0.1);
    CHECK(std::abs(c.reference(0.0)(0)) < 1e-15);
    CHECK(std::abs(c.reference(pi)(0)) < 1e-15);
    CHECK(std::abs(c.reference(pi / 2)(0)) < 1e-15);
    CHECK(c.cov_guess(c.grid(101)).values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(c.state_dimension(101) == 101);
}

TEST_CASE("example2") {
    const BenchmarkCase c = example2();
    CHECK(c.is_ocp());
    CHECK(c.ocp().n == 2);
    CHECK(c.ocp().m == 1);
    CHECK_FALSE(c.ocp().terminal_time.free);
    CHECK(c.ocp().terminal_time.value == 2.0);
    CHECK(c.ocp().all_terminal_fixed());
    CHECK(c.default_nodes == 41);
    CHECK(c.default_K() == Vec::Ones(5));
    CHECK(c.reference(0.0)(4) == -3.5);
    for (double t : {0.0, 0.7, 1.9}) CHECK(c.reference(t)(2) == 3.0);
    CHECK(std::abs(c.reference(2.0)(0)) < 1e-14);
    CHECK(std::abs(c.reference(2.0)(1)) < 1e-14);
    CHECK(c.state_dimension(41) == 205);

    const TimeGrid g = c.grid(41);
    const FlowState s = c.ocp_guess(g);
    for (std::size_t i = 0; i < 41; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        CHECK(s.x.values(k, 0) == doctest::Approx(1.0 - 0.5 * g.time(i)));
        CHECK(s.x.values(k, 1) == doctest::Approx(1.0 - 0.5 * g.time(i)));
    }
    CHECK(s.lam.values.norm() == 0.0);
    CHECK(s.u.values.norm() == 0.0);
}

TEST_CASE("example3") {
    const BenchmarkCase c = example3();
    const OcpProblem& p = c.ocp();
    CHECK(p.n == 3);
    CHECK(p.m == 1);
    CHECK(p.terminal_time.free);
    CHECK(p.terminal_time.value == 1.0);
    CHECK(p.terminal_state[0] == EndCondition::Fixed(2.0));
    CHECK(p.terminal_state[1] == EndCondition::Fixed(-2.0));
    CHECK_FALSE(p.terminal_state[2].fixed);
    CHECK(c.reference_tf.value() == 0.8165);
    CHECK_FALSE(static_cast<bool>(c.reference));
    CHECK(c.default_nodes == 101);
    CHECK(c.state_dimension(101) == 708);

    Vec x(3), u(1);
    x << 0.4, -0.2, 0.0;
    u << 0.3;
    const Vec f = p.f(x, u, 0.0);
    CHECK(f(0) == 0.0);
    CHECK(f(1) == 0.0);
    CHECK(f(2) == doctest::Approx(10.0 * std::cos(0.3)));
    CHECK(p.phi(x, 0.9) == 0.9);
    CHECK(p.d.phi_tf(x, 0.9) == 1.0);
    CHECK(p.d.phi_x(x, 0.9).norm() == 0.0);
    CHECK(p.L(x, u, 0.0) == 0.0);
}

TEST_CASE("example3 guesses") {
    const BenchmarkCase c = example3();
    const TimeGrid g = c.grid(101);
    const FlowState s = c.ocp_guess(g, GuessKind::Published);
    // the printed guess on free nodes, pins at both ends
    CHECK(s.x.values(50, 0) == doctest::Approx(0.5));
    CHECK(s.x.values(50, 1) == doctest::Approx(0.5));
    CHECK(s.x.values(0, 0) == 0.0);
    CHECK(s.x.values(0, 1) == 0.0);
    CHECK(s.x.values(100, 0) == 2.0);
    CHECK(s.x.values(100, 1) == -2.0);
    CHECK(s.x.values.col(2).norm() == 0.0);
    CHECK(s.lam.values.norm() == 0.0);
    CHECK(s.u.values.norm() == 0.0);
    CHECK(s.tf.value() == 1.0);

    const FlowState lin = c.ocp_guess(g, GuessKind::Linear);
    CHECK(lin.x.values(50, 0) == doctest::Approx(1.0));
    CHECK(lin.x.values(50, 1) == doctest::Approx(-1.0));
}

TEST_CASE("derivative bundles verify") {
    for (const std::string& name : builtin_names()) {
        const BenchmarkCase c = builtin_case(name);
        if (!c.is_ocp()) {
            std::vector<VariationalSample> s{{Vec::Constant(1, 0.3), Vec::Constant(1, -1.1), 0.4},
                                             {Vec::Constant(1, -2.0), Vec::Constant(1, 0.5), 2.9}};
            CHECK(verify_partials(c.cov(), s, 1e-6).passed);
            continue;
        }
        const OcpProblem& p = c.ocp();
        std::vector<OcpSample> s;
        for (int k = 0; k < 4; ++k) {
            s.push_back({Vec::LinSpaced(static_cast<Eigen::Index>(p.n), 0.2 + k, 1.5 - k),
                         Vec::Constant(static_cast<Eigen::Index>(p.m), 0.4 * k - 0.7),
                         Vec::LinSpaced(static_cast<Eigen::Index>(p.n), -1.0, 0.5 * k), 0.25 * k});
        }
        const PartialsReport r = verify_partials(p, s, 1e-6);
        CHECK_MESSAGE(r.passed, name << ": " << r.failing());
    }
}

TEST_CASE("references drive the flows to within C h^2") {
    const BenchmarkCase e1 = example1();
    double r1[2];
    for (int k = 0; k < 2; ++k) {
        const TimeGrid g = e1.grid(k == 0 ? 51 : 101);
        Profile y = sample(g, [&](double t) { return e1.reference(t)(0); });
        r1[k] = cov_rhs(e1.cov(), y, g, e1.cov_gains(e1.default_K())).values.cwiseAbs().maxCoeff();
    }
    CHECK(r1[0] / r1[1] == doctest::Approx(4.0).epsilon(0.125));

    const BenchmarkCase e2 = example2();
    double r2[2];
    for (int k = 0; k < 2; ++k) {
        const TimeGrid g = e2.grid(k == 0 ? 41 : 81);
        FlowState s = e2.ocp_guess(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Vec r = e2.reference(g.time(i));
            const auto row = static_cast<Eigen::Index>(i);
            s.x.values.row(row) = r.head(2).transpose();
            s.lam.values.row(row) = r.segment(2, 2).transpose();
            s.u.values(row, 0) = r(4);
        }
        r2[k] = zs_rhs(e2.ocp(), s, g, e2.zs_gains(e2.default_K(), 1.0)).max_abs();
    }
    CHECK(r2[0] / r2[1] == doctest::Approx(4.0).epsilon(0.125));
}

TEST_CASE("gains and lookup") {
    const BenchmarkCase c = example3();
    CHECK(c.default_K().size() == 7);
    CHECK(c.zs_gains(c.default_K(), 2.0).k_tf == 2.0);
    CHECK(c.zs_gains(c.default_K(), 2.0).convective_correction == c.convective);
    CHECK_THROWS_AS(builtin_case("nosuch"), UsageError);
    CHECK(builtin_names().size() == 3);
    CHECK(c.component_names() == std::vector<std::string>{"x1", "x2", "x3", "lam1", "lam2", "lam3", "u1"});
    CHECK(example1().component_names() == std::vector<std::string>{"y1"});
}
