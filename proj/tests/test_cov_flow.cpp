#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "vem/builtins.hpp"
#include "vem/cov_flow.hpp"
#include "vem/errors.hpp"
#include "vem/integrator.hpp"

using namespace vem;

namespace {

constexpr double pi = std::numbers::pi;

Profile exact_e1(const TimeGrid& g) {
    return sample(g, [](double t) { return std::cos(t) + 2.0 * t / pi - 1.0; });
}

double interior_max(const Profile& p) {
    const Eigen::Index N = p.values.rows();
    return p.values.middleRows(1, N - 2).cwiseAbs().maxCoeff();
}

VariationalProblem free_particle(BoundarySpec b) {
    VariationalProblem p;
    p.n = 1;
    p.t0 = 0.0;
    p.tf = 2.0;
    p.F = [](const Vec&, const Vec& yd, double) { return yd(0) * yd(0); };
    p.F_y = [](const Vec&, const Vec&, double) { return Vec(Vec::Zero(1)); };
    p.F_ydot = [](const Vec&, const Vec& yd, double) { return Vec(2.0 * yd); };
    p.boundary = std::move(b);
    return p;
}

// Random profile with the Example 1 end values: exact solution plus a sine bump series.
struct PerturbGen {
    std::mt19937_64 rng;
    explicit PerturbGen(unsigned s) : rng(s) {}
    Profile operator()(const TimeGrid& g, double amplitude) {
        std::uniform_real_distribution<double> a(-1.0, 1.0);
        const double c1 = a(rng), c2 = a(rng), c3 = a(rng);
        Vec bump(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double t = g.time(i);
            bump(static_cast<Eigen::Index>(i)) = c1 * std::sin(t) + c2 * std::sin(2 * t) + c3 * std::sin(3 * t);
        }
        Profile p = exact_e1(g);
        p.values.col(0) += amplitude / bump.cwiseAbs().maxCoeff() * bump;
        return p;
    }
};

}  // namespace

TEST_CASE("EL residual at the Example 1 solution is second order") {
    const VariationalProblem p = example1().cov();
    double C[3];
    const std::size_t Ns[3] = {51, 101, 201};
    for (int k = 0; k < 3; ++k) {
        const TimeGrid g = make_grid(0.0, pi, Ns[k]);
        const double h = g.step();
        C[k] = interior_max(euler_lagrange_residual(p, exact_e1(g), g)) / (h * h);
    }
    CHECK(C[0] > 0.0);
    CHECK(C[1] == doctest::Approx(C[0]).epsilon(0.15));
    CHECK(C[2] == doctest::Approx(C[1]).epsilon(0.15));
}

TEST_CASE("EL residual of a line under F = ydot^2 vanishes") {
    const VariationalProblem p = free_particle(BoundarySpec::all_fixed(Vec::Zero(1), Vec::Ones(1)));
    const TimeGrid g = make_grid(0.0, 2.0, 21);
    const Profile r = euler_lagrange_residual(p, sample(g, [](double t) { return 0.3 - 1.2 * t; }), g);
    CHECK(r.values.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("EL residual of y = 0 in Example 1 is -2 cos t") {
    const VariationalProblem p = example1().cov();
    const TimeGrid g = make_grid(0.0, pi, 101);
    const Profile r = euler_lagrange_residual(p, Profile(101, 1), g);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(r.values(static_cast<Eigen::Index>(i), 0) == doctest::Approx(-2.0 * std::cos(g.time(i))));
}

TEST_CASE("cov_rhs with fixed ends") {
    const VariationalProblem p = example1().cov();
    const TimeGrid g = make_grid(0.0, pi, 101);
    const Profile rate = cov_rhs(p, Profile(101, 1), g, CovGains::uniform(1, 0.1));
    CHECK(rate.values(0, 0) == 0.0);
    CHECK(rate.values(100, 0) == 0.0);
    for (std::size_t i = 1; i + 1 < g.size(); ++i) CHECK(rate.values(static_cast<Eigen::Index>(i), 0) == doctest::Approx(0.2 * std::cos(g.time(i))));
}

TEST_CASE("cov_rhs at a discrete equilibrium is zero") {
    const VariationalProblem p = free_particle(BoundarySpec::all_free(1));
    const TimeGrid g = make_grid(0.0, 2.0, 15);
    const Profile rate = cov_rhs(p, sample(g, [](double) { return 0.7; }), g, CovGains::uniform(1, 1.0));
    CHECK(rate.values.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cov_rhs free ends follow F_ydot") {
    const VariationalProblem p = free_particle(BoundarySpec::all_free(1));
    const TimeGrid g = make_grid(0.0, 2.0, 11);
    const Profile rate = cov_rhs(p, sample(g, [](double t) { return 3.0 * t; }), g, CovGains::uniform(1, 0.5));
    CHECK(rate.values(0, 0) == doctest::Approx(0.5 * 6.0));
    CHECK(rate.values(10, 0) == doctest::Approx(-0.5 * 6.0));
}

TEST_CASE("functional_J") {
    const VariationalProblem fp = free_particle(BoundarySpec::all_fixed(Vec::Zero(1), Vec::Ones(1)));
    VariationalProblem p = fp;
    p.tf = 1.0;
    const TimeGrid g = make_grid(0.0, 1.0, 11);
    CHECK(std::abs(functional_J(p, sample(g, [](double t) { return t; }), g) - 1.0) < 1e-10);

    const VariationalProblem e1 = example1().cov();
    const TimeGrid g1 = make_grid(0.0, pi, 101);
    CHECK(functional_J(e1, Profile(101, 1), g1) == 0.0);
    // oracle: trapezoid at N = 10001 of the closed-form integrand
    const std::size_t M = 10001;
    double oracle = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const double t = pi * static_cast<double>(i) / static_cast<double>(M - 1);
        const double y = std::cos(t) + 2.0 * t / pi - 1.0, yd = -std::sin(t) + 2.0 / pi;
        const double w = (i == 0 || i == M - 1) ? 0.5 : 1.0;
        oracle += w * (yd * yd - 2.0 * y * std::cos(t)) * pi / static_cast<double>(M - 1);
    }
    // Plain trapezoid at N = 101 carries an h^2 quadrature error of about
    // h^2/12 * [F']_0^pi ~ 4e-4 here, so the check is on the order instead.
    const double e101 = std::abs(functional_J(e1, exact_e1(g1), g1) - oracle);
    const TimeGrid g2 = make_grid(0.0, pi, 201);
    const double e201 = std::abs(functional_J(e1, exact_e1(g2), g2) - oracle);
    CHECK(e101 <= 1e-3);
    CHECK(e101 / e201 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("rate is the scaled gradient of the discrete J at every interior node") {
    const VariationalProblem p = example1().cov();
    PerturbGen gen(4);
    for (int trial = 0; trial < 3; ++trial) {
        const TimeGrid g = make_grid(0.0, pi, 41);
        const Profile y = gen(g, 0.3);
        const double K = 0.1;
        const Profile rate = cov_rhs(p, y, g, CovGains::uniform(1, K));
        const Vec w = g.trapezoid_weights();
        for (std::size_t i = 1; i + 1 < g.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            const double hstep = 1e-5;
            Profile yp = y, ym = y;
            yp.values(r, 0) += hstep;
            ym.values(r, 0) -= hstep;
            const double grad = (functional_J(p, yp, g) - functional_J(p, ym, g)) / (2 * hstep);
            CHECK(rate.values(r, 0) == doctest::Approx(-K * grad / w(r)).epsilon(1e-5).scale(1e-3));
        }
    }
}

TEST_CASE("sign variant rates are exactly +-k or 0") {
    const VariationalProblem p = example1().cov();
    PerturbGen gen(8);
    const TimeGrid g = make_grid(0.0, pi, 51);
    const Profile rate = cov_rhs(p, gen(g, 0.5), g, CovGains::uniform(1, 0.25, CovVariant::SignFiniteTime, 0.0));
    for (Eigen::Index i = 0; i < rate.values.rows(); ++i) {
        const double v = rate.values(i, 0);
        CHECK((v == 0.25 || v == -0.25 || v == 0.0));
    }
    const Profile smooth = cov_rhs(p, gen(g, 0.5), g, CovGains::uniform(1, 0.25, CovVariant::SignFiniteTime, 1e-3));
    CHECK(smooth.values.cwiseAbs().maxCoeff() <= 0.25);
}

TEST_CASE("gain validation") {
    CHECK_THROWS_AS(CovGains::uniform(1, 0.0).validate(1), UsageError);
    CHECK_THROWS_AS(CovGains::uniform(2, 1.0).validate(1), DimensionError);
    CHECK_THROWS_AS(CovGains::uniform(1, 1.0, CovVariant::SignFiniteTime, -1.0).validate(1), UsageError);
}

TEST_CASE("non-finite partials name the node") {
    VariationalProblem p = example1().cov();
    p.F_y = [](const Vec& y, const Vec&, double) { return Vec(Vec::Constant(1, y(0) > 0.5 ? NAN : 0.0)); };
    const TimeGrid g = make_grid(0.0, pi, 11);
    Profile y(11, 1);
    y.values(4, 0) = 1.0;
    try {
        euler_lagrange_residual(p, y, g);
        FAIL("expected EvaluationError");
    } catch (const EvaluationError& e) {
        CHECK(std::string(e.what()).find("node 4") != std::string::npos);
    }
}

TEST_CASE("property: randomized flows descend and keep fixed ends") {
    const BenchmarkCase c = example1();
    PerturbGen gen(99);
    std::uniform_real_distribution<double> kd(0.05, 0.5);
    for (int trial = 0; trial < 5; ++trial) {
        const TimeGrid g = make_grid(0.0, pi, 31 + 10 * static_cast<std::size_t>(trial));
        const Profile y0 = gen(g, 1.0);
        EvolveOptions o;
        o.tau_max = 3.0;
        o.residual_tol = 0.0;
        o.rel_tol = 1e-9;
        o.abs_tol = 1e-12;
        const auto ev = evolve(c.cov(), y0, g, CovGains::uniform(1, kd(gen.rng)), o);
        CHECK(ev.stats.max_rise <= 1e-9);
        for (std::size_t k = 1; k < ev.diagnostics.size(); ++k) CHECK(ev.diagnostics[k].J <= ev.diagnostics[k - 1].J + 1e-9);
        const Eigen::Index last = ev.final_state.values.rows() - 1;
        CHECK(ev.final_state.values(0, 0) == y0.values(0, 0));
        CHECK(ev.final_state.values(last, 0) == y0.values(last, 0));
    }
}

TEST_CASE("property: perturbations raise the residual well above equilibrium") {
    const VariationalProblem p = example1().cov();
    PerturbGen gen(123);
    const TimeGrid g = make_grid(0.0, pi, 101);
    const double eq = interior_max(cov_rhs(p, exact_e1(g), g, CovGains::uniform(1, 0.1)));
    for (int trial = 0; trial < 20; ++trial) {
        const double pert = interior_max(cov_rhs(p, gen(g, 0.1), g, CovGains::uniform(1, 0.1)));
        CHECK(pert >= 10.0 * eq);
    }
}
