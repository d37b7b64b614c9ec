#include <cmath>
#include <random>

#include "doctest.h"
#include "vem/builtins.hpp"
#include "vem/errors.hpp"
#include "vem/integrator.hpp"

using namespace vem;

namespace {

FlowRhs linear(double lambda) {
    return [lambda](double, std::span<const double> y, std::span<double> out) {
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = lambda * y[i];
    };
}

// ydot = -y^2, y(0) = 1: y = 1 / (1 + t)
const FlowRhs riccati = [](double, std::span<const double> y, std::span<double> out) { out[0] = -y[0] * y[0]; };

// Non-autonomous: ydot = cos(t) - y, y(0) = 0: y = (sin t + cos t - e^-t) / 2
const FlowRhs forced = [](double t, std::span<const double> y, std::span<double> out) { out[0] = std::cos(t) - y[0]; };

double forced_exact(double t) { return 0.5 * (std::sin(t) + std::cos(t) - std::exp(-t)); }

template <typename Stepper>
double integrate(Stepper& st, std::vector<double> y, double T, double dtau, const StepTolerances& tol) {
    double tau = 0.0;
    while (tau < T - 1e-12) {
        const double h = std::min(dtau, T - tau);
        const StepResult r = st.step(y, tau, h, tol);
        tau += r.dtau;
        y = r.y;
        dtau = r.next_dtau;
    }
    return y[0];
}

// Stepping with tolerances loose enough that every trial of size h is accepted.
double fixed_implicit(const FlowRhs& f, double y0, double T, int steps) {
    ImplicitStepper st(f, 1);
    // huge rel_tol accepts every step; the small abs_tol keeps Newton tight
    const StepTolerances loose{1e6, 1e-9};
    std::vector<double> y{y0};
    const double h = T / steps;
    for (int k = 0; k < steps; ++k) {
        const StepResult r = st.step(y, k * h, h, loose);
        REQUIRE(r.dtau == h);
        y = r.y;
    }
    return y[0];
}

double fixed_rk(const FlowRhs& f, double y0, double T, int steps) {
    Rk45Stepper st(f);
    std::vector<double> y{y0};
    const double h = T / steps;
    for (int k = 0; k < steps; ++k) y = st.fixed_step(y, k * h, h);
    return y[0];
}

// Quadratic bowl in R^d with a chosen monitor, for the evolve loop.
class Bowl final : public FlowSystem {
public:
    Bowl(Vec scales, double sign = -1.0) : s_(std::move(scales)), sign_(sign) {}
    std::size_t dimension() const override { return static_cast<std::size_t>(s_.size()); }
    std::vector<bool> frozen() const override {
        std::vector<bool> f(dimension(), false);
        f[0] = true;
        return f;
    }
    void rate(std::span<const double> y, std::span<double> out) const override {
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = i == 0 ? 0.0 : sign_ * s_(static_cast<Eigen::Index>(i)) * y[i];
    }
    Monitor monitor(std::span<const double> y) const override {
        Monitor m;
        for (std::size_t i = 1; i < y.size(); ++i) m.J += 0.5 * s_(static_cast<Eigen::Index>(i)) * y[i] * y[i];
        m.monitored = m.J;
        double r = 0.0;
        for (std::size_t i = 1; i < y.size(); ++i) r = std::max(r, std::abs(y[i]));
        m.residual = r;
        return m;
    }

private:
    Vec s_;
    double sign_;
};

}  // namespace

TEST_CASE("rk45: exponential decay") {
    Rk45Stepper st(linear(-1.0));
    const double y = integrate(st, {1.0}, 1.0, 0.1, {1e-10, 1e-12});
    CHECK(std::abs(y - std::exp(-1.0)) <= 1e-6);
    CHECK(std::abs(step_rk45(linear(-1.0), std::vector<double>{1.0}, 0.0, 0.01, {}).y[0] - std::exp(-0.01)) < 1e-10);
}

TEST_CASE("rk45: zero flow grows the step") {
    Rk45Stepper st(linear(0.0));
    const StepResult r = st.step(std::vector<double>{2.5, -1.0}, 0.0, 0.1, {});
    CHECK(r.y == std::vector<double>{2.5, -1.0});
    CHECK(r.next_dtau > 0.1);
    CHECK(r.rejected == 0);
}

TEST_CASE("rk45: stiff decay with a loose step rejects and shrinks") {
    Rk45Stepper st(linear(-1000.0));
    const StepResult r = st.step(std::vector<double>{1.0}, 0.0, 0.5, {1e-6, 1e-8});
    CHECK(r.rejected > 0);
    CHECK(r.dtau * 1000.0 <= 3.5);
}

TEST_CASE("rk45: fifth order on fixed steps") {
    const double e1 = std::abs(fixed_rk(forced, 0.0, 2.0, 10) - forced_exact(2.0));
    const double e2 = std::abs(fixed_rk(forced, 0.0, 2.0, 20) - forced_exact(2.0));
    CHECK(std::log2(e1 / e2) > 4.5);
}

TEST_CASE("rk45: step underflow reports stiffness") {
    const FlowRhs blowup = [](double, std::span<const double> y, std::span<double> out) { out[0] = 1e30 * y[0] * y[0]; };
    Rk45Stepper st(blowup);
    CHECK_THROWS_AS(st.step(std::vector<double>{1.0}, 0.0, 1.0, {1e-12, 1e-14}), StiffnessError);
}

TEST_CASE("implicit: stiff decay stays stable") {
    ImplicitStepper st(linear(-1000.0), 1);
    std::vector<double> y{1.0};
    double tau = 0.0, dt = 0.01;
    while (tau < 0.1 - 1e-12) {
        const StepResult r = st.step(y, tau, std::min(dt, 0.1 - tau), {1e-6, 1e-8});
        tau += r.dtau;
        dt = r.next_dtau;
        y = r.y;
    }
    CHECK(std::abs(y[0]) <= 1e-4);
    // a single step of 0.01 is stable on its own
    const StepResult one = step_implicit(linear(-1000.0), std::vector<double>{1.0}, 0.0, 0.01, {1e6, 1e6});
    CHECK(std::abs(one.y[0]) < 1.0);
}

TEST_CASE("implicit: zero flow is the identity") {
    ImplicitStepper st(linear(0.0), 3);
    const StepResult r = st.step(std::vector<double>{1.0, 2.0, 3.0}, 0.0, 0.5, {});
    CHECK(r.y == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("implicit: fourth order on fixed steps") {
    // coarse steps keep the error well above the Newton stopping level
    const double e1 = std::abs(fixed_implicit(riccati, 1.0, 2.0, 5) - 1.0 / 3.0);
    const double e2 = std::abs(fixed_implicit(riccati, 1.0, 2.0, 10) - 1.0 / 3.0);
    const double e3 = std::abs(fixed_implicit(riccati, 1.0, 2.0, 20) - 1.0 / 3.0);
    CHECK(std::log2(e1 / e2) > 3.5);
    CHECK(std::log2(e2 / e3) > 3.5);
    const double f1 = std::abs(fixed_implicit(forced, 0.0, 2.0, 10) - forced_exact(2.0));
    const double f2 = std::abs(fixed_implicit(forced, 0.0, 2.0, 20) - forced_exact(2.0));
    CHECK(std::log2(f1 / f2) > 3.5);
}

TEST_CASE("implicit: adaptive accuracy") {
    ImplicitStepper st(forced, 1);
    CHECK(std::abs(integrate(st, {0.0}, 3.0, 0.1, {1e-9, 1e-11}) - forced_exact(3.0)) < 1e-7);
}

TEST_CASE("implicit: frozen components never move") {
    const FlowRhs f = [](double, std::span<const double> y, std::span<double> out) {
        out[0] = 5.0;
        out[1] = -y[1] + y[0];
    };
    ImplicitStepper st(f, 2, {true, false});
    const StepResult r = st.step(std::vector<double>{0.125, 1.0}, 0.0, 0.3, {});
    CHECK(r.y[0] == 0.125);
    CHECK(st.jacobian_evaluations() >= 1);
}

TEST_CASE("evolve: converges, keeps frozen entries and records diagnostics") {
    const Bowl bowl(Vec::LinSpaced(6, 1.0, 50.0));
    std::vector<double> y0{3.0, 1.0, -2.0, 0.5, 4.0, -1.0};
    for (Method m : {Method::ExplicitRK45, Method::ImplicitStiff}) {
        EvolveOptions o;
        o.method = m;
        o.tau_max = 100.0;
        o.residual_tol = 1e-6;
        o.snapshot_every = 0.5;
        const auto ev = evolve_system(bowl, y0, o);
        CHECK(ev.status == Termination::Converged);
        CHECK(ev.final_state[0] == 3.0);
        for (std::size_t k = 1; k < ev.diagnostics.size(); ++k) {
            CHECK(ev.diagnostics[k].tau > ev.diagnostics[k - 1].tau);
            CHECK(ev.diagnostics[k].J <= ev.diagnostics[k - 1].J + 1e-9);
            CHECK(ev.diagnostics[k].descent_ok);
        }
        CHECK(ev.snapshots.size() == ev.diagnostics.size());
        CHECK(ev.diagnostics.front().tau == 0.0);
    }
}

TEST_CASE("evolve: tau_max and max_steps") {
    const Bowl bowl(Vec::Constant(3, 0.01));
    EvolveOptions o;
    o.tau_max = 2.0;
    const auto ev = evolve_system(bowl, {0.0, 1.0, 1.0}, o);
    CHECK(ev.status == Termination::TauMax);
    CHECK(ev.diagnostics.back().tau == 2.0);
    o.max_steps = 3;
    o.tau_max = 1000.0;
    CHECK(evolve_system(bowl, {0.0, 1.0, 1.0}, o).status == Termination::MaxSteps);
}

TEST_CASE("evolve: a rising functional aborts") {
    const Bowl uphill(Vec::Constant(3, 1.0), +1.0);
    EvolveOptions o;
    o.tau_max = 5.0;
    CHECK_THROWS_AS(evolve_system(uphill, {0.0, 1.0, 1.0}, o), DescentViolation);
    o.descent_slack = 1e9;
    const auto ev = evolve_system(uphill, {0.0, 1.0, 1.0}, o);
    CHECK(ev.stats.max_rise > 0.0);
}

TEST_CASE("evolve: option validation") {
    const Bowl bowl(Vec::Constant(2, 1.0));
    EvolveOptions o;
    o.rel_tol = 0.0;
    CHECK_THROWS_AS(evolve_system(bowl, {0.0, 1.0}, o), UsageError);
    o = EvolveOptions{};
    o.tau_max = -1.0;
    CHECK_THROWS_AS(evolve_system(bowl, {0.0, 1.0}, o), UsageError);
    o = EvolveOptions{};
    CHECK_THROWS_AS(evolve_system(bowl, {0.0, 1.0, 2.0}, o), DimensionError);
}

TEST_CASE("evolve: Example 2 flow is deterministic and self-convergent") {
    const BenchmarkCase c = example2();
    const TimeGrid g = c.grid(41);
    EvolveOptions o;
    o.method = Method::ImplicitStiff;
    o.tau_max = 20.0;
    o.residual_tol = 0.0;
    const auto a = evolve(c.ocp(), c.ocp_guess(g), g, c.zs_gains(c.default_K(), 1.0), o);
    const auto b = evolve(c.ocp(), c.ocp_guess(g), g, c.zs_gains(c.default_K(), 1.0), o);
    CHECK(a.final_state.u.values == b.final_state.u.values);
    CHECK(a.final_state.lam.values == b.final_state.lam.values);
    CHECK(a.diagnostics.size() == b.diagnostics.size());
    for (std::size_t k = 0; k < a.diagnostics.size(); ++k) CHECK(a.diagnostics[k].J1 == b.diagnostics[k].J1);

    o.rel_tol /= 10.0;
    o.abs_tol /= 10.0;
    const auto t = evolve(c.ocp(), c.ocp_guess(g), g, c.zs_gains(c.default_K(), 1.0), o);
    const double change = std::max({(t.final_state.x.values - a.final_state.x.values).cwiseAbs().maxCoeff(),
                                    (t.final_state.lam.values - a.final_state.lam.values).cwiseAbs().maxCoeff(),
                                    (t.final_state.u.values - a.final_state.u.values).cwiseAbs().maxCoeff()});
    CHECK(change < a.diagnostics.back().residual_norm);
}

TEST_CASE("evolve: Example 2 has 205 integrated values and needs the stiff method") {
    const BenchmarkCase c = example2();
    const TimeGrid g = c.grid(41);
    const ZsSystem sys(c.ocp(), g, c.zs_gains(c.default_K(), 1.0));
    CHECK(sys.dimension() == 205);
    EvolveOptions o;
    o.method = Method::ImplicitStiff;
    o.tau_max = 10.0;
    o.residual_tol = 0.0;
    const auto ev = evolve(c.ocp(), c.ocp_guess(g), g, c.zs_gains(c.default_K(), 1.0), o);
    CHECK(ev.stats.accepted < 500);
    CHECK(ev.stats.max_rise <= 1e-9);
}

TEST_CASE("evolve: adaptive sign flow is smoothed and still descends") {
    const BenchmarkCase c = example1();
    const TimeGrid g = c.grid(51);
    EvolveOptions o;
    o.tau_max = 3.0;
    o.residual_tol = 0.0;
    o.method = Method::ImplicitStiff;
    o.max_steps = 20000;
    const auto ev = evolve(c.cov(), c.cov_guess(g), g, CovGains::uniform(1, 0.1, CovVariant::SignFiniteTime, 0.0), o);
    CHECK(ev.status == Termination::TauMax);
    CHECK(ev.stats.max_rise <= 1e-9);
    CHECK(ev.diagnostics.back().J < ev.diagnostics.front().J);
}

TEST_CASE("evolve: fixed-step sign flow") {
    const BenchmarkCase c = example1();
    const TimeGrid g = c.grid(51);
    EvolveOptions o;
    o.fixed_step = 0.01;
    o.tau_max = 1.0;
    o.residual_tol = 0.0;
    o.descent_slack = 1e3;
    const auto ev = evolve(c.cov(), c.cov_guess(g), g, CovGains::uniform(1, 0.1, CovVariant::SignFiniteTime, 0.0), o);
    CHECK(ev.stats.accepted == 100);
    CHECK(ev.final_state.values(0, 0) == 0.0);
}
