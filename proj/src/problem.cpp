#include "vem/problem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vem/errors.hpp"

namespace vem {

namespace {

std::string vec_str(const Vec& v) {
    std::ostringstream s;
    s << "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) s << (i ? ", " : "") << v(i);
    s << "]";
    return s.str();
}

void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw EvaluationError("non-finite value of " + what);
}

void require_finite(const Mat& v, const std::string& what) {
    if (!v.allFinite()) throw EvaluationError("non-finite value of " + what);
}

void require_size(const Vec& v, std::size_t n, const char* what) {
    if (static_cast<std::size_t>(v.size()) != n) {
        std::ostringstream msg;
        msg << what << " has size " << v.size() << ", expected " << n;
        throw DimensionError(msg.str());
    }
}

// Step used for second partials built from finite-difference first partials.
double fd_outer_step(double value) { return std::max(1e-4, 1e-4 * std::abs(value)); }

Mat central_jacobian(const VectorFn& fn, const Vec& at, double (*step)(double)) {
    Vec x = at;
    Mat jac;
    for (Eigen::Index j = 0; j < at.size(); ++j) {
        const double h = step(at(j));
        x(j) = at(j) + h;
        const Vec plus = fn(x);
        x(j) = at(j) - h;
        const Vec minus = fn(x);
        x(j) = at(j);
        if (j == 0) jac.resize(plus.size(), at.size());
        jac.col(j) = (plus - minus) / (2.0 * h);
    }
    return jac;
}

double central_scalar(const std::function<double(double)>& fn, double at, double (*step)(double)) {
    const double h = step(at);
    return (fn(at + h) - fn(at - h)) / (2.0 * h);
}

Vec central_scalar_vec(const std::function<Vec(double)>& fn, double at, double (*step)(double)) {
    const double h = step(at);
    return (fn(at + h) - fn(at - h)) / (2.0 * h);
}

struct Comparison {
    PartialsReport& report;
    double rel_tol;

    void add(const std::string& name, const Mat& analytic, const Mat& reference,
             std::size_t sample) {
        if (analytic.rows() != reference.rows() || analytic.cols() != reference.cols()) {
            std::ostringstream msg;
            msg << name << " is " << analytic.rows() << "x" << analytic.cols()
                << ", finite differences give " << reference.rows() << "x" << reference.cols();
            throw DimensionError(msg.str());
        }
        PartialsReport::Entry* entry = nullptr;
        for (auto& e : report.entries) {
            if (e.name == name) entry = &e;
        }
        if (!entry) {
            report.entries.push_back({name, 0.0, {}});
            entry = &report.entries.back();
        }
        for (Eigen::Index r = 0; r < analytic.rows(); ++r) {
            for (Eigen::Index c = 0; c < analytic.cols(); ++c) {
                const double ref = reference(r, c);
                const double err = std::abs(analytic(r, c) - ref) / std::max(1.0, std::abs(ref));
                if (entry->worst.empty() || err > entry->max_rel_error) {
                    entry->max_rel_error = std::max(entry->max_rel_error, err);
                    std::ostringstream where;
                    where << name << "[" << r;
                    if (analytic.cols() > 1) where << "," << c;
                    where << "] at sample " << sample;
                    entry->worst = where.str();
                }
            }
        }
    }

    void add(const std::string& name, double analytic, double reference, std::size_t sample) {
        add(name, Mat::Constant(1, 1, analytic), Mat::Constant(1, 1, reference), sample);
    }
};

void finish(PartialsReport& report) {
    report.passed = true;
    for (const auto& e : report.entries) {
        if (!(e.max_rel_error <= report.rel_tol)) report.passed = false;
    }
}

}  // namespace

BoundarySpec BoundarySpec::all_fixed(const Vec& at_t0, const Vec& at_tf) {
    BoundarySpec b;
    for (Eigen::Index i = 0; i < at_t0.size(); ++i) b.initial.push_back(EndCondition::Fixed(at_t0(i)));
    for (Eigen::Index i = 0; i < at_tf.size(); ++i) b.terminal.push_back(EndCondition::Fixed(at_tf(i)));
    return b;
}

BoundarySpec BoundarySpec::all_free(std::size_t n) {
    BoundarySpec b;
    b.initial.assign(n, EndCondition::Free());
    b.terminal.assign(n, EndCondition::Free());
    return b;
}

void BoundarySpec::validate(std::size_t n) const {
    if (initial.size() != n || terminal.size() != n) {
        std::ostringstream msg;
        msg << "boundary spec has " << initial.size() << "/" << terminal.size()
            << " components, problem has " << n;
        throw DimensionError(msg.str());
    }
    for (const auto* side : {&initial, &terminal}) {
        for (const auto& c : *side) {
            if (c.fixed && !std::isfinite(c.value)) {
                throw UsageError("boundary spec holds a non-finite fixed value");
            }
        }
    }
}

void VariationalProblem::validate() const {
    if (n == 0) throw DimensionError("variational problem needs n >= 1");
    if (!F || !F_y || !F_ydot) throw UsageError("variational problem needs F, F_y and F_ydot");
    if (!(tf > t0)) throw UsageError("variational problem needs tf > t0");
    boundary.validate(n);
}

void OcpProblem::validate() const {
    if (n == 0 || m == 0) throw DimensionError("OCP needs n >= 1 and m >= 1");
    require_size(x0, n, "x0");
    if (terminal_state.size() != n) {
        throw DimensionError("terminal_state has " + std::to_string(terminal_state.size()) +
                             " entries, expected " + std::to_string(n));
    }
    if (!f || !L || !phi) throw UsageError("OCP needs f, L and phi");
    if (!d.f_x || !d.f_u || !d.f_t || !d.L_x || !d.L_u || !d.L_t || !d.phi_x || !d.phi_tf) {
        throw UsageError("OCP needs every first partial (see finite_difference_bundle)");
    }
    if (!(terminal_time.value > t0)) throw UsageError("OCP terminal time must exceed t0");
    for (const auto& c : terminal_state) {
        if (c.fixed && !std::isfinite(c.value)) throw UsageError("non-finite terminal state");
    }
}

bool OcpProblem::any_terminal_fixed() const {
    return std::any_of(terminal_state.begin(), terminal_state.end(),
                       [](const EndCondition& c) { return c.fixed; });
}

bool OcpProblem::all_terminal_fixed() const {
    return std::all_of(terminal_state.begin(), terminal_state.end(),
                       [](const EndCondition& c) { return c.fixed; });
}

double fd_step(double value) { return std::max(1e-6, 1e-7 * std::abs(value)); }

Vec fd_gradient(const ScalarFn& fn, const Vec& at) {
    Vec x = at;
    Vec g(at.size());
    for (Eigen::Index j = 0; j < at.size(); ++j) {
        const double h = fd_step(at(j));
        x(j) = at(j) + h;
        const double plus = fn(x);
        x(j) = at(j) - h;
        const double minus = fn(x);
        x(j) = at(j);
        if (!std::isfinite(plus) || !std::isfinite(minus)) {
            throw EvaluationError("non-finite function value near " + vec_str(at));
        }
        g(j) = (plus - minus) / (2.0 * h);
    }
    return g;
}

Mat fd_jacobian(const VectorFn& fn, const Vec& at) {
    Mat jac = central_jacobian(fn, at, &fd_step);
    if (!jac.allFinite()) throw EvaluationError("non-finite function value near " + vec_str(at));
    return jac;
}

OcpPartials finite_difference_bundle(const DynamicsFn& f, const RunningCostFn& L,
                                     const TerminalCostFn& phi, std::size_t n, std::size_t m) {
    OcpPartials d;
    d.f_x = [f](const Vec& x, const Vec& u, double t) {
        return fd_jacobian([&](const Vec& z) { return f(z, u, t); }, x);
    };
    d.f_u = [f](const Vec& x, const Vec& u, double t) {
        return fd_jacobian([&](const Vec& z) { return f(x, z, t); }, u);
    };
    d.f_t = [f](const Vec& x, const Vec& u, double t) {
        return central_scalar_vec([&](double s) { return f(x, u, s); }, t, &fd_step);
    };
    d.L_x = [L](const Vec& x, const Vec& u, double t) {
        return fd_gradient([&](const Vec& z) { return L(z, u, t); }, x);
    };
    d.L_u = [L](const Vec& x, const Vec& u, double t) {
        return fd_gradient([&](const Vec& z) { return L(x, z, t); }, u);
    };
    d.L_t = [L](const Vec& x, const Vec& u, double t) {
        return central_scalar([&](double s) { return L(x, u, s); }, t, &fd_step);
    };
    d.phi_x = [phi](const Vec& xf, double tf) {
        return fd_gradient([&](const Vec& z) { return phi(z, tf); }, xf);
    };
    d.phi_tf = [phi](const Vec& xf, double tf) {
        return central_scalar([&](double s) { return phi(xf, s); }, tf, &fd_step);
    };

    // Second blocks by differencing the first partials above with a wider step.
    auto H_x = [d](const Vec& x, const Vec& lam, const Vec& u, double t) -> Vec {
        return d.L_x(x, u, t) + d.f_x(x, u, t).transpose() * lam;
    };
    auto H_u = [d](const Vec& x, const Vec& lam, const Vec& u, double t) -> Vec {
        return d.L_u(x, u, t) + d.f_u(x, u, t).transpose() * lam;
    };
    d.H_xx = [H_x](const Vec& x, const Vec& lam, const Vec& u, double t) -> Mat {
        Mat a = central_jacobian([&](const Vec& z) { return H_x(z, lam, u, t); }, x, &fd_outer_step);
        return 0.5 * (a + a.transpose());
    };
    d.H_xu = [H_x](const Vec& x, const Vec& lam, const Vec& u, double t) -> Mat {
        return central_jacobian([&](const Vec& z) { return H_x(x, lam, z, t); }, u, &fd_outer_step);
    };
    d.H_uu = [H_u](const Vec& x, const Vec& lam, const Vec& u, double t) -> Mat {
        Mat a = central_jacobian([&](const Vec& z) { return H_u(x, lam, z, t); }, u, &fd_outer_step);
        return 0.5 * (a + a.transpose());
    };
    d.H_xt = [H_x](const Vec& x, const Vec& lam, const Vec& u, double t) -> Vec {
        return central_scalar_vec([&](double s) { return H_x(x, lam, u, s); }, t, &fd_outer_step);
    };
    d.H_ut = [H_u](const Vec& x, const Vec& lam, const Vec& u, double t) -> Vec {
        return central_scalar_vec([&](double s) { return H_u(x, lam, u, s); }, t, &fd_outer_step);
    };
    auto phi_x = d.phi_x;
    auto phi_tf = d.phi_tf;
    d.phi_xtf = [phi_x](const Vec& xf, double tf) -> Vec {
        return central_scalar_vec([&](double s) { return phi_x(xf, s); }, tf, &fd_outer_step);
    };
    d.phi_tftf = [phi_tf](const Vec& xf, double tf) {
        return central_scalar([&](double s) { return phi_tf(xf, s); }, tf, &fd_outer_step);
    };
    (void)n;
    (void)m;
    return d;
}

std::pair<IntegrandGradFn, IntegrandGradFn> finite_difference_bundle(const IntegrandFn& F,
                                                                     std::size_t n) {
    (void)n;
    IntegrandGradFn F_y = [F](const Vec& y, const Vec& ydot, double t) {
        return fd_gradient([&](const Vec& z) { return F(z, ydot, t); }, y);
    };
    IntegrandGradFn F_ydot = [F](const Vec& y, const Vec& ydot, double t) {
        return fd_gradient([&](const Vec& z) { return F(y, z, t); }, ydot);
    };
    return {F_y, F_ydot};
}

const PartialsReport::Entry* PartialsReport::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

std::string PartialsReport::failing() const {
    const Entry* worst = nullptr;
    for (const auto& e : entries) {
        if (e.max_rel_error > rel_tol && (!worst || e.max_rel_error > worst->max_rel_error)) {
            worst = &e;
        }
    }
    return worst ? worst->worst : std::string{};
}

PartialsReport verify_partials(const VariationalProblem& p,
                               const std::vector<VariationalSample>& samples, double rel_tol) {
    PartialsReport report;
    report.rel_tol = rel_tol;
    Comparison cmp{report, rel_tol};
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& at = samples[s];
        const std::string where = "sample " + std::to_string(s) + " (t=" + std::to_string(at.t) + ")";
        require_finite(p.F(at.y, at.ydot, at.t), "F at " + where);
        const Vec Fy = p.F_y(at.y, at.ydot, at.t);
        const Vec Fyd = p.F_ydot(at.y, at.ydot, at.t);
        require_finite(Fy, "F_y at " + where);
        require_finite(Fyd, "F_ydot at " + where);
        Vec ref_y, ref_yd;
        try {
            ref_y = fd_gradient([&](const Vec& z) { return p.F(z, at.ydot, at.t); }, at.y);
            ref_yd = fd_gradient([&](const Vec& z) { return p.F(at.y, z, at.t); }, at.ydot);
        } catch (const EvaluationError& e) {
            throw EvaluationError(std::string(e.what()) + " at " + where);
        }
        cmp.add("F_y", Fy, ref_y, s);
        cmp.add("F_ydot", Fyd, ref_yd, s);
    }
    finish(report);
    return report;
}

PartialsReport verify_partials(const OcpProblem& p, const std::vector<OcpSample>& samples,
                               double rel_tol) {
    PartialsReport report;
    report.rel_tol = rel_tol;
    Comparison cmp{report, rel_tol};
    const auto& d = p.d;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& at = samples[s];
        const Vec& x = at.x;
        const Vec& u = at.u;
        const double t = at.t;
        const Vec lam = at.lam.size() == static_cast<Eigen::Index>(p.n) ? at.lam : Vec::Ones(p.n);
        const std::string where = "sample " + std::to_string(s) + " (t=" + std::to_string(t) + ")";
        try {
            require_finite(p.f(x, u, t), "f at " + where);
            require_finite(p.L(x, u, t), "L at " + where);
            require_finite(p.phi(x, t), "phi at " + where);

            cmp.add("f_x", d.f_x(x, u, t), fd_jacobian([&](const Vec& z) { return p.f(z, u, t); }, x), s);
            cmp.add("f_u", d.f_u(x, u, t), fd_jacobian([&](const Vec& z) { return p.f(x, z, t); }, u), s);
            cmp.add("f_t", d.f_t(x, u, t),
                    central_scalar_vec([&](double r) { return p.f(x, u, r); }, t, &fd_step), s);
            cmp.add("L_x", d.L_x(x, u, t), fd_gradient([&](const Vec& z) { return p.L(z, u, t); }, x), s);
            cmp.add("L_u", d.L_u(x, u, t), fd_gradient([&](const Vec& z) { return p.L(x, z, t); }, u), s);
            cmp.add("L_t", d.L_t(x, u, t),
                    central_scalar([&](double r) { return p.L(x, u, r); }, t, &fd_step), s);
            cmp.add("phi_x", d.phi_x(x, t), fd_gradient([&](const Vec& z) { return p.phi(z, t); }, x), s);
            cmp.add("phi_tf", d.phi_tf(x, t),
                    central_scalar([&](double r) { return p.phi(x, r); }, t, &fd_step), s);

            // Optional blocks are checked against differences of the first partials.
            auto H_x = [&](const Vec& xx, const Vec& uu, double tt) -> Vec {
                return d.L_x(xx, uu, tt) + d.f_x(xx, uu, tt).transpose() * lam;
            };
            auto H_u = [&](const Vec& xx, const Vec& uu, double tt) -> Vec {
                return d.L_u(xx, uu, tt) + d.f_u(xx, uu, tt).transpose() * lam;
            };
            if (d.H_xx) cmp.add("H_xx", d.H_xx(x, lam, u, t), fd_jacobian([&](const Vec& z) { return H_x(z, u, t); }, x), s);
            if (d.H_xu) cmp.add("H_xu", d.H_xu(x, lam, u, t), fd_jacobian([&](const Vec& z) { return H_x(x, z, t); }, u), s);
            if (d.H_uu) cmp.add("H_uu", d.H_uu(x, lam, u, t), fd_jacobian([&](const Vec& z) { return H_u(x, z, t); }, u), s);
            if (d.H_xt) {
                cmp.add("H_xt", d.H_xt(x, lam, u, t),
                        central_scalar_vec([&](double r) { return H_x(x, u, r); }, t, &fd_step), s);
            }
            if (d.H_ut) {
                cmp.add("H_ut", d.H_ut(x, lam, u, t),
                        central_scalar_vec([&](double r) { return H_u(x, u, r); }, t, &fd_step), s);
            }
            if (d.phi_xtf) {
                cmp.add("phi_xtf", d.phi_xtf(x, t),
                        central_scalar_vec([&](double r) { return d.phi_x(x, r); }, t, &fd_step), s);
            }
            if (d.phi_tftf) {
                cmp.add("phi_tftf", d.phi_tftf(x, t),
                        central_scalar([&](double r) { return d.phi_tf(x, r); }, t, &fd_step), s);
            }
        } catch (const EvaluationError& e) {
            const std::string what = e.what();
            if (what.find("sample") != std::string::npos) throw;
            throw EvaluationError(what + " at " + where);
        }
    }
    finish(report);
    return report;
}

}  // namespace vem
