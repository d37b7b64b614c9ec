#include "vem/zs_flow.hpp"

#include <cmath>
#include <sstream>

#include "vem/errors.hpp"

namespace vem {

namespace {

// Interior rows are -2K times the weight-normalized gradient (1/w_i) dJ1/dy_i,
// which is twice the half-gradient r, hence 4. End rows take the same factor.
constexpr double kRateScale = 4.0;

double outer_step(double value) { return std::max(1e-6, 1e-7 * std::abs(value)); }

Vec hx_of(const OcpProblem& p, const Vec& x, const Vec& lam, const Vec& u, double t) {
    return p.d.L_x(x, u, t) + p.d.f_x(x, u, t).transpose() * lam;
}

Vec hu_of(const OcpProblem& p, const Vec& x, const Vec& lam, const Vec& u, double t) {
    return p.d.L_u(x, u, t) + p.d.f_u(x, u, t).transpose() * lam;
}

template <typename Fn>
Mat jac_fd(Fn&& fn, const Vec& at) {
    Vec z = at;
    Mat out;
    for (Eigen::Index j = 0; j < at.size(); ++j) {
        const double h = outer_step(at(j));
        z(j) = at(j) + h;
        const Vec plus = fn(z);
        z(j) = at(j) - h;
        const Vec minus = fn(z);
        z(j) = at(j);
        if (j == 0) out.resize(plus.size(), at.size());
        out.col(j) = (plus - minus) / (2.0 * h);
    }
    return out;
}

template <typename Fn>
Vec time_fd(Fn&& fn, double t) {
    const double h = outer_step(t);
    return (fn(t + h) - fn(t - h)) / (2.0 * h);
}

void check_dims(const OcpProblem& p, const FlowState& s, const TimeGrid& grid) {
    const std::size_t N = grid.size();
    auto check = [&](const Profile& prof, std::size_t dim, const char* what) {
        if (prof.nodes() != N || prof.dim() != dim) {
            std::ostringstream msg;
            msg << what << " profile is " << prof.nodes() << "x" << prof.dim() << ", expected "
                << N << "x" << dim;
            throw DimensionError(msg.str());
        }
    };
    check(s.x, p.n, "x");
    check(s.lam, p.n, "lam");
    check(s.u, p.m, "u");
    if (p.terminal_time.free && !s.tf) throw UsageError("free terminal time but state has no tf");
}

// Derivative profiles, bundles and optimality vectors at every node.
struct NodeTable {
    TimeGrid grid;
    Mat xd, ld, ud;
    std::vector<HamiltonianBundle> b;
    Mat v;  // rows = nodes, 2n + m columns
    // Interval defects (x_{i+1} - x_i)/h - (f_i + f_{i+1})/2 and
    // (lam_{i+1} - lam_i)/h + (H_x,i + H_x,i+1)/2, rows = intervals.
    Mat a, c;

    explicit NodeTable(const TimeGrid& g) : grid(g) {}

    Vec ydot(Eigen::Index i) const {
        Vec y(xd.cols() + ld.cols() + ud.cols());
        y << xd.row(i).transpose(), ld.row(i).transpose(), ud.row(i).transpose();
        return y;
    }
};

// First-order fields only: enough for J1.
struct FirstOrder {
    double H;
    Vec f;
    Vec H_x;
    Vec H_u;
};

FirstOrder first_order(const OcpProblem& p, const Vec& x, const Vec& lam, const Vec& u, double t) {
    FirstOrder o;
    o.f = p.f(x, u, t);
    o.H = p.L(x, u, t) + lam.dot(o.f);
    o.H_x = hx_of(p, x, lam, u, t);
    o.H_u = hu_of(p, x, lam, u, t);
    if (!std::isfinite(o.H) || !o.f.allFinite() || !o.H_x.allFinite() || !o.H_u.allFinite()) {
        throw EvaluationError("non-finite Hamiltonian");
    }
    return o;
}

std::string node_context(std::size_t i, double t) {
    std::ostringstream s;
    s << "node " << i << " (t=" << t << ")";
    return s.str();
}

NodeTable tabulate(const OcpProblem& p, const FlowState& s, const TimeGrid& base, bool with_bundles) {
    NodeTable tab(grid_for(s, base));
    check_dims(p, s, tab.grid);
    const double h = tab.grid.step();
    detail::diff1(h, s.x.values, tab.xd);
    detail::diff1(h, s.lam.values, tab.ld);
    detail::diff1(h, s.u.values, tab.ud);
    const std::size_t N = tab.grid.size();
    const Eigen::Index n = static_cast<Eigen::Index>(p.n);
    const Eigen::Index m = static_cast<Eigen::Index>(p.m);
    tab.v.resize(static_cast<Eigen::Index>(N), 2 * n + m);
    Mat f(static_cast<Eigen::Index>(N), n), hx(static_cast<Eigen::Index>(N), n);
    if (with_bundles) tab.b.reserve(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const double t = tab.grid.time(i);
        const Vec x = s.x.values.row(r).transpose();
        const Vec lam = s.lam.values.row(r).transpose();
        const Vec u = s.u.values.row(r).transpose();
        try {
            if (with_bundles) {
                tab.b.push_back(hamiltonian_bundle(p, x, lam, u, t));
                const HamiltonianBundle& b = tab.b.back();
                tab.v.row(r) =
                    optimality_vector(b, tab.xd.row(r).transpose(), tab.ld.row(r).transpose()).transpose();
                f.row(r) = b.f.transpose();
                hx.row(r) = b.H_x.transpose();
            } else {
                const FirstOrder o = first_order(p, x, lam, u, t);
                tab.v.row(r).segment(0, n) = (o.H_x + tab.ld.row(r).transpose()).transpose();
                tab.v.row(r).segment(n, n) = (o.f - tab.xd.row(r).transpose()).transpose();
                tab.v.row(r).segment(2 * n, m) = o.H_u.transpose();
                f.row(r) = o.f.transpose();
                hx.row(r) = o.H_x.transpose();
            }
        } catch (const EvaluationError& e) {
            throw EvaluationError(node_context(i, t) + ": " + e.what());
        }
    }
    const Eigen::Index I = static_cast<Eigen::Index>(N) - 1;
    tab.a = (s.x.values.bottomRows(I) - s.x.values.topRows(I)) / h -
            0.5 * (f.topRows(I) + f.bottomRows(I));
    tab.c = (s.lam.values.bottomRows(I) - s.lam.values.topRows(I)) / h +
            0.5 * (hx.topRows(I) + hx.bottomRows(I));
    return tab;
}

// u block of r: H_ux v_x + f_u' v_lam + H_uu v_u (no derivative terms).
Vec r_u(const HamiltonianBundle& b, const Vec& v) {
    const Eigen::Index n = static_cast<Eigen::Index>(b.n());
    const Eigen::Index m = static_cast<Eigen::Index>(b.m());
    return b.H_xu.transpose() * v.segment(0, n) + b.f_u.transpose() * v.segment(n, n) +
           b.H_uu * v.segment(2 * n, m);
}

// Half the nodal J1 gradient divided by the node weight h: H_yy applied to
// the optimality vector averaged over the two adjacent intervals, minus the
// difference quotient of the interval defects.
Vec interior_r(const NodeTable& tab, Eigen::Index i) {
    const HamiltonianBundle& b = tab.b[static_cast<std::size_t>(i)];
    const Eigen::Index n = static_cast<Eigen::Index>(b.n());
    const Eigen::Index m = static_cast<Eigen::Index>(b.m());
    const double h = tab.grid.step();
    Vec vbar(2 * n + m);
    vbar << 0.5 * (tab.c.row(i - 1) + tab.c.row(i)).transpose(),
        -0.5 * (tab.a.row(i - 1) + tab.a.row(i)).transpose(), tab.v.row(i).tail(m).transpose();
    Vec r = assemble_H_yy(b) * vbar;
    r.head(n) -= ((tab.a.row(i) - tab.a.row(i - 1)) / h).transpose();
    r.segment(n, n) -= ((tab.c.row(i) - tab.c.row(i - 1)) / h).transpose();
    return r;
}

Vec interior_rate(const NodeTable& tab, const ZsGains& g, Eigen::Index i) {
    return -kRateScale * g.K.cwiseProduct(interior_r(tab, i));
}

Vec initial_rate(const NodeTable& tab, const ZsGains& g) {
    const HamiltonianBundle& b = tab.b.front();
    const Eigen::Index n = static_cast<Eigen::Index>(b.n());
    const Eigen::Index m = static_cast<Eigen::Index>(b.m());
    Vec rate = Vec::Zero(2 * n + m);
    // x(t0) is prescribed. The u row uses the descent sign at both ends.
    rate.segment(n, n) = kRateScale * g.K.segment(n, n).cwiseProduct(tab.v.row(0).segment(0, n).transpose());
    rate.segment(2 * n, m) =
        -kRateScale * g.K.segment(2 * n, m).cwiseProduct(r_u(b, tab.v.row(0).transpose()));
    return rate;
}

Vec terminal_rate(const OcpProblem& p, const FlowState& s, const NodeTable& tab, const ZsGains& g) {
    const Eigen::Index last = static_cast<Eigen::Index>(tab.grid.size()) - 1;
    const HamiltonianBundle& b = tab.b.back();
    const Eigen::Index n = static_cast<Eigen::Index>(p.n);
    const Eigen::Index m = static_cast<Eigen::Index>(p.m);
    const Vec xdot = tab.xd.row(last).transpose();
    const Vec lamdot = tab.ld.row(last).transpose();
    const Vec state_defect = xdot - b.f;       // xdot - H_lam
    const Vec costate_defect = lamdot + b.H_x;  // lamdot + H_x
    Vec rate = Vec::Zero(2 * n + m);

    if (!p.terminal_time.free) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (p.terminal_state[static_cast<std::size_t>(j)].fixed) {
                rate(n + j) = -kRateScale * g.K(n + j) * costate_defect(j);
            } else {
                rate(j) = -kRateScale * g.K(j) * state_defect(j);
            }
        }
        rate.segment(2 * n, m) =
            -kRateScale * g.K.segment(2 * n, m).cwiseProduct(r_u(b, tab.v.row(last).transpose()));
        return rate;
    }

    const double tf = tab.grid.tf();
    const Vec xf = s.x.values.row(last).transpose();
    const double c = b.H + p.d.phi_tf(xf, tf);
    Vec phi_xtf;
    if (p.d.phi_xtf) {
        phi_xtf = p.d.phi_xtf(xf, tf);
    } else {
        phi_xtf = time_fd([&](double r) { return p.d.phi_x(xf, r); }, tf);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        if (p.terminal_state[static_cast<std::size_t>(j)].fixed) {
            rate(n + j) = -kRateScale * g.K(n + j) * (c * b.f(j) + costate_defect(j));
        } else {
            rate(j) = -kRateScale * g.K(j) * (c * (b.H_x(j) + phi_xtf(j)) + state_defect(j));
        }
    }
    // The u row also carries the node's own H_u term, as in the fixed-tf rows;
    // without it u(tf) is left undetermined once H(tf) + phi_tf vanishes.
    const Vec ru = c * b.H_u + r_u(b, tab.v.row(last).transpose());
    rate.segment(2 * n, m) = -kRateScale * g.K.segment(2 * n, m).cwiseProduct(ru);
    return rate;
}

double sensitivity(const OcpProblem& p, const FlowState& s, const NodeTable& tab) {
    // h and the weights scale with T = tf - t0, difference quotients as 1/T,
    // and node i sits at t0 + sigma_i T.
    const TimeGrid& grid = tab.grid;
    const std::size_t N = grid.size();
    const double T = grid.duration();
    const double h = grid.step();
    const Vec w = grid.trapezoid_weights();
    double G = 0.0;
    for (std::size_t k = 0; k + 1 < N; ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        const HamiltonianBundle& b0 = tab.b[k];
        const HamiltonianBundle& b1 = tab.b[k + 1];
        const double s0 = grid.sigma(k), s1 = grid.sigma(k + 1);
        const Vec a = tab.a.row(r).transpose();
        const Vec c = tab.c.row(r).transpose();
        const Vec dx = (s.x.values.row(r + 1) - s.x.values.row(r)).transpose() / h;
        const Vec dl = (s.lam.values.row(r + 1) - s.lam.values.row(r)).transpose() / h;
        const Vec da = -dx / T - 0.5 * (s0 * b0.f_t + s1 * b1.f_t);
        const Vec dc = -dl / T + 0.5 * (s0 * b0.H_xt + s1 * b1.H_xt);
        G += h * ((a.squaredNorm() + c.squaredNorm()) / T + 2.0 * (a.dot(da) + c.dot(dc)));
    }
    for (std::size_t i = 0; i < N; ++i) {
        const HamiltonianBundle& b = tab.b[i];
        const auto r = static_cast<Eigen::Index>(i);
        G += w(r) * (b.H_u.squaredNorm() / T + 2.0 * grid.sigma(i) * b.H_u.dot(b.H_ut));
    }
    const Eigen::Index last = static_cast<Eigen::Index>(N) - 1;
    const Vec xf = s.x.values.row(last).transpose();
    const double tf = grid.tf();
    const double c = tab.b.back().H + p.d.phi_tf(xf, tf);
    double phi_tftf;
    if (p.d.phi_tftf) {
        phi_tftf = p.d.phi_tftf(xf, tf);
    } else {
        const double h = outer_step(tf);
        phi_tftf = (p.d.phi_tf(xf, tf + h) - p.d.phi_tf(xf, tf - h)) / (2.0 * h);
    }
    G += 2.0 * c * (tab.b.back().H_t + phi_tftf);
    return G;
}

// d(J1)/d(tf) with the profiles held fixed in physical time instead of on sigma.
// Moving tf by dT slides interior node i by sigma_i dT along its profile, which
// adds the nodal gradient contracted with sigma_i ydot_i. Paired with the same
// shift on the interior rates, the flow stays an exact descent of the discrete J1.
double eulerian_sensitivity(const OcpProblem& p, const FlowState& s, const NodeTable& tab) {
    const Eigen::Index N = static_cast<Eigen::Index>(tab.grid.size());
    const Vec w = tab.grid.trapezoid_weights();
    double G = sensitivity(p, s, tab);
    for (Eigen::Index i = 1; i + 1 < N; ++i) {
        const double sig = tab.grid.sigma(static_cast<std::size_t>(i));
        G += 2.0 * w(i) * sig * interior_r(tab, i).dot(tab.ydot(i));
    }
    return G;
}

double tf_rate_of(const OcpProblem& p, const FlowState& s, const NodeTable& tab, const ZsGains& g) {
    return -g.k_tf * (g.convective_correction ? eulerian_sensitivity(p, s, tab) : sensitivity(p, s, tab));
}

void require_free_tf(const OcpProblem& p) {
    if (!p.terminal_time.free) throw UsageError("tf rate requested for a fixed terminal time");
}

}  // namespace

HamiltonianBundle hamiltonian_bundle(const OcpProblem& p, const Vec& x, const Vec& lam, const Vec& u,
                                     double t) {
    const auto& d = p.d;
    HamiltonianBundle b;
    b.f = p.f(x, u, t);
    b.f_x = d.f_x(x, u, t);
    b.f_u = d.f_u(x, u, t);
    b.f_t = d.f_t(x, u, t);
    b.H = p.L(x, u, t) + lam.dot(b.f);
    b.H_x = d.L_x(x, u, t) + b.f_x.transpose() * lam;
    b.H_u = d.L_u(x, u, t) + b.f_u.transpose() * lam;
    b.H_t = d.L_t(x, u, t) + lam.dot(b.f_t);

    if (d.H_xx) {
        b.H_xx = d.H_xx(x, lam, u, t);
    } else {
        Mat a = jac_fd([&](const Vec& z) { return hx_of(p, z, lam, u, t); }, x);
        b.H_xx = 0.5 * (a + a.transpose());
    }
    b.H_xu = d.H_xu ? d.H_xu(x, lam, u, t)
                    : jac_fd([&](const Vec& z) { return hx_of(p, x, lam, z, t); }, u);
    if (d.H_uu) {
        b.H_uu = d.H_uu(x, lam, u, t);
    } else {
        Mat a = jac_fd([&](const Vec& z) { return hu_of(p, x, lam, z, t); }, u);
        b.H_uu = 0.5 * (a + a.transpose());
    }
    b.H_xt = d.H_xt ? d.H_xt(x, lam, u, t)
                    : time_fd([&](double r) { return hx_of(p, x, lam, u, r); }, t);
    b.H_ut = d.H_ut ? d.H_ut(x, lam, u, t)
                    : time_fd([&](double r) { return hu_of(p, x, lam, u, r); }, t);

    const std::size_t n = p.n;
    const std::size_t m = p.m;
    auto shape = [](const Mat& a, std::size_t r, std::size_t c) {
        return static_cast<std::size_t>(a.rows()) == r && static_cast<std::size_t>(a.cols()) == c;
    };
    if (!shape(b.f, n, 1) || !shape(b.f_x, n, n) || !shape(b.f_u, n, m) || !shape(b.f_t, n, 1) ||
        !shape(b.H_x, n, 1) || !shape(b.H_u, m, 1) || !shape(b.H_xx, n, n) || !shape(b.H_xu, n, m) ||
        !shape(b.H_uu, m, m) || !shape(b.H_xt, n, 1) || !shape(b.H_ut, m, 1)) {
        throw DimensionError("Hamiltonian bundle shapes disagree with n = " + std::to_string(n) +
                             ", m = " + std::to_string(m));
    }
    const bool finite = std::isfinite(b.H) && std::isfinite(b.H_t) && b.f.allFinite() &&
                        b.f_x.allFinite() && b.f_u.allFinite() && b.f_t.allFinite() &&
                        b.H_x.allFinite() && b.H_u.allFinite() && b.H_xx.allFinite() &&
                        b.H_xu.allFinite() && b.H_uu.allFinite() && b.H_xt.allFinite() &&
                        b.H_ut.allFinite();
    if (!finite) throw EvaluationError("non-finite Hamiltonian bundle");
    return b;
}

Vec optimality_vector(const HamiltonianBundle& b, const Vec& xdot, const Vec& lamdot) {
    const Eigen::Index n = static_cast<Eigen::Index>(b.n());
    const Eigen::Index m = static_cast<Eigen::Index>(b.m());
    if (xdot.size() != n || lamdot.size() != n) throw DimensionError("optimality_vector: bad rate size");
    Vec v(2 * n + m);
    v << b.H_x + lamdot, b.f - xdot, b.H_u;
    return v;
}

Mat assemble_H_yy(const HamiltonianBundle& b) {
    const Eigen::Index n = static_cast<Eigen::Index>(b.n());
    const Eigen::Index m = static_cast<Eigen::Index>(b.m());
    Mat H = Mat::Zero(2 * n + m, 2 * n + m);
    H.block(0, 0, n, n) = b.H_xx;
    H.block(0, n, n, n) = b.f_x.transpose();
    H.block(0, 2 * n, n, m) = b.H_xu;
    H.block(n, 0, n, n) = b.f_x;
    H.block(n, 2 * n, n, m) = b.f_u;
    H.block(2 * n, 0, m, n) = b.H_xu.transpose();
    H.block(2 * n, n, m, n) = b.f_u.transpose();
    H.block(2 * n, 2 * n, m, m) = b.H_uu;
    return H;
}

Mat assemble_M(const HamiltonianBundle& b) {
    const Eigen::Index n = static_cast<Eigen::Index>(b.n());
    const Eigen::Index m = static_cast<Eigen::Index>(b.m());
    Mat M = Mat::Zero(2 * n + m, 2 * n + m);
    M.block(0, 0, n, n) = b.f_x;
    M.block(0, 2 * n, n, m) = b.f_u;
    M.block(n, 0, n, n) = -b.H_xx;
    M.block(n, n, n, n) = -b.f_x.transpose();
    M.block(n, 2 * n, n, m) = -b.H_xu;
    return M;
}

Vec RVector::stacked() const {
    Vec s(x.size() + lam.size() + u.size());
    s << x, lam, u;
    return s;
}

RVector assemble_r(const HamiltonianBundle& b, const Vec& v, const Vec& ydot, const Vec& xddot,
                   const Vec& lamddot) {
    const Eigen::Index n = static_cast<Eigen::Index>(b.n());
    const Eigen::Index m = static_cast<Eigen::Index>(b.m());
    if (v.size() != 2 * n + m || ydot.size() != 2 * n + m || xddot.size() != n ||
        lamddot.size() != n) {
        throw DimensionError("assemble_r: expected vectors of size " + std::to_string(2 * n + m) +
                             " and " + std::to_string(n));
    }
    const auto vx = v.segment(0, n);
    const auto vl = v.segment(n, n);
    const auto vu = v.segment(2 * n, m);
    const auto xd = ydot.segment(0, n);
    const auto ld = ydot.segment(n, n);
    const auto ud = ydot.segment(2 * n, m);

    RVector r;
    r.x = b.H_xx * vx + b.f_x.transpose() * vl + b.H_xu * vu + b.f_x * xd + b.f_u * ud + b.f_t - xddot;
    r.lam = b.f_x * vx + b.f_u * vu - b.H_xx * xd - b.f_x.transpose() * ld - b.H_xu * ud - b.H_xt -
            lamddot;
    r.u = b.H_xu.transpose() * vx + b.f_u.transpose() * vl + b.H_uu * vu;
    return r;
}

ZsGains ZsGains::uniform(std::size_t n, std::size_t m, double k, double k_tf) {
    ZsGains g;
    g.K = Vec::Constant(static_cast<Eigen::Index>(2 * n + m), k);
    g.k_tf = k_tf;
    return g;
}

void ZsGains::validate(std::size_t n, std::size_t m) const {
    if (static_cast<std::size_t>(K.size()) != 2 * n + m) {
        throw DimensionError("gain vector has " + std::to_string(K.size()) + " entries, expected " +
                             std::to_string(2 * n + m));
    }
    if (!(K.array() > 0.0).all() || !K.allFinite()) throw UsageError("gains must be positive");
    if (!(k_tf > 0.0) || !std::isfinite(k_tf)) throw UsageError("k_tf must be positive");
}

double FlowRates::max_abs() const {
    double r = std::abs(tf);
    if (x.size()) r = std::max(r, x.cwiseAbs().maxCoeff());
    if (lam.size()) r = std::max(r, lam.cwiseAbs().maxCoeff());
    if (u.size()) r = std::max(r, u.cwiseAbs().maxCoeff());
    return r;
}

TimeGrid grid_for(const FlowState& s, const TimeGrid& grid) {
    if (s.tf && *s.tf != grid.tf()) return grid.with_tf(*s.tf);
    return grid;
}

FlowRates zs_interior_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid,
                          const ZsGains& g) {
    g.validate(p.n, p.m);
    const NodeTable tab = tabulate(p, s, grid, true);
    const Eigen::Index N = static_cast<Eigen::Index>(tab.grid.size());
    const Eigen::Index n = static_cast<Eigen::Index>(p.n);
    const Eigen::Index m = static_cast<Eigen::Index>(p.m);
    FlowRates out{Mat::Zero(N, n), Mat::Zero(N, n), Mat::Zero(N, m), 0.0};
    for (Eigen::Index i = 1; i + 1 < N; ++i) {
        const Vec rate = interior_rate(tab, g, i);
        out.x.row(i) = rate.segment(0, n).transpose();
        out.lam.row(i) = rate.segment(n, n).transpose();
        out.u.row(i) = rate.segment(2 * n, m).transpose();
    }
    return out;
}

Vec zs_initial_boundary_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid,
                            const ZsGains& g) {
    g.validate(p.n, p.m);
    return initial_rate(tabulate(p, s, grid, true), g);
}

Vec zs_terminal_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid, const ZsGains& g) {
    g.validate(p.n, p.m);
    return terminal_rate(p, s, tabulate(p, s, grid, true), g);
}

double tf_sensitivity(const OcpProblem& p, const FlowState& s, const TimeGrid& grid) {
    require_free_tf(p);
    return sensitivity(p, s, tabulate(p, s, grid, true));
}

double tf_rate(const OcpProblem& p, const FlowState& s, const TimeGrid& grid, const ZsGains& g) {
    require_free_tf(p);
    g.validate(p.n, p.m);
    return tf_rate_of(p, s, tabulate(p, s, grid, true), g);
}

double j1_value(const OcpProblem& p, const FlowState& s, const TimeGrid& grid) {
    const NodeTable tab = tabulate(p, s, grid, false);
    const Vec w = tab.grid.trapezoid_weights();
    const Eigen::Index m = static_cast<Eigen::Index>(p.m);
    double j1 = tab.grid.step() * (tab.a.squaredNorm() + tab.c.squaredNorm()) +
                w.dot(tab.v.rightCols(m).rowwise().squaredNorm());
    if (p.terminal_time.free) {
        const double c = transversality_residual(p, s, grid);
        j1 += c * c;
    }
    return j1;
}

double bolza_cost(const OcpProblem& p, const FlowState& s, const TimeGrid& base) {
    const TimeGrid grid = grid_for(s, base);
    check_dims(p, s, grid);
    Profile running(grid.size(), 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        running.values(r, 0) =
            p.L(s.x.values.row(r).transpose(), s.u.values.row(r).transpose(), grid.time(i));
    }
    const Eigen::Index last = static_cast<Eigen::Index>(grid.size()) - 1;
    return p.phi(s.x.values.row(last).transpose(), grid.tf()) + trapezoid(grid, running);
}

double transversality_residual(const OcpProblem& p, const FlowState& s, const TimeGrid& base) {
    const TimeGrid grid = grid_for(s, base);
    check_dims(p, s, grid);
    const Eigen::Index last = static_cast<Eigen::Index>(grid.size()) - 1;
    const Vec x = s.x.values.row(last).transpose();
    const Vec lam = s.lam.values.row(last).transpose();
    const Vec u = s.u.values.row(last).transpose();
    const double tf = grid.tf();
    const double H = p.L(x, u, tf) + lam.dot(p.f(x, u, tf));
    return H + p.d.phi_tf(x, tf);
}

double optimality_residual(const OcpProblem& p, const FlowState& s, const TimeGrid& grid) {
    const NodeTable tab = tabulate(p, s, grid, false);
    double r = tab.v.cwiseAbs().maxCoeff();
    if (p.terminal_time.free) r = std::max(r, std::abs(transversality_residual(p, s, grid)));
    return r;
}

FlowRates zs_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid, const ZsGains& g) {
    const NodeTable tab = tabulate(p, s, grid, true);
    const Eigen::Index N = static_cast<Eigen::Index>(tab.grid.size());
    const Eigen::Index n = static_cast<Eigen::Index>(p.n);
    const Eigen::Index m = static_cast<Eigen::Index>(p.m);
    FlowRates out{Mat::Zero(N, n), Mat::Zero(N, n), Mat::Zero(N, m), 0.0};
    auto put = [&](Eigen::Index i, const Vec& rate) {
        out.x.row(i) = rate.segment(0, n).transpose();
        out.lam.row(i) = rate.segment(n, n).transpose();
        out.u.row(i) = rate.segment(2 * n, m).transpose();
    };
    for (Eigen::Index i = 1; i + 1 < N; ++i) put(i, interior_rate(tab, g, i));
    put(0, initial_rate(tab, g));
    put(N - 1, terminal_rate(p, s, tab, g));
    if (p.terminal_time.free) {
        out.tf = tf_rate_of(p, s, tab, g);
        if (g.convective_correction) {
            for (Eigen::Index i = 1; i + 1 < N; ++i) {
                const double shift = tab.grid.sigma(static_cast<std::size_t>(i)) * out.tf;
                out.x.row(i) += shift * tab.xd.row(i);
                out.lam.row(i) += shift * tab.ld.row(i);
                out.u.row(i) += shift * tab.ud.row(i);
            }
        }
    }
    return out;
}

FlowState default_guess(const OcpProblem& p, const TimeGrid& base) {
    const TimeGrid grid = p.terminal_time.free ? base.with_tf(p.terminal_time.value) : base;
    const std::size_t N = grid.size();
    FlowState s{Profile(N, p.n, "x"), Profile(N, p.n, "lam"), Profile(N, p.m, "u"), std::nullopt};
    if (p.terminal_time.free) s.tf = grid.tf();
    for (std::size_t i = 0; i < N; ++i) {
        const double sig = grid.sigma(i);
        for (std::size_t j = 0; j < p.n; ++j) {
            const auto& end = p.terminal_state[j];
            const double a = p.x0(static_cast<Eigen::Index>(j));
            s.x.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                end.fixed ? a + sig * (end.value - a) : a;
        }
    }
    apply_pins(p, s, grid);
    return s;
}

void apply_pins(const OcpProblem& p, FlowState& s, const TimeGrid& base) {
    const TimeGrid grid = grid_for(s, base);
    check_dims(p, s, grid);
    const Eigen::Index last = static_cast<Eigen::Index>(grid.size()) - 1;
    s.x.values.row(0) = p.x0.transpose();
    for (std::size_t j = 0; j < p.n; ++j) {
        const auto& end = p.terminal_state[j];
        if (end.fixed) s.x.values(last, static_cast<Eigen::Index>(j)) = end.value;
    }
    const Vec phi_x = p.d.phi_x(s.x.values.row(last).transpose(), grid.tf());
    for (std::size_t j = 0; j < p.n; ++j) {
        if (!p.terminal_state[j].fixed) {
            s.lam.values(last, static_cast<Eigen::Index>(j)) = phi_x(static_cast<Eigen::Index>(j));
        }
    }
}

}  // namespace vem
