#include "vem/cov_flow.hpp"

#include <cmath>
#include <sstream>

#include "vem/errors.hpp"

namespace vem {

namespace {

struct Samples {
    Mat ydot;
    Mat F_y;
    Mat F_ydot;
};

void check_profile(const VariationalProblem& p, const Profile& y, const TimeGrid& grid) {
    if (y.nodes() != grid.size() || y.dim() != p.n) {
        std::ostringstream msg;
        msg << "profile is " << y.nodes() << "x" << y.dim() << ", expected " << grid.size() << "x"
            << p.n;
        throw DimensionError(msg.str());
    }
}

void check_partials(const Vec& fy, const Vec& fyd, Eigen::Index n, Eigen::Index node, double t) {
    if (fy.size() != n || fyd.size() != n) {
        throw DimensionError("F_y/F_ydot returned the wrong size at node " + std::to_string(node));
    }
    if (!fy.allFinite() || !fyd.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite F partials at node " << node << " (t=" << t << ")";
        throw EvaluationError(msg.str());
    }
}

Samples partial_samples(const VariationalProblem& p, const Profile& y, const TimeGrid& grid) {
    check_profile(p, y, grid);
    Samples s;
    detail::diff1(grid.step(), y.values, s.ydot);
    const Eigen::Index N = static_cast<Eigen::Index>(grid.size());
    const Eigen::Index n = static_cast<Eigen::Index>(p.n);
    s.F_y.resize(N, n);
    s.F_ydot.resize(N, n);
    Vec yi(n), ydi(n);
    for (Eigen::Index i = 0; i < N; ++i) {
        const double t = grid.time(static_cast<std::size_t>(i));
        yi = y.values.row(i).transpose();
        ydi = s.ydot.row(i).transpose();
        const Vec fy = p.F_y(yi, ydi, t);
        const Vec fyd = p.F_ydot(yi, ydi, t);
        check_partials(fy, fyd, n, i, t);
        s.F_y.row(i) = fy.transpose();
        s.F_ydot.row(i) = fyd.transpose();
    }
    return s;
}

// Each interval uses its own slope (y_{k+1} - y_k)/h at both of its nodes.
// Returns, at every interior node, (1/h) times the gradient of the interval
// trapezoid sum of F with respect to that node: a compact second-order
// Euler-Lagrange operator whose flow descends functional_J exactly.
Mat interval_el(const VariationalProblem& p, const Profile& y, const TimeGrid& grid) {
    check_profile(p, y, grid);
    const Eigen::Index N = static_cast<Eigen::Index>(grid.size());
    const Eigen::Index n = static_cast<Eigen::Index>(p.n);
    const double h = grid.step();
    Mat el = Mat::Zero(N, n);
    Vec prev_Fy, prev_flux;  // B_{k-1} and (P_{k-1} + Q_{k-1}) / 2
    for (Eigen::Index k = 0; k + 1 < N; ++k) {
        const double t0 = grid.time(static_cast<std::size_t>(k));
        const double t1 = grid.time(static_cast<std::size_t>(k + 1));
        const Vec y0 = y.values.row(k).transpose(), y1 = y.values.row(k + 1).transpose();
        const Vec d = (y1 - y0) / h;
        const Vec A = p.F_y(y0, d, t0), P = p.F_ydot(y0, d, t0);
        check_partials(A, P, n, k, t0);
        const Vec B = p.F_y(y1, d, t1), Q = p.F_ydot(y1, d, t1);
        check_partials(B, Q, n, k + 1, t1);
        const Vec flux = 0.5 * (P + Q);
        if (k > 0) el.row(k) = (0.5 * (A + prev_Fy) - (flux - prev_flux) / h).transpose();
        prev_Fy = B;
        prev_flux = flux;
    }
    return el;
}

double sign_like(double a, double smoothing) {
    if (smoothing > 0.0) return std::tanh(a / smoothing);
    return static_cast<double>((a > 0.0) - (a < 0.0));
}

}  // namespace

CovGains CovGains::uniform(std::size_t n, double k, CovVariant variant, double smoothing) {
    return CovGains{Vec::Constant(static_cast<Eigen::Index>(n), k), variant, smoothing};
}

void CovGains::validate(std::size_t n) const {
    if (static_cast<std::size_t>(K.size()) != n) {
        throw DimensionError("gain vector has " + std::to_string(K.size()) + " entries, expected " +
                             std::to_string(n));
    }
    if (!K.allFinite() || !(K.array() > 0.0).all()) throw UsageError("gains must be positive");
    if (!(smoothing >= 0.0)) throw UsageError("smoothing must be non-negative");
}

Profile euler_lagrange_residual(const VariationalProblem& p, const Profile& y, const TimeGrid& grid) {
    const Samples s = partial_samples(p, y, grid);
    Mat dFyd;
    detail::diff1(grid.step(), s.F_ydot, dFyd);
    return Profile(s.F_y - dFyd, "EL(" + y.label + ")");
}

Profile cov_rhs(const VariationalProblem& p, const Profile& y, const TimeGrid& grid,
                const CovGains& gains) {
    gains.validate(p.n);
    p.boundary.validate(p.n);
    const Mat el = interval_el(p, y, grid);
    bool any_free = false;
    for (std::size_t j = 0; j < p.n; ++j) any_free |= !p.boundary.initial[j].fixed || !p.boundary.terminal[j].fixed;
    const Samples s = any_free ? partial_samples(p, y, grid) : Samples{};
    const Eigen::Index N = static_cast<Eigen::Index>(grid.size());
    const Eigen::Index n = static_cast<Eigen::Index>(p.n);
    const bool sign = gains.variant == CovVariant::SignFiniteTime;

    Profile rate(grid.size(), p.n, "rate(" + y.label + ")");
    for (Eigen::Index i = 1; i + 1 < N; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double e = el(i, j);
            rate.values(i, j) = -gains.K(j) * (sign ? sign_like(e, gains.smoothing) : e);
        }
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto c = static_cast<std::size_t>(j);
        if (!p.boundary.initial[c].fixed) {
            const double a = s.F_ydot(0, j);
            rate.values(0, j) = gains.K(j) * (sign ? sign_like(a, gains.smoothing) : a);
        }
        if (!p.boundary.terminal[c].fixed) {
            const double a = s.F_ydot(N - 1, j);
            rate.values(N - 1, j) = -gains.K(j) * (sign ? sign_like(a, gains.smoothing) : a);
        }
    }
    return rate;
}

double functional_J(const VariationalProblem& p, const Profile& y, const TimeGrid& grid) {
    check_profile(p, y, grid);
    const double h = grid.step();
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        const Vec y0 = y.values.row(r).transpose(), y1 = y.values.row(r + 1).transpose();
        const Vec d = (y1 - y0) / h;
        const double a = p.F(y0, d, grid.time(k));
        if (!std::isfinite(a)) throw EvaluationError("non-finite F at node " + std::to_string(k));
        const double b = p.F(y1, d, grid.time(k + 1));
        if (!std::isfinite(b)) throw EvaluationError("non-finite F at node " + std::to_string(k + 1));
        sum += 0.5 * h * (a + b);
    }
    return sum;
}

double cov_optimality_residual(const VariationalProblem& p, const Profile& y, const TimeGrid& grid) {
    const Samples s = partial_samples(p, y, grid);
    Mat dFyd;
    detail::diff1(grid.step(), s.F_ydot, dFyd);
    const Eigen::Index N = static_cast<Eigen::Index>(grid.size());
    double r = (s.F_y - dFyd).middleRows(1, N - 2).cwiseAbs().maxCoeff();
    for (std::size_t j = 0; j < p.n; ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        if (!p.boundary.initial[j].fixed) r = std::max(r, std::abs(s.F_ydot(0, c)));
        if (!p.boundary.terminal[j].fixed) r = std::max(r, std::abs(s.F_ydot(N - 1, c)));
    }
    return r;
}

Profile cov_linear_guess(const VariationalProblem& p, const TimeGrid& grid) {
    p.boundary.validate(p.n);
    Profile y(grid.size(), p.n, "y");
    for (std::size_t j = 0; j < p.n; ++j) {
        const auto& a = p.boundary.initial[j];
        const auto& b = p.boundary.terminal[j];
        const double ya = a.fixed ? a.value : 0.0;
        const double yb = b.fixed ? b.value : 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            y.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                ya + grid.sigma(i) * (yb - ya);
        }
        y.values(0, static_cast<Eigen::Index>(j)) = ya;
        y.values(static_cast<Eigen::Index>(grid.size()) - 1, static_cast<Eigen::Index>(j)) = yb;
    }
    return y;
}

}  // namespace vem
