#include "vem/grid.hpp"

#include <cmath>
#include <sstream>

#include "vem/errors.hpp"

namespace vem {

namespace {

void check_interval(double t0, double tf) {
    if (!std::isfinite(t0) || !std::isfinite(tf) || !(tf > t0)) {
        std::ostringstream msg;
        msg << "invalid grid: terminal time " << tf << " must exceed initial time " << t0;
        throw InvalidGridError(msg.str());
    }
}

void check_on_grid(const TimeGrid& grid, const Profile& p) {
    if (p.nodes() != grid.size()) {
        std::ostringstream msg;
        msg << "profile '" << p.label << "' has " << p.nodes() << " rows, grid has "
            << grid.size() << " nodes";
        throw DimensionError(msg.str());
    }
}

}  // namespace

TimeGrid::TimeGrid(double t0, double tf, std::size_t nodes) : t0_(t0), tf_(tf), nodes_(nodes) {
    check_interval(t0, tf);
    if (nodes < kMinNodes) {
        std::ostringstream msg;
        msg << "invalid grid: " << nodes << " nodes, need at least " << kMinNodes;
        throw InvalidGridError(msg.str());
    }
}

double TimeGrid::time(std::size_t i) const noexcept {
    if (i + 1 == nodes_) return tf_;
    return t0_ + sigma(i) * (tf_ - t0_);
}

void TimeGrid::set_tf(double tf) {
    check_interval(t0_, tf);
    tf_ = tf;
}

TimeGrid TimeGrid::with_tf(double tf) const {
    TimeGrid copy = *this;
    copy.set_tf(tf);
    return copy;
}

Vec TimeGrid::trapezoid_weights() const {
    Vec w = Vec::Constant(static_cast<Eigen::Index>(nodes_), step());
    w(0) *= 0.5;
    w(w.size() - 1) *= 0.5;
    return w;
}

TimeGrid make_grid(double t0, double tf, std::size_t nodes) { return TimeGrid(t0, tf, nodes); }

namespace detail {

namespace {
// One-sided first-derivative closure at t0, in units of 1/h; mirrored with a
// sign flip at tf.
constexpr double kClosure[] = {-1.5, 2.0, -0.5};
constexpr Eigen::Index kClosureWidth = 3;
}  // namespace

void diff1(double h, const Mat& in, Mat& out) {
    const Eigen::Index n = in.rows();
    out.resize(n, in.cols());
    out.row(0).setZero();
    out.row(n - 1).setZero();
    for (Eigen::Index k = 0; k < kClosureWidth; ++k) {
        out.row(0) += (kClosure[k] / h) * in.row(k);
        out.row(n - 1) -= (kClosure[k] / h) * in.row(n - 1 - k);
    }
    const double c = 1.0 / (2.0 * h);
    for (Eigen::Index i = 1; i + 1 < n; ++i) {
        out.row(i) = c * (in.row(i + 1) - in.row(i - 1));
    }
}

void diff2(double h, const Mat& in, Mat& out) {
    const Eigen::Index n = in.rows();
    out.resize(n, in.cols());
    const double c = 1.0 / (h * h);
    out.row(0) = c * (2.0 * in.row(0) - 5.0 * in.row(1) + 4.0 * in.row(2) - in.row(3));
    for (Eigen::Index i = 1; i + 1 < n; ++i) {
        out.row(i) = c * (in.row(i + 1) - 2.0 * in.row(i) + in.row(i - 1));
    }
    out.row(n - 1) =
        c * (2.0 * in.row(n - 1) - 5.0 * in.row(n - 2) + 4.0 * in.row(n - 3) - in.row(n - 4));
}

}  // namespace detail

Profile diff1(const TimeGrid& grid, const Profile& p) {
    check_on_grid(grid, p);
    Profile out;
    out.label = "d(" + p.label + ")/dt";
    detail::diff1(grid.step(), p.values, out.values);
    return out;
}

Profile diff2(const TimeGrid& grid, const Profile& p) {
    check_on_grid(grid, p);
    Profile out;
    out.label = "d2(" + p.label + ")/dt2";
    detail::diff2(grid.step(), p.values, out.values);
    return out;
}

double trapezoid(const TimeGrid& grid, const Profile& integrand) {
    check_on_grid(grid, integrand);
    if (integrand.dim() != 1) {
        throw DimensionError("trapezoid needs a scalar integrand, got dim " +
                             std::to_string(integrand.dim()));
    }
    const auto& v = integrand.values;
    const Eigen::Index n = v.rows();
    double interior = 0.0;
    for (Eigen::Index i = 1; i + 1 < n; ++i) interior += v(i, 0);
    return grid.step() * (0.5 * (v(0, 0) + v(n - 1, 0)) + interior);
}

}  // namespace vem
