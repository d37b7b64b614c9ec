#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Dense>

namespace vem {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/**
 * Uniform grid on the normalized coordinate sigma in [0, 1].
 *
 * Nodes are attached to fixed sigma values; the physical time of node i is
 * t0 + sigma_i * (tf - t0). When the terminal time is free the owning solve
 * moves tf with set_tf(), which stretches the grid without re-meshing. Every
 * t-derivative picks up the new spacing through step().
 */
class TimeGrid {
public:
    static constexpr std::size_t kMinNodes = 5;

    TimeGrid(double t0, double tf, std::size_t nodes);

    double t0() const noexcept { return t0_; }
    double tf() const noexcept { return tf_; }
    std::size_t size() const noexcept { return nodes_; }
    double duration() const noexcept { return tf_ - t0_; }
    double step() const noexcept { return duration() / static_cast<double>(nodes_ - 1); }
    double sigma(std::size_t i) const noexcept {
        return static_cast<double>(i) / static_cast<double>(nodes_ - 1);
    }
    double time(std::size_t i) const noexcept;

    /// Moves the terminal time; throws InvalidGridError unless tf > t0.
    void set_tf(double tf);

    /// Copy of this grid with a different terminal time.
    TimeGrid with_tf(double tf) const;

    /// Composite trapezoid weights w_i (h/2 at both ends, h elsewhere).
    Vec trapezoid_weights() const;

private:
    double t0_;
    double tf_;
    std::size_t nodes_;
};

/// Builds a uniform grid; throws InvalidGridError on tf <= t0 or nodes < 5.
TimeGrid make_grid(double t0, double tf, std::size_t nodes);

/// Samples of an n-vector variable at every grid node, one row per node.
struct Profile {
    Mat values;
    std::string label;

    Profile() = default;
    Profile(Mat v, std::string name = {}) : values(std::move(v)), label(std::move(name)) {}
    Profile(std::size_t nodes, std::size_t dim, std::string name = {})
        : values(Mat::Zero(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(dim))),
          label(std::move(name)) {}

    std::size_t nodes() const noexcept { return static_cast<std::size_t>(values.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(values.cols()); }
    bool all_finite() const { return values.allFinite(); }
};

/// Samples a scalar function of t on the grid into a one-column profile.
template <typename Fn>
Profile sample(const TimeGrid& grid, Fn&& fn, std::string label = {}) {
    Profile p(grid.size(), 1, std::move(label));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        p.values(static_cast<Eigen::Index>(i), 0) = fn(grid.time(i));
    }
    return p;
}

// Second-order first derivative: central in the interior, 3-point one-sided
// at both ends.
Profile diff1(const TimeGrid& grid, const Profile& p);

// Second-order second derivative: central 3-point in the interior, 4-point
// one-sided at both ends.
Profile diff2(const TimeGrid& grid, const Profile& p);

/// Composite trapezoid integral of a one-column profile over [t0, tf].
double trapezoid(const TimeGrid& grid, const Profile& integrand);

namespace detail {
// Column-wise kernels on raw node-major matrices; no label handling.
void diff1(double h, const Mat& in, Mat& out);
void diff2(double h, const Mat& in, Mat& out);
}  // namespace detail

}  // namespace vem
