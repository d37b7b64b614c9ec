#pragma once

// Variation flow for unconstrained calculus-of-variations problems:
// y evolves along tau against the Euler-Lagrange residual so that
// J = integral F(y, ydot, t) dt is non-increasing.

#include "vem/grid.hpp"
#include "vem/problem.hpp"

namespace vem {

enum class CovVariant {
    Asymptotic,      // rate = -K * residual
    SignFiniteTime,  // rate = -K * sign(residual)
};

struct CovGains {
    Vec K;  // n positive entries
    CovVariant variant = CovVariant::Asymptotic;
    // Sign variant only: sign(a) is replaced by tanh(a / smoothing) when > 0.
    double smoothing = 0.0;

    static CovGains uniform(std::size_t n, double k, CovVariant variant = CovVariant::Asymptotic,
                            double smoothing = 0.0);
    void validate(std::size_t n) const;
};

/// F_y - d/dt(F_ydot) at every node; d/dt is diff1 applied to the nodal F_ydot samples.
Profile euler_lagrange_residual(const VariationalProblem& p, const Profile& y, const TimeGrid& grid);

/// Rate of every nodal value. Interior nodes follow a compact Euler-Lagrange
/// operator, (1/h) times the gradient of functional_J, which agrees with
/// euler_lagrange_residual to O(h^2); end nodes
/// are held for Fixed components and follow +K F_ydot (t0) / -K F_ydot (tf)
/// for Free ones.
Profile cov_rhs(const VariationalProblem& p, const Profile& y, const TimeGrid& grid,
                const CovGains& gains);

/// Trapezoid quadrature of F along the profile, each interval evaluated with
/// its own slope (y_{k+1} - y_k)/h at both ends.
double functional_J(const VariationalProblem& p, const Profile& y, const TimeGrid& grid);

/// Max norm of the residual over interior nodes and of F_ydot at free ends.
double cov_optimality_residual(const VariationalProblem& p, const Profile& y, const TimeGrid& grid);

/// Linear interpolation between fixed end values (zero where an end is free),
/// with fixed ends pinned exactly.
Profile cov_linear_guess(const VariationalProblem& p, const TimeGrid& grid);

}  // namespace vem
