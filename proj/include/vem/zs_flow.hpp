#pragma once

// Variation-evolution flow for optimal control problems.
//
// The OCP is recast as minimization of the sum-of-squares functional
//
//   J1 = (H(tf) + phi_tf)^2 [free tf only]
//      + integral |xdot - H_lam|^2 + |lamdot + H_x|^2 + |H_u|^2 dt
//
// over y = [x; lam; u], and y evolves along a virtual time tau so that J1
// decreases. Its equilibrium satisfies the first-order optimality conditions.
//
// On the grid, the two differential defects are taken per interval,
// (x_{i+1} - x_i)/h - (f_i + f_{i+1})/2 and likewise for lam, each weighted by
// h; the H_u term uses trapezoid weights at the nodes. Interior rates are the
// exact gradient of that sum divided by the node weight, times -2K. r below
// is half of that normalized gradient.

#include <optional>
#include <vector>

#include "vem/grid.hpp"
#include "vem/problem.hpp"

namespace vem {

/// Hamiltonian H = L + lam' f and the derivative blocks used by the flow.
struct HamiltonianBundle {
    double H = 0.0;
    Vec H_x;   // L_x + f_x' lam
    Vec f;     // H_lam
    Vec H_u;   // L_u + f_u' lam
    Mat f_x;
    Mat f_u;
    Vec f_t;
    double H_t = 0.0;  // L_t + lam' f_t
    Mat H_xx;
    Mat H_xu;
    Mat H_uu;
    Vec H_xt;
    Vec H_ut;

    std::size_t n() const { return static_cast<std::size_t>(f.size()); }
    std::size_t m() const { return static_cast<std::size_t>(H_u.size()); }
};

/// Evaluates every bundle field; missing second partials come from central
/// differences of the first partials. Throws EvaluationError on non-finite output.
HamiltonianBundle hamiltonian_bundle(const OcpProblem& p, const Vec& x, const Vec& lam,
                                     const Vec& u, double t);

/// v = [H_x + lamdot; f - xdot; H_u].
Vec optimality_vector(const HamiltonianBundle& b, const Vec& xdot, const Vec& lamdot);

/// Symmetric block matrix [[H_xx, f_x', H_xu], [f_x, 0, f_u], [H_ux, f_u', H_uu]].
Mat assemble_H_yy(const HamiltonianBundle& b);

/// [[f_x, 0, f_u], [-H_xx, -f_x', -H_xu], [0, 0, 0]].
Mat assemble_M(const HamiltonianBundle& b);

/// Half the Euler-Lagrange operator of the J1 integrand, split by block.
struct RVector {
    Vec x;
    Vec lam;
    Vec u;

    Vec stacked() const;
};

/// r = H_yy v + M ydot + [f_t; -H_xt; 0] - [xddot; lamddot; 0].
RVector assemble_r(const HamiltonianBundle& b, const Vec& v, const Vec& ydot, const Vec& xddot,
                   const Vec& lamddot);

/// Profiles of x, lam and u on one grid, plus tf when the terminal time is free.
struct FlowState {
    Profile x;
    Profile lam;
    Profile u;
    std::optional<double> tf;

    std::size_t nodes() const { return x.nodes(); }
};

struct ZsGains {
    Vec K;             // 2n + m positive entries, ordered [x; lam; u]
    double k_tf = 1.0;
    // Treats the profiles as living in physical time: interior nodes also
    // move by sigma_i * ydot * dtf/dtau, and the tf rate uses the matching
    // physical-time sensitivity so the flow still descends J1. Off by default.
    bool convective_correction = false;

    static ZsGains uniform(std::size_t n, std::size_t m, double k = 1.0, double k_tf = 1.0);
    void validate(std::size_t n, std::size_t m) const;
};

/// Rates of every nodal value (rows = nodes) and of tf.
struct FlowRates {
    Mat x;
    Mat lam;
    Mat u;
    double tf = 0.0;

    double max_abs() const;
};

/// Rates at nodes 1..N-2; boundary rows are zero.
FlowRates zs_interior_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid,
                          const ZsGains& g);

/// Rates [x; lam; u] of the t0 node.
Vec zs_initial_boundary_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid,
                            const ZsGains& g);

/// Total rates [x; lam; u] of the sigma = 1 node, per terminal-time and
/// per-component terminal-state variant.
Vec zs_terminal_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid,
                    const ZsGains& g);

/// d(J1)/d(tf) of the discretized functional with profiles held fixed on sigma.
double tf_sensitivity(const OcpProblem& p, const FlowState& s, const TimeGrid& grid);

/// -k_tf * tf_sensitivity, or the physical-time counterpart when
/// g.convective_correction is set; UsageError when the terminal time is fixed.
double tf_rate(const OcpProblem& p, const FlowState& s, const TimeGrid& grid, const ZsGains& g);

/// Trapezoid-discretized J1 (plus the squared transversality term when tf is free).
double j1_value(const OcpProblem& p, const FlowState& s, const TimeGrid& grid);

/// Bolza cost phi(x(tf), tf) + integral of L.
double bolza_cost(const OcpProblem& p, const FlowState& s, const TimeGrid& grid);

/// H(tf) + phi_tf at the terminal node.
double transversality_residual(const OcpProblem& p, const FlowState& s, const TimeGrid& grid);

/// Max norm of the optimality vector over all nodes (and |H(tf) + phi_tf| when tf is free).
double optimality_residual(const OcpProblem& p, const FlowState& s, const TimeGrid& grid);

/// Every rate of the flow assembled in one pass.
FlowRates zs_rhs(const OcpProblem& p, const FlowState& s, const TimeGrid& grid, const ZsGains& g);

/// Initial state: x linear from x0 to the fixed terminal values (flat for
/// free components), lam zero except the pinned lam(tf) = phi_x, u zero.
FlowState default_guess(const OcpProblem& p, const TimeGrid& grid);

/// Re-applies pinned values: x(t0) = x0, fixed x(tf), lam(tf) = phi_x for free components.
void apply_pins(const OcpProblem& p, FlowState& s, const TimeGrid& grid);

/// Grid matching the state's terminal time.
TimeGrid grid_for(const FlowState& s, const TimeGrid& grid);

}  // namespace vem
