#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vem/grid.hpp"

namespace vem {

/// One end condition of one component: either pinned to a value or free.
struct EndCondition {
    bool fixed = false;
    double value = 0.0;

    static EndCondition Fixed(double v) { return {true, v}; }
    static EndCondition Free() { return {false, 0.0}; }

    friend bool operator==(const EndCondition&, const EndCondition&) = default;
};

/// Per-component end conditions at t0 and tf.
struct BoundarySpec {
    std::vector<EndCondition> initial;
    std::vector<EndCondition> terminal;

    static BoundarySpec all_fixed(const Vec& at_t0, const Vec& at_tf);
    static BoundarySpec all_free(std::size_t n);

    /// Throws DimensionError on size mismatch, UsageError on non-finite values.
    void validate(std::size_t n) const;

    friend bool operator==(const BoundarySpec&, const BoundarySpec&) = default;
};

using ScalarFn = std::function<double(const Vec&)>;
using VectorFn = std::function<Vec(const Vec&)>;

// Signatures of the user callables. Vectors are passed by const reference;
// all callables must be reentrant.
using IntegrandFn = std::function<double(const Vec& y, const Vec& ydot, double t)>;
using IntegrandGradFn = std::function<Vec(const Vec& y, const Vec& ydot, double t)>;

/// Minimize J = integral of F(y, ydot, t) over fixed [t0, tf].
struct VariationalProblem {
    std::size_t n = 1;
    double t0 = 0.0;
    double tf = 1.0;
    IntegrandFn F;
    IntegrandGradFn F_y;
    IntegrandGradFn F_ydot;
    BoundarySpec boundary;

    void validate() const;
};

using DynamicsFn = std::function<Vec(const Vec& x, const Vec& u, double t)>;
using DynamicsJacFn = std::function<Mat(const Vec& x, const Vec& u, double t)>;
using RunningCostFn = std::function<double(const Vec& x, const Vec& u, double t)>;
using TerminalCostFn = std::function<double(const Vec& xf, double tf)>;
using TerminalGradFn = std::function<Vec(const Vec& xf, double tf)>;
using HamMatFn = std::function<Mat(const Vec& x, const Vec& lam, const Vec& u, double t)>;
using HamVecFn = std::function<Vec(const Vec& x, const Vec& lam, const Vec& u, double t)>;

/**
 * Partial derivatives of an optimal control problem.
 *
 * The first partials are required. The Hamiltonian second-order blocks and
 * the mixed terminal-cost partials are optional; when empty they are
 * generated by central differences of the first partials.
 */
struct OcpPartials {
    DynamicsJacFn f_x;  // n x n
    DynamicsJacFn f_u;  // n x m
    DynamicsFn f_t;     // n
    DynamicsFn L_x;     // n
    DynamicsFn L_u;     // m
    RunningCostFn L_t;
    TerminalGradFn phi_x;  // n
    TerminalCostFn phi_tf;

    // Optional blocks of H = L + lam' f.
    HamMatFn H_xx;  // n x n
    HamMatFn H_xu;  // n x m
    HamMatFn H_uu;  // m x m
    HamVecFn H_xt;  // n
    HamVecFn H_ut;  // m
    TerminalGradFn phi_xtf;  // n
    TerminalCostFn phi_tftf;
};

struct TerminalTime {
    bool free = false;
    double value = 1.0;  // fixed value, or initial guess when free

    static TerminalTime Fixed(double tf) { return {false, tf}; }
    static TerminalTime Free(double guess) { return {true, guess}; }
};

/// Bolza problem: minimize phi(x(tf), tf) + integral L subject to xdot = f.
struct OcpProblem {
    std::size_t n = 1;
    std::size_t m = 1;
    double t0 = 0.0;
    Vec x0;
    TerminalTime terminal_time;
    std::vector<EndCondition> terminal_state;

    DynamicsFn f;
    RunningCostFn L;
    TerminalCostFn phi;
    OcpPartials d;

    void validate() const;
    bool any_terminal_fixed() const;
    bool all_terminal_fixed() const;
};

/// Central-difference step used everywhere in the library.
double fd_step(double value);

/// Gradient of a scalar function by central differences.
Vec fd_gradient(const ScalarFn& fn, const Vec& at);

/// Jacobian (rows = outputs) of a vector function by central differences.
Mat fd_jacobian(const VectorFn& fn, const Vec& at);

/// Builds every first and second partial of an OCP by central differences of
/// f, L and phi. The result can be assigned to OcpProblem::d.
OcpPartials finite_difference_bundle(const DynamicsFn& f, const RunningCostFn& L,
                                     const TerminalCostFn& phi, std::size_t n, std::size_t m);

/// Builds F_y and F_ydot of a variational integrand by central differences.
std::pair<IntegrandGradFn, IntegrandGradFn> finite_difference_bundle(const IntegrandFn& F,
                                                                     std::size_t n);

/// Result of comparing analytic partials against finite differences.
struct PartialsReport {
    struct Entry {
        std::string name;        // e.g. "f_x"
        double max_rel_error = 0.0;
        std::string worst;       // e.g. "f_x[0,1] at sample 2"
    };
    std::vector<Entry> entries;
    double rel_tol = 0.0;
    bool passed = true;

    const Entry* find(const std::string& name) const;
    /// Name of the worst failing entry, or empty when all pass.
    std::string failing() const;
};

struct VariationalSample {
    Vec y;
    Vec ydot;
    double t = 0.0;
};

struct OcpSample {
    Vec x;
    Vec u;
    Vec lam;  // used for the optional Hamiltonian blocks
    double t = 0.0;
};

/// Relative error |a - b| / max(1, |b|) per entry; throws EvaluationError
/// naming the sample on any non-finite function value.
PartialsReport verify_partials(const VariationalProblem& p,
                               const std::vector<VariationalSample>& samples, double rel_tol);
PartialsReport verify_partials(const OcpProblem& p, const std::vector<OcpSample>& samples,
                               double rel_tol);

}  // namespace vem
