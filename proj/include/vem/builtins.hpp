#pragma once

// The three benchmark problems shipped with the library.

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vem/cov_flow.hpp"
#include "vem/integrator.hpp"
#include "vem/zs_flow.hpp"

namespace vem {

enum class GuessKind {
    Published,  // the benchmark's published initial guess (pins applied on top)
    Linear,  // x linear between the boundary values, lam and u zero
};

struct BenchmarkCase {
    std::string name;
    std::string summary;
    std::variant<VariationalProblem, OcpProblem> problem;

    // Exact solution components at t, ordered as component_names(); empty when
    // no closed form is available.
    std::function<Vec(double)> reference;
    std::optional<double> reference_tf;

    double gain_k = 1.0;
    double gain_ktf = 1.0;
    // Per-entry gains overriding gain_k when non-empty, ordered like default_K().
    Vec gain_vector;
    bool convective = false;  // ZsGains::convective_correction for this case
    // Case-level integration tolerances.
    double rel_tol = 1e-6;
    double abs_tol = 1e-8;
    std::size_t default_nodes = 101;
    double published_tau = 0.0;  // variation-time horizon used in the published run
    Method default_method = Method::ExplicitRK45;

    bool is_ocp() const { return std::holds_alternative<OcpProblem>(problem); }
    const VariationalProblem& cov() const { return std::get<VariationalProblem>(problem); }
    const OcpProblem& ocp() const { return std::get<OcpProblem>(problem); }

    /// y1..yn for variational cases, x1..xn, lam1..lamn, u1..um otherwise.
    std::vector<std::string> component_names() const;

    /// Grid at the problem's (initial) terminal time.
    TimeGrid grid(std::size_t nodes) const;

    /// Number of values the tau-integrator carries at this resolution.
    std::size_t state_dimension(std::size_t nodes) const;

    Profile cov_guess(const TimeGrid& grid) const;
    FlowState ocp_guess(const TimeGrid& grid, GuessKind kind = GuessKind::Published) const;

    CovGains cov_gains(const Vec& K) const;
    ZsGains zs_gains(const Vec& K, double k_tf) const;
    /// gain_vector when set, otherwise gain_k in every entry.
    Vec default_K() const;
};

/// Minimize the integral of ydot^2 - 2 y cos t on [0, pi], y(0) = y(pi) = 0.
BenchmarkCase example1();

/// Double integrator, xdot = A x + b u, J = 1/2 integral u^2, x(0) = (1, 1), x(2) = 0.
BenchmarkCase example2();

/// Brachistochrone with free final time and free final speed.
BenchmarkCase example3();

/// Case by name; throws UsageError("unknown case ...") otherwise.
BenchmarkCase builtin_case(const std::string& name);

std::vector<std::string> builtin_names();

}  // namespace vem
