#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "vem/cov_flow.hpp"
#include "vem/zs_flow.hpp"

namespace vem {

/// Right-hand side of an IVP in the variation time tau.
using FlowRhs = std::function<void(double tau, std::span<const double> y, std::span<double> dydtau)>;

struct StepTolerances {
    double rel_tol = 1e-6;
    double abs_tol = 1e-8;
    double max_step = std::numeric_limits<double>::infinity();
};

struct StepResult {
    std::vector<double> y;
    double dtau = 0.0;       // size of the accepted step
    double error = 0.0;      // weighted RMS error estimate (<= 1 when accepted)
    double next_dtau = 0.0;  // controller's proposal for the following step
    int rejected = 0;        // trial steps rejected before acceptance
};

/// Dormand-Prince 5(4) stepper with a PI step-size controller.
class Rk45Stepper {
public:
    explicit Rk45Stepper(FlowRhs rhs, std::vector<bool> frozen = {});

    /// Takes one accepted step starting from dtau; shrinks on rejection.
    /// Throws StiffnessError when the step falls below 1e-14.
    StepResult step(std::span<const double> y, double tau, double dtau, const StepTolerances& tol);

    /// One non-adaptive step of exactly dtau (fifth-order solution).
    std::vector<double> fixed_step(std::span<const double> y, double tau, double dtau);

    std::size_t rhs_evaluations() const { return rhs_evals_; }

private:
    void eval(double tau, std::span<const double> y, std::span<double> out);

    FlowRhs rhs_;
    std::vector<bool> frozen_;
    double err_old_ = 1e-4;
    std::size_t rhs_evals_ = 0;
};

/**
 * Five-stage, L-stable, stiffly accurate SDIRK method of order 4 (gamma = 1/4)
 * with an embedded third-order error estimate.
 *
 * Each stage is solved by a simplified Newton iteration on I - gamma*h*J,
 * with J a forward-difference Jacobian over the non-frozen components. The
 * Jacobian is reused across steps and refreshed when Newton convergence
 * degrades. Frozen components are never touched.
 */
class ImplicitStepper {
public:
    ImplicitStepper(FlowRhs rhs, std::size_t dim, std::vector<bool> frozen = {});
    ~ImplicitStepper();
    ImplicitStepper(ImplicitStepper&&) noexcept;
    ImplicitStepper& operator=(ImplicitStepper&&) noexcept;

    /// Takes one accepted step. Newton failure after 10 iterations rejects the
    /// trial and halves dtau; below 1e-14 throws ConvergenceError.
    StepResult step(std::span<const double> y, double tau, double dtau, const StepTolerances& tol);

    std::size_t jacobian_evaluations() const;
    std::size_t factorizations() const;
    std::size_t rhs_evaluations() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Convenience wrappers around a fresh stepper.
StepResult step_rk45(const FlowRhs& rhs, std::span<const double> y, double tau, double dtau,
                     const StepTolerances& tol);
StepResult step_implicit(const FlowRhs& rhs, std::span<const double> y, double tau, double dtau,
                         const StepTolerances& tol);

enum class Method { ExplicitRK45, ImplicitStiff };

struct EvolveOptions {
    Method method = Method::ExplicitRK45;
    double rel_tol = 1e-6;
    double abs_tol = 1e-8;
    double tau_max = 1000.0;
    // Stop when the optimality residual, or the largest rate, drops to this.
    double residual_tol = 1e-6;
    double snapshot_every = 1.0;
    std::size_t max_steps = 1'000'000;
    double descent_slack = 1e-9;
    // > 0: non-adaptive explicit steps of this size (needed by the pure sign flow).
    double fixed_step = 0.0;
    double initial_step = 0.0;  // 0: automatic
    double max_step = std::numeric_limits<double>::infinity();
    bool keep_snapshots = true;

    void validate() const;
};

struct DiagnosticsRecord {
    double tau = 0.0;
    double J = 0.0;
    std::optional<double> J1;  // OCP solves only
    double residual_norm = 0.0;
    std::optional<double> tf;  // free terminal time only
    bool descent_ok = true;
};

enum class Termination { Converged, TauMax, MaxSteps };

const char* to_string(Termination t);

struct EvolveStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evaluations = 0;
    std::size_t jacobians = 0;
    std::size_t factorizations = 0;
    double max_rise = -std::numeric_limits<double>::infinity();  // largest per-step increase
};

template <typename State>
struct Snapshot {
    double tau = 0.0;
    State state;
};

template <typename State>
struct Evolution {
    State final_state;
    std::vector<DiagnosticsRecord> diagnostics;
    std::vector<Snapshot<State>> snapshots;
    Termination status = Termination::TauMax;
    EvolveStats stats;
    double tau = 0.0;
};

/// Flat tau-IVP: every nodal value (pinned ones carried with zero rate) plus tf when free.
class FlowSystem {
public:
    struct Monitor {
        double J = 0.0;
        std::optional<double> J1;
        double residual = 0.0;
        std::optional<double> tf;
        double monitored = 0.0;  // the functional that must not increase
    };

    virtual ~FlowSystem() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<bool> frozen() const = 0;
    virtual void rate(std::span<const double> y, std::span<double> out) const = 0;
    virtual Monitor monitor(std::span<const double> y) const = 0;
    /// Re-imposes state-dependent pinned values after an accepted step.
    virtual void project(std::span<double> /*y*/) const {}
};

class CovSystem final : public FlowSystem {
public:
    CovSystem(const VariationalProblem& p, const TimeGrid& grid, const CovGains& gains);

    std::size_t dimension() const override;
    std::vector<bool> frozen() const override;
    void rate(std::span<const double> y, std::span<double> out) const override;
    Monitor monitor(std::span<const double> y) const override;

    std::vector<double> pack(const Profile& y) const;
    Profile unpack(std::span<const double> y) const;

private:
    const VariationalProblem& p_;
    TimeGrid grid_;
    CovGains gains_;
};

class ZsSystem final : public FlowSystem {
public:
    ZsSystem(const OcpProblem& p, const TimeGrid& grid, const ZsGains& gains);

    std::size_t dimension() const override;
    std::vector<bool> frozen() const override;
    void rate(std::span<const double> y, std::span<double> out) const override;
    Monitor monitor(std::span<const double> y) const override;
    void project(std::span<double> y) const override;

    std::vector<double> pack(const FlowState& s) const;
    FlowState unpack(std::span<const double> y) const;
    const TimeGrid& grid() const { return grid_; }

private:
    const OcpProblem& p_;
    TimeGrid grid_;
    ZsGains gains_;
};

/// Integrates any flow system; see the typed overloads below.
Evolution<std::vector<double>> evolve_system(const FlowSystem& sys, std::vector<double> y0,
                                             const EvolveOptions& opts);

/// Integrates the calculus-of-variations flow; J must not increase. A sign
/// variant with zero smoothing gets smoothing 1e-3 unless fixed_step is set.
Evolution<Profile> evolve(const VariationalProblem& p, const Profile& initial, const TimeGrid& grid,
                          const CovGains& gains, const EvolveOptions& opts);

/// Integrates the optimal-control flow; J1 must not increase. Pinned values
/// of the initial state are enforced before integration starts.
Evolution<FlowState> evolve(const OcpProblem& p, const FlowState& initial, const TimeGrid& grid,
                            const ZsGains& gains, const EvolveOptions& opts);

}  // namespace vem
