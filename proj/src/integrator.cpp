#include "vem/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/SparseLU>

#include "vem/errors.hpp"

namespace vem {

namespace {

constexpr double kMinStep = 1e-14;

double wrms(std::span<const double> err, std::span<const double> a, std::span<const double> b,
            const std::vector<bool>& frozen, const StepTolerances& tol) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < err.size(); ++i) {
        if (!frozen.empty() && frozen[i]) continue;
        const double sc = tol.abs_tol + tol.rel_tol * std::max(std::abs(a[i]), std::abs(b[i]));
        const double r = err[i] / sc;
        sum += r * r;
        ++count;
    }
    return count ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
}

std::vector<bool> frozen_or_default(std::vector<bool> frozen, std::size_t dim) {
    if (frozen.empty()) frozen.assign(dim, false);
    if (frozen.size() != dim) throw DimensionError("frozen mask does not match the state size");
    return frozen;
}

// Dormand-Prince coefficients.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

// ---------------------------------------------------------------------------
// Rk45Stepper

Rk45Stepper::Rk45Stepper(FlowRhs rhs, std::vector<bool> frozen)
    : rhs_(std::move(rhs)), frozen_(std::move(frozen)) {}

void Rk45Stepper::eval(double tau, std::span<const double> y, std::span<double> out) {
    ++rhs_evals_;
    rhs_(tau, y, out);
    for (double v : out) {
        if (!std::isfinite(v)) throw EvaluationError("non-finite rate");
    }
}

namespace {

struct DpStages {
    std::vector<double> k1, k2, k3, k4, k5, k6, tmp, y5;
    explicit DpStages(std::size_t n)
        : k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), tmp(n), y5(n) {}
};

// Stages k1..k6 and the fifth-order solution of one Dormand-Prince step.
template <typename Eval>
void dp_trial(Eval&& eval, std::span<const double> y, double tau, double h,
              const std::vector<bool>& frozen, DpStages& s) {
    const std::size_t n = y.size();
    auto& t = s.tmp;
    eval(tau, y, s.k1);
    for (std::size_t i = 0; i < n; ++i) t[i] = y[i] + h * a21 * s.k1[i];
    eval(tau + c2 * h, t, s.k2);
    for (std::size_t i = 0; i < n; ++i) t[i] = y[i] + h * (a31 * s.k1[i] + a32 * s.k2[i]);
    eval(tau + c3 * h, t, s.k3);
    for (std::size_t i = 0; i < n; ++i)
        t[i] = y[i] + h * (a41 * s.k1[i] + a42 * s.k2[i] + a43 * s.k3[i]);
    eval(tau + c4 * h, t, s.k4);
    for (std::size_t i = 0; i < n; ++i)
        t[i] = y[i] + h * (a51 * s.k1[i] + a52 * s.k2[i] + a53 * s.k3[i] + a54 * s.k4[i]);
    eval(tau + c5 * h, t, s.k5);
    for (std::size_t i = 0; i < n; ++i)
        t[i] = y[i] + h * (a61 * s.k1[i] + a62 * s.k2[i] + a63 * s.k3[i] + a64 * s.k4[i] +
                           a65 * s.k5[i]);
    eval(tau + h, t, s.k6);
    for (std::size_t i = 0; i < n; ++i) {
        s.y5[i] = (!frozen.empty() && frozen[i])
                      ? y[i]
                      : y[i] + h * (b1 * s.k1[i] + b3 * s.k3[i] + b4 * s.k4[i] + b5 * s.k5[i] +
                                    b6 * s.k6[i]);
    }
}

}  // namespace

std::vector<double> Rk45Stepper::fixed_step(std::span<const double> y, double tau, double h) {
    DpStages s(y.size());
    dp_trial([this](double t, std::span<const double> a, std::span<double> b) { eval(t, a, b); },
             y, tau, h, frozen_, s);
    return std::move(s.y5);
}

StepResult Rk45Stepper::step(std::span<const double> y, double tau, double dtau,
                             const StepTolerances& tol) {
    const std::size_t n = y.size();
    if (!frozen_.empty() && frozen_.size() != n) {
        throw DimensionError("frozen mask does not match the state size");
    }
    double h = std::min(dtau, tol.max_step);
    StepResult res;
    std::vector<double> k7(n);
    std::vector<double> err(n);
    while (true) {
        if (!(h >= kMinStep)) {
            std::ostringstream msg;
            msg << "explicit step size fell below " << kMinStep << " at tau=" << tau
                << "; the flow looks stiff, try the implicit method";
            throw StiffnessError(msg.str());
        }
        DpStages s(n);
        double e = 0.0;
        try {
            dp_trial([this](double t, std::span<const double> a,
                            std::span<double> b) { eval(t, a, b); },
                     y, tau, h, frozen_, s);
            eval(tau + h, s.y5, k7);
            for (std::size_t i = 0; i < n; ++i) {
                err[i] = h * (e1 * s.k1[i] + e3 * s.k3[i] + e4 * s.k4[i] + e5 * s.k5[i] +
                              e6 * s.k6[i] + e7 * k7[i]);
            }
            e = wrms(err, y, s.y5, frozen_, tol);
        } catch (const EvaluationError&) {
            e = std::numeric_limits<double>::infinity();
        } catch (const InvalidGridError&) {
            e = std::numeric_limits<double>::infinity();
        }

        if (e <= 1.0) {
            constexpr double alpha = 0.17, beta = 0.04;
            const double ee = std::max(e, 1e-10);
            double fac = 0.9 * std::pow(ee, -alpha) * std::pow(err_old_, beta);
            fac = std::clamp(fac, 0.2, 10.0);
            if (res.rejected > 0) fac = std::min(fac, 1.0);
            err_old_ = std::max(e, 1e-4);
            res.y = std::move(s.y5);
            res.dtau = h;
            res.error = e;
            res.next_dtau = std::min(h * fac, tol.max_step);
            return res;
        }
        ++res.rejected;
        const double fac = std::isfinite(e) ? std::max(0.2, 0.9 * std::pow(e, -0.2)) : 0.25;
        h *= fac;
    }
}

// ---------------------------------------------------------------------------
// ImplicitStepper

struct ImplicitStepper::Impl {
    // Five-stage, L-stable, stiffly accurate SDIRK of order 4 with an
    // embedded order-3 solution (Hairer and Wanner, Solving ODEs II, IV.6).
    static constexpr int kStages = 5;
    static constexpr double gamma = 0.25;
    static constexpr double kA[kStages][kStages] = {
        {0.0, 0.0, 0.0, 0.0, 0.0},
        {0.5, 0.0, 0.0, 0.0, 0.0},
        {17.0 / 50.0, -1.0 / 25.0, 0.0, 0.0, 0.0},
        {371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.0, 0.0},
        {25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.0},
    };
    static constexpr double kC[kStages] = {0.25, 0.75, 11.0 / 20.0, 0.5, 1.0};
    // b - bhat; b is the last row of A plus gamma on the diagonal.
    static constexpr double kErr[kStages] = {-3.0 / 16.0, -27.0 / 32.0, 25.0 / 32.0, 0.0, 0.25};
    static constexpr int kMaxNewton = 10;

    FlowRhs rhs;
    std::size_t dim;
    std::vector<bool> frozen;
    std::vector<std::size_t> free_idx;

    // Free x free block of d(rate)/d(state). Flow Jacobians are banded apart
    // from the tf row and column, so they are stored sparse.
    Eigen::SparseMatrix<double> jac;
    bool have_jac = false;
    bool jac_fresh = false;  // computed at the current step's start state
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    bool lu_ok = false;
    double lu_h = -1.0;

    std::size_t n_jac = 0;
    std::size_t n_lu = 0;
    std::size_t n_rhs = 0;

    Impl(FlowRhs r, std::size_t d, std::vector<bool> fr)
        : rhs(std::move(r)), dim(d), frozen(frozen_or_default(std::move(fr), d)) {
        for (std::size_t i = 0; i < dim; ++i) {
            if (!frozen[i]) free_idx.push_back(i);
        }
    }

    void eval(double tau, std::span<const double> y, std::span<double> out) {
        ++n_rhs;
        rhs(tau, y, out);
        for (double v : out) {
            if (!std::isfinite(v)) throw EvaluationError("non-finite rate");
        }
    }

    void compute_jacobian(double tau, std::span<const double> y) {
        const std::size_t nf = free_idx.size();
        std::vector<Eigen::Triplet<double>> entries;
        std::vector<double> f0(dim), f1(dim), yp(y.begin(), y.end());
        eval(tau, y, f0);
        for (std::size_t c = 0; c < nf; ++c) {
            const std::size_t j = free_idx[c];
            const double d = 1.4901161193847656e-08 * std::max(1.0, std::abs(y[j]));
            yp[j] = y[j] + d;
            const double dd = yp[j] - y[j];
            eval(tau, yp, f1);
            yp[j] = y[j];
            for (std::size_t r = 0; r < nf; ++r) {
                const double diff = f1[free_idx[r]] - f0[free_idx[r]];
                if (diff != 0.0 || r == c) {
                    entries.emplace_back(static_cast<int>(r), static_cast<int>(c), diff / dd);
                }
            }
        }
        jac.resize(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(nf));
        jac.setFromTriplets(entries.begin(), entries.end());
        have_jac = true;
        jac_fresh = true;
        lu_h = -1.0;
        ++n_jac;
    }

    void factor(double h) {
        const Eigen::Index nf = jac.rows();
        Eigen::SparseMatrix<double> iter(nf, nf);
        iter.setIdentity();
        iter -= (gamma * h) * jac;
        iter.makeCompressed();
        lu.compute(iter);
        lu_ok = lu.info() == Eigen::Success;
        lu_h = h;
        ++n_lu;
    }

    // Solves z - gamma*h*f(z) = base for the free components; frozen entries of
    // z equal base. Returns false when Newton fails; slow reports degraded rates.
    bool newton(double tau, double h, std::span<const double> base, std::vector<double>& z,
                const StepTolerances& tol, bool& slow) {
        const std::size_t nf = free_idx.size();
        std::vector<double> fz(dim);
        Vec g(static_cast<Eigen::Index>(nf));
        double prev = 0.0;
        for (int it = 0; it < kMaxNewton; ++it) {
            eval(tau, z, fz);
            double zmax = 0.0;
            for (std::size_t r = 0; r < nf; ++r) {
                const std::size_t i = free_idx[r];
                g(static_cast<Eigen::Index>(r)) = base[i] + gamma * h * fz[i] - z[i];
                zmax = std::max(zmax, std::abs(z[i]));
            }
            if (!lu_ok) return false;
            const Vec dz = lu.solve(g);
            if (!dz.allFinite()) return false;
            const double norm = dz.cwiseAbs().maxCoeff();
            for (std::size_t r = 0; r < nf; ++r) z[free_idx[r]] += dz(static_cast<Eigen::Index>(r));
            const double limit = std::max(std::min(tol.rel_tol, 1e-8) * zmax, 1e-3 * tol.abs_tol);
            if (it > 0) {
                const double theta = norm / std::max(prev, 1e-300);
                if (theta >= 1.0) return false;
                if (theta > 0.5) slow = true;
            }
            if (norm <= limit) {
                if (it >= 4) slow = true;
                return true;
            }
            prev = norm;
        }
        return false;
    }

    StepResult step(std::span<const double> y, double tau, double dtau, const StepTolerances& tol) {
        if (y.size() != dim) throw DimensionError("state size does not match the stepper");
        const std::size_t nf = free_idx.size();
        StepResult res;
        double h = std::min(dtau, tol.max_step);
        jac_fresh = false;
        std::vector<std::vector<double>> k(kStages, std::vector<double>(dim, 0.0));
        std::vector<double> base(dim), z(dim);
        while (true) {
            if (!(h >= kMinStep)) {
                std::ostringstream msg;
                msg << "implicit step size fell below " << kMinStep << " at tau=" << tau
                    << " (Newton iteration keeps failing)";
                throw ConvergenceError(msg.str());
            }
            bool ok = true;
            bool slow = false;
            double e = 0.0;
            try {
                if (!have_jac) compute_jacobian(tau, y);
                if (lu_h != h) factor(h);

                // Stage s solves z = base + gamma h f(z), base = y + h sum_j a_sj k_j.
                for (int st = 0; ok && st < kStages; ++st) {
                    for (std::size_t i = 0; i < dim; ++i) {
                        double acc = 0.0;
                        for (int j = 0; j < st; ++j) acc += kA[st][j] * k[j][i];
                        base[i] = frozen[i] ? y[i] : y[i] + h * acc;
                        // Predictor: extrapolate with the previous stage slope.
                        z[i] = frozen[i] ? y[i] : base[i] + (st > 0 ? gamma * h * k[st - 1][i] : 0.0);
                    }
                    ok = newton(tau + kC[st] * h, h, base, z, tol, slow);
                    if (ok) {
                        for (std::size_t i : free_idx) k[st][i] = (z[i] - base[i]) / (gamma * h);
                    }
                }
                if (ok) {
                    Vec est(static_cast<Eigen::Index>(nf));
                    for (std::size_t r = 0; r < nf; ++r) {
                        const std::size_t i = free_idx[r];
                        double acc = 0.0;
                        for (int j = 0; j < kStages; ++j) acc += kErr[j] * k[j][i];
                        est(static_cast<Eigen::Index>(r)) = h * acc;
                    }
                    const Vec filtered = lu.solve(est);
                    std::vector<double> errv(dim, 0.0);
                    for (std::size_t r = 0; r < nf; ++r)
                        errv[free_idx[r]] = filtered(static_cast<Eigen::Index>(r));
                    e = wrms(errv, y, z, frozen, tol);
                    if (!std::isfinite(e)) ok = false;
                }
            } catch (const EvaluationError&) {
                ok = false;
            } catch (const InvalidGridError&) {
                ok = false;
            }

            if (!ok) {
                ++res.rejected;
                if (!jac_fresh) {
                    // Retry once with a Jacobian at the current state before shrinking.
                    have_jac = false;
                    try {
                        compute_jacobian(tau, y);
                    } catch (const EvaluationError&) {
                        throw ConvergenceError("rate is not finite at the current state");
                    }
                    continue;
                }
                h *= 0.5;
                continue;
            }
            if (slow && !jac_fresh) have_jac = false;

            if (e <= 1.0) {
                double fac = 0.9 * std::pow(std::max(e, 1e-16), -0.25);
                fac = std::clamp(fac, 0.2, 5.0);
                if (res.rejected > 0) fac = std::min(fac, 1.0);
                if (fac >= 1.0 && fac <= 1.2) fac = 1.0;  // keep the factorization
                // Stiffly accurate: the last stage is the step result.
                res.y.assign(z.begin(), z.end());
                for (std::size_t i = 0; i < dim; ++i) {
                    if (frozen[i]) res.y[i] = y[i];
                }
                res.dtau = h;
                res.error = e;
                res.next_dtau = std::min(h * fac, tol.max_step);
                return res;
            }
            ++res.rejected;
            h *= std::max(0.2, 0.9 * std::pow(e, -0.25));
        }
    }
};

ImplicitStepper::ImplicitStepper(FlowRhs rhs, std::size_t dim, std::vector<bool> frozen)
    : impl_(std::make_unique<Impl>(std::move(rhs), dim, std::move(frozen))) {}
ImplicitStepper::~ImplicitStepper() = default;
ImplicitStepper::ImplicitStepper(ImplicitStepper&&) noexcept = default;
ImplicitStepper& ImplicitStepper::operator=(ImplicitStepper&&) noexcept = default;

StepResult ImplicitStepper::step(std::span<const double> y, double tau, double dtau,
                                 const StepTolerances& tol) {
    return impl_->step(y, tau, dtau, tol);
}

std::size_t ImplicitStepper::jacobian_evaluations() const { return impl_->n_jac; }
std::size_t ImplicitStepper::factorizations() const { return impl_->n_lu; }
std::size_t ImplicitStepper::rhs_evaluations() const { return impl_->n_rhs; }

StepResult step_rk45(const FlowRhs& rhs, std::span<const double> y, double tau, double dtau,
                     const StepTolerances& tol) {
    Rk45Stepper s(rhs);
    return s.step(y, tau, dtau, tol);
}

StepResult step_implicit(const FlowRhs& rhs, std::span<const double> y, double tau, double dtau,
                         const StepTolerances& tol) {
    ImplicitStepper s(rhs, y.size());
    return s.step(y, tau, dtau, tol);
}

// ---------------------------------------------------------------------------
// evolve

void EvolveOptions::validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) throw UsageError("tolerances must be positive");
    if (!(tau_max > 0.0) || !std::isfinite(tau_max)) throw UsageError("tau_max must be positive");
    if (!(residual_tol >= 0.0)) throw UsageError("residual_tol must be non-negative");
    if (!(snapshot_every > 0.0)) throw UsageError("snapshot_every must be positive");
    if (!(fixed_step >= 0.0)) throw UsageError("fixed_step must be non-negative");
    if (!(descent_slack >= 0.0)) throw UsageError("descent_slack must be non-negative");
    if (!(max_step > 0.0)) throw UsageError("max_step must be positive");
    if (max_steps == 0) throw UsageError("max_steps must be positive");
}

const char* to_string(Termination t) {
    switch (t) {
        case Termination::Converged: return "converged";
        case Termination::TauMax: return "tau_max";
        case Termination::MaxSteps: return "max_steps";
    }
    return "unknown";
}

namespace {

DiagnosticsRecord make_record(double tau, const FlowSystem::Monitor& m, bool ok) {
    return DiagnosticsRecord{tau, m.J, m.J1, m.residual, m.tf, ok};
}

double max_abs(const std::vector<double>& v) {
    double r = 0.0;
    for (double x : v) r = std::max(r, std::abs(x));
    return r;
}

}  // namespace

Evolution<std::vector<double>> evolve_system(const FlowSystem& sys, std::vector<double> y,
                                             const EvolveOptions& opts) {
    opts.validate();
    const std::size_t dim = sys.dimension();
    if (y.size() != dim) throw DimensionError("initial state does not match the flow dimension");
    const std::vector<bool> frozen = sys.frozen();

    FlowRhs rhs = [&sys](double, std::span<const double> s, std::span<double> out) {
        sys.rate(s, out);
    };
    std::optional<Rk45Stepper> rk;
    std::optional<ImplicitStepper> implicit;
    if (opts.method == Method::ImplicitStiff && opts.fixed_step == 0.0) {
        implicit.emplace(rhs, dim, frozen);
    } else {
        rk.emplace(rhs, frozen);
    }
    const StepTolerances tol{opts.rel_tol, opts.abs_tol, opts.max_step};

    Evolution<std::vector<double>> out;
    std::vector<double> rate(dim);
    auto converged = [&](const FlowSystem::Monitor& m, const std::vector<double>& s) {
        if (m.residual <= opts.residual_tol) return true;
        sys.rate(s, rate);
        return max_abs(rate) <= opts.residual_tol;
    };

    sys.project(y);
    FlowSystem::Monitor mon = sys.monitor(y);
    out.diagnostics.push_back(make_record(0.0, mon, true));
    if (opts.keep_snapshots) out.snapshots.push_back({0.0, y});

    double tau = 0.0;
    double dt = opts.initial_step;
    if (opts.fixed_step > 0.0) {
        dt = opts.fixed_step;
    } else if (!(dt > 0.0)) {
        sys.rate(y, rate);
        const double r = max_abs(rate);
        const double scale = std::max(max_abs(y), 1.0);
        dt = r > 0.0 ? 1e-3 * scale / r : opts.snapshot_every;
        dt = std::clamp(dt, 1e-8, opts.snapshot_every);
    }
    dt = std::min(dt, opts.max_step);

    std::size_t snap_index = 1;
    bool interval_ok = true;
    const double slack = opts.descent_slack;
    const double abort_rise = 100.0 * std::max(slack, 1e-300);

    if (converged(mon, y)) {
        out.status = Termination::Converged;
        out.final_state = std::move(y);
        return out;
    }

    while (true) {
        if (out.stats.accepted >= opts.max_steps) {
            out.status = Termination::MaxSteps;
            break;
        }
        const double target = std::min(static_cast<double>(snap_index) * opts.snapshot_every,
                                       opts.tau_max);
        const double remaining = target - tau;
        const bool clamp = dt >= remaining;
        const double h = clamp ? remaining : dt;

        StepResult res;
        if (rk && opts.fixed_step > 0.0) {
            res.y = rk->fixed_step(y, tau, h);
            res.dtau = h;
            res.next_dtau = opts.fixed_step;
            for (double v : res.y) {
                if (!std::isfinite(v)) throw EvaluationError("fixed-step integration diverged");
            }
        } else if (rk) {
            res = rk->step(y, tau, h, tol);
        } else {
            res = implicit->step(y, tau, h, tol);
        }
        out.stats.rejected += static_cast<std::size_t>(res.rejected);
        ++out.stats.accepted;

        const bool landed = clamp && res.dtau == h;
        tau = landed ? target : tau + res.dtau;
        if (opts.fixed_step > 0.0) {
            dt = opts.fixed_step;
        } else {
            dt = landed ? std::max(res.next_dtau, dt) : res.next_dtau;
        }
        sys.project(res.y);
        y = std::move(res.y);

        const FlowSystem::Monitor next = sys.monitor(y);
        const double rise = next.monitored - mon.monitored;
        out.stats.max_rise = std::max(out.stats.max_rise, rise);
        if (rise > slack) {
            interval_ok = false;
            if (rise > abort_rise) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "monitored functional rose from " << mon.monitored << " to " << next.monitored
                    << " at tau=" << tau << " (step " << res.dtau << ")";
                throw DescentViolation(msg.str());
            }
        }
        mon = next;

        if (landed) {
            out.diagnostics.push_back(make_record(tau, mon, interval_ok));
            interval_ok = true;
            if (opts.keep_snapshots) out.snapshots.push_back({tau, y});
            ++snap_index;
            if (converged(mon, y)) {
                out.status = Termination::Converged;
                break;
            }
            if (tau >= opts.tau_max) {
                out.status = Termination::TauMax;
                break;
            }
        }
    }
    if (out.diagnostics.back().tau != tau) {
        out.diagnostics.push_back(make_record(tau, mon, interval_ok));
        if (opts.keep_snapshots) out.snapshots.push_back({tau, y});
    }
    out.tau = tau;
    if (rk) {
        out.stats.rhs_evaluations = rk->rhs_evaluations();
    } else {
        out.stats.rhs_evaluations = implicit->rhs_evaluations();
        out.stats.jacobians = implicit->jacobian_evaluations();
        out.stats.factorizations = implicit->factorizations();
    }
    out.final_state = std::move(y);
    return out;
}

// ---------------------------------------------------------------------------
// CovSystem

CovSystem::CovSystem(const VariationalProblem& p, const TimeGrid& grid, const CovGains& gains)
    : p_(p), grid_(grid), gains_(gains) {
    p_.validate();
    gains_.validate(p_.n);
}

std::size_t CovSystem::dimension() const { return grid_.size() * p_.n; }

std::vector<bool> CovSystem::frozen() const {
    std::vector<bool> fr(dimension(), false);
    const std::size_t last = grid_.size() - 1;
    for (std::size_t j = 0; j < p_.n; ++j) {
        if (p_.boundary.initial[j].fixed) fr[j] = true;
        if (p_.boundary.terminal[j].fixed) fr[last * p_.n + j] = true;
    }
    return fr;
}

std::vector<double> CovSystem::pack(const Profile& y) const {
    if (y.nodes() != grid_.size() || y.dim() != p_.n) {
        throw DimensionError("profile does not match the grid");
    }
    std::vector<double> out(dimension());
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        for (std::size_t j = 0; j < p_.n; ++j) {
            out[i * p_.n + j] = y.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return out;
}

Profile CovSystem::unpack(std::span<const double> y) const {
    if (y.size() != dimension()) throw DimensionError("state does not match the flow dimension");
    Profile out(grid_.size(), p_.n, "y");
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        for (std::size_t j = 0; j < p_.n; ++j) {
            out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = y[i * p_.n + j];
        }
    }
    return out;
}

void CovSystem::rate(std::span<const double> y, std::span<double> out) const {
    const Profile r = cov_rhs(p_, unpack(y), grid_, gains_);
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        for (std::size_t j = 0; j < p_.n; ++j) {
            out[i * p_.n + j] = r.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
}

FlowSystem::Monitor CovSystem::monitor(std::span<const double> y) const {
    const Profile prof = unpack(y);
    Monitor m;
    m.J = functional_J(p_, prof, grid_);
    m.residual = cov_optimality_residual(p_, prof, grid_);
    m.monitored = m.J;
    return m;
}

// ---------------------------------------------------------------------------
// ZsSystem

ZsSystem::ZsSystem(const OcpProblem& p, const TimeGrid& grid, const ZsGains& gains)
    : p_(p), grid_(grid), gains_(gains) {
    p_.validate();
    gains_.validate(p_.n, p_.m);
}

std::size_t ZsSystem::dimension() const {
    return grid_.size() * (2 * p_.n + p_.m) + (p_.terminal_time.free ? 1 : 0);
}

std::vector<bool> ZsSystem::frozen() const {
    std::vector<bool> fr(dimension(), false);
    const std::size_t w = 2 * p_.n + p_.m;
    const std::size_t last = (grid_.size() - 1) * w;
    for (std::size_t j = 0; j < p_.n; ++j) {
        fr[j] = true;  // x(t0)
        if (p_.terminal_state[j].fixed) {
            fr[last + j] = true;
        } else {
            fr[last + p_.n + j] = true;  // lam(tf) = phi_x
        }
    }
    return fr;
}

std::vector<double> ZsSystem::pack(const FlowState& s) const {
    const std::size_t N = grid_.size();
    const std::size_t n = p_.n, m = p_.m, w = 2 * n + m;
    if (s.x.nodes() != N || s.lam.nodes() != N || s.u.nodes() != N || s.x.dim() != n ||
        s.lam.dim() != n || s.u.dim() != m) {
        throw DimensionError("flow state does not match the grid");
    }
    if (p_.terminal_time.free != s.tf.has_value()) {
        throw DimensionError("flow state tf does not match the terminal-time mode");
    }
    std::vector<double> out(dimension());
    for (std::size_t i = 0; i < N; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * w + j] = s.x.values(r, static_cast<Eigen::Index>(j));
            out[i * w + n + j] = s.lam.values(r, static_cast<Eigen::Index>(j));
        }
        for (std::size_t j = 0; j < m; ++j) {
            out[i * w + 2 * n + j] = s.u.values(r, static_cast<Eigen::Index>(j));
        }
    }
    if (s.tf) out.back() = *s.tf;
    return out;
}

FlowState ZsSystem::unpack(std::span<const double> y) const {
    if (y.size() != dimension()) throw DimensionError("state does not match the flow dimension");
    const std::size_t N = grid_.size();
    const std::size_t n = p_.n, m = p_.m, w = 2 * n + m;
    FlowState s{Profile(N, n, "x"), Profile(N, n, "lam"), Profile(N, m, "u"), std::nullopt};
    for (std::size_t i = 0; i < N; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (std::size_t j = 0; j < n; ++j) {
            s.x.values(r, static_cast<Eigen::Index>(j)) = y[i * w + j];
            s.lam.values(r, static_cast<Eigen::Index>(j)) = y[i * w + n + j];
        }
        for (std::size_t j = 0; j < m; ++j) {
            s.u.values(r, static_cast<Eigen::Index>(j)) = y[i * w + 2 * n + j];
        }
    }
    if (p_.terminal_time.free) s.tf = y.back();
    return s;
}

void ZsSystem::rate(std::span<const double> y, std::span<double> out) const {
    const FlowState s = unpack(y);
    if (s.tf && !(*s.tf > p_.t0)) {
        throw EvaluationError("terminal time moved to or below t0");
    }
    const FlowRates r = zs_rhs(p_, s, grid_, gains_);
    const std::size_t n = p_.n, m = p_.m, w = 2 * n + m;
    for (std::size_t i = 0; i < grid_.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * w + j] = r.x(row, static_cast<Eigen::Index>(j));
            out[i * w + n + j] = r.lam(row, static_cast<Eigen::Index>(j));
        }
        for (std::size_t j = 0; j < m; ++j) {
            out[i * w + 2 * n + j] = r.u(row, static_cast<Eigen::Index>(j));
        }
    }
    if (p_.terminal_time.free) out.back() = r.tf;
}

FlowSystem::Monitor ZsSystem::monitor(std::span<const double> y) const {
    const FlowState s = unpack(y);
    Monitor m;
    m.J = bolza_cost(p_, s, grid_);
    m.J1 = j1_value(p_, s, grid_);
    m.residual = optimality_residual(p_, s, grid_);
    m.tf = s.tf;
    m.monitored = *m.J1;
    return m;
}

void ZsSystem::project(std::span<double> y) const {
    FlowState s = unpack(y);
    apply_pins(p_, s, grid_);
    const std::vector<double> pinned = pack(s);
    const std::vector<bool> fr = frozen();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (fr[i]) y[i] = pinned[i];
    }
}

// ---------------------------------------------------------------------------
// Typed entry points

namespace {

template <typename State, typename System>
Evolution<State> convert(const System& sys, Evolution<std::vector<double>>&& raw) {
    Evolution<State> out;
    out.final_state = sys.unpack(raw.final_state);
    out.diagnostics = std::move(raw.diagnostics);
    out.snapshots.reserve(raw.snapshots.size());
    for (auto& snap : raw.snapshots) out.snapshots.push_back({snap.tau, sys.unpack(snap.state)});
    out.status = raw.status;
    out.stats = raw.stats;
    out.tau = raw.tau;
    return out;
}

}  // namespace

Evolution<Profile> evolve(const VariationalProblem& p, const Profile& initial, const TimeGrid& grid,
                          const CovGains& gains, const EvolveOptions& opts) {
    CovGains g = gains;
    // A pure sign rate chatters and stalls step-size control, so adaptive
    // runs get a small tanh smoothing unless one was given.
    if (g.variant == CovVariant::SignFiniteTime && g.smoothing == 0.0 && opts.fixed_step == 0.0) {
        g.smoothing = 1e-3;
    }
    const CovSystem sys(p, grid, g);
    return convert<Profile>(sys, evolve_system(sys, sys.pack(initial), opts));
}

Evolution<FlowState> evolve(const OcpProblem& p, const FlowState& initial, const TimeGrid& grid,
                            const ZsGains& gains, const EvolveOptions& opts) {
    const ZsSystem sys(p, grid, gains);
    return convert<FlowState>(sys, evolve_system(sys, sys.pack(initial), opts));
}

}  // namespace vem
