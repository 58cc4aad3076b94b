#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "chemobs/dynamics.hpp"
#include "chemobs/errors.hpp"
#include "chemobs/kinetics.hpp"
#include "chemobs/observer.hpp"

namespace chemobs {

/// Parameters of the proportional substrate-feedback stabilizer
///   D = mu(s) (D* s*) / ((D* + b) x*) * (z / s) + L max(0, s* - s)
/// for a single species with g = K mu. (s*, x*) must be the equilibrium
/// for (D*, s_in).
struct FeedbackParams {
    double D_star = 0.0;
    double s_star = 0.0;
    double x_star = 0.0;
    double L = 0.0;
    double b = 0.0;  // copied from the species
    double K = 1.0;  // yield constant, g = K mu
};

/// Check the equilibrium consistency of a feedback parameterization against
/// the growth model and inflow concentration it will run with.
inline void validate_feedback(const FeedbackParams& fp, const GrowthModel& mu,
                              double s_in) {
    if (!(fp.L > 0.0)) throw DomainError("feedback: L must be > 0");
    if (!(fp.K > 0.0)) throw DomainError("feedback: K must be > 0");
    if (!(fp.D_star > 0.0)) throw DomainError("feedback: D_star must be > 0");
    if (!(fp.x_star > 0.0)) throw DomainError("feedback: x_star must be > 0");
    if (!(fp.s_star > 0.0) || !(fp.s_star < s_in))
        throw DomainError("feedback: s_star must lie in (0, s_in)");
    const double growth = mu(fp.s_star);
    if (std::fabs(growth - (fp.D_star + fp.b)) > 1e-6 * std::max(1.0, growth))
        throw DomainError("feedback: (s_star, D_star) is not an equilibrium: mu(s*) != D* + b");
    const double balance = fp.D_star * (s_in - fp.s_star) - fp.K * growth * fp.x_star;
    if (std::fabs(balance) > 1e-6 * std::max(1.0, fp.D_star * s_in))
        throw DomainError("feedback: x_star does not balance the substrate equation");
}

/// Dilution rate commanded by the stabilizer from the measured substrate s
/// and the biomass estimate z (certainty equivalence). Always >= 0.
inline double feedback_dilution(const FeedbackParams& fp, const GrowthModel& mu,
                                double s, double z) {
    if (!(s > 0.0)) throw DomainError("feedback_dilution: requires s > 0");
    if (!(z > 0.0)) throw DomainError("feedback_dilution: requires z > 0");
    const double gain = fp.D_star * fp.s_star / ((fp.D_star + fp.b) * fp.x_star);
    return mu(s) * gain * (z / s) + fp.L * std::max(0.0, fp.s_star - s);
}

/// Closed-loop record: plant trajectory (with the applied dilution in its
/// input channel), the observer estimate per node, and reset diagnostics.
struct ClosedLoopRun {
    Trajectory trajectory;
    std::vector<double> z;  // per node
    std::vector<GramRecord> windows;
    std::size_t skipped_resets = 0;
    std::size_t clamped_estimates = 0;
};

/// Simulate the output-feedback loop: plant, observer propagation
/// z' = (mu(s) - D - b) z, and D recomputed from the current (s, z) each
/// step and held for that step. The observer resets every r time units from
/// the recorded window of measured substrate and applied inputs. After the
/// first reset the estimate coincides with the true biomass up to
/// quadrature error, and the loop behaves as the full-state feedback loop.
inline ClosedLoopRun closed_loop_simulate(const ChemostatModel& model,
                                          const FeedbackParams& fp, double s_in,
                                          double r, std::array<double, 3> initial,
                                          double t_span, double h) {
    if (model.n() != 1)
        throw DomainError("closed_loop_simulate: exactly one species required");
    const SpeciesParams& sp = model.species[0];
    if (std::fabs(sp.b - fp.b) > 0.0)
        throw DomainError("closed_loop_simulate: feedback mortality differs from the species");
    if (!sp.g.is_monod() || !sp.mu.is_monod() ||
        sp.g.half_saturation() != sp.mu.half_saturation() ||
        std::fabs(sp.g.max_rate() - fp.K * sp.mu.max_rate()) >
            1e-12 * sp.mu.max_rate())
        throw DomainError("closed_loop_simulate: species must satisfy g = K mu");
    validate_feedback(fp, sp.mu, s_in);

    const auto [x0, s0, z0] = initial;
    if (!(x0 > 0.0) || !(z0 > 0.0))
        throw DomainError("closed_loop_simulate: x0 and z0 must be > 0");
    if (!(s0 > 0.0) || !(s0 < s_in))
        throw DomainError("closed_loop_simulate: s0 must lie in (0, s_in)");
    const std::size_t steps = detail::checked_step_count(t_span, h, "closed_loop_simulate: t_span");
    const std::size_t reset_steps = detail::checked_step_count(r, h, "closed_loop_simulate: r");

    ClosedLoopRun run;
    Trajectory& traj = run.trajectory;
    traj.h = h;
    traj.states.reserve(steps + 1);
    traj.D.reserve(steps);
    traj.s_in.reserve(steps);
    traj.states.push_back(State{{x0}, s0});
    run.z.reserve(steps + 1);
    run.z.push_back(z0);

    const SubstrateDomain domain = SubstrateDomain::bounded_by_inflow(s_in);
    std::vector<double> y = {x0, s0, z0};
    detail::Rk4Scratch scratch(3);

    for (std::size_t j = 0; j < steps; ++j) {
        const double D = feedback_dilution(fp, sp.mu, y[1], y[2]);
        detail::rk4_step(
            [&](const double* yy, double* dy, double) {
                const double s = yy[1] > 0.0 ? yy[1] : 0.0;
                const double alpha = sp.mu(s) - D - sp.b;
                dy[0] = alpha * yy[0];
                dy[1] = D * (s_in - yy[1]) - sp.g(s) * yy[0];
                dy[2] = alpha * yy[2];
            },
            y, h, scratch);

        // repair (x, s); z is the estimator's own state and only floored
        std::vector<double> xs = {y[0], y[1]};
        switch (detail::repair_domain(xs, domain)) {
            case detail::Repair::ok:
                break;
            case detail::Repair::clamped:
                ++traj.clamp_count;
                break;
            case detail::Repair::exited:
                throw IntegrationDomainError(
                    "closed_loop_simulate: state left the invariant domain at t = " +
                        std::to_string(h * (double)(j + 1)),
                    h * (double)(j + 1));
        }
        y[0] = xs[0];
        y[1] = xs[1];
        if (!(y[2] > 0.0)) y[2] = kBiomassFloor;

        traj.states.push_back(State{{y[0]}, y[1]});
        traj.D.push_back(D);
        traj.s_in.push_back(s_in);

        if ((j + 1) % reset_steps == 0) {
            std::vector<double> ws(reset_steps + 1), wD(reset_steps), wsin(reset_steps, s_in);
            for (std::size_t l = 0; l <= reset_steps; ++l)
                ws[l] = traj.states[j + 1 - reset_steps + l].s;
            for (std::size_t l = 0; l < reset_steps; ++l)
                wD[l] = traj.D[j + 1 - reset_steps + l];
            const ObserverWindow w(h, std::move(ws), std::move(wD), std::move(wsin));
            ReconstructionResult res = reconstruct_biomass(w, model.species);
            if (res.estimate) {
                y[2] = (*res.estimate)[0];
                if (!(y[2] > 0.0)) {
                    y[2] = kBiomassFloor;
                    ++run.clamped_estimates;
                }
            } else {
                ++run.skipped_resets;
            }
            run.windows.push_back(std::move(res.gram));
        }
        run.z.push_back(y[2]);
    }
    return run;
}

}  // namespace chemobs
