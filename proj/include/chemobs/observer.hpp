#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "chemobs/dynamics.hpp"
#include "chemobs/errors.hpp"
#include "chemobs/kinetics.hpp"
#include "chemobs/linalg.hpp"
#include "chemobs/quadrature.hpp"

namespace chemobs {

/// Relative threshold below which a window's Gram determinant is treated
/// as singular (loss of strong observability over that window).
inline constexpr double kGramSingularTol = 1e-10;

/// Floor applied to non-positive biomass values produced by quadrature noise.
inline constexpr double kBiomassFloor = 1e-15;

/// Measured signals over one reset interval [tau_i, tau_i + r], shifted to
/// start at 0: substrate at the r/h + 1 grid nodes, inputs per step. The
/// window carries no absolute time; the reconstruction depends only on the
/// shifted samples.
struct ObserverWindow {
    double h = 0.0;
    std::vector<double> s;     // node samples, size steps + 1
    std::vector<double> D;     // per-step samples, size steps
    std::vector<double> s_in;  // per-step samples, size steps

    ObserverWindow(double h, std::vector<double> s, std::vector<double> D,
                   std::vector<double> s_in)
        : h(h), s(std::move(s)), D(std::move(D)), s_in(std::move(s_in)) {
        if (!(this->h > 0.0)) throw DomainError("ObserverWindow: step must be > 0");
        if (this->s.size() < 2)
            throw DomainError("ObserverWindow: need at least one full step");
        if (this->D.size() + 1 != this->s.size() || this->s_in.size() + 1 != this->s.size())
            throw DomainError("ObserverWindow: sample counts are inconsistent");
        for (double v : this->s)
            if (!std::isfinite(v) || !(v > 0.0))
                throw DomainError("ObserverWindow: substrate samples must be finite and > 0");
        for (double v : this->D)
            if (!std::isfinite(v) || !(v >= 0.0))
                throw DomainError("ObserverWindow: dilution samples must be >= 0");
        for (double v : this->s_in)
            if (!std::isfinite(v) || !(v >= 0.0))
                throw DomainError("ObserverWindow: inflow samples must be >= 0");
    }

    std::size_t steps() const noexcept { return D.size(); }
    double r() const noexcept { return h * (double)steps(); }
};

/// Diagnostic record of one window's Gram matrix Q = integral of q q'.
struct GramRecord {
    std::size_t n = 0;
    std::vector<double> Q;          // row-major n x n
    double det = 0.0;
    double det_normalized = 0.0;    // det / prod(diag)
    double cond_estimate = 0.0;
    bool singular = false;
};

/// Per-species integrand profiles over a window:
///   exponent_i(t) = int_0^t (mu_i(s(w)) - D(w) - b_i) dw
///   phi_i(t)      = int_0^t g_i(s(tau)) exp(exponent_i(tau)) dtau
/// Inner exponents are accumulated first, then the outer integral; both by
/// cumulative trapezoid on the window grid, with the piecewise-constant
/// input integrated exactly per step.
struct PhiProfiles {
    std::vector<std::vector<double>> exponent;  // [species][node]
    std::vector<std::vector<double>> phi;       // [species][node]
};

inline PhiProfiles phi_profiles(const ObserverWindow& w,
                                const std::vector<SpeciesParams>& species) {
    const std::size_t m = w.steps();
    PhiProfiles out;
    out.exponent.resize(species.size());
    out.phi.resize(species.size());
    for (std::size_t i = 0; i < species.size(); ++i) {
        const SpeciesParams& sp = species[i];
        auto& e = out.exponent[i];
        auto& phi = out.phi[i];
        e.assign(m + 1, 0.0);
        phi.assign(m + 1, 0.0);
        double u_prev = sp.g(w.s[0]);  // exp(0) = 1
        for (std::size_t j = 0; j < m; ++j) {
            e[j + 1] = e[j] + 0.5 * w.h * (sp.mu(w.s[j]) + sp.mu(w.s[j + 1])) -
                       w.h * (w.D[j] + sp.b);
            const double u = sp.g(w.s[j + 1]) * std::exp(e[j + 1]);
            phi[j + 1] = phi[j] + 0.5 * w.h * (u_prev + u);
            u_prev = u;
        }
    }
    return out;
}

/// Output residual p(t) = s(t) - s(0) - int_0^t D(w) (s_in(w) - s(w)) dw
/// on the window grid; p(0) = 0.
inline std::vector<double> residual_profile(const ObserverWindow& w) {
    const std::size_t m = w.steps();
    std::vector<double> p(m + 1, 0.0);
    double input_int = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        input_int += w.h * w.D[j] * (w.s_in[j] - 0.5 * (w.s[j] + w.s[j + 1]));
        p[j + 1] = w.s[j + 1] - w.s[0] - input_int;
    }
    return p;
}

/// Result of one least-squares reconstruction. `estimate` is empty when the
/// window's Gram matrix is singular, in which case no biomass estimate can
/// be extracted from it.
struct ReconstructionResult {
    std::optional<std::vector<double>> estimate;  // biomass at the window end
    GramRecord gram;
};

namespace detail {

inline GramRecord make_gram_record(std::size_t n, std::vector<double> Q) {
    GramRecord g;
    g.n = n;
    g.det = linalg::det(n, Q);
    double diag_prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) diag_prod *= Q[i * n + i];
    g.det_normalized = diag_prod > 0.0 ? g.det / diag_prod : 0.0;
    g.singular = !(std::fabs(g.det_normalized) >= kGramSingularTol);
    g.cond_estimate = g.singular ? std::numeric_limits<double>::infinity()
                                 : linalg::cond1_estimate(n, Q);
    g.Q = std::move(Q);
    return g;
}

}  // namespace detail

/// Least-squares reconstruction of the biomass vector from one window of
/// output and input measurements:
///
///   q(tau) = -(phi_1(tau), ..., phi_n(tau))'
///   Q       = int q q' dtau,   m = int p q dtau
///   x0_hat  = Q^{-1} m,        estimate = Phi(r) x0_hat
///
/// The estimate equals the true biomass at the window end, up to quadrature
/// error, whenever the generating system is strongly observable over the
/// window. It is a function of the measured window only; no prior estimate
/// enters.
inline ReconstructionResult reconstruct_biomass(const ObserverWindow& w,
                                                const std::vector<SpeciesParams>& species) {
    if (species.empty()) throw DomainError("reconstruct_biomass: no species");
    const std::size_t n = species.size();
    const std::size_t m = w.steps();
    const PhiProfiles prof = phi_profiles(w, species);
    const std::vector<double> p = residual_profile(w);

    std::vector<double> Q(n * n, 0.0), rhs_vec(n, 0.0), prod(m + 1);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a; b < n; ++b) {
            for (std::size_t j = 0; j <= m; ++j)
                prod[j] = prof.phi[a][j] * prof.phi[b][j];
            const double v = trapezoid(w.h, prod);
            Q[a * n + b] = v;
            Q[b * n + a] = v;
        }
        for (std::size_t j = 0; j <= m; ++j) prod[j] = -p[j] * prof.phi[a][j];
        rhs_vec[a] = trapezoid(w.h, prod);
    }

    ReconstructionResult res;
    res.gram = detail::make_gram_record(n, Q);
    if (res.gram.singular) return res;

    std::vector<double> x0;
    if (!linalg::lu_solve(linalg::lu_factor(n, res.gram.Q), rhs_vec, x0)) {
        res.gram.singular = true;
        return res;
    }
    std::vector<double> est(n);
    for (std::size_t i = 0; i < n; ++i)
        est[i] = std::exp(prof.exponent[i][m]) * x0[i];
    res.estimate = std::move(est);
    return res;
}

/// Two-species reconstruction written out in closed form (Cramer's rule on
/// the 2x2 normal equations). Kept as an independent assembly of the same
/// least-squares solution, used to cross-check reconstruct_biomass.
inline ReconstructionResult reconstruct_biomass_n2_closed_form(
    const ObserverWindow& w, const std::vector<SpeciesParams>& species) {
    if (species.size() != 2)
        throw DomainError("reconstruct_biomass_n2_closed_form: exactly two species required");
    const std::size_t m = w.steps();
    const PhiProfiles prof = phi_profiles(w, species);
    const std::vector<double> p = residual_profile(w);
    const auto& phi1 = prof.phi[0];
    const auto& phi2 = prof.phi[1];

    std::vector<double> prod(m + 1);
    const auto integral = [&](auto&& f) {
        for (std::size_t j = 0; j <= m; ++j) prod[j] = f(j);
        return trapezoid(w.h, prod);
    };
    const double i11 = integral([&](std::size_t j) { return phi1[j] * phi1[j]; });
    const double i22 = integral([&](std::size_t j) { return phi2[j] * phi2[j]; });
    const double i12 = integral([&](std::size_t j) { return phi1[j] * phi2[j]; });
    // sign convention: s(0) - s(t) + int D (s_in - s) = -p(t)
    const double j1 = integral([&](std::size_t j) { return -p[j] * phi1[j]; });
    const double j2 = integral([&](std::size_t j) { return -p[j] * phi2[j]; });

    ReconstructionResult res;
    res.gram = detail::make_gram_record(2, {i11, i12, i12, i22});
    if (res.gram.singular) return res;

    const long double den = (long double)i11 * i22 - (long double)i12 * i12;
    const long double n1 = (long double)i22 * j1 - (long double)i12 * j2;
    const long double n2 = (long double)i11 * j2 - (long double)i12 * j1;
    res.estimate = std::vector<double>{
        (double)(n1 / den) * std::exp(prof.exponent[0][m]),
        (double)(n2 / den) * std::exp(prof.exponent[1][m])};
    return res;
}

/// Measured signals an observer is allowed to see: the substrate channel
/// (exact or noisy), the applied inputs, and the grid they live on.
struct MeasurementView {
    double h = 0.0;
    std::vector<double> s;     // node samples
    std::vector<double> D;     // per-step samples
    std::vector<double> s_in;  // per-step samples

    static MeasurementView from_trajectory(const Trajectory& traj,
                                           bool use_noisy = false) {
        MeasurementView v;
        v.h = traj.h;
        if (use_noisy) {
            if (!traj.s_noisy)
                throw DomainError("MeasurementView: trajectory has no noisy channel");
            v.s = *traj.s_noisy;
        } else {
            v.s = traj.substrate();
        }
        v.D = traj.D;
        v.s_in = traj.s_in;
        return v;
    }

    std::size_t steps() const noexcept { return D.size(); }

    ObserverWindow window(std::size_t first_step, std::size_t count) const {
        std::vector<double> ws(s.begin() + (std::ptrdiff_t)first_step,
                               s.begin() + (std::ptrdiff_t)(first_step + count + 1));
        std::vector<double> wD(D.begin() + (std::ptrdiff_t)first_step,
                               D.begin() + (std::ptrdiff_t)(first_step + count));
        std::vector<double> wsin(s_in.begin() + (std::ptrdiff_t)first_step,
                                 s_in.begin() + (std::ptrdiff_t)(first_step + count));
        return ObserverWindow(h, std::move(ws), std::move(wD), std::move(wsin));
    }
};

/// Full record of one observer run on a measured trajectory.
struct ObserverRun {
    double h = 0.0;
    double r = 0.0;
    std::vector<std::vector<double>> z;   // [node][species]
    std::vector<GramRecord> windows;      // one per reset attempt
    std::size_t skipped_resets = 0;       // resets skipped due to singular Gram
    std::size_t clamped_estimates = 0;    // non-positive estimate components floored
};

/// Hybrid dead-beat observer: between resets propagate
///   z_i' = (mu_i(s(t)) - D(t) - b_i) z_i
/// by RK4 on the measurement grid (substrate at half-steps by local cubic
/// interpolation); every r time units replace z with the least-squares
/// reconstruction over the window just completed. Singular windows are
/// skipped and the estimate keeps propagating open loop.
inline ObserverRun run_observer(const MeasurementView& measured,
                                const std::vector<SpeciesParams>& species,
                                double r, const std::vector<double>& z0) {
    const std::size_t n = species.size();
    if (n == 0) throw DomainError("run_observer: no species");
    if (z0.size() != n)
        throw DomainError("run_observer: z0 dimension does not match the species list");
    for (double v : z0)
        if (!(v > 0.0) || !std::isfinite(v))
            throw DomainError("run_observer: z0 must be finite and > 0");
    const std::size_t reset_steps = detail::checked_step_count(r, measured.h, "run_observer: r");
    const std::size_t steps = measured.steps();

    ObserverRun run;
    run.h = measured.h;
    run.r = r;
    run.z.reserve(steps + 1);
    run.z.push_back(z0);

    std::vector<double> z = z0;
    detail::Rk4Scratch scratch(n);
    std::span<const double> s_nodes(measured.s);
    for (std::size_t j = 0; j < steps; ++j) {
        const double D = measured.D[j];
        const double s_lo = measured.s[j];
        const double s_mid = midpoint(s_nodes, j);
        const double s_hi = measured.s[j + 1];
        detail::rk4_step(
            [&](const double* zz, double* dz, double stage) {
                const double s_raw = stage == 0.0 ? s_lo : (stage == 1.0 ? s_hi : s_mid);
                const double s = s_raw > 0.0 ? s_raw : 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    dz[i] = (species[i].mu(s) - D - species[i].b) * zz[i];
            },
            z, measured.h, scratch);

        if ((j + 1) % reset_steps == 0) {
            const ObserverWindow w = measured.window(j + 1 - reset_steps, reset_steps);
            ReconstructionResult res = reconstruct_biomass(w, species);
            if (res.estimate) {
                z = std::move(*res.estimate);
                for (double& v : z)
                    if (!(v > 0.0)) {
                        v = kBiomassFloor;
                        ++run.clamped_estimates;
                    }
            } else {
                ++run.skipped_resets;
            }
            run.windows.push_back(std::move(res.gram));
        }
        run.z.push_back(z);
    }
    return run;
}

}  // namespace chemobs
