#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "chemobs/errors.hpp"
#include "chemobs/kinetics.hpp"

namespace chemobs {

/// Admissible substrate set. Either the open half line (0, +inf), or the
/// interval (0, s_in) when the inflow concentration is a known constant.
struct SubstrateDomain {
    enum class Kind { open_half_line, bounded_by_inflow };
    Kind kind = Kind::open_half_line;
    double s_in_bound = 0.0;  // only meaningful for bounded_by_inflow

    static SubstrateDomain open_half_line() { return {}; }

    static SubstrateDomain bounded_by_inflow(double s_in) {
        if (!(s_in > 0.0))
            throw DomainError("SubstrateDomain: inflow bound must be > 0");
        return {Kind::bounded_by_inflow, s_in};
    }

    bool bounded() const noexcept { return kind == Kind::bounded_by_inflow; }
};

/// n competing species plus the substrate-domain descriptor.
struct ChemostatModel {
    std::vector<SpeciesParams> species;
    SubstrateDomain domain;

    ChemostatModel(std::vector<SpeciesParams> sp, SubstrateDomain dom = {})
        : species(std::move(sp)), domain(dom) {
        if (species.empty())
            throw DomainError("ChemostatModel: at least one species required");
    }

    std::size_t n() const noexcept { return species.size(); }
};

/// Biomass concentrations x (all > 0) and substrate concentration s.
struct State {
    std::vector<double> x;
    double s = 0.0;
};

/// Piecewise-constant input pair on a uniform grid: the value on
/// [t_j, t_{j+1}) is sample j; past the end of a table the last sample is
/// held. The grid step h is also the integration step.
struct InputSignal {
    double h = 1e-3;
    std::vector<double> D;
    std::vector<double> s_in;

    InputSignal(double h, std::vector<double> D, std::vector<double> s_in)
        : h(h), D(std::move(D)), s_in(std::move(s_in)) {
        if (!(this->h > 0.0)) throw DomainError("InputSignal: step must be > 0");
        if (this->D.empty() || this->s_in.empty())
            throw DomainError("InputSignal: input tables must be non-empty");
        for (double v : this->D)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw DomainError("InputSignal: dilution samples must be finite and >= 0");
        for (double v : this->s_in)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw DomainError("InputSignal: inflow samples must be finite and >= 0");
    }

    static InputSignal constant(double h, double D, double s_in) {
        return InputSignal(h, {D}, {s_in});
    }

    double D_at(std::size_t step) const {
        return D[step < D.size() ? step : D.size() - 1];
    }
    double s_in_at(std::size_t step) const {
        return s_in[step < s_in.size() ? step : s_in.size() - 1];
    }
};

/// Gaussian measurement noise on the recorded substrate channel.
struct NoiseSpec {
    double std = 0.0;
    std::uint64_t seed = 0;
};

/// Uniform-grid record of one integration: node states plus the per-step
/// inputs that were actually applied (inputs[j] acted on [t_j, t_{j+1})).
struct Trajectory {
    double t0 = 0.0;
    double h = 0.0;
    std::vector<State> states;    // size steps + 1
    std::vector<double> D;        // size steps
    std::vector<double> s_in;     // size steps
    std::optional<std::vector<double>> s_noisy;  // size steps + 1
    std::size_t clamp_count = 0;

    std::size_t steps() const noexcept { return D.size(); }
    double time_at(std::size_t node) const { return t0 + h * (double)node; }

    std::vector<double> substrate() const {
        std::vector<double> s(states.size());
        for (std::size_t j = 0; j < states.size(); ++j) s[j] = states[j].s;
        return s;
    }
};

namespace detail {

inline void validate_state(const ChemostatModel& model, const State& st) {
    if (st.x.size() != model.n())
        throw DomainError("state: biomass dimension does not match the model");
    for (double xi : st.x)
        if (!std::isfinite(xi) || !(xi > 0.0))
            throw DomainError("state: biomass concentrations must be finite and > 0");
    if (!std::isfinite(st.s) || !(st.s > 0.0))
        throw DomainError("state: substrate concentration must be finite and > 0");
    if (model.domain.bounded() && !(st.s < model.domain.s_in_bound))
        throw DomainError("state: substrate concentration must lie below the inflow bound");
}

enum class Repair { ok, clamped, exited };

/// Push a state that strayed outside the invariant domain back to just
/// inside it, provided the violation is within eps_dom; larger violations
/// indicate a step size problem and are reported as exits.
inline Repair repair_domain(std::vector<double>& y, const SubstrateDomain& dom,
                            double eps_dom = 1e-12, double eps_clamp = 1e-15) {
    Repair r = Repair::ok;
    const std::size_t n = y.size() - 1;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] > 0.0) continue;
        if (-y[i] > eps_dom) return Repair::exited;
        y[i] = eps_clamp;
        r = Repair::clamped;
    }
    double& s = y[n];
    if (!(s > 0.0)) {
        if (-s > eps_dom) return Repair::exited;
        s = eps_clamp;
        r = Repair::clamped;
    }
    if (dom.bounded() && !(s < dom.s_in_bound)) {
        if (s - dom.s_in_bound > eps_dom) return Repair::exited;
        s = dom.s_in_bound - eps_clamp;
        r = Repair::clamped;
    }
    return r;
}

/// Right-hand side without state validation; stage values may graze the
/// boundary, so the substrate is floored at 0 for rate evaluation.
inline void rhs_raw(const ChemostatModel& model, const double* y, double D,
                    double s_in, double* dy) {
    const std::size_t n = model.n();
    const double s = y[n] > 0.0 ? y[n] : 0.0;
    double consumption = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const SpeciesParams& sp = model.species[i];
        dy[i] = (sp.mu(s) - D - sp.b) * y[i];
        consumption += sp.g(s) * y[i];
    }
    dy[n] = D * (s_in - y[n]) - consumption;
}

/// One classical RK4 step of y' = f(y) with inputs held constant.
/// Scratch buffers are caller-provided so stepping does not allocate.
struct Rk4Scratch {
    std::vector<double> k1, k2, k3, k4, tmp;
    explicit Rk4Scratch(std::size_t dim)
        : k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim) {}
};

template <typename Rhs>
inline void rk4_step(Rhs&& f, std::vector<double>& y, double h, Rk4Scratch& w) {
    const std::size_t dim = y.size();
    f(y.data(), w.k1.data(), 0.0);
    for (std::size_t i = 0; i < dim; ++i) w.tmp[i] = y[i] + 0.5 * h * w.k1[i];
    f(w.tmp.data(), w.k2.data(), 0.5);
    for (std::size_t i = 0; i < dim; ++i) w.tmp[i] = y[i] + 0.5 * h * w.k2[i];
    f(w.tmp.data(), w.k3.data(), 0.5);
    for (std::size_t i = 0; i < dim; ++i) w.tmp[i] = y[i] + h * w.k3[i];
    f(w.tmp.data(), w.k4.data(), 1.0);
    for (std::size_t i = 0; i < dim; ++i)
        y[i] += h / 6.0 * (w.k1[i] + 2.0 * (w.k2[i] + w.k3[i]) + w.k4[i]);
}

inline std::size_t checked_step_count(double span, double h, const char* what) {
    const double raw = span / h;
    const double rounded = std::round(raw);
    if (rounded < 0.5 || std::fabs(raw - rounded) > 1e-9 * std::max(1.0, raw))
        throw DomainError(std::string(what) + " must be a positive integer multiple of the grid step");
    return (std::size_t)rounded;
}

}  // namespace detail

/// Exact right-hand side of the chemostat ODE:
///   dx_i = (mu_i(s) - D - b_i) x_i
///   ds   = D (s_in - s) - sum_i g_i(s) x_i
/// Accepts s = 0 (all rates vanish there); biomass must be positive.
inline std::pair<std::vector<double>, double> rhs(const ChemostatModel& model,
                                                  const State& state, double D,
                                                  double s_in) {
    if (state.x.size() != model.n())
        throw DomainError("rhs: biomass dimension does not match the model");
    for (double xi : state.x)
        if (!std::isfinite(xi) || !(xi > 0.0))
            throw DomainError("rhs: biomass concentrations must be finite and > 0");
    if (!std::isfinite(state.s) || !(state.s >= 0.0))
        throw DomainError("rhs: substrate concentration must be finite and >= 0");
    if (!(D >= 0.0) || !(s_in >= 0.0))
        throw DomainError("rhs: inputs must be >= 0");
    const std::size_t n = model.n();
    std::vector<double> y(n + 1), dy(n + 1);
    for (std::size_t i = 0; i < n; ++i) y[i] = state.x[i];
    y[n] = state.s;
    detail::rhs_raw(model, y.data(), D, s_in, dy.data());
    std::vector<double> dx(dy.begin(), dy.begin() + (std::ptrdiff_t)n);
    return {std::move(dx), dy[n]};
}

/// Integrate the chemostat with classical fixed-step RK4 on the input grid.
/// Inputs are held constant within each step. If `noise` is given, a noisy
/// copy of the substrate channel is recorded alongside the exact one (the
/// dynamics themselves stay noise free).
///
/// States that leave the invariant domain by more than 1e-12 abort with
/// IntegrationDomainError; smaller violations are clamped back inside and
/// counted in Trajectory::clamp_count.
inline Trajectory integrate(const ChemostatModel& model, const State& initial,
                            const InputSignal& inputs, double t_span,
                            std::optional<NoiseSpec> noise = std::nullopt) {
    detail::validate_state(model, initial);
    const double h = inputs.h;
    const std::size_t steps = detail::checked_step_count(t_span, h, "integrate: t_span");
    if (model.domain.bounded()) {
        for (std::size_t j = 0; j < steps; ++j)
            if (inputs.s_in_at(j) != model.domain.s_in_bound)
                throw DomainError(
                    "integrate: bounded substrate domain requires s_in fixed at its bound");
    }
    const std::size_t n = model.n();

    Trajectory traj;
    traj.h = h;
    traj.states.reserve(steps + 1);
    traj.D.reserve(steps);
    traj.s_in.reserve(steps);
    traj.states.push_back(initial);

    std::vector<double> y(n + 1);
    for (std::size_t i = 0; i < n; ++i) y[i] = initial.x[i];
    y[n] = initial.s;
    detail::Rk4Scratch scratch(n + 1);

    for (std::size_t j = 0; j < steps; ++j) {
        const double D = inputs.D_at(j);
        const double s_in = inputs.s_in_at(j);
        detail::rk4_step(
            [&](const double* yy, double* dy, double) {
                detail::rhs_raw(model, yy, D, s_in, dy);
            },
            y, h, scratch);
        switch (detail::repair_domain(y, model.domain)) {
            case detail::Repair::ok:
                break;
            case detail::Repair::clamped:
                ++traj.clamp_count;
                break;
            case detail::Repair::exited:
                throw IntegrationDomainError(
                    "integrate: state left the invariant domain at t = " +
                        std::to_string(h * (double)(j + 1)),
                    h * (double)(j + 1));
        }
        State st;
        st.x.assign(y.begin(), y.begin() + (std::ptrdiff_t)n);
        st.s = y[n];
        traj.states.push_back(std::move(st));
        traj.D.push_back(D);
        traj.s_in.push_back(s_in);
    }

    if (noise && noise->std > 0.0) {
        std::mt19937_64 rng(noise->seed);
        std::normal_distribution<double> gauss(0.0, noise->std);
        std::vector<double> sn(traj.states.size());
        for (std::size_t j = 0; j < sn.size(); ++j)
            sn[j] = traj.states[j].s + gauss(rng);
        traj.s_noisy = std::move(sn);
    }
    return traj;
}

/// Single-species equilibrium for constant inputs (D_star, s_in):
/// mu(s*) = D_star + b and x* = D_star (s_in - s*) / g(s*).
/// Monod models are inverted analytically; custom models are bracketed on a
/// grid over (0, s_in) and refined by bisection.
inline std::pair<double, double> equilibrium(const SpeciesParams& species,
                                             double D_star, double s_in) {
    if (!(D_star >= 0.0)) throw DomainError("equilibrium: D_star must be >= 0");
    if (!(s_in > 0.0)) throw DomainError("equilibrium: s_in must be > 0");
    const double d = D_star + species.b;
    double s_star = 0.0;
    if (species.mu.is_monod()) {
        const double a = species.mu.max_rate();
        const double k = species.mu.half_saturation();
        if (!(d > 0.0) || !(d < a))
            throw WashoutError("equilibrium: no root of mu(s) = D_star + b");
        s_star = k * d / (a - d);
        if (!(s_star < s_in))
            throw WashoutError("equilibrium: required substrate level exceeds the inflow");
    } else {
        const auto f = [&](double s) { return species.mu(s) - d; };
        constexpr int grid = 10000;
        double lo = 0.0, hi = 0.0;
        bool found = false;
        double prev_s = s_in * 1e-12, prev_f = f(prev_s);
        for (int i = 1; i <= grid; ++i) {
            const double s = s_in * (double)i / (grid + 1);
            const double fv = f(s);
            if (prev_f == 0.0 || prev_f * fv < 0.0) {
                lo = prev_s;
                hi = s;
                found = true;
                break;
            }
            prev_s = s;
            prev_f = fv;
        }
        if (!found)
            throw WashoutError("equilibrium: no root of mu(s) = D_star + b in (0, s_in)");
        for (int it = 0; it < 200 && hi - lo > 1e-14 * s_in; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (f(lo) * f(mid) <= 0.0)
                hi = mid;
            else
                lo = mid;
        }
        s_star = 0.5 * (lo + hi);
    }
    const double x_star = D_star * (s_in - s_star) / species.g(s_star);
    if (!(x_star > 0.0))
        throw WashoutError("equilibrium: no positive biomass equilibrium");
    return {s_star, x_star};
}

}  // namespace chemobs
