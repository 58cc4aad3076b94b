#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "chemobs/errors.hpp"
#include "chemobs/kinetics.hpp"

namespace chemobs {

/// Tolerance below which two parameter values count as identical when
/// deciding batch identifiability.
inline constexpr double kIdenticalTol = 1e-12;

// ---------------------------------------------------------------------------
// Coexistence equilibria
// ---------------------------------------------------------------------------

/// One root of mu1(s) - b1 = mu2(s) - b2 with positive common dilution rate.
/// The biomass pair is not unique: it sweeps the line
/// g1(s*) x1 + g2(s*) x2 = D (s_in - s*), recorded here by its coefficients.
struct CoexistencePoint {
    double s_star = 0.0;
    double D = 0.0;
    double g1_star = 0.0;
    double g2_star = 0.0;
    std::string x_line;  // human-readable description of the equilibrium line
};

struct CoexistenceResult {
    enum class Kind { none, points, degenerate };
    Kind kind = Kind::none;
    std::vector<CoexistencePoint> points;
};

/// Locate coexistence equilibria on (0, s_max): roots of
/// Delta(s) = mu1(s) - b1 - mu2(s) + b2, found by a sign-change scan on a
/// 1e4-point grid refined by bisection; roots whose implied dilution rate
/// D = mu1(s*) - b1 is not positive are discarded. If |Delta| <= 1e-12 on
/// the whole grid the two effective kinetics are identical (degenerate).
inline CoexistenceResult find_coexistence(const SpeciesParams& p1,
                                          const SpeciesParams& p2, double s_max) {
    if (!(s_max > 0.0)) throw DomainError("find_coexistence: s_max must be > 0");
    const auto delta = [&](double s) { return p1.mu(s) - p1.b - (p2.mu(s) - p2.b); };
    constexpr int grid = 10000;

    bool all_zero = true;
    double prev_s = s_max / (grid + 1);
    double prev_d = delta(prev_s);
    std::vector<std::pair<double, double>> brackets;
    for (int i = 2; i <= grid; ++i) {
        const double s = s_max * (double)i / (grid + 1);
        const double d = delta(s);
        if (std::fabs(d) > 1e-12) all_zero = false;
        if ((prev_d < 0.0 && d > 0.0) || (prev_d > 0.0 && d < 0.0) || prev_d == 0.0)
            brackets.emplace_back(prev_s, s);
        prev_s = s;
        prev_d = d;
    }
    if (std::fabs(prev_d) > 1e-12) all_zero = false;

    CoexistenceResult res;
    if (all_zero) {
        res.kind = CoexistenceResult::Kind::degenerate;
        return res;
    }
    for (auto [lo, hi] : brackets) {
        if (delta(lo) == 0.0) {
            hi = lo;
        } else {
            while (hi - lo > 1e-9) {
                const double mid = 0.5 * (lo + hi);
                if (delta(lo) * delta(mid) <= 0.0)
                    hi = mid;
                else
                    lo = mid;
            }
        }
        CoexistencePoint pt;
        pt.s_star = 0.5 * (lo + hi);
        pt.D = p1.mu(pt.s_star) - p1.b;
        if (!(pt.D > 0.0)) continue;
        pt.g1_star = p1.g(pt.s_star);
        pt.g2_star = p2.g(pt.s_star);
        pt.x_line = std::to_string(pt.g1_star) + "*x1 + " + std::to_string(pt.g2_star) +
                    "*x2 = " + std::to_string(pt.D) + "*(s_in - " +
                    std::to_string(pt.s_star) + ")";
        res.points.push_back(std::move(pt));
    }
    res.kind = res.points.empty() ? CoexistenceResult::Kind::none
                                  : CoexistenceResult::Kind::points;
    return res;
}

// ---------------------------------------------------------------------------
// Batch identifiability
// ---------------------------------------------------------------------------

struct BatchIdentifiability {
    bool strongly_observable = false;
    std::string reason;
};

/// Batch culture (D = 0) with Monod kinetics and g = mu is strongly
/// observable for every horizon exactly when the two parameter triples
/// (a, k, b) differ.
inline BatchIdentifiability check_batch_identifiability(const SpeciesParams& p1,
                                                        const SpeciesParams& p2) {
    const auto is_batch_monod = [](const SpeciesParams& p) {
        return p.mu.is_monod() && p.g.is_monod() &&
               p.g.max_rate() == p.mu.max_rate() &&
               p.g.half_saturation() == p.mu.half_saturation();
    };
    if (!is_batch_monod(p1) || !is_batch_monod(p2))
        throw UnsupportedModelError(
            "check_batch_identifiability: requires Monod kinetics with g = mu");
    const bool same = std::fabs(p1.mu.max_rate() - p2.mu.max_rate()) <= kIdenticalTol &&
                      std::fabs(p1.b - p2.b) <= kIdenticalTol &&
                      std::fabs(p1.mu.half_saturation() - p2.mu.half_saturation()) <=
                          kIdenticalTol;
    BatchIdentifiability out;
    out.strongly_observable = !same;
    out.reason = same ? "growth and mortality parameters are identical; the biomass "
                        "difference x1 - x2 is invisible in the output"
                      : "parameter triples (a, k, b) differ";
    return out;
}

// ---------------------------------------------------------------------------
// Sufficient conditions A1-A4 with best constants
// ---------------------------------------------------------------------------

/// Verdict for one sufficient condition, with the best (largest feasible)
/// constants and the observation horizon they certify.
struct ConditionEntry {
    std::string name;
    bool holds = false;
    std::optional<double> best_c;
    std::optional<double> best_a;  // A3/A4 only
    std::optional<double> r_min;
    std::string reason;
};

struct ConditionReport {
    ConditionEntry a1, a2, a3, a4;
    std::optional<ConditionEntry> a2_input_limited;  // variant restricted by D_max
    bool used_quadratic = false;
    std::optional<QuadraticCoeffs> quadratic;
};

namespace detail {

struct Extrema {
    double inf = 0.0;
    double sup = 0.0;
};

/// Range of a quadratic over the open interval (lo, hi); endpoint limits
/// count as attained for the purpose of the bounds below.
inline Extrema quadratic_extrema(const QuadraticCoeffs& f, double lo, double hi) {
    Extrema e;
    const double vlo = f.eval(lo), vhi = f.eval(hi);
    e.inf = std::min(vlo, vhi);
    e.sup = std::max(vlo, vhi);
    if (f.c2 != 0.0) {
        const double sv = -f.c1 / (2.0 * f.c2);
        if (sv > lo && sv < hi) {
            const double v = f.eval(sv);
            e.inf = std::min(e.inf, v);
            e.sup = std::max(e.sup, v);
        }
    }
    return e;
}

/// Best constants for "f(s) >= a s^2 + c for all s > 0" given quadratic f,
/// picked to minimize the certified horizon 1/a + 1/c. Feasibility requires
/// c2 > 0 (up to a = c2 when c1 >= 0) and inf f = c0 > 0.
inline ConditionEntry quadratic_halfline_bound(const QuadraticCoeffs& f,
                                               std::string name) {
    ConditionEntry e;
    e.name = std::move(name);
    if (!(f.c2 > 0.0)) {
        e.reason = "ratio grows slower than a positive quadratic";
        return e;
    }
    if (!(f.c0 > 0.0)) {
        e.reason = "ratio is not bounded away from zero near s = 0";
        return e;
    }
    if (f.c1 >= 0.0) {
        // residual c1 s + c0 is nondecreasing: c = c0 for every a <= c2
        e.holds = true;
        e.best_a = f.c2;
        e.best_c = f.c0;
        e.r_min = 1.0 / f.c0 + 1.0 / f.c2;
        return e;
    }
    // c1 < 0: c(a) = c0 - c1^2 / (4 (c2 - a)), feasible for a < a_bar
    const double a_bar = f.c2 - f.c1 * f.c1 / (4.0 * f.c0);
    if (!(a_bar > 0.0)) {
        e.reason = "ratio dips too low at its interior minimum";
        return e;
    }
    const auto r_of = [&](double a) {
        const double c = f.c0 - f.c1 * f.c1 / (4.0 * (f.c2 - a));
        return 1.0 / a + 1.0 / c;
    };
    // dense scan plus golden-section polish on the 1-d objective
    const int scan = 10000;
    double best_a = a_bar * 0.5, best_r = r_of(best_a);
    for (int i = 1; i < scan; ++i) {
        const double a = a_bar * (double)i / scan;
        const double rv = r_of(a);
        if (rv < best_r) {
            best_r = rv;
            best_a = a;
        }
    }
    double lo = std::max(best_a - a_bar / scan, a_bar / (2.0 * scan));
    double hi = std::min(best_a + a_bar / scan, a_bar * (1.0 - 1e-12));
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = r_of(x1), f2 = r_of(x2);
    for (int it = 0; it < 200; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = r_of(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = r_of(x2);
        }
    }
    best_a = 0.5 * (lo + hi);
    e.holds = true;
    e.best_a = best_a;
    e.best_c = f.c0 - f.c1 * f.c1 / (4.0 * (f.c2 - best_a));
    e.r_min = r_of(best_a);
    return e;
}

inline ConditionEntry entry_fails(std::string name, std::string reason) {
    ConditionEntry e;
    e.name = std::move(name);
    e.reason = std::move(reason);
    return e;
}

}  // namespace detail

/// Evaluate the sufficient observability conditions for a two-species pair:
///
///   A1: ratio <= -c on (0, s_in)      A2: ratio >=  c on (0, s_in)
///   A3: ratio <= -a s^2 - c on (0,oo) A4: ratio >= a s^2 + c on (0,oo)
///
/// where ratio(s) = (mu2(s) - mu1(s) + b1 - b2) / kappa(s). A1/A2 certify
/// r_min = s_in / c, A3/A4 certify r_min = 1/c + 1/a. When D is known to
/// stay below D_max, the relaxed A2 variant only requires the bound on
/// { s : ratio(s) / (s_in - s) < D_max }.
///
/// Monod pairs with g proportional to mu use the exact quadratic form of the
/// ratio and closed-form extrema; anything else is evaluated on a grid.
inline ConditionReport check_conditions(const SpeciesParams& p1, const SpeciesParams& p2,
                                        std::optional<double> s_in,
                                        std::optional<double> D_max = std::nullopt) {
    if (s_in && !(*s_in > 0.0))
        throw DomainError("check_conditions: s_in must be > 0");
    ConditionReport rep;

    const bool quad_form = proportional_monod_rates(p1) && proportional_monod_rates(p2);
    if (quad_form && p1.g.half_saturation() == p2.g.half_saturation()) {
        const std::string why = "kappa vanishes identically (k1 == k2)";
        rep.a1 = detail::entry_fails("A1", why);
        rep.a2 = detail::entry_fails("A2", why);
        rep.a3 = detail::entry_fails("A3", why);
        rep.a4 = detail::entry_fails("A4", why);
        if (D_max) rep.a2_input_limited = detail::entry_fails("A2_input_limited", why);
        return rep;
    }

    std::function<double(double)> ratio;
    if (quad_form) {
        rep.used_quadratic = true;
        rep.quadratic = observability_quadratic(p1, p2);
        const QuadraticCoeffs q = *rep.quadratic;
        ratio = [q](double s) { return q.eval(s); };
    } else {
        ratio = [&p1, &p2](double s) {
            const double kap = kappa(p1.g, p2.g, s);
            if (kap == 0.0 || !std::isfinite(kap))
                throw DegenerateKineticsError("check_conditions: kappa vanishes at s = " +
                                              std::to_string(s));
            return (p2.mu(s) - p1.mu(s) + p1.b - p2.b) / kap;
        };
    }

    constexpr int grid = 10000;

    // --- A1 / A2 on (0, s_in) ---
    if (s_in) {
        double inf, sup;
        try {
            if (rep.used_quadratic) {
                const auto ex = detail::quadratic_extrema(*rep.quadratic, 0.0, *s_in);
                inf = ex.inf;
                sup = ex.sup;
            } else {
                inf = std::numeric_limits<double>::infinity();
                sup = -inf;
                for (int i = 1; i <= grid; ++i) {
                    const double v = ratio(*s_in * (double)i / (grid + 1));
                    inf = std::min(inf, v);
                    sup = std::max(sup, v);
                }
            }
            rep.a1.name = "A1";
            rep.a2.name = "A2";
            if (sup < 0.0) {
                rep.a1.holds = true;
                rep.a1.best_c = -sup;
                rep.a1.r_min = *s_in / -sup;
                rep.a2.reason = "ratio is negative";
            } else if (inf > 0.0) {
                rep.a2.holds = true;
                rep.a2.best_c = inf;
                rep.a2.r_min = *s_in / inf;
                rep.a1.reason = "ratio is positive";
            } else {
                rep.a1.reason = "ratio is not bounded away from zero on (0, s_in)";
                rep.a2.reason = rep.a1.reason;
            }
        } catch (const DegenerateKineticsError& e) {
            rep.a1 = detail::entry_fails("A1", e.what());
            rep.a2 = detail::entry_fails("A2", e.what());
        }
    } else {
        rep.a1 = detail::entry_fails("A1", "requires finite s_in");
        rep.a2 = detail::entry_fails("A2", "requires finite s_in");
    }

    // --- A3 / A4 on (0, +inf) ---
    if (rep.used_quadratic) {
        const QuadraticCoeffs q = *rep.quadratic;
        rep.a4 = detail::quadratic_halfline_bound(q, "A4");
        rep.a3 = detail::quadratic_halfline_bound(QuadraticCoeffs{-q.c2, -q.c1, -q.c0}, "A3");
    } else {
        // grid fallback on a log-spaced net; approximate but sign-robust
        const auto halfline = [&](double sign, std::string name) {
            ConditionEntry e;
            e.name = std::move(name);
            try {
                const double s_lo = 1e-4, s_hi = 1e4;
                std::vector<double> sv(grid), fv(grid);
                double a_hi = std::numeric_limits<double>::infinity();
                for (int i = 0; i < grid; ++i) {
                    sv[i] = s_lo * std::pow(s_hi / s_lo, (double)i / (grid - 1));
                    fv[i] = sign * ratio(sv[i]);
                    if (sv[i] >= 1.0) a_hi = std::min(a_hi, fv[i] / (sv[i] * sv[i]));
                }
                if (!(a_hi > 0.0)) {
                    e.reason = "ratio grows slower than a positive quadratic";
                    return e;
                }
                double best_r = std::numeric_limits<double>::infinity();
                for (int ia = 1; ia <= 200; ++ia) {
                    const double a = a_hi * (double)ia / 200.0;
                    double c = std::numeric_limits<double>::infinity();
                    for (int i = 0; i < grid; ++i) c = std::min(c, fv[i] - a * sv[i] * sv[i]);
                    if (!(c > 0.0)) continue;
                    const double rv = 1.0 / a + 1.0 / c;
                    if (rv < best_r) {
                        best_r = rv;
                        e.best_a = a;
                        e.best_c = c;
                    }
                }
                if (e.best_a) {
                    e.holds = true;
                    e.r_min = best_r;
                } else {
                    e.reason = "no positive quadratic minorant found on the sample grid";
                }
            } catch (const DegenerateKineticsError& err) {
                e.reason = err.what();
            }
            return e;
        };
        rep.a4 = halfline(+1.0, "A4");
        rep.a3 = halfline(-1.0, "A3");
    }

    // --- relaxed A2 restricted by the dilution bound ---
    if (s_in && D_max) {
        ConditionEntry e;
        e.name = "A2_input_limited";
        try {
            double inf = std::numeric_limits<double>::infinity();
            std::size_t restricted = 0;
            for (int i = 1; i <= grid; ++i) {
                const double s = *s_in * (double)i / (grid + 1);
                const double v = ratio(s);
                if (v / (*s_in - s) < *D_max) {
                    ++restricted;
                    inf = std::min(inf, v);
                }
            }
            if (restricted == 0) {
                e.holds = true;
                e.r_min = 0.0;
                e.reason = "restriction set is empty: the singular output cannot be "
                           "generated with D below D_max";
            } else if (inf > 0.0) {
                e.holds = true;
                e.best_c = inf;
                e.r_min = *s_in / inf;
            } else {
                e.reason = "ratio is not bounded away from zero on the restricted set";
            }
        } catch (const DegenerateKineticsError& err) {
            e.reason = err.what();
        }
        rep.a2_input_limited = std::move(e);
    }

    return rep;
}

// ---------------------------------------------------------------------------
// Singular output trajectory
// ---------------------------------------------------------------------------

/// The one substrate trajectory every observability-destroying input/state
/// pair must produce: s' = (mu2(s) - mu1(s) + b1 - b2) / kappa(s).
struct SingularTrajectory {
    enum class Exit { none, left_boundary, right_boundary, blow_up };
    double h = 0.0;
    std::vector<double> s;  // node samples; the last one is the first outside value on exit
    std::optional<double> exit_time;
    Exit exit_kind = Exit::none;
};

/// Integrate the singular ODE from s0 with fixed-step RK4 (step 1e-3) until
/// it leaves the domain ((0, s_in) when s_in is given, (0, +inf) otherwise),
/// exceeds 1e9 in magnitude (finite-escape proxy), or reaches t_max.
/// Leaving before the certified horizon is the mechanism behind the
/// sufficient conditions above.
inline SingularTrajectory singular_trajectory(const SpeciesParams& p1,
                                              const SpeciesParams& p2, double s0,
                                              double t_max,
                                              std::optional<double> s_in = std::nullopt) {
    if (s_in && !(*s_in > 0.0))
        throw DomainError("singular_trajectory: s_in must be > 0");
    if (!(s0 > 0.0) || (s_in && !(s0 < *s_in)))
        throw DomainError("singular_trajectory: s0 must lie inside the domain");
    if (!(t_max > 0.0)) throw DomainError("singular_trajectory: t_max must be > 0");

    std::function<double(double)> f;
    if (proportional_monod_rates(p1) && proportional_monod_rates(p2)) {
        if (p1.g.half_saturation() == p2.g.half_saturation())
            throw DegenerateKineticsError(
                "singular_trajectory: kappa vanishes identically (k1 == k2)");
        const QuadraticCoeffs q = observability_quadratic(p1, p2);
        f = [q](double s) { return q.eval(s); };
    } else {
        if (kappa(p1.g, p2.g, s0) == 0.0)
            throw DegenerateKineticsError("singular_trajectory: kappa vanishes at s0");
        f = [&p1, &p2](double s) {
            const double sc = s > 1e-15 ? s : 1e-15;  // stage values may graze 0
            return (p2.mu(sc) - p1.mu(sc) + p1.b - p2.b) / kappa(p1.g, p2.g, sc);
        };
    }

    constexpr double h = 1e-3;
    constexpr double blow_up_mag = 1e9;
    SingularTrajectory out;
    out.h = h;
    out.s.push_back(s0);
    double s = s0;
    const std::size_t steps = (std::size_t)std::ceil(t_max / h - 1e-9);
    for (std::size_t j = 0; j < steps; ++j) {
        const double k1 = f(s);
        const double k2 = f(s + 0.5 * h * k1);
        const double k3 = f(s + 0.5 * h * k2);
        const double k4 = f(s + h * k3);
        s += h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
        const double t = h * (double)(j + 1);
        out.s.push_back(s);
        if (!std::isfinite(s) || std::fabs(s) > blow_up_mag) {
            out.exit_time = t;
            out.exit_kind = SingularTrajectory::Exit::blow_up;
            return out;
        }
        if (s <= 0.0) {
            out.exit_time = t;
            out.exit_kind = SingularTrajectory::Exit::left_boundary;
            return out;
        }
        if (s_in && s >= *s_in) {
            out.exit_time = t;
            out.exit_kind = SingularTrajectory::Exit::right_boundary;
            return out;
        }
    }
    return out;
}

}  // namespace chemobs
