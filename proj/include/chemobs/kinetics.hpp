#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "chemobs/errors.hpp"

namespace chemobs {

/// Specific rate law of one species as a function of the substrate
/// concentration s. Two variants:
///
///  * Monod:  mu(s) = a s / (k + s), a > 0 the maximum rate, k > 0 the
///    half-saturation concentration.
///  * Custom: user-supplied evaluator. The caller promises a bounded,
///    continuously differentiable function with f(0) = 0 and f(s) > 0
///    for s > 0; only f(0) = 0 is checked at construction.
class GrowthModel {
public:
    using Evaluator = std::function<double(double)>;

    static GrowthModel monod(double a, double k) {
        if (!(a > 0.0) || !(k > 0.0))
            throw DomainError("GrowthModel::monod: requires a > 0 and k > 0");
        GrowthModel m;
        m.monod_ = true;
        m.a_ = a;
        m.k_ = k;
        return m;
    }

    static GrowthModel custom(Evaluator f) {
        if (!f) throw DomainError("GrowthModel::custom: empty evaluator");
        if (std::fabs(f(0.0)) > 1e-12)
            throw DomainError("GrowthModel::custom: evaluator must vanish at s = 0");
        GrowthModel m;
        m.f_ = std::move(f);
        return m;
    }

    /// Rate at substrate concentration s >= 0.
    double operator()(double s) const {
        if (!(s >= 0.0))
            throw DomainError("GrowthModel: negative substrate concentration");
        if (monod_) return a_ * s / (k_ + s);
        double v = f_(s);
        if (!std::isfinite(v))
            throw EvaluationError("GrowthModel: custom rate evaluated to a non-finite value");
        return v;
    }

    bool is_monod() const noexcept { return monod_; }

    double max_rate() const {
        require_monod("max_rate");
        return a_;
    }

    double half_saturation() const {
        require_monod("half_saturation");
        return k_;
    }

private:
    GrowthModel() = default;

    void require_monod(const char* who) const {
        if (!monod_)
            throw UnsupportedModelError(std::string("GrowthModel::") + who +
                                        ": not a Monod model");
    }

    bool monod_ = false;
    double a_ = 0.0;
    double k_ = 0.0;
    Evaluator f_;
};

/// One species: growth rate mu, consumption rate g (any constant yield is
/// folded into g by the caller), mortality rate b >= 0.
struct SpeciesParams {
    GrowthModel mu;
    GrowthModel g;
    double b = 0.0;

    SpeciesParams(GrowthModel mu, GrowthModel g, double b)
        : mu(std::move(mu)), g(std::move(g)), b(b) {
        if (!(this->b >= 0.0))
            throw DomainError("SpeciesParams: mortality rate must be >= 0");
    }
};

/// Monod species with g = mu (yield constant 1).
inline SpeciesParams monod_species(double a, double k, double b) {
    return SpeciesParams(GrowthModel::monod(a, k), GrowthModel::monod(a, k), b);
}

/// Monod species with g = K mu (constant yield 1/K).
inline SpeciesParams monod_species_yield(double a, double k, double b, double K) {
    if (!(K > 0.0)) throw DomainError("monod_species_yield: K must be > 0");
    return SpeciesParams(GrowthModel::monod(a, k), GrowthModel::monod(K * a, k), b);
}

/// Logarithmic-derivative gap of the consumption rates,
/// kappa(s) = d/ds ln(g1(s)/g2(s)).
///
/// Monod pairs use the closed form (k1 - k2)/((k1 + s)(k2 + s)); anything
/// else falls back to a central finite difference of ln(g1/g2) with step
/// 1e-6 (1 + s).
inline double kappa(const GrowthModel& g1, const GrowthModel& g2, double s) {
    if (!(s > 0.0)) throw DomainError("kappa: requires s > 0");
    if (g1.is_monod() && g2.is_monod()) {
        const double k1 = g1.half_saturation();
        const double k2 = g2.half_saturation();
        return (k1 - k2) / ((k1 + s) * (k2 + s));
    }
    double h = 1e-6 * (1.0 + s);
    if (h >= s) h = 0.5 * s;  // keep the left evaluation point positive
    const auto log_ratio = [&](double v) {
        const double num = g1(v);
        const double den = g2(v);
        const double lr = std::log(num / den);
        if (!std::isfinite(lr))
            throw EvaluationError("kappa: non-finite log rate ratio");
        return lr;
    };
    return (log_ratio(s + h) - log_ratio(s - h)) / (2.0 * h);
}

/// Coefficients of the quadratic c2 s^2 + c1 s + c0.
struct QuadraticCoeffs {
    double c2 = 0.0;
    double c1 = 0.0;
    double c0 = 0.0;

    double eval(double s) const { return (c2 * s + c1) * s + c0; }
};

inline bool proportional_monod_rates(const SpeciesParams& p) {
    return p.mu.is_monod() && p.g.is_monod() &&
           p.g.half_saturation() == p.mu.half_saturation();
}

/// For a Monod pair with g proportional to mu, the ratio
/// (mu2(s) - mu1(s) + b1 - b2) / kappa(s) is a quadratic in s. Returns its
/// coefficients:
///
///   c2 = (a1 - a2 + b2 - b1) / (k2 - k1)
///   c1 = (a1 k2 - a2 k1 + (b2 - b1)(k1 + k2)) / (k2 - k1)
///   c0 = k1 k2 (b2 - b1) / (k2 - k1)
inline QuadraticCoeffs observability_quadratic(const SpeciesParams& p1,
                                               const SpeciesParams& p2) {
    if (!proportional_monod_rates(p1) || !proportional_monod_rates(p2))
        throw UnsupportedModelError(
            "observability_quadratic: requires Monod kinetics with g proportional to mu");
    const double a1 = p1.mu.max_rate(), k1 = p1.mu.half_saturation(), b1 = p1.b;
    const double a2 = p2.mu.max_rate(), k2 = p2.mu.half_saturation(), b2 = p2.b;
    const double dk = k2 - k1;
    if (dk == 0.0)
        throw DegenerateKineticsError(
            "observability_quadratic: k1 == k2 (kappa vanishes identically)");
    QuadraticCoeffs q;
    q.c2 = (a1 - a2 + b2 - b1) / dk;
    q.c1 = (a1 * k2 - a2 * k1 + (b2 - b1) * (k1 + k2)) / dk;
    q.c0 = k1 * k2 * (b2 - b1) / dk;
    return q;
}

}  // namespace chemobs
