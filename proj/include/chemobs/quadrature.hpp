#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace chemobs {

/// Composite trapezoid of node samples v on a uniform grid of step h.
inline double trapezoid(double h, std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double acc = 0.5 * (v.front() + v.back());
    for (std::size_t j = 1; j + 1 < v.size(); ++j) acc += v[j];
    return h * acc;
}

/// Cumulative trapezoid: out[j] = integral over [t0, t_j], out[0] = 0.
inline std::vector<double> cumulative_trapezoid(double h, std::span<const double> v) {
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t j = 0; j + 1 < v.size(); ++j)
        out[j + 1] = out[j] + 0.5 * h * (v[j] + v[j + 1]);
    return out;
}

/// Value of a smooth node-sampled signal at the midpoint of step j, by
/// cubic interpolation through the four nearest nodes (one-sided at the
/// ends). Falls back to the two-point average when fewer than four nodes
/// are available.
inline double midpoint(std::span<const double> v, std::size_t j) {
    const std::size_t steps = v.size() - 1;
    if (v.size() < 4) return 0.5 * (v[j] + v[j + 1]);
    if (j == 0)
        return (5.0 * v[0] + 15.0 * v[1] - 5.0 * v[2] + v[3]) / 16.0;
    if (j == steps - 1)
        return (5.0 * v[steps] + 15.0 * v[steps - 1] - 5.0 * v[steps - 2] + v[steps - 3]) / 16.0;
    return (-v[j - 1] + 9.0 * v[j] + 9.0 * v[j + 1] - v[j + 2]) / 16.0;
}

}  // namespace chemobs
