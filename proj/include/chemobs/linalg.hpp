#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace chemobs::linalg {

/// Row-major dense n x n matrix paired with its dimension.
struct Lu {
    std::size_t n = 0;
    std::vector<long double> lu;   // packed L (unit diagonal) and U
    std::vector<std::size_t> piv;  // row permutation
    int sign = 1;
    bool singular = false;         // an exactly-zero pivot was hit
};

/// LU factorization with partial pivoting. Accumulates in long double:
/// the Gram systems solved here can be ill-conditioned near observability
/// loss, and the extra precision keeps independent solution routes in
/// agreement well below their common discretization error.
inline Lu lu_factor(std::size_t n, const std::vector<double>& a) {
    Lu f;
    f.n = n;
    f.lu.assign(a.begin(), a.end());
    f.piv.resize(n);
    for (std::size_t i = 0; i < n; ++i) f.piv[i] = i;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t p = col;
        long double best = fabsl(f.lu[col * n + col]);
        for (std::size_t row = col + 1; row < n; ++row) {
            const long double v = fabsl(f.lu[row * n + col]);
            if (v > best) {
                best = v;
                p = row;
            }
        }
        if (p != col) {
            for (std::size_t j = 0; j < n; ++j)
                std::swap(f.lu[col * n + j], f.lu[p * n + j]);
            std::swap(f.piv[col], f.piv[p]);
            f.sign = -f.sign;
        }
        const long double pivot = f.lu[col * n + col];
        if (pivot == 0.0L) {
            f.singular = true;
            continue;
        }
        for (std::size_t row = col + 1; row < n; ++row) {
            const long double l = f.lu[row * n + col] / pivot;
            f.lu[row * n + col] = l;
            for (std::size_t j = col + 1; j < n; ++j)
                f.lu[row * n + j] -= l * f.lu[col * n + j];
        }
    }
    return f;
}

inline double lu_det(const Lu& f) {
    long double d = f.sign;
    for (std::size_t i = 0; i < f.n; ++i) d *= f.lu[i * f.n + i];
    return (double)d;
}

/// Solve A x = b given the factorization of A. Returns false when A was
/// singular to working precision.
inline bool lu_solve(const Lu& f, const std::vector<double>& b, std::vector<double>& x) {
    if (f.singular) return false;
    const std::size_t n = f.n;
    std::vector<long double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = b[f.piv[i]];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) y[i] -= f.lu[i * n + j] * y[j];
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = i + 1; j < n; ++j) y[i] -= f.lu[i * n + j] * y[j];
        y[i] /= f.lu[i * n + i];
    }
    x.resize(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = (double)y[i];
    return true;
}

inline double det(std::size_t n, const std::vector<double>& a) {
    return lu_det(lu_factor(n, a));
}

/// One-norm condition estimate ||A||_1 ||A^-1||_1 computed from the explicit
/// inverse (the matrices here are tiny). Returns +inf for singular input.
inline double cond1_estimate(std::size_t n, const std::vector<double>& a) {
    const Lu f = lu_factor(n, a);
    if (f.singular) return std::numeric_limits<double>::infinity();
    double norm_a = 0.0, norm_inv = 0.0;
    std::vector<double> e(n, 0.0), col;
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::fabs(a[i * n + j]);
        norm_a = std::max(norm_a, s);
        e[j] = 1.0;
        if (!lu_solve(f, e, col)) return std::numeric_limits<double>::infinity();
        e[j] = 0.0;
        s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::fabs(col[i]);
        norm_inv = std::max(norm_inv, s);
    }
    return norm_a * norm_inv;
}

}  // namespace chemobs::linalg
