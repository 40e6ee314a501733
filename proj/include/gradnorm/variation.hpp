// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_VARIATION_HPP
#define GRADNORM_VARIATION_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "gradnorm/errors.hpp"
#include "gradnorm/gradient.hpp"

namespace gradnorm {

/// Closed form for the mean |central difference| of the integer-grid
/// upsampling of `row` with z inserted pixels per gap, evaluated without
/// materializing the upsampled sequence:
///
///   [ sum_interior |f(x+1)-f(x-1)| + 2z * sum_adjacent |f(x+1)-f(x)| ]
///   / ( (z+1) * ((z+1)*n - z - 2) )
///
/// Matches the brute force over upsample_integer_grid exactly.
inline double expected_gradient_finite(const std::vector<double>& row, int z) {
    const std::size_t n = row.size();
    if (n < 3) throw std::invalid_argument("expected_gradient_finite: need at least 3 pixels");
    if (z < 0) throw std::invalid_argument("expected_gradient_finite: z must be >= 0");

    double sum_phi = 0.0, sum_tilde = 0.0;
    for (std::size_t x = 1; x + 1 < n; ++x) sum_phi += std::fabs(row[x + 1] - row[x - 1]);
    for (std::size_t x = 0; x + 1 < n; ++x) sum_tilde += std::fabs(row[x + 1] - row[x]);

    const double zp1 = static_cast<double>(z) + 1.0;
    const double terms = zp1 * static_cast<double>(n) - static_cast<double>(z) - 2.0;
    return (sum_phi + 2.0 * static_cast<double>(z) * sum_tilde) / (zp1 * terms);
}

/// Infinite-length limit of the upsampled gradient expectation:
/// (E[phi] + 2(s-1) E[phi~]) / s^2 for s >= 1.
inline double limit_expectation(double e_phi_ref, double e_phi_tilde_ref, double s) {
    if (e_phi_ref < 0.0 || e_phi_tilde_ref < 0.0)
        throw std::invalid_argument("limit_expectation: expectations must be >= 0");
    if (s < 1.0) throw std::invalid_argument("limit_expectation: s must be >= 1");
    return (e_phi_ref + 2.0 * (s - 1.0) * e_phi_tilde_ref) / (s * s);
}

/// Exact upsampling gradient-variation ratio (2cs - 2c + 1) / s^2, s >= 1.
inline double rho_exact_upsample(double s, double c) {
    if (s < 1.0) throw std::invalid_argument("rho_exact_upsample: s must be >= 1");
    return (2.0 * c * s - 2.0 * c + 1.0) / (s * s);
}

/// Piecewise gradient-variation ratio:
///   s > 1      ->  2c / s                  (degree-reduced upsampling form)
///   0 < s <= 1 ->  1 / ((1-2c) s^2 + 2cs)  (inverted-scale downsampling form)
/// The downsampling branch gives rho(1, c) = 1 for every c. The upsampling
/// branch tends to 2c as s -> 1+, so the piecewise function is discontinuous
/// at the reference scale unless c = 0.5; the fitted normalization restores
/// continuity through its equality constraint.
inline double rho(double s, double c) {
    if (!(s > 0.0)) throw std::invalid_argument("rho: s must be > 0");
    if (s > 1.0) return 2.0 * c / s;
    const double denom = (1.0 - 2.0 * c) * s * s + 2.0 * c * s;
    if (!(denom > 0.0)) throw numeric_error("rho: nonpositive denominator");
    return 1.0 / denom;
}

/// Corpus-level gradient-ratio constant: the mean of per-image c over the
/// images where it is defined.
struct VariationModel {
    double c = 0.0;
};

struct CEstimate {
    VariationModel model;
    double mean = 0.0;
    double stdev = 0.0;  ///< population standard deviation
    std::size_t used = 0;
    std::size_t skipped = 0;
};

inline CEstimate estimate_c(const std::vector<GradientStats>& corpus) {
    CEstimate est;
    double sum = 0.0;
    for (const auto& st : corpus) {
        if (st.c_defined) {
            sum += st.c;
            ++est.used;
        } else {
            ++est.skipped;
        }
    }
    if (est.used == 0)
        throw numeric_error("estimate_c: no image in the corpus has a defined c");
    est.mean = sum / static_cast<double>(est.used);
    double ss = 0.0;
    for (const auto& st : corpus)
        if (st.c_defined) ss += (st.c - est.mean) * (st.c - est.mean);
    est.stdev = std::sqrt(ss / static_cast<double>(est.used));
    est.model.c = est.mean;
    return est;
}

}  // namespace gradnorm

#endif  // GRADNORM_VARIATION_HPP
