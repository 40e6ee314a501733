// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_GRADIENT_HPP
#define GRADNORM_GRADIENT_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "gradnorm/image.hpp"

namespace gradnorm {

/// |row[x+1] - row[x-1]|, the interval-2 difference. x is a 0-based
/// interior index, 1 <= x <= n-2.
inline double central_diff(const std::vector<double>& row, std::size_t x) {
    if (x < 1 || x + 1 >= row.size())
        throw std::invalid_argument("central_diff: index outside interior");
    return std::fabs(row[x + 1] - row[x - 1]);
}

/// |row[x+1] - row[x]|, the interval-1 difference. 0 <= x <= n-2.
inline double intermediate_diff(const std::vector<double>& row, std::size_t x) {
    if (x + 1 >= row.size())
        throw std::invalid_argument("intermediate_diff: index out of range");
    return std::fabs(row[x + 1] - row[x]);
}

/// Per-image expectations of the two difference operators, pooled over all
/// rows and all columns (ratio of pooled means, not mean of per-row ratios,
/// which would blow up on locally constant rows). Differences are unhalved;
/// only ratios of these expectations are consumed downstream, so the
/// convention cancels.
struct GradientStats {
    double e_phi = 0.0;        ///< mean |f(x+1) - f(x-1)| over both axes
    double e_phi_tilde = 0.0;  ///< mean |f(x+1) - f(x)| over both axes
    /// e_phi_tilde / e_phi, valid only if c_defined. The triangle inequality
    /// bounds the pooled sums (sum phi <= 2 sum phi~); because the two
    /// operators have different term counts, c can undershoot 1/2 by the
    /// count ratio on small images. It converges to >= 1/2 with size.
    double c = 0.0;
    bool c_defined = false;    ///< false when e_phi == 0 (constant-ish image)
    std::size_t n_terms_phi = 0;
    std::size_t n_terms_phi_tilde = 0;
};

inline GradientStats image_gradient_stats(const Image& img) {
    const int w = img.width(), h = img.height();
    if (w < 3 || h < 3)
        throw std::invalid_argument("image_gradient_stats: image must be at least 3x3");

    double sum_phi = 0.0, sum_tilde = 0.0;
    // rows
    for (int y = 0; y < h; ++y) {
        for (int x = 1; x + 1 < w; ++x) sum_phi += std::fabs(img.at(x + 1, y) - img.at(x - 1, y));
        for (int x = 0; x + 1 < w; ++x) sum_tilde += std::fabs(img.at(x + 1, y) - img.at(x, y));
    }
    // columns
    for (int x = 0; x < w; ++x) {
        for (int y = 1; y + 1 < h; ++y) sum_phi += std::fabs(img.at(x, y + 1) - img.at(x, y - 1));
        for (int y = 0; y + 1 < h; ++y) sum_tilde += std::fabs(img.at(x, y + 1) - img.at(x, y));
    }

    GradientStats st;
    st.n_terms_phi = static_cast<std::size_t>(h) * (w - 2) + static_cast<std::size_t>(w) * (h - 2);
    st.n_terms_phi_tilde =
        static_cast<std::size_t>(h) * (w - 1) + static_cast<std::size_t>(w) * (h - 1);
    st.e_phi = sum_phi / static_cast<double>(st.n_terms_phi);
    st.e_phi_tilde = sum_tilde / static_cast<double>(st.n_terms_phi_tilde);
    if (st.e_phi > 0.0) {
        st.c = st.e_phi_tilde / st.e_phi;
        st.c_defined = true;
    }
    return st;
}

/// Per-pixel gradient magnitude sqrt(Gx^2 + Gy^2) from halved central
/// differences, clamp-to-edge at the borders. Row-major, same dimensions
/// as the input.
inline std::vector<double> gradient_magnitude_field(const Image& img) {
    const int w = img.width(), h = img.height();
    if (w < 3 || h < 3)
        throw std::invalid_argument("gradient_magnitude_field: image must be at least 3x3");

    std::vector<double> mag(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
        const int ym = y > 0 ? y - 1 : 0;
        const int yp = y + 1 < h ? y + 1 : h - 1;
        for (int x = 0; x < w; ++x) {
            const int xm = x > 0 ? x - 1 : 0;
            const int xp = x + 1 < w ? x + 1 : w - 1;
            const double gx = 0.5 * (img.at(xp, y) - img.at(xm, y));
            const double gy = 0.5 * (img.at(x, yp) - img.at(x, ym));
            mag[static_cast<std::size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return mag;
}

}  // namespace gradnorm

#endif  // GRADNORM_GRADIENT_HPP
