// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_PYRAMID_HPP
#define GRADNORM_PYRAMID_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gradnorm/image.hpp"

namespace gradnorm {

/// Ordered scale grid for a pyramid. Strictly increasing, all positive,
/// and containing the reference scale 1.0 exactly once.
class ScaleSet {
public:
    explicit ScaleSet(std::vector<double> scales) : scales_(std::move(scales)) {
        if (scales_.empty()) throw std::invalid_argument("ScaleSet: empty");
        int ones = 0;
        for (std::size_t i = 0; i < scales_.size(); ++i) {
            const double s = scales_[i];
            if (!std::isfinite(s) || s <= 0.0)
                throw std::invalid_argument("ScaleSet: scales must be finite and > 0");
            if (i > 0 && scales_[i - 1] >= s)
                throw std::invalid_argument("ScaleSet: scales must be strictly increasing");
            if (s == 1.0) ++ones;
        }
        if (ones != 1)
            throw std::invalid_argument("ScaleSet: must contain the reference scale 1.0 exactly once");
    }

    /// Uniform grid min, min+step, ..., max. The entry closest to 1.0 must
    /// land within 1e-9 of it and is snapped to exactly 1.0.
    static ScaleSet uniform(double min, double max, double step) {
        if (!(step > 0.0) || !(min > 0.0) || !(max >= min))
            throw std::invalid_argument("ScaleSet: bad min/max/step");
        const long count = std::lround((max - min) / step) + 1;
        std::vector<double> scales;
        scales.reserve(static_cast<std::size_t>(count));
        bool snapped = false;
        for (long i = 0; i < count; ++i) {
            double s = min + static_cast<double>(i) * step;
            if (std::fabs(s - 1.0) < 1e-9) {
                s = 1.0;
                snapped = true;
            }
            scales.push_back(s);
        }
        if (!snapped)
            throw std::invalid_argument("ScaleSet: grid does not contain the reference scale 1.0");
        return ScaleSet(std::move(scales));
    }

    const std::vector<double>& scales() const& { return scales_; }
    std::vector<double> scales() && { return std::move(scales_); }
    std::size_t size() const { return scales_.size(); }

private:
    std::vector<double> scales_;
};

namespace detail {

/// round-half-up of dimension * scale
inline int scaled_dim(int dim, double scale) {
    return static_cast<int>(std::floor(static_cast<double>(dim) * scale + 0.5));
}

}  // namespace detail

/// Bilinear resampling with the half-pixel-centered source mapping
/// src = (dst + 0.5) / scale - 0.5 and clamp-to-edge boundaries.
/// scale = 1.0 returns a pixel-identical copy. Output dimensions are
/// round-half-up of the input dimensions times scale and must be >= 1.
inline Image resample_bilinear(const Image& img, double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw std::invalid_argument("resample_bilinear: scale must be > 0");
    if (scale == 1.0) return img;

    const int sw = img.width(), sh = img.height();
    const int dw = detail::scaled_dim(sw, scale);
    const int dh = detail::scaled_dim(sh, scale);
    if (dw < 1 || dh < 1)
        throw std::invalid_argument("resample_bilinear: output dimension rounds to 0 at scale " +
                                    std::to_string(scale));

    std::vector<double> out(static_cast<std::size_t>(dw) * dh);
    const double inv = 1.0 / scale;
    for (int y = 0; y < dh; ++y) {
        double sy = (y + 0.5) * inv - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(sh - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double ty = sy - y0;
        for (int x = 0; x < dw; ++x) {
            double sx = (x + 0.5) * inv - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(sw - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double tx = sx - x0;

            const double p00 = img.at(x0, y0), p01 = img.at(x1, y0);
            const double p10 = img.at(x0, y1), p11 = img.at(x1, y1);
            const double top = p00 * (1.0 - tx) + p01 * tx;
            const double bot = p10 * (1.0 - tx) + p11 * tx;
            double v = top * (1.0 - ty) + bot * ty;
            // keep the convex-combination bound exact under rounding
            const double lo = std::min(std::min(p00, p01), std::min(p10, p11));
            const double hi = std::max(std::max(p00, p01), std::max(p10, p11));
            out[static_cast<std::size_t>(y) * dw + x] = std::clamp(v, lo, hi);
        }
    }
    return Image(dw, dh, std::move(out));
}

/// Idealized 1D upsampling on the integer grid: z new pixels are inserted
/// between every adjacent pair, inherited pixels are preserved exactly,
/// and the inserted pixel at offset d from its left inherited neighbor is
/// ((z+1-d)*f(x) + d*f(x+1)) / (z+1). Output length is (n-1)*z + n.
inline std::vector<double> upsample_integer_grid(const std::vector<double>& row, int z) {
    if (row.size() < 2)
        throw std::invalid_argument("upsample_integer_grid: need at least 2 pixels");
    if (z < 0) throw std::invalid_argument("upsample_integer_grid: z must be >= 0");
    if (z == 0) return row;

    const std::size_t n = row.size();
    std::vector<double> out;
    out.reserve((n - 1) * static_cast<std::size_t>(z) + n);
    const double denom = static_cast<double>(z + 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        out.push_back(row[i]);
        for (int d = 1; d <= z; ++d)
            out.push_back(((denom - d) * row[i] + d * row[i + 1]) / denom);
    }
    out.push_back(row[n - 1]);
    return out;
}

struct PyramidLevel {
    double scale;
    Image image;
};

/// Scale-indexed collection of resampled images; the level at scale 1.0
/// is pixel-identical to the reference.
struct Pyramid {
    Image reference;
    std::vector<PyramidLevel> levels;
};

inline Pyramid build_pyramid(const Image& img, const ScaleSet& scales) {
    Pyramid pyr;
    pyr.reference = img;
    pyr.levels.reserve(scales.size());
    for (double s : scales.scales())
        pyr.levels.push_back({s, resample_bilinear(img, s)});
    return pyr;
}

}  // namespace gradnorm

#endif  // GRADNORM_PYRAMID_HPP
