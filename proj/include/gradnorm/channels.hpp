// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_CHANNELS_HPP
#define GRADNORM_CHANNELS_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "gradnorm/errors.hpp"
#include "gradnorm/gradient.hpp"
#include "gradnorm/normfit.hpp"
#include "gradnorm/pyramid.hpp"

namespace gradnorm {

/// Cell-aggregated gradient channels for one pyramid level: one magnitude
/// plane and `bins` contrast-insensitive orientation planes. Soft binning
/// conserves mass, so per cell the orientation planes sum to the magnitude
/// plane.
struct ChannelStack {
    double scale = 1.0;
    int cell_size = 4;
    int bins = 6;
    int cells_w = 0;
    int cells_h = 0;
    std::vector<std::vector<double>> channels;  ///< [magnitude, bin_0 .. bin_{B-1}]

    double at(std::size_t channel, int cx, int cy) const {
        return channels[channel][static_cast<std::size_t>(cy) * cells_w + cx];
    }
};

/// Gradient channels of one image at one pyramid scale. When a model is
/// supplied, per-pixel magnitudes are multiplied by g(scale) before
/// orientation binning, so the correction spreads into every histogram
/// plane; g(1) = 1 leaves reference images untouched.
inline ChannelStack compute_channels(const Image& img, double scale,
                                     const NormalizationModel* model, int cell_size = 4,
                                     int bins = 6) {
    if (cell_size < 1) throw std::invalid_argument("compute_channels: cell_size must be >= 1");
    if (bins < 2) throw std::invalid_argument("compute_channels: bins must be >= 2");
    if (img.width() < cell_size || img.height() < cell_size)
        throw std::invalid_argument("compute_channels: image smaller than one cell");

    const int w = img.width(), h = img.height();
    const double g = model ? model->evaluate(scale) : 1.0;

    ChannelStack st;
    st.scale = scale;
    st.cell_size = cell_size;
    st.bins = bins;
    st.cells_w = w / cell_size;
    st.cells_h = h / cell_size;
    st.channels.assign(static_cast<std::size_t>(bins) + 1,
                       std::vector<double>(static_cast<std::size_t>(st.cells_w) * st.cells_h, 0.0));

    const double bins_over_pi = static_cast<double>(bins) / std::numbers::pi;
    for (int y = 0; y < st.cells_h * cell_size; ++y) {
        const int ym = y > 0 ? y - 1 : 0;
        const int yp = y + 1 < h ? y + 1 : h - 1;
        const int cy = y / cell_size;
        for (int x = 0; x < st.cells_w * cell_size; ++x) {
            const int xm = x > 0 ? x - 1 : 0;
            const int xp = x + 1 < w ? x + 1 : w - 1;
            const double gx = 0.5 * (img.at(xp, y) - img.at(xm, y));
            const double gy = 0.5 * (img.at(x, yp) - img.at(x, ym));
            double mag = std::sqrt(gx * gx + gy * gy);
            if (mag == 0.0) continue;  // no orientation; contributes nothing
            mag *= g;

            double theta = std::atan2(gy, gx);
            if (theta < 0.0) theta += std::numbers::pi;
            if (theta >= std::numbers::pi) theta = 0.0;  // fold to [0, pi)

            // soft-assign to the two nearest bins, circular modulo bins
            const double pos = theta * bins_over_pi - 0.5;
            const int lo = static_cast<int>(std::floor(pos));
            const double w_hi = pos - lo;
            const int bin_lo = (lo % bins + bins) % bins;
            const int bin_hi = (bin_lo + 1) % bins;

            const std::size_t cell = static_cast<std::size_t>(cy) * st.cells_w + x / cell_size;
            st.channels[0][cell] += mag;
            st.channels[1 + static_cast<std::size_t>(bin_lo)][cell] += (1.0 - w_hi) * mag;
            st.channels[1 + static_cast<std::size_t>(bin_hi)][cell] += w_hi * mag;
        }
    }
    return st;
}

/// Channels for every pyramid level, each normalized with its own scale.
inline std::vector<ChannelStack> normalized_channel_pyramid(const Image& img,
                                                            const ScaleSet& scales,
                                                            const NormalizationModel* model,
                                                            int cell_size = 4, int bins = 6) {
    const Pyramid pyr = build_pyramid(img, scales);
    std::vector<ChannelStack> stacks;
    stacks.reserve(pyr.levels.size());
    for (const auto& level : pyr.levels)
        stacks.push_back(compute_channels(level.image, level.scale, model, cell_size, bins));
    return stacks;
}

/// Block-average every plane of a stack down to a coarser cell grid.
/// Fine cell (fx, fy) lands in coarse cell (fx*cw/fw, fy*ch/fh).
inline ChannelStack reduce_to_grid(const ChannelStack& st, int cells_w, int cells_h) {
    if (cells_w < 1 || cells_h < 1 || cells_w > st.cells_w || cells_h > st.cells_h)
        throw std::invalid_argument("reduce_to_grid: bad target grid");
    if (cells_w == st.cells_w && cells_h == st.cells_h) return st;

    ChannelStack out = st;
    out.cells_w = cells_w;
    out.cells_h = cells_h;
    out.channels.assign(st.channels.size(),
                        std::vector<double>(static_cast<std::size_t>(cells_w) * cells_h, 0.0));
    std::vector<double> counts(static_cast<std::size_t>(cells_w) * cells_h, 0.0);

    for (int fy = 0; fy < st.cells_h; ++fy) {
        const int cy = static_cast<int>(static_cast<std::int64_t>(fy) * cells_h / st.cells_h);
        for (int fx = 0; fx < st.cells_w; ++fx) {
            const int cx = static_cast<int>(static_cast<std::int64_t>(fx) * cells_w / st.cells_w);
            const std::size_t c = static_cast<std::size_t>(cy) * cells_w + cx;
            counts[c] += 1.0;
            for (std::size_t ch = 0; ch < st.channels.size(); ++ch)
                out.channels[ch][c] += st.channels[ch][static_cast<std::size_t>(fy) * st.cells_w + fx];
        }
    }
    for (std::size_t ch = 0; ch < out.channels.size(); ++ch)
        for (std::size_t c = 0; c < counts.size(); ++c) out.channels[ch][c] /= counts[c];
    return out;
}

/// Mean across objects, channels, and cells of the population variance of
/// each cell value over scales. All stacks of one object must share the
/// same grid and channel count, with at least two scales per object.
inline double cross_scale_variance(
    const std::vector<std::pair<std::string, std::vector<ChannelStack>>>& stacks_per_object) {
    if (stacks_per_object.empty())
        throw numeric_error("cross_scale_variance: no objects");

    double total = 0.0;
    std::size_t cells = 0;
    for (const auto& [id, stacks] : stacks_per_object) {
        if (stacks.size() < 2)
            throw numeric_error("cross_scale_variance: object " + id + " has fewer than 2 scales");
        const int cw = stacks[0].cells_w, ch = stacks[0].cells_h;
        const std::size_t nch = stacks[0].channels.size();
        for (const auto& st : stacks)
            if (st.cells_w != cw || st.cells_h != ch || st.channels.size() != nch)
                throw numeric_error("cross_scale_variance: mismatched grids for object " + id);

        const double inv_n = 1.0 / static_cast<double>(stacks.size());
        for (std::size_t c = 0; c < nch; ++c) {
            for (std::size_t i = 0; i < static_cast<std::size_t>(cw) * ch; ++i) {
                double mean = 0.0;
                for (const auto& st : stacks) mean += st.channels[c][i];
                mean *= inv_n;
                double var = 0.0;
                for (const auto& st : stacks) {
                    const double d = st.channels[c][i] - mean;
                    var += d * d;
                }
                total += var * inv_n;
                ++cells;
            }
        }
    }
    return total / static_cast<double>(cells);
}

// ---------------------------------------------------------------------------
// Channel dump file format: magic "GSCH", then little-endian
// u32 version, f64 scale, u32 cell_size, u32 bins, u32 cells_w, u32 cells_h,
// followed by the planes as f32 row-major in order [magnitude, bin_0 ...].
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kChannelDumpVersion = 1;

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& buf, double v) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline double get_f64(const unsigned char* p) {
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = (u << 8) | p[i];
    return std::bit_cast<double>(u);
}

}  // namespace detail

inline void write_channel_dump(const ChannelStack& st, const std::string& path) {
    std::string buf;
    buf.reserve(32 + st.channels.size() * st.channels[0].size() * 4);
    buf += "GSCH";
    detail::put_u32(buf, kChannelDumpVersion);
    detail::put_f64(buf, st.scale);
    detail::put_u32(buf, static_cast<std::uint32_t>(st.cell_size));
    detail::put_u32(buf, static_cast<std::uint32_t>(st.bins));
    detail::put_u32(buf, static_cast<std::uint32_t>(st.cells_w));
    detail::put_u32(buf, static_cast<std::uint32_t>(st.cells_h));
    for (const auto& plane : st.channels)
        for (double v : plane) detail::put_f32(buf, static_cast<float>(v));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

/// Read a channel dump. Plane values come back as the f32 the file stores.
inline ChannelStack read_channel_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open channel dump: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 32 || std::memcmp(buf.data(), "GSCH", 4) != 0)
        throw io_error("not a channel dump: " + path);
    const std::uint32_t version = detail::get_u32(buf.data() + 4);
    if (version != kChannelDumpVersion)
        throw io_error("unsupported channel dump version " + std::to_string(version) + ": " + path);

    ChannelStack st;
    st.scale = detail::get_f64(buf.data() + 8);
    st.cell_size = static_cast<int>(detail::get_u32(buf.data() + 16));
    st.bins = static_cast<int>(detail::get_u32(buf.data() + 20));
    st.cells_w = static_cast<int>(detail::get_u32(buf.data() + 24));
    st.cells_h = static_cast<int>(detail::get_u32(buf.data() + 28));

    const std::size_t plane = static_cast<std::size_t>(st.cells_w) * st.cells_h;
    const std::size_t planes = static_cast<std::size_t>(st.bins) + 1;
    if (buf.size() != 32 + planes * plane * 4)
        throw io_error("channel dump truncated: " + path);

    st.channels.assign(planes, std::vector<double>(plane));
    const unsigned char* p = buf.data() + 32;
    for (std::size_t c = 0; c < planes; ++c)
        for (std::size_t i = 0; i < plane; ++i, p += 4)
            st.channels[c][i] = std::bit_cast<float>(detail::get_u32(p));
    return st;
}

}  // namespace gradnorm

#endif  // GRADNORM_CHANNELS_HPP
