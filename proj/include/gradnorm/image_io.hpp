// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_IMAGE_IO_HPP
#define GRADNORM_IMAGE_IO_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "gradnorm/errors.hpp"
#include "gradnorm/image.hpp"

namespace gradnorm {

namespace detail {

// BT.601 luma weights; the only color handling we do.
inline double luma(double r, double g, double b) {
    return std::clamp(0.299 * r + 0.587 * g + 0.114 * b, 0.0, 1.0);
}

inline bool has_png_signature(const unsigned char* bytes, std::size_t n) {
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    return n >= 8 && std::memcmp(bytes, sig, 8) == 0;
}

// Skips PGM whitespace and '#' comments, then parses one nonnegative integer.
inline long pgm_next_int(const std::vector<unsigned char>& buf, std::size_t& pos,
                         const std::string& path) {
    while (pos < buf.size()) {
        if (std::isspace(buf[pos])) {
            ++pos;
        } else if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size() || !std::isdigit(buf[pos]))
        throw io_error("malformed pgm header: " + path);
    long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
        v = v * 10 + (buf[pos] - '0');
        if (v > 1000000000L) throw io_error("pgm header value out of range: " + path);
        ++pos;
    }
    return v;
}

inline Image load_pgm(const std::vector<unsigned char>& buf, const std::string& path) {
    const bool ascii = buf[1] == '2';  // caller checked "P2"/"P5"
    std::size_t pos = 2;
    const long w = pgm_next_int(buf, pos, path);
    const long h = pgm_next_int(buf, pos, path);
    const long maxval = pgm_next_int(buf, pos, path);
    if (w < 1 || h < 1) throw io_error("pgm has zero dimension: " + path);
    if (maxval < 1 || maxval > 65535) throw io_error("pgm maxval out of range: " + path);

    const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    std::vector<double> data(count);
    const double inv = 1.0 / static_cast<double>(maxval);

    if (ascii) {
        for (std::size_t i = 0; i < count; ++i) {
            const long v = pgm_next_int(buf, pos, path);
            if (v > maxval) throw io_error("pgm sample exceeds maxval: " + path);
            data[i] = static_cast<double>(v) * inv;
        }
    } else {
        if (pos >= buf.size() || !std::isspace(buf[pos]))
            throw io_error("malformed pgm header: " + path);
        ++pos;  // single whitespace separates header from raster
        const int bytes_per = maxval > 255 ? 2 : 1;
        if (buf.size() - pos < count * bytes_per)
            throw io_error("pgm raster truncated: " + path);
        for (std::size_t i = 0; i < count; ++i) {
            long v;
            if (bytes_per == 2) {
                v = (static_cast<long>(buf[pos]) << 8) | buf[pos + 1];  // big-endian
                pos += 2;
            } else {
                v = buf[pos++];
            }
            if (v > maxval) throw io_error("pgm sample exceeds maxval: " + path);
            data[i] = static_cast<double>(v) * inv;
        }
    }
    return Image(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

inline Image load_png_file(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw io_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw io_error("libpng init failed: " + path);
    }

    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw io_error("png decode failed: " + path);
    }

    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);

    const bool gray = color == PNG_COLOR_TYPE_GRAY && (depth == 8 || depth == 16);
    const bool rgb = color == PNG_COLOR_TYPE_RGB && depth == 8;
    if (!gray && !rgb) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw io_error("unsupported png format (want 8/16-bit gray or 8-bit rgb): " + path);
    }

    png_read_update_info(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    pixels.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    std::vector<double> data(static_cast<std::size_t>(w) * h);
    if (gray && depth == 8) {
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = pixels[i] / 255.0;
    } else if (gray && depth == 16) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            const unsigned v = (static_cast<unsigned>(pixels[2 * i]) << 8) | pixels[2 * i + 1];
            data[i] = v / 65535.0;  // png stores 16-bit samples big-endian
        }
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] = luma(pixels[3 * i] / 255.0, pixels[3 * i + 1] / 255.0,
                           pixels[3 * i + 2] / 255.0);
        }
    }
    return Image(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

}  // namespace detail

/// Load a grayscale image from PNG (8/16-bit gray, 8-bit RGB) or PGM
/// (binary P5 / ASCII P2). Intensities are scaled to [0, 1]; RGB converts
/// to luma with weights 0.299/0.587/0.114. The format is sniffed from the
/// file's magic bytes, not its extension.
inline Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open image: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() >= 8 && detail::has_png_signature(buf.data(), buf.size()))
        return detail::load_png_file(path);
    if (buf.size() >= 2 && buf[0] == 'P' && (buf[1] == '5' || buf[1] == '2'))
        return detail::load_pgm(buf, path);
    throw io_error("unsupported image format: " + path);
}

/// Write a binary (P5) PGM, quantizing intensities to the given maxval.
/// A load -> write -> load round trip preserves intensities to within
/// 1/(2*maxval).
inline void write_pgm(const Image& img, const std::string& path, int maxval = 255) {
    if (maxval < 1 || maxval > 65535)
        throw std::invalid_argument("write_pgm: maxval out of range");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << "P5\n" << img.width() << " " << img.height() << "\n" << maxval << "\n";
    for (double v : img.data()) {
        const long q = std::lround(v * maxval);
        if (maxval > 255) {
            out.put(static_cast<char>((q >> 8) & 0xff));
            out.put(static_cast<char>(q & 0xff));
        } else {
            out.put(static_cast<char>(q & 0xff));
        }
    }
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

}  // namespace gradnorm

#endif  // GRADNORM_IMAGE_IO_HPP
