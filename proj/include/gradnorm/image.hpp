// Copyright (c) 2026 the gradnorm authors
// Licensed under the Apache License 2.0.

#ifndef GRADNORM_IMAGE_HPP
#define GRADNORM_IMAGE_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace gradnorm {

/// 2D grayscale raster with real intensities in [0, 1], row-major.
///
/// Intensities are kept as doubles rather than integer codes so that
/// interpolation arithmetic is exact to floating precision; gradient
/// expectations are statistical and integer quantization would add
/// avoidable noise.
class Image {
public:
    Image() = default;

    Image(int width, int height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (width_ < 1 || height_ < 1)
            throw std::invalid_argument("Image: dimensions must be >= 1");
        if (data_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_))
            throw std::invalid_argument("Image: data length != width * height");
        for (double v : data_) {
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw std::invalid_argument("Image: intensity outside [0, 1]");
        }
    }

    /// Uniform image of the given intensity.
    static Image filled(int width, int height, double value) {
        return Image(width, height,
                     std::vector<double>(static_cast<std::size_t>(width) * height, value));
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }

    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    const std::vector<double>& data() const { return data_; }

    bool operator==(const Image& other) const {
        return width_ == other.width_ && height_ == other.height_ && data_ == other.data_;
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

}  // namespace gradnorm

#endif  // GRADNORM_IMAGE_HPP
