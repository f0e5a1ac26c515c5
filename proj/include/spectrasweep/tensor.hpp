#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spectrasweep/error.hpp"

namespace spectrasweep {

/// Dense row-major 2-D field of doubles.
class Image {
public:
    Image() = default;
    Image(int height, int width, double fill = 0.0)
        : height_(height), width_(width),
          pixels_(static_cast<std::size_t>(checked(height, width)), fill) {}
    Image(int height, int width, std::vector<double> pixels)
        : height_(height), width_(width), pixels_(std::move(pixels)) {
        if (pixels_.size() != static_cast<std::size_t>(checked(height, width)))
            throw ShapeError("image pixel count does not match " + std::to_string(height) + "x" +
                             std::to_string(width));
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    double& operator()(int row, int col) noexcept {
        assert(row >= 0 && row < height_ && col >= 0 && col < width_);
        return pixels_[static_cast<std::size_t>(row) * width_ + col];
    }
    double operator()(int row, int col) const noexcept {
        assert(row >= 0 && row < height_ && col >= 0 && col < width_);
        return pixels_[static_cast<std::size_t>(row) * width_ + col];
    }
    /// Replicate-edge access.
    double clamped(int row, int col) const noexcept {
        row = std::clamp(row, 0, height_ - 1);
        col = std::clamp(col, 0, width_ - 1);
        return pixels_[static_cast<std::size_t>(row) * width_ + col];
    }

    std::span<double> span() noexcept { return pixels_; }
    std::span<const double> span() const noexcept { return pixels_; }
    std::vector<double>& data() noexcept { return pixels_; }
    const std::vector<double>& data() const noexcept { return pixels_; }

    bool operator==(const Image&) const = default;

private:
    static long checked(int h, int w) {
        if (h < 0 || w < 0) throw ShapeError("negative image dimensions");
        return static_cast<long>(h) * w;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<double> pixels_;
};

/// Dense channel-major 3-D tensor (channel, row, column).
class Volume {
public:
    Volume() = default;
    Volume(int channels, int height, int width, double fill = 0.0)
        : channels_(channels), height_(height), width_(width),
          values_(static_cast<std::size_t>(checked(channels, height, width)), fill) {}
    Volume(int channels, int height, int width, std::vector<double> values)
        : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
        if (values_.size() != static_cast<std::size_t>(checked(channels, height, width)))
            throw ShapeError("volume value count does not match its dimensions");
    }

    int channels() const noexcept { return channels_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    bool same_shape(const Volume& o) const noexcept {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }

    double& operator()(int c, int row, int col) noexcept {
        assert(c >= 0 && c < channels_ && row >= 0 && row < height_ && col >= 0 && col < width_);
        return values_[(static_cast<std::size_t>(c) * height_ + row) * width_ + col];
    }
    double operator()(int c, int row, int col) const noexcept {
        assert(c >= 0 && c < channels_ && row >= 0 && row < height_ && col >= 0 && col < width_);
        return values_[(static_cast<std::size_t>(c) * height_ + row) * width_ + col];
    }

    std::span<double> plane(int c) noexcept { return {values_.data() + c * plane_size(), plane_size()}; }
    std::span<const double> plane(int c) const noexcept {
        return {values_.data() + c * plane_size(), plane_size()};
    }
    Image image(int c) const {
        auto p = plane(c);
        return Image(height_, width_, std::vector<double>(p.begin(), p.end()));
    }
    void set_image(int c, const Image& img) {
        if (img.height() != height_ || img.width() != width_)
            throw ShapeError("plane shape does not match volume");
        std::copy(img.data().begin(), img.data().end(), plane(c).begin());
    }

    std::span<double> span() noexcept { return values_; }
    std::span<const double> span() const noexcept { return values_; }
    std::vector<double>& data() noexcept { return values_; }
    const std::vector<double>& data() const noexcept { return values_; }

    bool operator==(const Volume&) const = default;

private:
    static long checked(int c, int h, int w) {
        if (c < 0 || h < 0 || w < 0) throw ShapeError("negative volume dimensions");
        return static_cast<long>(c) * h * w;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
};

inline Volume stack_images(const std::vector<Image>& images) {
    if (images.empty()) return {};
    Volume v(static_cast<int>(images.size()), images[0].height(), images[0].width());
    for (int c = 0; c < v.channels(); ++c) v.set_image(c, images[static_cast<std::size_t>(c)]);
    return v;
}

inline bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace spectrasweep
