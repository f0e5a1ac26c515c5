#pragma once

// Small 2-D image primitives shared by the simulator, preprocessing and registration.

#include <array>
#include <cmath>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

/// Centred convolution with an odd-sized kernel and replicate-edge padding.
inline Image convolve_replicate(const Image& image, const Image& kernel) {
    if (kernel.height() % 2 == 0 || kernel.width() % 2 == 0)
        throw ShapeError("convolution kernel must have odd side lengths");
    if (kernel.height() == 1 && kernel.width() == 1) {
        Image out = image;
        for (double& v : out.span()) v *= kernel(0, 0);
        return out;
    }
    const int hy = kernel.height() / 2, hx = kernel.width() / 2;
    const int H = image.height(), W = image.width();
    // Padded copy keeps the inner loop free of bounds logic.
    const int PW = W + 2 * hx;
    std::vector<double> padded(static_cast<std::size_t>(H + 2 * hy) * PW);
    for (int r = 0; r < H + 2 * hy; ++r)
        for (int c = 0; c < PW; ++c) padded[static_cast<std::size_t>(r) * PW + c] = image.clamped(r - hy, c - hx);

    Image out(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int i = 0; i < kernel.height(); ++i) {
                // out(r,c) = sum k(i,j) * in(r + hy - i, c + hx - j)
                const double* row = &padded[static_cast<std::size_t>(r + 2 * hy - i) * PW + c + 2 * hx];
                for (int j = 0; j < kernel.width(); ++j) acc += kernel(i, j) * row[-j];
            }
            out(r, c) = acc;
        }
    return out;
}

/// Separable replicate-padded filtering with the same 1-D kernel along rows then columns.
inline Image filter_separable(const Image& image, const std::vector<double>& taps) {
    const int half = static_cast<int>(taps.size() / 2);
    Image tmp(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            double acc = 0.0;
            for (int t = -half; t <= half; ++t) acc += taps[static_cast<std::size_t>(t + half)] * image.clamped(r, c - t);
            tmp(r, c) = acc;
        }
    Image out(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            double acc = 0.0;
            for (int t = -half; t <= half; ++t) acc += taps[static_cast<std::size_t>(t + half)] * tmp.clamped(r - t, c);
            out(r, c) = acc;
        }
    return out;
}

/// Normalised Gaussian taps of radius `radius` (default ceil(3 sigma)).
inline std::vector<double> gaussian_taps(double sigma, int radius = -1) {
    if (radius < 0) radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * i * i / (sigma * sigma));
        taps[static_cast<std::size_t>(i + radius)] = w;
        total += w;
    }
    for (double& w : taps) w /= total;
    return taps;
}

/// Bilinear sample at (x, y) = (column, row); positions outside [0, W-1] x [0, H-1] give `outside`.
inline double sample_bilinear(const Image& image, double x, double y, double outside = 0.0) {
    constexpr double slack = 1e-9;
    const int W = image.width(), H = image.height();
    if (!(x >= -slack && y >= -slack && x <= W - 1 + slack && y <= H - 1 + slack)) return outside;
    x = std::clamp(x, 0.0, static_cast<double>(W - 1));
    y = std::clamp(y, 0.0, static_cast<double>(H - 1));
    int x0 = std::min(static_cast<int>(std::floor(x)), W - 1);
    int y0 = std::min(static_cast<int>(std::floor(y)), H - 1);
    double fx = x - x0, fy = y - y0;
    int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    double top = image(y0, x0) + fx * (image(y0, x1) - image(y0, x0));
    if (fy == 0.0) return top;
    double bottom = image(y1, x0) + fx * (image(y1, x1) - image(y1, x0));
    return top + fy * (bottom - top);
}

/// Bilinear sample with replicate-edge extension outside the image.
inline double sample_bilinear_clamped(const Image& image, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(image.width() - 1));
    y = std::clamp(y, 0.0, static_cast<double>(image.height() - 1));
    return sample_bilinear(image, x, y);
}

/// Magnifies by `scale` about the image centre: out(p) = in(c + (p - c) / scale), edges replicated.
inline Image magnify_about_center(const Image& image, double scale) {
    if (!(scale > 0.0)) throw DomainError("magnification must be positive");
    if (scale == 1.0) return image;
    const double cx = 0.5 * (image.width() - 1), cy = 0.5 * (image.height() - 1);
    Image out(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c)
            out(r, c) = sample_bilinear_clamped(image, cx + (c - cx) / scale, cy + (r - cy) / scale);
    return out;
}

struct Gradients {
    Image gx;
    Image gy;
};

/// Standard 3x3 Sobel responses with replicate padding.
inline Gradients sobel_gradients(const Image& image) {
    Gradients g{Image(image.height(), image.width()), Image(image.height(), image.width())};
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            auto p = [&](int dr, int dc) { return image.clamped(r + dr, c + dc); };
            g.gx(r, c) = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            g.gy(r, c) = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        }
    return g;
}

inline double image_max(const Image& image) {
    double m = -INFINITY;
    for (double v : image.span()) m = std::max(m, v);
    return m;
}

inline double image_mean(const Image& image) {
    double s = 0.0;
    for (double v : image.span()) s += v;
    return image.size() ? s / static_cast<double>(image.size()) : 0.0;
}

}  // namespace spectrasweep
