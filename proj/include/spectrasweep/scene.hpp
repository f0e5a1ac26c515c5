#pragma once

// Synthetic multispectral scenes: flat shapes painted in order, each with a spectrum built from
// Gaussian peaks over the band grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/spectral.hpp"

namespace spectrasweep {

struct SpectralPeak {
    double center_nm = 550.0;
    double width_nm = 60.0;
    double amplitude = 1.0;
};

struct ShapeSpec {
    enum class Kind { Rectangle, Disc, Gradient };
    Kind kind = Kind::Rectangle;
    /// Rectangle / Gradient: top-left corner. Disc: centre. In pixels, x = column.
    double x = 0.0;
    double y = 0.0;
    /// Rectangle / Gradient extent; Disc uses radius.
    double width = 0.0;
    double height = 0.0;
    double radius = 0.0;
    std::vector<SpectralPeak> peaks;
};

struct SceneSpec {
    int height = 64;
    int width = 64;
    BandGrid bands = BandGrid::uniform(470.0, 900.0, 8);
    std::vector<ShapeSpec> shapes;
    /// Extra shapes drawn from `seed` and painted after the explicit ones.
    int random_shapes = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (height < 1 || width < 1) throw InvariantError("scene: dimensions must be positive");
        if (random_shapes < 0) throw InvariantError("scene: random_shapes must be non-negative");
        for (std::size_t s = 0; s < shapes.size(); ++s) {
            const auto& sh = shapes[s];
            if (sh.kind == ShapeSpec::Kind::Disc ? !(sh.radius > 0.0) : !(sh.width > 0.0 && sh.height > 0.0))
                throw InvariantError("scene: shape " + std::to_string(s) + " has no area");
            for (const auto& p : sh.peaks) {
                if (!(p.amplitude >= 0.0) || !(p.width_nm > 0.0))
                    throw InvariantError("scene: shape " + std::to_string(s) +
                                         " peak needs amplitude >= 0 and width > 0");
                if (p.center_nm < bands.min_nm() || p.center_nm > bands.max_nm())
                    throw InvariantError("scene: shape " + std::to_string(s) + " peak at " +
                                         std::to_string(p.center_nm) + " nm lies outside the band range");
            }
        }
    }
};

inline std::vector<double> peak_spectrum(const std::vector<SpectralPeak>& peaks, const BandGrid& bands) {
    std::vector<double> s(static_cast<std::size_t>(bands.size()), 0.0);
    for (const auto& p : peaks)
        for (int b = 0; b < bands.size(); ++b) {
            double t = (bands[b] - p.center_nm) / p.width_nm;
            s[static_cast<std::size_t>(b)] += p.amplitude * std::exp(-0.5 * t * t);
        }
    return s;
}

/// Random rectangles and discs (alternating), one spectral peak each, fully inside the frame
/// when the frame is large enough.
inline std::vector<ShapeSpec> random_shapes(int count, std::uint64_t seed, int height, int width, const BandGrid& bands) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    std::vector<ShapeSpec> out;
    const double span = std::min(height, width);
    for (int s = 0; s < count; ++s) {
        ShapeSpec sh;
        sh.peaks.push_back({uni(bands.min_nm(), bands.max_nm()), uni(40.0, 120.0), uni(0.4, 1.0)});
        if (s % 2 == 0) {
            sh.kind = ShapeSpec::Kind::Rectangle;
            sh.width = std::floor(uni(0.15, 0.375) * width) + 1;
            sh.height = std::floor(uni(0.15, 0.375) * height) + 1;
            sh.x = std::floor(uni(0.0625, std::max(0.0625, 1.0 - sh.width / width - 0.0625)) * width);
            sh.y = std::floor(uni(0.0625, std::max(0.0625, 1.0 - sh.height / height - 0.0625)) * height);
        } else {
            sh.kind = ShapeSpec::Kind::Disc;
            sh.radius = uni(0.09, 0.19) * span;
            sh.x = uni(sh.radius, width - sh.radius);
            sh.y = uni(sh.radius, height - sh.radius);
        }
        out.push_back(std::move(sh));
    }
    return out;
}

/// Piecewise-constant-in-space, smooth-in-spectrum cube. Gradient shapes ramp linearly from 0 at
/// their left edge to 1 at their right edge.
inline SpectralCube synth(const SceneSpec& spec) {
    spec.validate();
    std::vector<ShapeSpec> shapes = spec.shapes;
    auto extra = random_shapes(spec.random_shapes, spec.seed, spec.height, spec.width, spec.bands);
    shapes.insert(shapes.end(), extra.begin(), extra.end());

    Volume v(spec.bands.size(), spec.height, spec.width);
    for (const auto& sh : shapes) {
        auto spectrum = peak_spectrum(sh.peaks, spec.bands);
        for (int r = 0; r < spec.height; ++r)
            for (int c = 0; c < spec.width; ++c) {
                bool inside;
                if (sh.kind == ShapeSpec::Kind::Disc) {
                    double dx = c - sh.x, dy = r - sh.y;
                    inside = dx * dx + dy * dy <= sh.radius * sh.radius;
                } else {
                    inside = c >= sh.x && c < sh.x + sh.width && r >= sh.y && r < sh.y + sh.height;
                }
                if (!inside) continue;
                double gain = 1.0;
                if (sh.kind == ShapeSpec::Kind::Gradient && sh.width > 1) gain = std::min(1.0, (c - sh.x) / (sh.width - 1));
                for (int b = 0; b < spec.bands.size(); ++b) v(b, r, c) = gain * spectrum[static_cast<std::size_t>(b)];
            }
    }
    return SpectralCube(spec.bands, std::move(v));
}

}  // namespace spectrasweep
