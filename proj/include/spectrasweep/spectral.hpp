#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

/// Ordered list of band-centre wavelengths in nanometres.
class BandGrid {
public:
    /// 50 uniform samples over [470, 900] nm.
    BandGrid() : BandGrid(uniform(470.0, 900.0, 50)) {}
    explicit BandGrid(std::vector<double> wavelengths_nm) : nm_(std::move(wavelengths_nm)) {
        if (nm_.empty()) throw InvariantError("band grid is empty");
        for (std::size_t i = 0; i < nm_.size(); ++i) {
            if (!(nm_[i] > 0.0) || !std::isfinite(nm_[i]))
                throw InvariantError("band wavelength " + std::to_string(i) + " is not positive");
            if (i > 0 && !(nm_[i] > nm_[i - 1]))
                throw InvariantError("band wavelengths must be strictly increasing (index " +
                                     std::to_string(i) + ")");
        }
    }

    static BandGrid uniform(double min_nm, double max_nm, int count) {
        if (count < 1) throw InvariantError("band count must be at least 1");
        std::vector<double> nm(static_cast<std::size_t>(count));
        if (count == 1) {
            nm[0] = min_nm;
        } else {
            for (int i = 0; i < count; ++i)
                nm[static_cast<std::size_t>(i)] = min_nm + (max_nm - min_nm) * i / (count - 1);
            nm.back() = max_nm;
        }
        return BandGrid(std::move(nm));
    }

    int size() const noexcept { return static_cast<int>(nm_.size()); }
    double operator[](int i) const { return nm_.at(static_cast<std::size_t>(i)); }
    double min_nm() const noexcept { return nm_.front(); }
    double max_nm() const noexcept { return nm_.back(); }
    const std::vector<double>& wavelengths_nm() const noexcept { return nm_; }

    /// Index of the band closest to `nm` (lowest index on ties).
    int nearest(double nm) const {
        int best = 0;
        for (int i = 1; i < size(); ++i)
            if (std::abs(nm_[static_cast<std::size_t>(i)] - nm) <
                std::abs(nm_[static_cast<std::size_t>(best)] - nm))
                best = i;
        return best;
    }

    bool operator==(const BandGrid&) const = default;

private:
    std::vector<double> nm_;
};

/// L x H x W radiance cube. Values are finite and non-negative.
class SpectralCube {
public:
    SpectralCube() = default;
    SpectralCube(BandGrid bands, Volume data) : bands_(std::move(bands)), data_(std::move(data)) {
        if (data_.channels() != bands_.size())
            throw InvariantError("cube has " + std::to_string(data_.channels()) +
                                 " planes but the band grid has " + std::to_string(bands_.size()));
        for (double v : data_.span())
            if (!std::isfinite(v) || v < 0.0)
                throw InvariantError("cube values must be finite and non-negative");
    }
    SpectralCube(BandGrid bands, int height, int width)
        : SpectralCube(bands, Volume(bands.size(), height, width)) {}

    const BandGrid& bands() const noexcept { return bands_; }
    const Volume& data() const noexcept { return data_; }
    int bands_count() const noexcept { return data_.channels(); }
    int height() const noexcept { return data_.height(); }
    int width() const noexcept { return data_.width(); }
    double operator()(int b, int row, int col) const noexcept { return data_(b, row, col); }
    Image band(int b) const { return data_.image(b); }

    bool operator==(const SpectralCube&) const = default;

private:
    BandGrid bands_{std::vector<double>{1.0}};
    Volume data_;
};

/// Copies `v` into a cube after clamping negatives to zero.
inline SpectralCube to_cube(const BandGrid& bands, Volume v) {
    for (double& x : v.span()) x = std::max(0.0, x);
    return SpectralCube(bands, std::move(v));
}

/// K monochrome frames sharing one shape, each tagged with its lens-to-sensor distance.
class GrayscaleStack {
public:
    static constexpr int kMinSide = 8;

    GrayscaleStack() = default;
    GrayscaleStack(std::vector<Image> frames, std::vector<double> lens_positions_mm)
        : frames_(std::move(frames)), positions_(std::move(lens_positions_mm)) {
        if (frames_.empty()) throw InvariantError("stack has no frames");
        if (frames_.size() != positions_.size())
            throw InvariantError("stack has " + std::to_string(frames_.size()) + " frames but " +
                                 std::to_string(positions_.size()) + " lens positions");
        const Image& first = frames_.front();
        if (first.height() < kMinSide || first.width() < kMinSide)
            throw InvariantError("grayscale frames must be at least 8x8");
        for (std::size_t k = 0; k < frames_.size(); ++k) {
            if (!frames_[k].same_shape(first))
                throw InvariantError("frame " + std::to_string(k) + " has a different shape");
            for (double v : frames_[k].span())
                if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                    throw InvariantError("frame " + std::to_string(k) +
                                         " has values outside [0, 1]");
            if (!(positions_[k] > 0.0))
                throw InvariantError("lens position " + std::to_string(k) + " is not positive");
            if (k > 0 && !(positions_[k] > positions_[k - 1]))
                throw InvariantError("lens positions must be strictly increasing (index " +
                                     std::to_string(k) + ")");
        }
    }

    int size() const noexcept { return static_cast<int>(frames_.size()); }
    int height() const noexcept { return frames_.empty() ? 0 : frames_.front().height(); }
    int width() const noexcept { return frames_.empty() ? 0 : frames_.front().width(); }
    const Image& frame(int k) const { return frames_.at(static_cast<std::size_t>(k)); }
    const std::vector<Image>& frames() const noexcept { return frames_; }
    const std::vector<double>& lens_positions_mm() const noexcept { return positions_; }

    bool operator==(const GrayscaleStack&) const = default;

private:
    std::vector<Image> frames_;
    std::vector<double> positions_;
};

}  // namespace spectrasweep
