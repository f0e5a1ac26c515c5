#pragma once

// Renders the grayscale frames a Fresnel-lens camera records along a focal sweep: every band is
// blurred by its own defocus disc at the current lens position, then the monochrome sensor sums
// the bands with its spectral response.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/imgproc.hpp"
#include "spectrasweep/optics.hpp"
#include "spectrasweep/parallel.hpp"
#include "spectrasweep/spectral.hpp"

namespace spectrasweep {

struct NoiseModel {
    enum class Kind { None, Gaussian, PoissonGaussian };
    Kind kind = Kind::None;
    double sigma = 0.0;
    double photon_scale = 1000.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(sigma >= 0.0)) throw InvariantError("noise: sigma must be non-negative");
        if (!(photon_scale > 0.0)) throw InvariantError("noise: photon_scale must be positive");
    }
};

/// Relative quantum efficiency per band.
struct SensorResponse {
    std::vector<double> weights;

    static SensorResponse flat(int bands) {
        return {std::vector<double>(static_cast<std::size_t>(bands), 1.0 / bands)};
    }
    void validate(int bands) const {
        if (weights.size() != static_cast<std::size_t>(bands))
            throw InvariantError("sensor response has " + std::to_string(weights.size()) +
                                 " weights for " + std::to_string(bands) + " bands");
        bool any = false;
        for (double w : weights) {
            if (!(w >= 0.0)) throw InvariantError("sensor response weights must be non-negative");
            any = any || w > 0.0;
        }
        if (!any) throw InvariantError("sensor response is all zero");
    }
};

struct SimOptions {
    PsfModel psf = PsfModel::Disc;
    /// Keep the lens-position dependent magnification z / reference_z_mm in the output.
    bool emit_unaligned = false;
    /// Position whose scale the aligned output uses; <= 0 means the frame's own position.
    double reference_z_mm = 0.0;
    /// Divide by the noiseless maximum when it exceeds 1 (for stacks: the maximum over all frames).
    bool normalize = true;
};

/// Per-band blur kernels at lens position z.
inline std::vector<Image> band_kernels(const BandGrid& bands, const LensConfig& lens,
                                       const AcquisitionGeometry& geometry, double z_mm, PsfModel model) {
    std::vector<Image> kernels;
    kernels.reserve(static_cast<std::size_t>(bands.size()));
    for (int b = 0; b < bands.size(); ++b)
        kernels.push_back(psf_kernel(defocus_radius_px(lens, geometry, bands[b], z_mm), model));
    return kernels;
}

namespace detail {

inline void check_sim_inputs(const SpectralCube& cube, const LensConfig& lens, const AcquisitionGeometry& geometry,
                             double z_mm, const SensorResponse& response) {
    lens.validate();
    geometry.validate();
    response.validate(cube.bands_count());
    if (z_mm < geometry.z0_mm || z_mm > geometry.z1_mm)
        throw RangeError("lens position " + std::to_string(z_mm) + " mm outside the sweep interval");
    FocusSchedule ref = reference_schedule(lens, geometry);
    for (int b = 0; b < cube.bands_count(); ++b) {
        double z = position_for_wavelength(ref, cube.bands()[b]);
        if (z < geometry.z0_mm || z > geometry.z1_mm)
            throw RangeError("band " + std::to_string(b) + " (" + std::to_string(cube.bands()[b]) +
                             " nm) cannot be focused inside the sweep interval");
    }
}

inline std::uint64_t frame_seed(std::uint64_t seed, int k) {
    return seed ^ (static_cast<std::uint64_t>(k) * 0x9E3779B97F4A7C15ull);
}

}  // namespace detail

/// Linear, noiseless sensor image at z: sum_b w_b * (cube_b * psf_b), then magnification when
/// `options.emit_unaligned` is set. No normalisation or clamping.
inline Image render_frame(const SpectralCube& cube, const LensConfig& lens, const AcquisitionGeometry& geometry,
                          double z_mm, const SensorResponse& response, const SimOptions& options = {}) {
    detail::check_sim_inputs(cube, lens, geometry, z_mm, response);
    auto kernels = band_kernels(cube.bands(), lens, geometry, z_mm, options.psf);
    std::vector<Image> blurred(static_cast<std::size_t>(cube.bands_count()));
    parallel_for(blurred.size(), [&](std::size_t b) {
        int band = static_cast<int>(b);
        if (response.weights[b] != 0.0) blurred[b] = convolve_replicate(cube.band(band), kernels[b]);
    });
    Image frame(cube.height(), cube.width());
    for (std::size_t b = 0; b < blurred.size(); ++b) {
        if (response.weights[b] == 0.0) continue;
        auto src = blurred[b].span();
        auto dst = frame.span();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += response.weights[b] * src[i];
    }
    if (options.emit_unaligned && options.reference_z_mm > 0.0)
        frame = magnify_about_center(frame, z_mm / options.reference_z_mm);
    return frame;
}

/// Adds sensor noise and clamps to [0, 1]. Kind::None returns the input unchanged.
inline Image apply_noise(const Image& image, const NoiseModel& noise) {
    noise.validate();
    if (noise.kind == NoiseModel::Kind::None) return image;
    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Image out = image;
    for (double& v : out.span()) {
        double x = v;
        if (noise.kind == NoiseModel::Kind::PoissonGaussian) {
            std::poisson_distribution<long long> photons(std::max(0.0, x) * noise.photon_scale);
            x = static_cast<double>(photons(rng)) / noise.photon_scale;
        }
        if (noise.sigma > 0.0) x += noise.sigma * gauss(rng);
        v = std::clamp(x, 0.0, 1.0);
    }
    return out;
}

namespace detail {

inline Image finish_frame(Image frame, double scale, const NoiseModel& noise) {
    if (scale != 1.0)
        for (double& v : frame.span()) v /= scale;
    frame = apply_noise(frame, noise);
    for (double& v : frame.span()) v = std::clamp(v, 0.0, 1.0);
    return frame;
}

}  // namespace detail

inline Image simulate_frame(const SpectralCube& cube, const LensConfig& lens, const AcquisitionGeometry& geometry,
                            double z_mm, const SensorResponse& response, const NoiseModel& noise,
                            const SimOptions& options = {}) {
    Image frame = render_frame(cube, lens, geometry, z_mm, response, options);
    double scale = options.normalize ? std::max(1.0, image_max(frame)) : 1.0;
    return detail::finish_frame(std::move(frame), scale, noise);
}

/// One frame per schedule position. Unaligned output is magnified relative to the middle position.
inline GrayscaleStack simulate_stack(const SpectralCube& cube, const LensConfig& lens,
                                     const AcquisitionGeometry& geometry, const FocusSchedule& schedule,
                                     const SensorResponse& response, const NoiseModel& noise,
                                     SimOptions options = {}) {
    schedule.validate();
    if (options.emit_unaligned && options.reference_z_mm <= 0.0)
        options.reference_z_mm = schedule.positions_mm[schedule.positions_mm.size() / 2];
    std::vector<Image> frames;
    frames.reserve(schedule.positions_mm.size());
    double peak = 0.0;
    for (double z : schedule.positions_mm) {
        frames.push_back(render_frame(cube, lens, geometry, z, response, options));
        peak = std::max(peak, image_max(frames.back()));
    }
    double scale = options.normalize ? std::max(1.0, peak) : 1.0;
    for (std::size_t k = 0; k < frames.size(); ++k) {
        NoiseModel frame_noise = noise;
        frame_noise.seed = detail::frame_seed(noise.seed, static_cast<int>(k));
        frames[k] = detail::finish_frame(std::move(frames[k]), scale, frame_noise);
    }
    return GrayscaleStack(std::move(frames), schedule.positions_mm);
}

}  // namespace spectrasweep
