#pragma once

// Binary-phase Fresnel lens: phase step, chromatic focal law, focal-sweep schedule and the
// geometric defocus blur used by the simulator.
//
// Units: distances in mm, wavelengths in nm, sensor pitch in um. All conversions happen here.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/spectral.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

struct LensConfig {
    double n0 = 1.5;
    double h_nm = 685.0 / 3.0;  // half-wave step at the design wavelength
    double lambda0_nm = 685.0;
    double f0_mm = 20.0;
    double aperture_mm = 0.2;
    int m = 1;

    void validate() const {
        if (!(n0 > 1.0)) throw InvariantError("lens: n0 must exceed 1");
        if (!(h_nm > 0.0)) throw InvariantError("lens: h_nm must be positive");
        if (!(lambda0_nm > 0.0)) throw InvariantError("lens: lambda0_nm must be positive");
        if (!(f0_mm > 0.0)) throw InvariantError("lens: f0_mm must be positive");
        if (!(aperture_mm > 0.0)) throw InvariantError("lens: aperture_mm must be positive");
        if (m < 1) throw InvariantError("lens: diffraction order m must be >= 1");
    }
};

struct AcquisitionGeometry {
    double u_mm = 1300.0;
    double z0_mm = 15.0;
    double z1_mm = 30.0;
    double pixel_pitch_um = 2.5;
    int height = 64;
    int width = 64;

    void validate() const {
        if (!(z0_mm > 0.0 && z1_mm > z0_mm && u_mm > z1_mm))
            throw InvariantError("geometry: require u_mm > z1_mm > z0_mm > 0");
        if (!(pixel_pitch_um > 0.0)) throw InvariantError("geometry: pixel pitch must be positive");
        if (height < 1 || width < 1) throw InvariantError("geometry: sensor size must be positive");
    }
};

/// Lens positions of a focal sweep together with the reference pair (z0, lambda0) of the
/// position/wavelength law lambda(z) = z0 * lambda0 / z.
struct FocusSchedule {
    double z0_mm = 0.0;
    double lambda0_nm = 0.0;
    std::vector<double> positions_mm;

    void validate() const {
        if (!(z0_mm > 0.0) || !(lambda0_nm > 0.0))
            throw InvariantError("schedule: reference position and wavelength must be positive");
        if (positions_mm.empty()) throw InvariantError("schedule: no positions");
        for (std::size_t k = 0; k < positions_mm.size(); ++k) {
            if (!(positions_mm[k] > 0.0)) throw InvariantError("schedule: positions must be positive");
            if (k > 0 && !(positions_mm[k] > positions_mm[k - 1]))
                throw InvariantError("schedule: positions must be strictly increasing");
        }
    }
    int size() const noexcept { return static_cast<int>(positions_mm.size()); }
};

enum class PsfModel { Disc, Gaussian };

/// Phase delay 2*pi*n0*h/lambda in radians.
inline double phase_shift(const LensConfig& lens, double lambda_nm) {
    if (!(lambda_nm > 0.0)) throw DomainError("phase_shift: wavelength must be positive");
    return 2.0 * std::numbers::pi * lens.n0 * lens.h_nm / lambda_nm;
}

/// Ratio f'/f = m*lambda / (m'*lambda') between the focal lengths of two wavelengths and orders.
inline double focal_ratio(int m, double lambda_nm, int m_prime, double lambda_prime_nm) {
    if (!(lambda_nm > 0.0) || !(lambda_prime_nm > 0.0))
        throw DomainError("focal_ratio: wavelengths must be positive");
    if (m < 1 || m_prime < 1) throw DomainError("focal_ratio: orders must be >= 1");
    return (m * lambda_nm) / (m_prime * lambda_prime_nm);
}

/// First-order focal length f(lambda) = f0 * lambda0 / lambda.
inline double focal_length(const LensConfig& lens, double lambda_nm) {
    if (!(lambda_nm > 0.0)) throw DomainError("focal_length: wavelength must be positive");
    return lens.f0_mm * focal_ratio(1, lens.lambda0_nm, 1, lambda_nm);
}

/// Sensor distance satisfying 1/z + 1/u = 1/f(lambda).
inline double imaging_distance(const LensConfig& lens, const AcquisitionGeometry& geometry, double lambda_nm) {
    double inv = 1.0 / focal_length(lens, lambda_nm) - 1.0 / geometry.u_mm;
    if (!(inv > 0.0)) throw DomainError("imaging_distance: object inside the focal length");
    return 1.0 / inv;
}

inline double focused_wavelength(const FocusSchedule& schedule, double z_mm) {
    if (!(z_mm > 0.0)) throw DomainError("focused_wavelength: position must be positive");
    return schedule.z0_mm * schedule.lambda0_nm / z_mm;
}

inline double position_for_wavelength(const FocusSchedule& schedule, double lambda_nm) {
    if (!(lambda_nm > 0.0)) throw DomainError("position_for_wavelength: wavelength must be positive");
    return schedule.z0_mm * schedule.lambda0_nm / lambda_nm;
}

/// Reference (z0, lambda0) for a lens/geometry pair: lambda0 is the design wavelength and z0 the
/// sensor distance that images it sharply.
inline FocusSchedule reference_schedule(const LensConfig& lens, const AcquisitionGeometry& geometry) {
    return FocusSchedule{imaging_distance(lens, geometry, lens.lambda0_nm), lens.lambda0_nm, {}};
}

/// One position per band, sorted by increasing distance. Because z falls with wavelength, position
/// k focuses band L-1-k.
inline FocusSchedule schedule_for_bands(const LensConfig& lens, const AcquisitionGeometry& geometry,
                                        const BandGrid& bands) {
    lens.validate();
    geometry.validate();
    FocusSchedule s = reference_schedule(lens, geometry);
    std::string offending;
    for (int b = bands.size() - 1; b >= 0; --b) {
        double z = position_for_wavelength(s, bands[b]);
        if (z < geometry.z0_mm || z > geometry.z1_mm)
            offending += (offending.empty() ? "" : ", ") + std::to_string(b) + " (" +
                         std::to_string(bands[b]) + " nm -> " + std::to_string(z) + " mm)";
        s.positions_mm.push_back(z);
    }
    if (!offending.empty())
        throw RangeError("schedule_for_bands: bands map outside the sweep interval [" +
                         std::to_string(geometry.z0_mm) + ", " + std::to_string(geometry.z1_mm) +
                         "] mm: " + offending);
    s.validate();
    return s;
}

/// Band whose centre is closest to the wavelength focused at schedule position k.
inline int focused_band(const FocusSchedule& schedule, const BandGrid& bands, int k) {
    return bands.nearest(focused_wavelength(schedule, schedule.positions_mm.at(static_cast<std::size_t>(k))));
}

/// Radius in pixels of the geometric blur disc of wavelength lambda with the sensor at z:
/// (A/2) * z * |1/f(lambda) - 1/u - 1/z| / pitch. Zero when the imaging condition holds.
inline double defocus_radius_px(const LensConfig& lens, const AcquisitionGeometry& geometry,
                                double lambda_nm, double z_mm) {
    if (!(z_mm > 0.0) || !(geometry.u_mm > 0.0) || !(lens.aperture_mm > 0.0) || !(geometry.pixel_pitch_um > 0.0))
        throw DomainError("defocus_radius_px: distances must be positive");
    double mismatch = 1.0 / focal_length(lens, lambda_nm) - 1.0 / geometry.u_mm - 1.0 / z_mm;
    double radius_mm = 0.5 * lens.aperture_mm * z_mm * std::abs(mismatch);
    return radius_mm / (geometry.pixel_pitch_um * 1e-3);
}

namespace detail {

// Integral of sqrt(r^2 - x^2).
inline double half_chord_integral(double r, double x) {
    x = std::clamp(x, -r, r);
    return 0.5 * (x * std::sqrt(std::max(0.0, r * r - x * x)) + r * r * std::asin(x / r));
}

}  // namespace detail

/// Exact area of the intersection of the origin-centred disc of radius r with [x0,x1] x [y0,y1].
inline double disc_rect_overlap(double r, double x0, double x1, double y0, double y1) {
    if (r <= 0.0) return 0.0;
    double a = std::max(x0, -r), b = std::min(x1, r);
    if (a >= b) return 0.0;
    std::vector<double> cuts{a, b};
    for (double y : {y0, y1})
        if (std::abs(y) < r) {
            double x = std::sqrt(r * r - y * y);
            for (double c : {-x, x})
                if (c > a && c < b) cuts.push_back(c);
        }
    std::sort(cuts.begin(), cuts.end());
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        double lo = cuts[i], hi = cuts[i + 1];
        if (hi <= lo) continue;
        double mid = 0.5 * (lo + hi);
        double s = std::sqrt(std::max(0.0, r * r - mid * mid));
        bool upper_is_chord = s < y1;
        bool lower_is_chord = -s > y0;
        double upper = upper_is_chord ? s : y1;
        double lower = lower_is_chord ? -s : y0;
        if (upper <= lower) continue;
        double chord = detail::half_chord_integral(r, hi) - detail::half_chord_integral(r, lo);
        double seg = 0.0;
        seg += upper_is_chord ? chord : y1 * (hi - lo);
        seg -= lower_is_chord ? -chord : y0 * (hi - lo);
        area += seg;
    }
    return area;
}

/// Normalised (2*ceil(r)+1)^2 blur kernel. Disc taps are pixel/disc area overlaps; the Gaussian
/// alternative uses sigma = r/2 sampled at pixel centres. r < 0.5 gives the 1x1 identity.
inline Image psf_kernel(double r_px, PsfModel model = PsfModel::Disc) {
    if (!(r_px >= 0.0)) throw DomainError("psf_kernel: radius must be non-negative");
    if (r_px < 0.5) return Image(1, 1, 1.0);
    const int half = static_cast<int>(std::ceil(r_px));
    const int k = 2 * half + 1;
    Image kernel(k, k);
    double total = 0.0;
    for (int i = -half; i <= half; ++i)
        for (int j = -half; j <= half; ++j) {
            double w;
            if (model == PsfModel::Disc) {
                w = disc_rect_overlap(r_px, j - 0.5, j + 0.5, i - 0.5, i + 0.5);
            } else {
                double sigma = 0.5 * r_px;
                w = std::exp(-0.5 * (i * i + j * j) / (sigma * sigma));
            }
            kernel(i + half, j + half) = w;
            total += w;
        }
    for (double& w : kernel.span()) w /= total;
    return kernel;
}

}  // namespace spectrasweep
