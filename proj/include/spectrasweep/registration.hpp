#pragma once

// Maps a ground-truth spectral cube into the camera's pixel grid: oriented binary features on
// both views, brute-force Hamming matching, robust homography, per-band warp.

#include <array>
#include <bitset>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectrasweep/error.hpp"
#include "spectrasweep/imgproc.hpp"
#include "spectrasweep/parallel.hpp"
#include "spectrasweep/preprocess.hpp"
#include "spectrasweep/spectral.hpp"

namespace spectrasweep {

struct OrientedFeature {
    double x = 0.0;
    double y = 0.0;
    double angle = 0.0;  // radians in [-pi, pi)
    double score = 0.0;
};

using BinaryDescriptor = std::bitset<256>;

struct Match {
    int a = 0;
    int b = 0;
    int hamming = 0;
    bool operator==(const Match&) const = default;
};

using MatchSet = std::vector<Match>;

/// 3x3 projective map normalised so that H(2,2) = 1.
struct Homography {
    Eigen::Matrix3d h = Eigen::Matrix3d::Identity();

    static Homography identity() { return {}; }
    static Homography from(const Eigen::Matrix3d& m) {
        if (std::abs(m(2, 2)) < 1e-12) throw DegeneracyError("homography has H(2,2) = 0");
        Homography out{m / m(2, 2)};
        if (std::abs(out.h.determinant()) < 1e-12) throw DegeneracyError("homography is singular");
        return out;
    }
    Point2 apply(Point2 p) const noexcept {
        double w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
        return {(h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2)) / w, (h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2)) / w};
    }
    Homography inverse() const { return from(h.inverse()); }
    Homography compose(const Homography& other) const { return from(h * other.h); }
};

/// ||A - B||_F / ||B||_F after both are normalised to H(2,2) = 1.
inline double relative_frobenius(const Homography& a, const Homography& b) {
    return (a.h - b.h).norm() / b.h.norm();
}

// ---------------------------------------------------------------------------------------------
// Features

struct FeatureParams {
    /// Ring-test threshold as a fraction of the image's intensity range.
    double fast_threshold = 0.05;
    int fast_arc = 9;
    int nms_radius = 3;
    HarrisParams harris;
};

inline constexpr int kPatchRadius = 15;
inline constexpr int kDescribeBorder = 16;

namespace detail {

inline constexpr std::array<std::array<int, 2>, 16> kRing{{{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0}, {3, 1},
                                                          {2, 2}, {1, 3}, {0, 3}, {-1, 3}, {-2, 2}, {-3, 1},
                                                          {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}}};

inline bool ring_test(const Image& image, int r, int c, double t, int arc) {
    const double centre = image(r, c);
    for (int sign : {1, -1}) {
        int run = 0;
        for (int i = 0; i < 32; ++i) {
            const auto& o = kRing[static_cast<std::size_t>(i % 16)];
            double v = image(r + o[1], c + o[0]);
            bool pass = sign > 0 ? v > centre + t : v < centre - t;
            run = pass ? run + 1 : 0;
            if (run >= arc) return true;
        }
    }
    return false;
}

inline double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi;
    a = std::fmod(a + pi, 2.0 * pi);
    if (a < 0) a += 2.0 * pi;
    a -= pi;
    return a >= pi ? -pi : a;
}

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// 256 point pairs inside the radius-15 disc, generated at compile time from a fixed seed.
constexpr std::array<std::array<int, 4>, 256> make_test_pattern() {
    std::array<std::array<int, 4>, 256> pattern{};
    std::uint64_t state = 0x5EC7A5EEull;
    auto draw = [&state]() {
        while (true) {
            int x = static_cast<int>(splitmix64(state) % 31) - 15;
            int y = static_cast<int>(splitmix64(state) % 31) - 15;
            if (x * x + y * y <= kPatchRadius * kPatchRadius) return std::array<int, 2>{x, y};
        }
    };
    for (auto& test : pattern) {
        auto p = draw();
        auto q = draw();
        while (p == q) q = draw();
        test = {p[0], p[1], q[0], q[1]};
    }
    return pattern;
}

inline constexpr auto kTestPattern = make_test_pattern();

}  // namespace detail

/// Orientation of the intensity centroid of the radius-15 disc around (x, y).
inline double intensity_centroid_angle(const Image& image, int x, int y) {
    double m10 = 0, m01 = 0;
    for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy)
        for (int dx = -kPatchRadius; dx <= kPatchRadius; ++dx) {
            if (dx * dx + dy * dy > kPatchRadius * kPatchRadius) continue;
            double v = image.clamped(y + dy, x + dx);
            m10 += dx * v;
            m01 += dy * v;
        }
    return detail::wrap_angle(std::atan2(m01, m10));
}

/// Ring-test corners scored by Harris response, suppressed within `nms_radius`, kept at least
/// 16 px from the border, strongest `n` returned at sub-pixel positions.
inline std::vector<OrientedFeature> detect_oriented_features(const Image& image, int n, const FeatureParams& params = {}) {
    if (image.height() < 32 || image.width() < 32) throw ShapeError("detect_oriented_features: image must be at least 32x32");
    double lo = INFINITY, hi = -INFINITY;
    for (double v : image.span()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<OrientedFeature> out;
    if (!(hi > lo) || n <= 0) return out;
    const double t = params.fast_threshold * (hi - lo);
    Image harris = harris_response(image, params.harris);
    Image candidates(image.height(), image.width(), 0.0);
    for (int r = kDescribeBorder; r < image.height() - kDescribeBorder; ++r)
        for (int c = kDescribeBorder; c < image.width() - kDescribeBorder; ++c)
            if (harris(r, c) > 0.0 && detail::ring_test(image, r, c, t, params.fast_arc)) candidates(r, c) = harris(r, c);
    CornerSet kept = non_max_suppress(candidates, params.nms_radius, kDescribeBorder);
    keep_strongest(kept, static_cast<std::size_t>(n), 0.0);
    refine_subpixel(kept, harris);
    out.reserve(kept.size());
    const double xmax = image.width() - 1 - kDescribeBorder, ymax = image.height() - 1 - kDescribeBorder;
    for (const auto& k : kept) {
        double fx = std::clamp(k.x, double(kDescribeBorder), xmax - 1e-6), fy = std::clamp(k.y, double(kDescribeBorder), ymax - 1e-6);
        int x = static_cast<int>(std::lround(fx)), y = static_cast<int>(std::lround(fy));
        out.push_back({fx, fy, intensity_centroid_angle(image, x, y), k.score});
    }
    return out;
}

/// 256 steered intensity comparisons: bit i = I(p_i) < I(q_i) with the test pattern rotated by
/// the feature angle.
inline BinaryDescriptor describe(const Image& image, const OrientedFeature& feature) {
    const int x = static_cast<int>(std::lround(feature.x)), y = static_cast<int>(std::lround(feature.y));
    if (x < kDescribeBorder || y < kDescribeBorder || x >= image.width() - kDescribeBorder ||
        y >= image.height() - kDescribeBorder)
        throw RangeError("describe: feature at (" + std::to_string(feature.x) + ", " + std::to_string(feature.y) +
                         ") is closer than 16 px to the border");
    const double cs = std::cos(feature.angle), sn = std::sin(feature.angle);
    auto at = [&](int px, int py) {
        int rx = static_cast<int>(std::lround(px * cs - py * sn));
        int ry = static_cast<int>(std::lround(px * sn + py * cs));
        return image(y + ry, x + rx);
    };
    BinaryDescriptor bits;
    for (std::size_t i = 0; i < detail::kTestPattern.size(); ++i) {
        const auto& t = detail::kTestPattern[i];
        bits[i] = at(t[0], t[1]) < at(t[2], t[3]);
    }
    return bits;
}

inline int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) noexcept {
    return static_cast<int>((a ^ b).count());
}

/// Nearest B for each A by Hamming distance (lowest index on ties); with `cross_check`, only
/// pairs that are each other's nearest survive.
inline MatchSet match_bruteforce(const std::vector<BinaryDescriptor>& descs_a, const std::vector<BinaryDescriptor>& descs_b,
                                 bool cross_check) {
    MatchSet out;
    if (descs_a.empty() || descs_b.empty()) return out;
    const std::size_t na = descs_a.size(), nb = descs_b.size();
    std::vector<int> dist(na * nb);
    parallel_for(na, [&](std::size_t i) {
        for (std::size_t j = 0; j < nb; ++j) dist[i * nb + j] = hamming(descs_a[i], descs_b[j]);
    });
    std::vector<std::size_t> best_a(nb, 0);
    for (std::size_t j = 0; j < nb; ++j)
        for (std::size_t i = 1; i < na; ++i)
            if (dist[i * nb + j] < dist[best_a[j] * nb + j]) best_a[j] = i;
    for (std::size_t i = 0; i < na; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < nb; ++j)
            if (dist[i * nb + j] < dist[i * nb + best]) best = j;
        if (cross_check && best_a[best] != i) continue;
        out.push_back({static_cast<int>(i), static_cast<int>(best), dist[i * nb + best]});
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Homography estimation

namespace detail {

// Similarity taking the points to centroid 0 and RMS distance sqrt(2).
inline Eigen::Matrix3d hartley_normalizer(const std::vector<Point2>& pts) {
    double cx = 0, cy = 0;
    for (const auto& p : pts) {
        cx += p.x;
        cy += p.y;
    }
    cx /= static_cast<double>(pts.size());
    cy /= static_cast<double>(pts.size());
    double ms = 0;
    for (const auto& p : pts) ms += (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy);
    double rms = std::sqrt(ms / static_cast<double>(pts.size()));
    if (!(rms > 0.0)) throw DegeneracyError("dlt_homography: all points coincide");
    double s = std::sqrt(2.0) / rms;
    Eigen::Matrix3d t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
}

inline Point2 transform_point(const Eigen::Matrix3d& t, Point2 p) {
    Eigen::Vector3d v = t * Eigen::Vector3d(p.x, p.y, 1.0);
    return {v[0] / v[2], v[1] / v[2]};
}

}  // namespace detail

/// Hartley-normalised direct linear transform: the H minimising the algebraic error of
/// b ~ H a over all correspondences.
inline Homography dlt_homography(const std::vector<Point2>& points_a, const std::vector<Point2>& points_b) {
    if (points_a.size() != points_b.size()) throw ShapeError("dlt_homography: point lists differ in length");
    if (points_a.size() < 4) throw DegeneracyError("dlt_homography: need at least 4 correspondences");
    const Eigen::Matrix3d ta = detail::hartley_normalizer(points_a), tb = detail::hartley_normalizer(points_b);
    const std::size_t n = points_a.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(std::max<std::size_t>(2 * n, 9)), 9);
    for (std::size_t i = 0; i < n; ++i) {
        Point2 p = detail::transform_point(ta, points_a[i]);
        Point2 q = detail::transform_point(tb, points_b[i]);
        auto r = static_cast<Eigen::Index>(2 * i);
        a.row(r) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
        a.row(r + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (!(sv[7] > 1e-10 * sv[0])) throw DegeneracyError("dlt_homography: degenerate point configuration (rank < 8)");
    Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
    return Homography::from(tb.inverse() * hn * ta);
}

/// d(H a, b)^2 + d(a, H^-1 b)^2.
inline double symmetric_transfer_sq(const Homography& h, const Homography& h_inv, Point2 a, Point2 b) {
    Point2 fa = h.apply(a), ib = h_inv.apply(b);
    return (fa.x - b.x) * (fa.x - b.x) + (fa.y - b.y) * (fa.y - b.y) + (ib.x - a.x) * (ib.x - a.x) +
           (ib.y - a.y) * (ib.y - a.y);
}

struct RansacResult {
    Homography homography;
    std::vector<bool> inliers;
    int inlier_count = 0;
    int iterations = 0;
};

namespace detail {

inline bool collinear(Point2 p, Point2 q, Point2 r) {
    double area = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    double scale = std::max({std::hypot(q.x - p.x, q.y - p.y), std::hypot(r.x - p.x, r.y - p.y), 1e-12});
    return std::abs(area) < 1e-6 * scale * scale;
}

inline std::vector<bool> consensus(const Homography& h, const std::vector<Point2>& a, const std::vector<Point2>& b,
                                   double threshold_sq, int& count, double& error) {
    Homography inv = h.inverse();
    std::vector<bool> mask(a.size(), false);
    count = 0;
    error = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double e = symmetric_transfer_sq(h, inv, a[i], b[i]);
        if (e < threshold_sq) {
            mask[i] = true;
            ++count;
            error += e;
        }
    }
    return mask;
}

}  // namespace detail

/// RANSAC over 4-point samples. Trial t draws from its own generator seeded by (seed, t), so the
/// result depends only on the seed. Iterations adapt to the inlier ratio at 0.99 confidence.
inline RansacResult ransac_homography(const std::vector<Point2>& a, const std::vector<Point2>& b, double threshold_px,
                                      int max_iters, std::uint64_t seed) {
    if (a.size() != b.size()) throw ShapeError("ransac_homography: point lists differ in length");
    const std::size_t n = a.size();
    if (n < 4) throw InsufficientDataError("ransac_homography: need at least 4 matches");
    const double t2 = threshold_px * threshold_px;

    RansacResult best;
    double best_error = INFINITY;
    long needed = max_iters;
    int trial = 0;
    for (; trial < max_iters && trial < needed; ++trial) {
        std::uint64_t state = seed ^ (0xD1B54A32D192ED03ull * static_cast<std::uint64_t>(trial + 1));
        std::mt19937_64 rng(detail::splitmix64(state));
        std::array<std::size_t, 4> idx{};
        for (int s = 0; s < 4; ++s) {
            bool fresh;
            do {
                idx[static_cast<std::size_t>(s)] = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
                fresh = true;
                for (int q = 0; q < s; ++q) fresh = fresh && idx[static_cast<std::size_t>(q)] != idx[static_cast<std::size_t>(s)];
            } while (!fresh);
        }
        bool degenerate = false;
        for (int i = 0; i < 4 && !degenerate; ++i)
            for (int j = i + 1; j < 4 && !degenerate; ++j)
                for (int k = j + 1; k < 4 && !degenerate; ++k)
                    degenerate = detail::collinear(a[idx[static_cast<std::size_t>(i)]], a[idx[static_cast<std::size_t>(j)]], a[idx[static_cast<std::size_t>(k)]]) ||
                                 detail::collinear(b[idx[static_cast<std::size_t>(i)]], b[idx[static_cast<std::size_t>(j)]], b[idx[static_cast<std::size_t>(k)]]);
        if (degenerate) continue;
        std::vector<Point2> sa, sb;
        for (auto i : idx) {
            sa.push_back(a[i]);
            sb.push_back(b[i]);
        }
        Homography h;
        int count = 0;
        double error = 0.0;
        std::vector<bool> mask;
        try {
            h = dlt_homography(sa, sb);
            mask = detail::consensus(h, a, b, t2, count, error);
        } catch (const DegeneracyError&) {
            continue;
        }
        if (count > best.inlier_count || (count == best.inlier_count && count > 0 && error < best_error)) {
            best = {h, std::move(mask), count, 0};
            best_error = error;
            double w = static_cast<double>(count) / static_cast<double>(n);
            double miss = 1.0 - std::pow(w, 4.0);
            if (miss <= 0.0) {
                needed = trial + 1;
            } else {
                double est = std::ceil(std::log(1.0 - 0.99) / std::log(miss));
                needed = est < static_cast<double>(max_iters) ? static_cast<long>(est) : max_iters;
            }
        }
    }
    if (best.inlier_count < 4)
        throw InsufficientDataError("ransac_homography: no model with at least 4 inliers");

    std::vector<Point2> ia, ib;
    for (std::size_t i = 0; i < n; ++i)
        if (best.inliers[i]) {
            ia.push_back(a[i]);
            ib.push_back(b[i]);
        }
    try {
        Homography refit = dlt_homography(ia, ib);
        int count = 0;
        double error = 0.0;
        auto mask = detail::consensus(refit, a, b, t2, count, error);
        if (count >= 4) best = {refit, std::move(mask), count, 0};
    } catch (const DegeneracyError&) {
    }
    best.iterations = trial;
    return best;
}

/// Convenience overload: gathers the matched point pairs first.
inline RansacResult ransac_homography(const MatchSet& matches, const std::vector<Point2>& points_a,
                                      const std::vector<Point2>& points_b, double threshold_px, int max_iters,
                                      std::uint64_t seed) {
    std::vector<Point2> a, b;
    for (const auto& m : matches) {
        a.push_back(points_a.at(static_cast<std::size_t>(m.a)));
        b.push_back(points_b.at(static_cast<std::size_t>(m.b)));
    }
    return ransac_homography(a, b, threshold_px, max_iters, seed);
}

// ---------------------------------------------------------------------------------------------
// Cube warping and the label registration chain

/// Per-band inverse-mapping bilinear warp; `h` maps input coordinates to output coordinates.
inline SpectralCube warp_cube(const SpectralCube& cube, const Homography& h, int out_height, int out_width) {
    Homography inv = h.inverse();
    Volume out(cube.bands_count(), out_height, out_width);
    std::vector<Point2> src(static_cast<std::size_t>(out_height) * out_width);
    for (int r = 0; r < out_height; ++r)
        for (int c = 0; c < out_width; ++c)
            src[static_cast<std::size_t>(r) * out_width + c] = inv.apply({static_cast<double>(c), static_cast<double>(r)});
    parallel_for(static_cast<std::size_t>(cube.bands_count()), [&](std::size_t b) {
        Image band = cube.band(static_cast<int>(b));
        auto dst = out.plane(static_cast<int>(b));
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::max(0.0, sample_bilinear(band, src[i].x, src[i].y, 0.0));
    });
    return SpectralCube(cube.bands(), std::move(out));
}

/// Unweighted band mean.
inline Image cube_luminance(const SpectralCube& cube) {
    Image lum(cube.height(), cube.width());
    for (int b = 0; b < cube.bands_count(); ++b) {
        auto p = cube.data().plane(b);
        for (std::size_t i = 0; i < p.size(); ++i) lum.data()[i] += p[i];
    }
    for (double& v : lum.span()) v /= cube.bands_count();
    return lum;
}

struct RegistrationParams {
    int max_features = 500;
    int min_features = 20;
    /// Gaussian pre-smoothing applied before the binary tests.
    double describe_sigma = 1.0;
    bool cross_check = true;
    double ransac_threshold_px = 2.0;
    int ransac_max_iters = 2000;
    std::uint64_t seed = 0;
    FeatureParams features;
};

struct RegistrationDiagnostics {
    int features_cube = 0;
    int features_frame = 0;
    int matches = 0;
    int inliers = 0;
    double mean_reprojection_px = 0.0;
};

struct RegistrationResult {
    SpectralCube cube;
    /// Maps cube coordinates to camera-frame coordinates.
    Homography homography;
    RegistrationDiagnostics diagnostics;
};

namespace detail {

inline Image unit_range(const Image& image) {
    double lo = INFINITY, hi = -INFINITY;
    for (double v : image.span()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Image out = image;
    double span = hi > lo ? hi - lo : 1.0;
    for (double& v : out.span()) v = (v - lo) / span;
    return out;
}

}  // namespace detail

/// Full label-mapping chain: luminance projection, features, descriptors, matching, RANSAC and warp.
inline RegistrationResult register_label(const SpectralCube& cube, const Image& reference_frame,
                                         const RegistrationParams& params = {}) {
    Image views[2] = {detail::unit_range(cube_luminance(cube)), detail::unit_range(reference_frame)};
    std::vector<OrientedFeature> feats[2];
    std::vector<BinaryDescriptor> descs[2];
    auto taps = gaussian_taps(params.describe_sigma);
    for (int v = 0; v < 2; ++v) {
        feats[v] = detect_oriented_features(views[v], params.max_features, params.features);
        if (static_cast<int>(feats[v].size()) < params.min_features)
            throw StageError("features", std::string(v == 0 ? "cube" : "reference frame") + " has only " +
                                             std::to_string(feats[v].size()) + " features (need " +
                                             std::to_string(params.min_features) + ")");
        Image smooth = params.describe_sigma > 0 ? filter_separable(views[v], taps) : views[v];
        for (const auto& f : feats[v]) descs[v].push_back(describe(smooth, f));
    }
    MatchSet matches = match_bruteforce(descs[0], descs[1], params.cross_check);
    if (matches.size() < 4)
        throw StageError("matching", "only " + std::to_string(matches.size()) + " matches (need 4)");
    std::vector<Point2> pa, pb;
    for (const auto& f : feats[0]) pa.push_back({f.x, f.y});
    for (const auto& f : feats[1]) pb.push_back({f.x, f.y});
    RansacResult fit;
    try {
        fit = ransac_homography(matches, pa, pb, params.ransac_threshold_px, params.ransac_max_iters, params.seed);
    } catch (const Error& e) {
        throw StageError("ransac", e.what());
    }

    RegistrationResult out{warp_cube(cube, fit.homography, reference_frame.height(), reference_frame.width()),
                           fit.homography, {}};
    auto& d = out.diagnostics;
    d.features_cube = static_cast<int>(feats[0].size());
    d.features_frame = static_cast<int>(feats[1].size());
    d.matches = static_cast<int>(matches.size());
    d.inliers = fit.inlier_count;
    double sum = 0;
    for (std::size_t i = 0; i < matches.size(); ++i)
        if (fit.inliers[i]) {
            Point2 q = fit.homography.apply(pa[static_cast<std::size_t>(matches[i].a)]);
            const Point2& t = pb[static_cast<std::size_t>(matches[i].b)];
            sum += std::hypot(q.x - t.x, q.y - t.y);
        }
    d.mean_reprojection_px = fit.inlier_count > 0 ? sum / fit.inlier_count : 0.0;
    return out;
}

}  // namespace spectrasweep
