#pragma once

// Model-input preparation for a focal-sweep stack:
//   1. align every frame to the middle frame with an affine map fitted to matched Harris corners,
//   2. replace frames by Sobel edge magnitudes,
//   3. take frame-to-frame differences along the sweep.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectrasweep/error.hpp"
#include "spectrasweep/imgproc.hpp"
#include "spectrasweep/parallel.hpp"
#include "spectrasweep/spectral.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point2&) const = default;
};

/// x' = a*x + b*y + tx,  y' = c*x + d*y + ty.
struct AffineTransform2D {
    double a = 1.0, b = 0.0, c = 0.0, d = 1.0, tx = 0.0, ty = 0.0;

    static AffineTransform2D identity() { return {}; }
    static AffineTransform2D translation(double dx, double dy) { return {1.0, 0.0, 0.0, 1.0, dx, dy}; }

    double determinant() const noexcept { return a * d - b * c; }
    bool invertible() const noexcept { return std::abs(determinant()) > 1e-9; }
    Point2 apply(Point2 p) const noexcept { return {a * p.x + b * p.y + tx, c * p.x + d * p.y + ty}; }

    AffineTransform2D inverse() const {
        double det = determinant();
        if (!invertible()) throw DegeneracyError("affine transform is not invertible");
        AffineTransform2D inv{d / det, -b / det, -c / det, a / det, 0.0, 0.0};
        inv.tx = -(inv.a * tx + inv.b * ty);
        inv.ty = -(inv.c * tx + inv.d * ty);
        return inv;
    }
    /// (this o other)(p) = this(other(p)).
    AffineTransform2D compose(const AffineTransform2D& o) const noexcept {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d,
                a * o.tx + b * o.ty + tx, c * o.tx + d * o.ty + ty};
    }
};

struct Corner {
    double x = 0.0;
    double y = 0.0;
    double score = 0.0;
};

using CornerSet = std::vector<Corner>;

struct HarrisParams {
    double k = 0.04;
    double window_sigma = 1.5;
    int nms_radius = 5;
};

/// Harris corner response det(M) - k tr(M)^2 of the Gaussian-weighted structure tensor of 3x3
/// Sobel gradients.
inline Image harris_response(const Image& image, const HarrisParams& params = {}) {
    auto g = sobel_gradients(image);
    Image xx(image.height(), image.width()), yy(xx), xy(xx);
    for (std::size_t i = 0; i < image.size(); ++i) {
        double gx = g.gx.data()[i], gy = g.gy.data()[i];
        xx.data()[i] = gx * gx;
        yy.data()[i] = gy * gy;
        xy.data()[i] = gx * gy;
    }
    auto taps = gaussian_taps(params.window_sigma);
    xx = filter_separable(xx, taps);
    yy = filter_separable(yy, taps);
    xy = filter_separable(xy, taps);
    Image response(image.height(), image.width());
    for (std::size_t i = 0; i < image.size(); ++i) {
        double sxx = xx.data()[i], syy = yy.data()[i], sxy = xy.data()[i];
        double tr = sxx + syy;
        response.data()[i] = sxx * syy - sxy * sxy - params.k * tr * tr;
    }
    return response;
}

/// Positive local maxima of `response` within `radius` (ties resolved in raster order).
inline CornerSet non_max_suppress(const Image& response, int radius, int border = 0) {
    CornerSet out;
    const int H = response.height(), W = response.width();
    for (int r = border; r < H - border; ++r)
        for (int c = border; c < W - border; ++c) {
            double v = response(r, c);
            if (!(v > 0.0)) continue;
            bool is_max = true;
            for (int dr = -radius; dr <= radius && is_max; ++dr)
                for (int dc = -radius; dc <= radius; ++dc) {
                    if ((dr == 0 && dc == 0) || dr * dr + dc * dc > radius * radius) continue;
                    int rr = r + dr, cc = c + dc;
                    if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
                    double q = response(rr, cc);
                    bool earlier = dr < 0 || (dr == 0 && dc < 0);
                    if (q > v || (q == v && earlier)) {
                        is_max = false;
                        break;
                    }
                }
            if (is_max) out.push_back({static_cast<double>(c), static_cast<double>(r), v});
        }
    return out;
}

/// Moves each corner to the vertex of the 1-D parabolas through its response and the two
/// neighbours along x and y (offsets limited to half a pixel).
inline void refine_subpixel(CornerSet& corners, const Image& response) {
    auto vertex = [](double lo, double mid, double hi) {
        double curv = lo - 2.0 * mid + hi;
        if (!(curv < 0.0)) return 0.0;
        return std::clamp(0.5 * (lo - hi) / curv, -0.5, 0.5);
    };
    for (auto& p : corners) {
        int c = static_cast<int>(p.x), r = static_cast<int>(p.y);
        if (c > 0 && c + 1 < response.width())
            p.x += vertex(response(r, c - 1), response(r, c), response(r, c + 1));
        if (r > 0 && r + 1 < response.height())
            p.y += vertex(response(r - 1, c), response(r, c), response(r + 1, c));
    }
}

inline void keep_strongest(CornerSet& corners, std::size_t max_count, double quality) {
    std::stable_sort(corners.begin(), corners.end(), [](const Corner& p, const Corner& q) { return p.score > q.score; });
    if (!corners.empty()) {
        double floor = quality * corners.front().score;
        std::erase_if(corners, [&](const Corner& p) { return p.score < floor; });
    }
    if (corners.size() > max_count) corners.resize(max_count);
}

/// Strongest `max_corners` Harris maxima scoring at least quality * max score, at sub-pixel positions.
inline CornerSet detect_corners(const Image& image, int max_corners, double quality, const HarrisParams& params = {}) {
    if (image.height() < 16 || image.width() < 16) throw ShapeError("detect_corners: image must be at least 16x16");
    if (max_corners < 0) throw DomainError("detect_corners: max_corners must be non-negative");
    Image response = harris_response(image, params);
    auto corners = non_max_suppress(response, params.nms_radius);
    keep_strongest(corners, static_cast<std::size_t>(max_corners), quality);
    refine_subpixel(corners, response);
    return corners;
}

struct Correspondence {
    Point2 from;
    Point2 to;
    double score = 0.0;
};

struct MatchParams {
    int patch = 5;
    double max_dist_px = 8.0;
    double min_ncc = 0.5;
};

/// Normalised cross-correlation of the (2*patch+1)^2 windows centred on integer pixels; -1 when
/// either window is flat.
inline double patch_ncc(const Image& a, int ax, int ay, const Image& b, int bx, int by, int patch) {
    const int n = (2 * patch + 1) * (2 * patch + 1);
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (int dy = -patch; dy <= patch; ++dy)
        for (int dx = -patch; dx <= patch; ++dx) {
            double va = a.clamped(ay + dy, ax + dx), vb = b.clamped(by + dy, bx + dx);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    double va = saa - sa * sa / n, vb = sbb - sb * sb / n;
    if (va <= 1e-12 || vb <= 1e-12) return -1.0;
    return (sab - sa * sb / n) / std::sqrt(va * vb);
}

/// Mutual-best NCC matching of corners within `max_dist_px` of each other.
inline std::vector<Correspondence> match_corners_nn(const Image& image_a, const CornerSet& set_a, const Image& image_b,
                                                    const CornerSet& set_b, const MatchParams& params = {}) {
    if (set_a.empty() || set_b.empty()) throw InsufficientDataError("match_corners_nn: empty corner set");
    const double max_d2 = params.max_dist_px * params.max_dist_px;
    const std::size_t na = set_a.size(), nb = set_b.size();
    std::vector<double> ncc(na * nb, -2.0);
    parallel_for(na, [&](std::size_t i) {
        for (std::size_t j = 0; j < nb; ++j) {
            double dx = set_a[i].x - set_b[j].x, dy = set_a[i].y - set_b[j].y;
            if (dx * dx + dy * dy > max_d2) continue;
            ncc[i * nb + j] = patch_ncc(image_a, static_cast<int>(std::lround(set_a[i].x)),
                                        static_cast<int>(std::lround(set_a[i].y)), image_b,
                                        static_cast<int>(std::lround(set_b[j].x)),
                                        static_cast<int>(std::lround(set_b[j].y)), params.patch);
        }
    });
    std::vector<long> best_b(na, -1), best_a(nb, -1);
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
            double s = ncc[i * nb + j];
            if (s < params.min_ncc || s <= -2.0) continue;
            if (best_b[i] < 0 || s > ncc[i * nb + static_cast<std::size_t>(best_b[i])]) best_b[i] = static_cast<long>(j);
            if (best_a[j] < 0 || s > ncc[static_cast<std::size_t>(best_a[j]) * nb + j]) best_a[j] = static_cast<long>(i);
        }
    std::vector<Correspondence> out;
    for (std::size_t i = 0; i < na; ++i) {
        long j = best_b[i];
        if (j < 0 || best_a[static_cast<std::size_t>(j)] != static_cast<long>(i)) continue;
        const auto& p = set_a[i];
        const auto& q = set_b[static_cast<std::size_t>(j)];
        out.push_back({{p.x, p.y}, {q.x, q.y}, ncc[i * nb + static_cast<std::size_t>(j)]});
    }
    if (out.size() < 3)
        throw InsufficientDataError("match_corners_nn: only " + std::to_string(out.size()) +
                                    " mutual matches (need 3)");
    return out;
}

struct AffineFit {
    AffineTransform2D transform;
    double rms_residual = 0.0;
};

/// Least-squares affine map taking every `from` point onto its `to` point.
inline AffineFit fit_affine(const std::vector<Correspondence>& pairs) {
    if (pairs.size() < 3) throw DegeneracyError("fit_affine: need at least 3 correspondences");
    // Centre and scale source points so the conditioning test is independent of pixel units.
    double cx = 0, cy = 0;
    for (const auto& p : pairs) {
        cx += p.from.x;
        cy += p.from.y;
    }
    cx /= static_cast<double>(pairs.size());
    cy /= static_cast<double>(pairs.size());
    double spread = 0;
    for (const auto& p : pairs) spread += std::hypot(p.from.x - cx, p.from.y - cy);
    spread /= static_cast<double>(pairs.size());
    double s = spread > 0 ? 1.0 / spread : 1.0;

    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs_x = Eigen::Vector3d::Zero(), rhs_y = Eigen::Vector3d::Zero();
    for (const auto& p : pairs) {
        Eigen::Vector3d row((p.from.x - cx) * s, (p.from.y - cy) * s, 1.0);
        normal += row * row.transpose();
        rhs_x += row * p.to.x;
        rhs_y += row * p.to.y;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(normal);
    double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) throw DegeneracyError("fit_affine: correspondences are collinear or degenerate");
    Eigen::LDLT<Eigen::Matrix3d> solver(normal);
    Eigen::Vector3d px = solver.solve(rhs_x), py = solver.solve(rhs_y);

    // Undo the normalisation: x_n = s (x - cx).
    AffineFit fit;
    auto& t = fit.transform;
    t.a = px[0] * s;
    t.b = px[1] * s;
    t.tx = px[2] - t.a * cx - t.b * cy;
    t.c = py[0] * s;
    t.d = py[1] * s;
    t.ty = py[2] - t.c * cx - t.d * cy;
    double sq = 0;
    for (const auto& p : pairs) {
        Point2 q = t.apply(p.from);
        sq += (q.x - p.to.x) * (q.x - p.to.x) + (q.y - p.to.y) * (q.y - p.to.y);
    }
    fit.rms_residual = std::sqrt(sq / static_cast<double>(pairs.size()));
    return fit;
}

/// out(p) = bilinear(image, T^-1 p); samples falling outside the input are 0.
inline Image warp_affine(const Image& image, const AffineTransform2D& transform) {
    AffineTransform2D inv = transform.inverse();
    Image out(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            Point2 src = inv.apply({static_cast<double>(c), static_cast<double>(r)});
            out(r, c) = sample_bilinear(image, src.x, src.y, 0.0);
        }
    return out;
}

struct AlignParams {
    int max_corners = 200;
    double quality = 0.01;
    MatchParams match;
    HarrisParams harris;
    /// Re-match rounds per frame after pre-warping by the current estimate.
    int refine_iters = 4;
    /// Matches farther than this from the current fit are dropped and the fit repeated.
    double outlier_px = 1.0;
};

struct AlignResult {
    GrayscaleStack stack;
    /// transforms[k] maps frame k into reference coordinates; identity for the reference frame.
    std::vector<AffineTransform2D> transforms;
    int reference = 0;
    /// Mean distance between transformed frame corners and their reference matches, in pixels.
    double mean_reprojection_px = 0.0;
};

namespace detail {

/// Like warp_affine but replicating edges, so pre-warped frames gain no artificial borders.
inline Image warp_affine_clamped(const Image& image, const AffineTransform2D& transform) {
    AffineTransform2D inv = transform.inverse();
    Image out(image.height(), image.width());
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c) {
            Point2 src = inv.apply({static_cast<double>(c), static_cast<double>(r)});
            out(r, c) = sample_bilinear_clamped(image, src.x, src.y);
        }
    return out;
}

/// Least-squares fit, refit on the matches within `outlier_px` until the kept set stops changing.
inline AffineFit fit_affine_trimmed(const std::vector<Correspondence>& pairs, double outlier_px) {
    AffineFit fit = fit_affine(pairs);
    std::size_t used = pairs.size();
    for (int pass = 0; pass < 10; ++pass) {
        std::vector<Correspondence> kept;
        for (const auto& p : pairs) {
            Point2 q = fit.transform.apply(p.from);
            if (std::hypot(q.x - p.to.x, q.y - p.to.y) <= outlier_px) kept.push_back(p);
        }
        if (kept.size() < 3 || kept.size() == used) break;
        try {
            fit = fit_affine(kept);
        } catch (const DegeneracyError&) {
            break;
        }
        used = kept.size();
    }
    return fit;
}

struct FrameAlignment {
    AffineTransform2D transform;
    double error_sum = 0.0;
    double error_count = 0.0;
};

inline FrameAlignment align_frame(const Image& frame, const Image& ref, const CornerSet& ref_corners,
                                  AffineTransform2D guess, const AlignParams& params) {
    FrameAlignment out{guess, 0.0, 0.0};
    const int rounds = std::max(1, params.refine_iters);
    const Point2 probes[4] = {{0.0, 0.0},
                              {frame.width() - 1.0, 0.0},
                              {0.0, frame.height() - 1.0},
                              {frame.width() - 1.0, frame.height() - 1.0}};
    for (int it = 0; it < rounds; ++it) {
        Image warped = warp_affine_clamped(frame, out.transform);
        CornerSet corners = detect_corners(warped, params.max_corners, params.quality, params.harris);
        if (corners.empty()) throw InsufficientDataError("no corners detected");
        auto matches = match_corners_nn(warped, corners, ref, ref_corners, params.match);
        AffineFit delta = fit_affine_trimmed(matches, params.outlier_px);
        out.transform = delta.transform.compose(out.transform);
        out.error_sum = out.error_count = 0.0;
        for (const auto& m : matches) {
            Point2 q = delta.transform.apply(m.from);
            double e = std::hypot(q.x - m.to.x, q.y - m.to.y);
            if (e <= params.outlier_px) {
                out.error_sum += e;
                out.error_count += 1.0;
            }
        }
        double move = 0.0;
        for (const auto& p : probes) {
            Point2 q = delta.transform.apply(p);
            move = std::max(move, std::hypot(q.x - p.x, q.y - p.y));
        }
        if (move < 0.01) break;
    }
    return out;
}

}  // namespace detail

/// Warps every frame onto the middle frame of the sweep. Frames are visited outward from the
/// reference, each starting from its neighbour's transform and refined by re-matching.
inline AlignResult align_stack(const GrayscaleStack& stack, const AlignParams& params = {}) {
    if (stack.size() < 2) throw InsufficientDataError("align_stack: need at least 2 frames");
    AlignResult result;
    result.reference = stack.size() / 2;
    const Image& ref = stack.frame(result.reference);
    CornerSet ref_corners = detect_corners(ref, params.max_corners, params.quality, params.harris);
    if (ref_corners.empty())
        throw InsufficientDataError("align_stack: reference frame " + std::to_string(result.reference) + " has no corners");

    const int K = stack.size();
    std::vector<Image> frames(static_cast<std::size_t>(K));
    std::vector<AffineTransform2D> transforms(static_cast<std::size_t>(K));
    std::vector<double> err_sum(static_cast<std::size_t>(K), 0.0), err_count(static_cast<std::size_t>(K), 0.0);
    frames[static_cast<std::size_t>(result.reference)] = ref;
    // The two sides of the reference are independent chains.
    const int steps[2] = {-1, 1};
    parallel_for(2, [&](std::size_t side) {
        const int step = steps[side];
        for (int k = result.reference + step; k >= 0 && k < K; k += step) {
            const auto idx = static_cast<std::size_t>(k);
            try {
                auto fa = detail::align_frame(stack.frame(k), ref, ref_corners,
                                              transforms[static_cast<std::size_t>(k - step)], params);
                transforms[idx] = fa.transform;
                err_sum[idx] = fa.error_sum;
                err_count[idx] = fa.error_count;
                frames[idx] = warp_affine(stack.frame(k), fa.transform);
                for (double& v : frames[idx].span()) v = std::clamp(v, 0.0, 1.0);
            } catch (const Error& e) {
                throw InsufficientDataError("align_stack: frame " + std::to_string(k) + ": " + e.what());
            }
        }
    });
    double total = 0, count = 0;
    for (int k = 0; k < K; ++k) {
        total += err_sum[static_cast<std::size_t>(k)];
        count += err_count[static_cast<std::size_t>(k)];
    }
    result.mean_reprojection_px = count > 0 ? total / count : 0.0;
    result.transforms = std::move(transforms);
    result.stack = GrayscaleStack(std::move(frames), stack.lens_positions_mm());
    return result;
}

/// Sobel gradient magnitude sqrt(Gx^2 + Gy^2).
inline Image sobel_edges(const Image& image) {
    if (image.height() < 3 || image.width() < 3) throw ShapeError("sobel_edges: image must be at least 3x3");
    auto g = sobel_gradients(image);
    Image out(image.height(), image.width());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::hypot(g.gx.data()[i], g.gy.data()[i]);
    return out;
}

/// out[k] = frames[k+1] - frames[k].
inline Volume temporal_diff(const std::vector<Image>& frames) {
    if (frames.size() < 2) throw InsufficientDataError("temporal_diff: need at least 2 frames");
    const Image& first = frames.front();
    Volume out(static_cast<int>(frames.size()) - 1, first.height(), first.width());
    for (int k = 0; k + 1 < static_cast<int>(frames.size()); ++k) {
        const auto& lo = frames[static_cast<std::size_t>(k)];
        const auto& hi = frames[static_cast<std::size_t>(k) + 1];
        if (!lo.same_shape(first) || !hi.same_shape(first)) throw ShapeError("temporal_diff: frame shapes differ");
        auto dst = out.plane(k);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = hi.data()[i] - lo.data()[i];
    }
    return out;
}

inline Volume temporal_diff(const GrayscaleStack& stack) { return temporal_diff(stack.frames()); }

struct PreprocessOptions {
    bool align = true;
    /// Emit differences of signed Gx (first K-1 channels) and Gy (next K-1) instead of magnitudes.
    bool signed_gradients = false;
    /// Skip edges and differencing; output the aligned frames themselves (K channels).
    bool raw_frames = false;
    AlignParams alignment;
};

/// Number of model-input channels the pipeline produces for a K-frame stack.
inline int preprocessed_channels(int frames, const PreprocessOptions& options = {}) {
    if (options.raw_frames) return frames;
    return options.signed_gradients ? 2 * (frames - 1) : frames - 1;
}

inline Volume preprocess_pipeline(const GrayscaleStack& stack, const PreprocessOptions& options = {}) {
    if (stack.size() < 2) throw InsufficientDataError("preprocess_pipeline: need at least 2 frames");
    GrayscaleStack aligned = options.align ? align_stack(stack, options.alignment).stack : stack;
    if (options.raw_frames) return stack_images(aligned.frames());

    const std::size_t K = static_cast<std::size_t>(aligned.size());
    if (!options.signed_gradients) {
        std::vector<Image> edges(K);
        parallel_for(K, [&](std::size_t k) { edges[k] = sobel_edges(aligned.frame(static_cast<int>(k))); });
        return temporal_diff(edges);
    }
    std::vector<Image> gx(K), gy(K);
    parallel_for(K, [&](std::size_t k) {
        auto g = sobel_gradients(aligned.frame(static_cast<int>(k)));
        gx[k] = std::move(g.gx);
        gy[k] = std::move(g.gy);
    });
    Volume dx = temporal_diff(gx), dy = temporal_diff(gy);
    Volume out(dx.channels() * 2, dx.height(), dx.width());
    std::copy(dx.data().begin(), dx.data().end(), out.data().begin());
    std::copy(dy.data().begin(), dy.data().end(), out.data().begin() + static_cast<long>(dx.size()));
    return out;
}

}  // namespace spectrasweep
