#pragma once

// Training / reconstruction objective
//
//   L(y, yhat) = |y - yhat|_1 + lambda_tv * TV(yhat) + lambda_ssim * (1 - SSIM(rgb(y), rgb(yhat)))
//
// with the anisotropic spatio-spectral total variation
//
//   TV(x) = mean_{k,i,j} sqrt(dh^2 + dv^2 + gamma_tvs * dk^2 + eps^2)
//
// and every term's exact gradient with respect to yhat.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/imgproc.hpp"
#include "spectrasweep/spectral.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

inline constexpr double kTvEpsilon = 1e-8;

struct LossWeights {
    double lambda_tv = 0.1;
    double gamma_tvs = 0.2;
    double lambda_ssim = 0.9;
    /// Regularise TV(y - yhat) instead of TV(yhat).
    bool tv_on_residual = false;

    void validate() const {
        if (!(lambda_tv >= 0.0 && gamma_tvs >= 0.0 && lambda_ssim >= 0.0))
            throw InvariantError("loss weights must be non-negative");
    }
};

// ---------------------------------------------------------------------------------------------
// L1

inline void require_same_shape(const Volume& a, const Volume& b, const char* who) {
    if (!a.same_shape(b)) throw ShapeError(std::string(who) + ": tensor dimensions differ");
}

/// Mean absolute difference.
inline double l1_loss(const Volume& y, const Volume& yhat) {
    require_same_shape(y, yhat, "l1_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y.data()[i] - yhat.data()[i]);
    return y.size() ? s / static_cast<double>(y.size()) : 0.0;
}

inline double l1_loss(const SpectralCube& y, const SpectralCube& yhat) { return l1_loss(y.data(), yhat.data()); }

inline Volume l1_gradient(const Volume& y, const Volume& yhat) {
    require_same_shape(y, yhat, "l1_gradient");
    Volume g(y.channels(), y.height(), y.width());
    const double n = static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        double d = yhat.data()[i] - y.data()[i];
        g.data()[i] = d > 0 ? 1.0 / n : (d < 0 ? -1.0 / n : 0.0);
    }
    return g;
}

// ---------------------------------------------------------------------------------------------
// Total variation

/// Forward differences (zero past the last index of each axis), Charbonnier-smoothed root,
/// normalised by the element count. When `gradient` is non-null it receives dTV/dx.
inline double tv_loss(const Volume& x, double gamma_tvs, double epsilon = kTvEpsilon, Volume* gradient = nullptr) {
    const int L = x.channels(), H = x.height(), W = x.width();
    if (gradient) *gradient = Volume(L, H, W);
    if (x.size() == 0) return 0.0;
    const double n = static_cast<double>(x.size());
    const double eps2 = epsilon * epsilon;
    double total = 0.0;
    for (int k = 0; k < L; ++k)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                double v = x(k, i, j);
                double dh = j + 1 < W ? x(k, i, j + 1) - v : 0.0;
                double dv = i + 1 < H ? x(k, i + 1, j) - v : 0.0;
                double dk = k + 1 < L ? x(k + 1, i, j) - v : 0.0;
                double phi = std::sqrt(dh * dh + dv * dv + gamma_tvs * dk * dk + eps2);
                total += phi;
                if (gradient) {
                    Volume& g = *gradient;
                    double gh = dh / (phi * n), gv = dv / (phi * n), gk = gamma_tvs * dk / (phi * n);
                    g(k, i, j) -= gh + gv + gk;
                    if (j + 1 < W) g(k, i, j + 1) += gh;
                    if (i + 1 < H) g(k, i + 1, j) += gv;
                    if (k + 1 < L) g(k + 1, i, j) += gk;
                }
            }
    return total / n;
}

inline double tv_loss(const SpectralCube& x, double gamma_tvs, double epsilon = kTvEpsilon) {
    return tv_loss(x.data(), gamma_tvs, epsilon);
}

// ---------------------------------------------------------------------------------------------
// RGB projection

/// 3 x L non-negative matrix with unit row sums mapping band radiance to (R, G, B).
class RGBProjection {
public:
    RGBProjection(int bands, std::vector<double> matrix) : bands_(bands), m_(std::move(matrix)) {
        if (m_.size() != static_cast<std::size_t>(3 * bands)) throw ShapeError("RGB projection must be 3 x L");
        for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int b = 0; b < bands; ++b) {
                double v = (*this)(c, b);
                if (!(v >= 0.0)) throw InvariantError("RGB projection entries must be non-negative");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-9) throw InvariantError("RGB projection rows must sum to 1");
        }
    }

    /// Rows from multi-lobe piecewise-Gaussian fits of the CIE 1931 x, y, z colour-matching
    /// functions, clipped at zero, zero above 780 nm, each row normalised to sum to 1.
    static RGBProjection cie_default(const BandGrid& bands) {
        auto lobe = [](double nm, double mu, double s_lo, double s_hi) {
            double t = (nm - mu) / (nm < mu ? s_lo : s_hi);
            return std::exp(-0.5 * t * t);
        };
        const int L = bands.size();
        std::vector<double> m(static_cast<std::size_t>(3 * L));
        for (int b = 0; b < L; ++b) {
            double nm = bands[b];
            if (nm > 780.0) continue;
            double xbar = 1.056 * lobe(nm, 599.8, 37.9, 31.0) + 0.362 * lobe(nm, 442.0, 16.0, 26.7) -
                          0.065 * lobe(nm, 501.1, 20.4, 26.2);
            double ybar = 0.821 * lobe(nm, 568.8, 46.9, 40.5) + 0.286 * lobe(nm, 530.9, 16.3, 31.1);
            double zbar = 1.217 * lobe(nm, 437.0, 11.8, 36.0) + 0.681 * lobe(nm, 459.0, 26.0, 13.8);
            m[static_cast<std::size_t>(b)] = std::max(0.0, xbar);
            m[static_cast<std::size_t>(L + b)] = std::max(0.0, ybar);
            m[static_cast<std::size_t>(2 * L + b)] = std::max(0.0, zbar);
        }
        for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int b = 0; b < L; ++b) s += m[static_cast<std::size_t>(c * L + b)];
            if (!(s > 0.0))
                throw InvariantError("band grid has no visible response for RGB channel " + std::to_string(c));
            for (int b = 0; b < L; ++b) m[static_cast<std::size_t>(c * L + b)] /= s;
        }
        return RGBProjection(L, std::move(m));
    }

    int bands() const noexcept { return bands_; }
    double operator()(int channel, int band) const noexcept {
        return m_[static_cast<std::size_t>(channel * bands_ + band)];
    }

private:
    int bands_;
    std::vector<double> m_;
};

inline Volume rgb_project(const Volume& cube, const RGBProjection& proj) {
    if (proj.bands() != cube.channels())
        throw ShapeError("rgb_project: projection has " + std::to_string(proj.bands()) + " columns for " +
                         std::to_string(cube.channels()) + " bands");
    Volume out(3, cube.height(), cube.width());
    for (int c = 0; c < 3; ++c) {
        auto dst = out.plane(c);
        for (int b = 0; b < cube.channels(); ++b) {
            double w = proj(c, b);
            if (w == 0.0) continue;
            auto src = cube.plane(b);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
        }
    }
    return out;
}

inline Volume rgb_project(const SpectralCube& cube, const RGBProjection& proj) { return rgb_project(cube.data(), proj); }

/// Adjoint of rgb_project: maps a 3-channel gradient back to L bands.
inline Volume rgb_project_adjoint(const Volume& rgb_grad, const RGBProjection& proj) {
    Volume out(proj.bands(), rgb_grad.height(), rgb_grad.width());
    for (int b = 0; b < proj.bands(); ++b) {
        auto dst = out.plane(b);
        for (int c = 0; c < 3; ++c) {
            double w = proj(c, b);
            if (w == 0.0) continue;
            auto src = rgb_grad.plane(c);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// SSIM

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    std::vector<double> taps() const { return gaussian_taps(sigma, window / 2); }
};

namespace detail {

// out(r, c) = sum_{i,j} g_i g_j img(r + i, c + j) over windows fully inside the image.
inline Image correlate_valid(std::span<const double> img, int H, int W, const std::vector<double>& g) {
    const int n = static_cast<int>(g.size());
    const int oh = H - n + 1, ow = W - n + 1;
    Image tmp(H, ow);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < ow; ++c) {
            double acc = 0;
            for (int j = 0; j < n; ++j) acc += g[static_cast<std::size_t>(j)] * img[static_cast<std::size_t>(r) * W + c + j];
            tmp(r, c) = acc;
        }
    Image out(oh, ow);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            double acc = 0;
            for (int i = 0; i < n; ++i) acc += g[static_cast<std::size_t>(i)] * tmp(r + i, c);
            out(r, c) = acc;
        }
    return out;
}

// Transpose of correlate_valid: scatters each window value back over its footprint.
inline Image correlate_valid_adjoint(const Image& m, int H, int W, const std::vector<double>& g) {
    const int n = static_cast<int>(g.size());
    Image tmp(H, m.width());
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c)
            for (int i = 0; i < n; ++i) tmp(r + i, c) += g[static_cast<std::size_t>(i)] * m(r, c);
    Image out(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < m.width(); ++c)
            for (int j = 0; j < n; ++j) out(r, c + j) += g[static_cast<std::size_t>(j)] * tmp(r, c);
    return out;
}

struct SsimChannel {
    double mean = 0.0;
    Image grad_b;  // d mean-SSIM / d b, filled on request
};

inline SsimChannel ssim_channel(std::span<const double> a, std::span<const double> b, int H, int W, const SsimParams& p,
                                bool want_grad) {
    auto g = p.taps();
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    Image mu_a = correlate_valid(a, H, W, g), mu_b = correlate_valid(b, H, W, g);
    Image m_aa = correlate_valid(aa, H, W, g), m_bb = correlate_valid(bb, H, W, g), m_ab = correlate_valid(ab, H, W, g);
    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
    const std::size_t n = mu_a.size();
    Image d_mu(mu_a.height(), mu_a.width()), d_m2(d_mu), d_mab(d_mu);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double ma = mu_a.data()[i], mb = mu_b.data()[i];
        double var_a = m_aa.data()[i] - ma * ma, var_b = m_bb.data()[i] - mb * mb;
        double cov = m_ab.data()[i] - ma * mb;
        double a1 = 2 * ma * mb + c1, a2 = 2 * cov + c2;
        double b1 = ma * ma + mb * mb + c1, b2 = var_a + var_b + c2;
        double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (want_grad) {
            d_mu.data()[i] = 2 * ma * (a2 - a1) / (b1 * b2) - s * (2 * mb / b1 - 2 * mb / b2);
            d_m2.data()[i] = -s / b2;
            d_mab.data()[i] = 2 * a1 / (b1 * b2);
        }
    }
    SsimChannel out;
    out.mean = total / static_cast<double>(n);
    if (want_grad) {
        const double scale = 1.0 / static_cast<double>(n);
        Image t_mu = correlate_valid_adjoint(d_mu, H, W, g);
        Image t_m2 = correlate_valid_adjoint(d_m2, H, W, g);
        Image t_mab = correlate_valid_adjoint(d_mab, H, W, g);
        out.grad_b = Image(H, W);
        for (std::size_t i = 0; i < a.size(); ++i)
            out.grad_b.data()[i] = scale * (t_mu.data()[i] + 2 * b[i] * t_m2.data()[i] + a[i] * t_mab.data()[i]);
    }
    return out;
}

inline void check_ssim_shape(const Volume& a, const Volume& b, const SsimParams& p) {
    require_same_shape(a, b, "ssim");
    if (a.height() < p.window || a.width() < p.window)
        throw ShapeError("ssim: images must be at least " + std::to_string(p.window) + "x" + std::to_string(p.window));
}

}  // namespace detail

/// Gaussian-window SSIM averaged over all fully-contained windows and over channels.
inline double ssim(const Volume& a, const Volume& b, const SsimParams& params = {}) {
    detail::check_ssim_shape(a, b, params);
    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c)
        total += detail::ssim_channel(a.plane(c), b.plane(c), a.height(), a.width(), params, false).mean;
    return total / a.channels();
}

/// SSIM and its gradient with respect to `b`.
inline double ssim_with_gradient(const Volume& a, const Volume& b, Volume& grad_b, const SsimParams& params = {}) {
    detail::check_ssim_shape(a, b, params);
    grad_b = Volume(b.channels(), b.height(), b.width());
    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        auto ch = detail::ssim_channel(a.plane(c), b.plane(c), a.height(), a.width(), params, true);
        total += ch.mean;
        auto dst = grad_b.plane(c);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = ch.grad_b.data()[i] / a.channels();
    }
    return total / a.channels();
}

// ---------------------------------------------------------------------------------------------
// Combined objective

struct LossTerms {
    double l1 = 0.0;
    double tv = 0.0;
    double ssim = 1.0;
    double total = 0.0;
};

namespace detail {

inline Volume residual(const Volume& y, const Volume& yhat) {
    Volume r = y;
    for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] -= yhat.data()[i];
    return r;
}

}  // namespace detail

inline LossTerms combined_terms(const Volume& y, const Volume& yhat, const LossWeights& w, const RGBProjection& proj,
                                const SsimParams& sp = {}) {
    require_same_shape(y, yhat, "combined_loss");
    LossTerms t;
    t.l1 = l1_loss(y, yhat);
    if (w.lambda_tv != 0.0) t.tv = tv_loss(w.tv_on_residual ? detail::residual(y, yhat) : yhat, w.gamma_tvs);
    if (w.lambda_ssim != 0.0) t.ssim = ssim(rgb_project(y, proj), rgb_project(yhat, proj), sp);
    t.total = t.l1 + w.lambda_tv * t.tv + w.lambda_ssim * (1.0 - t.ssim);
    return t;
}

inline double combined_loss(const Volume& y, const Volume& yhat, const LossWeights& w, const RGBProjection& proj) {
    return combined_terms(y, yhat, w, proj).total;
}

inline double combined_loss(const SpectralCube& y, const SpectralCube& yhat, const LossWeights& w,
                            const RGBProjection& proj) {
    return combined_loss(y.data(), yhat.data(), w, proj);
}

/// Exact gradient of combined_loss with respect to yhat. Optionally returns the loss terms.
inline Volume grad_combined(const Volume& y, const Volume& yhat, const LossWeights& w, const RGBProjection& proj,
                            LossTerms* terms = nullptr, const SsimParams& sp = {}) {
    require_same_shape(y, yhat, "grad_combined");
    LossTerms t;
    t.l1 = l1_loss(y, yhat);
    Volume grad = l1_gradient(y, yhat);
    if (w.lambda_tv != 0.0) {
        Volume g_tv;
        if (w.tv_on_residual) {
            t.tv = tv_loss(detail::residual(y, yhat), w.gamma_tvs, kTvEpsilon, &g_tv);
            for (double& v : g_tv.span()) v = -v;
        } else {
            t.tv = tv_loss(yhat, w.gamma_tvs, kTvEpsilon, &g_tv);
        }
        for (std::size_t i = 0; i < grad.size(); ++i) grad.data()[i] += w.lambda_tv * g_tv.data()[i];
    }
    if (w.lambda_ssim != 0.0) {
        Volume g_rgb;
        t.ssim = ssim_with_gradient(rgb_project(y, proj), rgb_project(yhat, proj), g_rgb, sp);
        Volume g_bands = rgb_project_adjoint(g_rgb, proj);
        for (std::size_t i = 0; i < grad.size(); ++i) grad.data()[i] -= w.lambda_ssim * g_bands.data()[i];
    }
    t.total = t.l1 + w.lambda_tv * t.tv + w.lambda_ssim * (1.0 - t.ssim);
    if (terms) *terms = t;
    return grad;
}

}  // namespace spectrasweep
