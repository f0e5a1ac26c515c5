#pragma once

// Physics-based reconstruction: minimises
//
//   J(x) = sum_k |A_k x - frame_k|^2 / K + lambda_tv * TV(x),   x >= 0
//
// where A_k is the linear sweep forward model at lens position z_k (per-band defocus blur
// weighted by the sensor response). A_k is evaluated with FFTs on a replicate-padded domain,
// which equals the direct replicate-edge convolution of the simulator.

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <string>
#include <vector>

#include <fftw3.h>

#include "spectrasweep/error.hpp"
#include "spectrasweep/forward_sim.hpp"
#include "spectrasweep/losses.hpp"
#include "spectrasweep/optics.hpp"
#include "spectrasweep/spectral.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

namespace detail {

// Smallest n' >= n whose only prime factors are 2, 3 and 5.
inline int smooth_size(int n) {
    for (int m = std::max(n, 1);; ++m) {
        int r = m;
        for (int p : {2, 3, 5})
            while (r % p == 0) r /= p;
        if (r == 1) return m;
    }
}

// Real 2-D transform pair over an n0 x n1 grid with owned, aligned buffers.
class Fft2d {
public:
    Fft2d(int n0, int n1) : n0_(n0), n1_(n1), nc_(n1 / 2 + 1) {
        real_ = static_cast<double*>(fftw_malloc(sizeof(double) * real_size()));
        spec_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * spectrum_size()));
        if (!real_ || !spec_) throw std::bad_alloc();
        fwd_ = fftw_plan_dft_r2c_2d(n0_, n1_, real_, spec_, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r_2d(n0_, n1_, spec_, real_, FFTW_ESTIMATE);
    }
    ~Fft2d() {
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(real_);
        fftw_free(spec_);
    }
    Fft2d(const Fft2d&) = delete;
    Fft2d& operator=(const Fft2d&) = delete;

    std::size_t real_size() const noexcept { return static_cast<std::size_t>(n0_) * n1_; }
    std::size_t spectrum_size() const noexcept { return static_cast<std::size_t>(n0_) * nc_; }
    double* real() noexcept { return real_; }
    std::complex<double>* spectrum() noexcept { return reinterpret_cast<std::complex<double>*>(spec_); }

    void forward() { fftw_execute(fwd_); }
    /// Unnormalised inverse (scales by n0 * n1).
    void inverse() { fftw_execute(inv_); }

private:
    int n0_, n1_, nc_;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
};

}  // namespace detail

/// Linear sweep forward model A: cube (L, H, W) -> frames (K, H, W), with its exact adjoint.
class SweepOperator {
public:
    SweepOperator(const BandGrid& bands, const LensConfig& lens, const AcquisitionGeometry& geometry,
                  const std::vector<double>& positions_mm, const SensorResponse& response, int height, int width,
                  PsfModel model = PsfModel::Disc)
        : L_(bands.size()), K_(static_cast<int>(positions_mm.size())), H_(height), W_(width) {
        response.validate(L_);
        if (K_ < 1) throw InvariantError("sweep operator needs at least one lens position");
        std::vector<std::vector<Image>> kernels;
        int radius = 0;
        for (double z : positions_mm) {
            kernels.push_back(band_kernels(bands, lens, geometry, z, model));
            for (const auto& k : kernels.back()) radius = std::max(radius, k.height() / 2);
        }
        pad_ = radius;
        n0_ = detail::smooth_size(H_ + 2 * pad_);
        n1_ = detail::smooth_size(W_ + 2 * pad_);
        fft_ = std::make_unique<detail::Fft2d>(n0_, n1_);
        const std::size_t ns = fft_->spectrum_size();
        spectra_.assign(static_cast<std::size_t>(K_ * L_), {});
        for (int k = 0; k < K_; ++k)
            for (int b = 0; b < L_; ++b) {
                auto& s = spectra_[static_cast<std::size_t>(k * L_ + b)];
                double w = response.weights[static_cast<std::size_t>(b)];
                if (w == 0.0) continue;
                const Image& ker = kernels[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
                const int r = ker.height() / 2;
                std::fill(fft_->real(), fft_->real() + fft_->real_size(), 0.0);
                for (int i = -r; i <= r; ++i)
                    for (int j = -r; j <= r; ++j)
                        fft_->real()[static_cast<std::size_t>((i + n0_) % n0_) * n1_ + (j + n1_) % n1_] =
                            w * ker(i + r, j + r);
                fft_->forward();
                s.assign(fft_->spectrum(), fft_->spectrum() + ns);
            }
    }

    int bands() const noexcept { return L_; }
    int frames() const noexcept { return K_; }
    int height() const noexcept { return H_; }
    int width() const noexcept { return W_; }

    Volume apply(const Volume& x) const {
        check(x, L_, "apply");
        const std::size_t ns = fft_->spectrum_size();
        std::vector<std::vector<std::complex<double>>> xs(static_cast<std::size_t>(L_));
        for (int b = 0; b < L_; ++b) {
            pad_replicate(x.plane(b));
            fft_->forward();
            xs[static_cast<std::size_t>(b)].assign(fft_->spectrum(), fft_->spectrum() + ns);
        }
        Volume out(K_, H_, W_);
        for (int k = 0; k < K_; ++k) {
            std::complex<double>* acc = fft_->spectrum();
            std::fill(acc, acc + ns, std::complex<double>{});
            for (int b = 0; b < L_; ++b) {
                const auto& s = spectra_[static_cast<std::size_t>(k * L_ + b)];
                if (s.empty()) continue;
                const auto& v = xs[static_cast<std::size_t>(b)];
                for (std::size_t i = 0; i < ns; ++i) acc[i] += s[i] * v[i];
            }
            fft_->inverse();
            crop(out.plane(k));
        }
        return out;
    }

    Volume adjoint(const Volume& r) const {
        check(r, K_, "adjoint");
        const std::size_t ns = fft_->spectrum_size();
        std::vector<std::vector<std::complex<double>>> rs(static_cast<std::size_t>(K_));
        for (int k = 0; k < K_; ++k) {
            embed_zero(r.plane(k));
            fft_->forward();
            rs[static_cast<std::size_t>(k)].assign(fft_->spectrum(), fft_->spectrum() + ns);
        }
        Volume out(L_, H_, W_);
        for (int b = 0; b < L_; ++b) {
            std::complex<double>* acc = fft_->spectrum();
            std::fill(acc, acc + ns, std::complex<double>{});
            for (int k = 0; k < K_; ++k) {
                const auto& s = spectra_[static_cast<std::size_t>(k * L_ + b)];
                if (s.empty()) continue;
                const auto& v = rs[static_cast<std::size_t>(k)];
                for (std::size_t i = 0; i < ns; ++i) acc[i] += std::conj(s[i]) * v[i];
            }
            fft_->inverse();
            fold_replicate(out.plane(b));
        }
        return out;
    }

private:
    void check(const Volume& v, int channels, const char* who) const {
        if (v.channels() != channels || v.height() != H_ || v.width() != W_)
            throw ShapeError(std::string("sweep operator ") + who + ": expected " + std::to_string(channels) + "x" +
                             std::to_string(H_) + "x" + std::to_string(W_));
    }

    std::size_t source_index(int pi, int pj) const {
        int r = std::clamp(pi - pad_, 0, H_ - 1), c = std::clamp(pj - pad_, 0, W_ - 1);
        return static_cast<std::size_t>(r) * W_ + c;
    }

    void pad_replicate(std::span<const double> plane) const {
        double* dst = fft_->real();
        for (int i = 0; i < n0_; ++i)
            for (int j = 0; j < n1_; ++j) dst[static_cast<std::size_t>(i) * n1_ + j] = plane[source_index(i, j)];
    }

    // Adjoint of pad_replicate: every padded sample flows back to the pixel it copied.
    void fold_replicate(std::span<double> plane) const {
        const double scale = 1.0 / (static_cast<double>(n0_) * n1_);
        const double* src = fft_->real();
        for (int i = 0; i < n0_; ++i)
            for (int j = 0; j < n1_; ++j) plane[source_index(i, j)] += scale * src[static_cast<std::size_t>(i) * n1_ + j];
    }

    void embed_zero(std::span<const double> plane) const {
        double* dst = fft_->real();
        std::fill(dst, dst + fft_->real_size(), 0.0);
        for (int r = 0; r < H_; ++r)
            for (int c = 0; c < W_; ++c)
                dst[static_cast<std::size_t>(r + pad_) * n1_ + c + pad_] = plane[static_cast<std::size_t>(r) * W_ + c];
    }

    void crop(std::span<double> plane) const {
        const double scale = 1.0 / (static_cast<double>(n0_) * n1_);
        const double* src = fft_->real();
        for (int r = 0; r < H_; ++r)
            for (int c = 0; c < W_; ++c)
                plane[static_cast<std::size_t>(r) * W_ + c] = scale * src[static_cast<std::size_t>(r + pad_) * n1_ + c + pad_];
    }

    int L_, K_, H_, W_;
    int pad_ = 0, n0_ = 0, n1_ = 0;
    std::unique_ptr<detail::Fft2d> fft_;
    std::vector<std::vector<std::complex<double>>> spectra_;  // [k * L + b], response weight folded in
};

struct SolverConfig {
    double step_size = 1.0;
    double momentum = 0.9;
    int max_iters = 1000;
    /// Stop when the objective gradient's 2-norm falls below this.
    double grad_tol = 1e-9;
    /// Only lambda_tv and gamma_tvs enter the objective.
    LossWeights weights{0.01, 0.2, 0.0, false};
    PsfModel psf = PsfModel::Disc;
    /// Consecutive rejected steps before giving up.
    int max_rejections = 10;

    void validate() const {
        if (!(step_size > 0.0)) throw InvariantError("solver: step_size must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw InvariantError("solver: momentum must be in [0, 1)");
        if (max_iters < 1) throw InvariantError("solver: max_iters must be at least 1");
        if (!(grad_tol >= 0.0)) throw InvariantError("solver: grad_tol must be non-negative");
        if (max_rejections < 1) throw InvariantError("solver: max_rejections must be at least 1");
        weights.validate();
    }
};

struct SolverResult {
    SpectralCube cube;
    /// Objective of the initial point followed by every accepted iterate.
    std::vector<double> objective;
    int iterations = 0;
    int rejected = 0;
    std::string stop_reason;
};

namespace detail {

inline void check_stack_schedule(const GrayscaleStack& stack, const FocusSchedule& schedule) {
    schedule.validate();
    if (stack.size() != schedule.size())
        throw InvariantError("stack has " + std::to_string(stack.size()) + " frames but schedule has " +
                             std::to_string(schedule.size()) + " positions");
    for (int k = 0; k < stack.size(); ++k) {
        double a = stack.lens_positions_mm()[static_cast<std::size_t>(k)];
        double b = schedule.positions_mm[static_cast<std::size_t>(k)];
        if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(b)))
            throw InvariantError("stack position " + std::to_string(k) + " (" + std::to_string(a) +
                                 " mm) does not match the schedule (" + std::to_string(b) + " mm)");
    }
}

// Objective and gradient at x.
inline double sweep_objective(const SweepOperator& op, const Volume& x, const Volume& y, const LossWeights& w,
                              Volume* grad) {
    Volume r = op.apply(x);
    double data = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        r.data()[i] -= y.data()[i];
        data += r.data()[i] * r.data()[i];
    }
    const double inv_k = 1.0 / op.frames();
    Volume g_tv;
    double tv = w.lambda_tv != 0.0 ? tv_loss(x, w.gamma_tvs, kTvEpsilon, grad ? &g_tv : nullptr) : 0.0;
    if (grad) {
        *grad = op.adjoint(r);
        for (double& v : grad->span()) v *= 2.0 * inv_k;
        if (w.lambda_tv != 0.0)
            for (std::size_t i = 0; i < grad->size(); ++i) grad->data()[i] += w.lambda_tv * g_tv.data()[i];
    }
    return data * inv_k + w.lambda_tv * tv;
}

}  // namespace detail

/// Band-wise back-projection: every band starts from the frame whose focused wavelength is
/// nearest to it, divided by the total sensor response.
inline Volume backproject_init(const GrayscaleStack& stack, const FocusSchedule& schedule, const BandGrid& bands,
                               const SensorResponse& response) {
    double total = 0.0;
    for (double w : response.weights) total += w;
    Volume x(bands.size(), stack.height(), stack.width());
    for (int b = 0; b < bands.size(); ++b) {
        int best = 0;
        double best_d = INFINITY;
        for (int k = 0; k < stack.size(); ++k) {
            double d = std::abs(focused_wavelength(schedule, schedule.positions_mm[static_cast<std::size_t>(k)]) - bands[b]);
            if (d < best_d) best_d = d, best = k;
        }
        auto src = stack.frame(best).span();
        auto dst = x.plane(b);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] / total;
    }
    return x;
}

/// Projected heavy-ball descent with backtracking. A trial step is accepted only when it does not
/// raise J; otherwise momentum is dropped and the step halved. Deterministic.
inline SolverResult variational_solve(const GrayscaleStack& stack, const BandGrid& bands, const LensConfig& lens,
                                      const AcquisitionGeometry& geometry, const FocusSchedule& schedule,
                                      const SensorResponse& response, const SolverConfig& config = {}) {
    config.validate();
    lens.validate();
    geometry.validate();
    response.validate(bands.size());
    detail::check_stack_schedule(stack, schedule);
    if (stack.height() != geometry.height || stack.width() != geometry.width)
        throw ShapeError("stack frames do not match the acquisition geometry");

    SweepOperator op(bands, lens, geometry, schedule.positions_mm, response, stack.height(), stack.width(), config.psf);
    const Volume y = stack_images(stack.frames());

    Volume x = backproject_init(stack, schedule, bands, response);
    Volume g;
    double j = detail::sweep_objective(op, x, y, config.weights, &g);
    SolverResult res{to_cube(bands, x), {j}, 0, 0, "max_iters"};

    Volume velocity(x.channels(), x.height(), x.width());
    Volume trial(x.channels(), x.height(), x.width());
    double step = config.step_size;
    int consecutive = 0;
    bool any_accepted = false;
    for (int it = 0; it < config.max_iters; ++it) {
        res.iterations = it + 1;
        if (std::sqrt(dot(g.span(), g.span())) < config.grad_tol) {
            res.stop_reason = "grad_tol";
            break;
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = config.momentum * velocity.data()[i] - step * g.data()[i];
            trial.data()[i] = std::max(0.0, x.data()[i] + v);
        }
        Volume g_trial;
        double j_trial = detail::sweep_objective(op, trial, y, config.weights, &g_trial);
        if (std::isfinite(j_trial) && j_trial <= j) {
            for (std::size_t i = 0; i < x.size(); ++i) velocity.data()[i] = trial.data()[i] - x.data()[i];
            std::swap(x, trial);
            g = std::move(g_trial);
            j = j_trial;
            res.objective.push_back(j);
            consecutive = 0;
            any_accepted = true;
            continue;
        }
        ++res.rejected;
        std::fill(velocity.data().begin(), velocity.data().end(), 0.0);
        step *= 0.5;
        if (++consecutive >= config.max_rejections) {
            if (!any_accepted)
                throw DivergenceError("variational solver: objective rose on " + std::to_string(consecutive) +
                                      " consecutive steps from the start; reduce step_size (now " +
                                      std::to_string(config.step_size) + ")");
            res.stop_reason = "stalled";
            break;
        }
    }
    res.cube = to_cube(bands, std::move(x));
    return res;
}

inline SpectralCube variational_reconstruct(const GrayscaleStack& stack, const BandGrid& bands,
                                            const LensConfig& lens, const AcquisitionGeometry& geometry,
                                            const FocusSchedule& schedule, const SensorResponse& response,
                                            const SolverConfig& config = {}) {
    return variational_solve(stack, bands, lens, geometry, schedule, response, config).cube;
}

}  // namespace spectrasweep
