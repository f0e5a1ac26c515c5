#pragma once

// Small UNet-style encoder/decoder with hand-written reverse mode.
//
// encoder (per level): conv3x3 -> ReLU -> conv3x3 -> ReLU -> [skip] -> 2x2 mean-pool
// bottleneck:          conv3x3 -> ReLU -> conv3x3 -> ReLU
// decoder (per level): nearest 2x upsample -> concat skip -> conv3x3 -> ReLU -> conv3x3 -> ReLU
// head:                conv1x1
//
// Widths double at every level starting from base_width.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spectrasweep/error.hpp"
#include "spectrasweep/parallel.hpp"
#include "spectrasweep/tensor.hpp"

namespace spectrasweep {

struct NetConfig {
    int c_in = 7;
    int c_out = 8;
    int base_width = 8;
    int depth = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (c_in < 1 || c_out < 1) throw InvariantError("net: c_in and c_out must be at least 1");
        if (base_width < 1) throw InvariantError("net: base_width must be at least 1");
        if (depth < 1) throw InvariantError("net: depth must be at least 1");
    }
    int width(int level) const { return base_width << level; }
};

/// Square convolution kernel bank, weights laid out [out][in][ky][kx].
struct ConvLayer {
    int in = 0;
    int out = 0;
    int k = 3;
    std::vector<double> weights;
    std::vector<double> bias;

    int fan_in() const noexcept { return in * k * k; }
    double& w(int o, int i, int u, int v) noexcept {
        return weights[((static_cast<std::size_t>(o) * in + i) * k + u) * k + v];
    }
    double w(int o, int i, int u, int v) const noexcept {
        return weights[((static_cast<std::size_t>(o) * in + i) * k + u) * k + v];
    }
};

struct SkipConnection {
    int encoder_level;
    int decoder_level;
};

struct NetParams {
    NetConfig config;
    /// Order: encoder (2 per level), bottleneck (2), decoder (2 per level, deepest first), head.
    std::vector<ConvLayer> layers;

    std::vector<SkipConnection> skip_connections() const {
        std::vector<SkipConnection> s;
        for (int l = 0; l < config.depth; ++l) s.push_back({l, l});
        return s;
    }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weights.size() + l.bias.size();
        return n;
    }
};

/// He-initialised parameters, N(0, 2 / fan_in) weights and zero biases, deterministic per seed.
inline NetParams net_init(const NetConfig& config) {
    config.validate();
    NetParams p{config, {}};
    auto add = [&](int in, int out, int k) {
        ConvLayer l{in, out, k, std::vector<double>(static_cast<std::size_t>(out) * in * k * k),
                    std::vector<double>(static_cast<std::size_t>(out), 0.0)};
        p.layers.push_back(std::move(l));
    };
    int ch = config.c_in;
    for (int l = 0; l < config.depth; ++l) {
        add(ch, config.width(l), 3);
        add(config.width(l), config.width(l), 3);
        ch = config.width(l);
    }
    add(ch, config.width(config.depth), 3);
    add(config.width(config.depth), config.width(config.depth), 3);
    for (int l = config.depth - 1; l >= 0; --l) {
        add(config.width(l + 1) + config.width(l), config.width(l), 3);
        add(config.width(l), config.width(l), 3);
    }
    add(config.width(0), config.c_out, 1);

    std::mt19937_64 rng(config.seed);
    for (auto& l : p.layers) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / l.fan_in()));
        for (double& w : l.weights) w = dist(rng);
    }
    return p;
}

// ---------------------------------------------------------------------------------------------
// Layer primitives

/// Zero-padded "same" cross-correlation.
inline Volume conv2d(const ConvLayer& layer, const Volume& x) {
    if (x.channels() != layer.in)
        throw ShapeError("conv2d: expected " + std::to_string(layer.in) + " input channels, got " +
                         std::to_string(x.channels()));
    const int H = x.height(), W = x.width(), p = layer.k / 2;
    Volume y(layer.out, H, W);
    parallel_for(static_cast<std::size_t>(layer.out), [&](std::size_t oi) {
        const int o = static_cast<int>(oi);
        auto dst = y.plane(o);
        std::fill(dst.begin(), dst.end(), layer.bias[oi]);
        for (int i = 0; i < layer.in; ++i)
            for (int u = 0; u < layer.k; ++u)
                for (int v = 0; v < layer.k; ++v) {
                    const double w = layer.w(o, i, u, v);
                    if (w == 0.0) continue;
                    const int dr = u - p, dc = v - p;
                    for (int r = std::max(0, -dr); r < std::min(H, H - dr); ++r) {
                        const double* src = x.plane(i).data() + static_cast<std::size_t>(r + dr) * W;
                        double* out = &dst[static_cast<std::size_t>(r) * W];
                        for (int c = std::max(0, -dc); c < std::min(W, W - dc); ++c) out[c] += w * src[c + dc];
                    }
                }
    });
    return y;
}

/// Gradients of conv2d given dL/dy. Accumulates into dw / db and returns dL/dx.
inline Volume conv2d_backward(const ConvLayer& layer, const Volume& x, const Volume& dy, std::vector<double>& dw,
                              std::vector<double>& db) {
    const int H = x.height(), W = x.width(), p = layer.k / 2;
    if (dy.channels() != layer.out || dy.height() != H || dy.width() != W)
        throw ShapeError("conv2d_backward: upstream gradient shape mismatch");
    dw.assign(layer.weights.size(), 0.0);
    db.assign(layer.bias.size(), 0.0);
    parallel_for(static_cast<std::size_t>(layer.out), [&](std::size_t oi) {
        const int o = static_cast<int>(oi);
        auto g = dy.plane(o);
        double s = 0.0;
        for (double v : g) s += v;
        db[oi] = s;
        for (int i = 0; i < layer.in; ++i)
            for (int u = 0; u < layer.k; ++u)
                for (int v = 0; v < layer.k; ++v) {
                    const int dr = u - p, dc = v - p;
                    double acc = 0.0;
                    for (int r = std::max(0, -dr); r < std::min(H, H - dr); ++r) {
                        const double* src = x.plane(i).data() + static_cast<std::size_t>(r + dr) * W;
                        const double* gr = &g[static_cast<std::size_t>(r) * W];
                        for (int c = std::max(0, -dc); c < std::min(W, W - dc); ++c) acc += gr[c] * src[c + dc];
                    }
                    dw[((static_cast<std::size_t>(o) * layer.in + i) * layer.k + u) * layer.k + v] = acc;
                }
    });
    Volume dx(layer.in, H, W);
    parallel_for(static_cast<std::size_t>(layer.in), [&](std::size_t ii) {
        const int i = static_cast<int>(ii);
        auto dst = dx.plane(i);
        for (int o = 0; o < layer.out; ++o) {
            auto g = dy.plane(o);
            for (int u = 0; u < layer.k; ++u)
                for (int v = 0; v < layer.k; ++v) {
                    const double w = layer.w(o, i, u, v);
                    if (w == 0.0) continue;
                    const int dr = u - p, dc = v - p;
                    for (int r = std::max(0, -dr); r < std::min(H, H - dr); ++r) {
                        double* out = &dst[static_cast<std::size_t>(r + dr) * W];
                        const double* gr = &g[static_cast<std::size_t>(r) * W];
                        for (int c = std::max(0, -dc); c < std::min(W, W - dc); ++c) out[c + dc] += w * gr[c];
                    }
                }
        }
    });
    return dx;
}

inline Volume relu(const Volume& x) {
    Volume y = x;
    for (double& v : y.span()) v = v > 0.0 ? v : 0.0;
    return y;
}

inline Volume relu_backward(const Volume& x, const Volume& dy) {
    Volume dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(x.data()[i] > 0.0)) dx.data()[i] = 0.0;
    return dx;
}

inline Volume mean_pool2(const Volume& x) {
    if (x.height() % 2 || x.width() % 2) throw ShapeError("mean_pool2: spatial dims must be even");
    Volume y(x.channels(), x.height() / 2, x.width() / 2);
    for (int c = 0; c < x.channels(); ++c)
        for (int r = 0; r < y.height(); ++r)
            for (int q = 0; q < y.width(); ++q)
                y(c, r, q) = 0.25 * (x(c, 2 * r, 2 * q) + x(c, 2 * r, 2 * q + 1) + x(c, 2 * r + 1, 2 * q) +
                                     x(c, 2 * r + 1, 2 * q + 1));
    return y;
}

inline Volume mean_pool2_backward(const Volume& dy) {
    Volume dx(dy.channels(), dy.height() * 2, dy.width() * 2);
    for (int c = 0; c < dx.channels(); ++c)
        for (int r = 0; r < dx.height(); ++r)
            for (int q = 0; q < dx.width(); ++q) dx(c, r, q) = 0.25 * dy(c, r / 2, q / 2);
    return dx;
}

inline Volume upsample2(const Volume& x) {
    Volume y(x.channels(), x.height() * 2, x.width() * 2);
    for (int c = 0; c < y.channels(); ++c)
        for (int r = 0; r < y.height(); ++r)
            for (int q = 0; q < y.width(); ++q) y(c, r, q) = x(c, r / 2, q / 2);
    return y;
}

inline Volume upsample2_backward(const Volume& dy) {
    Volume dx(dy.channels(), dy.height() / 2, dy.width() / 2);
    for (int c = 0; c < dy.channels(); ++c)
        for (int r = 0; r < dy.height(); ++r)
            for (int q = 0; q < dy.width(); ++q) dx(c, r / 2, q / 2) += dy(c, r, q);
    return dx;
}

inline Volume concat_channels(const Volume& a, const Volume& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("concat: spatial dims differ");
    Volume y(a.channels() + b.channels(), a.height(), a.width());
    std::copy(a.data().begin(), a.data().end(), y.data().begin());
    std::copy(b.data().begin(), b.data().end(), y.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return y;
}

inline std::pair<Volume, Volume> concat_backward(const Volume& dy, int a_channels) {
    Volume da(a_channels, dy.height(), dy.width()), db(dy.channels() - a_channels, dy.height(), dy.width());
    std::copy(dy.data().begin(), dy.data().begin() + static_cast<std::ptrdiff_t>(da.size()), da.data().begin());
    std::copy(dy.data().begin() + static_cast<std::ptrdiff_t>(da.size()), dy.data().end(), db.data().begin());
    return {std::move(da), std::move(db)};
}

// ---------------------------------------------------------------------------------------------
// Whole network

namespace detail {

// Every intermediate needed by the backward pass.
struct NetTape {
    std::vector<Volume> conv_in;   // input of each conv layer
    std::vector<Volume> conv_out;  // pre-activation output of each conv layer
    std::vector<int> skip_channels;
};

inline void check_net_input(const NetParams& params, const Volume& input) {
    const int d = params.config.depth;
    if (input.channels() != params.config.c_in)
        throw ShapeError("net: expected " + std::to_string(params.config.c_in) + " input channels, got " +
                         std::to_string(input.channels()));
    if (input.height() % (1 << d) || input.width() % (1 << d) || input.height() == 0 || input.width() == 0)
        throw ShapeError("net: spatial dims " + std::to_string(input.height()) + "x" + std::to_string(input.width()) +
                         " not divisible by 2^" + std::to_string(d));
}

inline Volume net_run(const NetParams& params, const Volume& input, NetTape* tape) {
    check_net_input(params, input);
    std::size_t li = 0;
    auto conv_relu = [&](Volume x, bool activate) {
        const ConvLayer& layer = params.layers.at(li++);
        Volume y = conv2d(layer, x);
        if (tape) {
            tape->conv_in.push_back(std::move(x));
            tape->conv_out.push_back(y);
        }
        return activate ? relu(y) : y;
    };
    std::vector<Volume> skips;
    Volume x = input;
    for (int l = 0; l < params.config.depth; ++l) {
        x = conv_relu(std::move(x), true);
        x = conv_relu(std::move(x), true);
        skips.push_back(x);
        x = mean_pool2(x);
    }
    x = conv_relu(std::move(x), true);
    x = conv_relu(std::move(x), true);
    for (int l = params.config.depth - 1; l >= 0; --l) {
        Volume up = upsample2(x);
        if (tape) tape->skip_channels.push_back(up.channels());
        x = conv_relu(concat_channels(up, skips[static_cast<std::size_t>(l)]), true);
        x = conv_relu(std::move(x), true);
    }
    return conv_relu(std::move(x), false);
}

}  // namespace detail

inline Volume net_forward(const NetParams& params, const Volume& input) { return detail::net_run(params, input, nullptr); }

struct NetGradients {
    /// Same layout as NetParams::layers (weights and bias hold the gradients).
    std::vector<ConvLayer> layers;
    Volume input;
};

/// Reverse-mode gradients of <upstream, net_forward(params, input)>.
inline NetGradients net_backward(const NetParams& params, const Volume& input, const Volume& upstream) {
    detail::NetTape tape;
    Volume out = detail::net_run(params, input, &tape);
    if (!upstream.same_shape(out)) throw ShapeError("net_backward: upstream gradient shape does not match the output");

    NetGradients g;
    g.layers = params.layers;
    int li = static_cast<int>(params.layers.size()) - 1;
    auto back_conv = [&](const Volume& dy) {
        auto& gl = g.layers[static_cast<std::size_t>(li)];
        Volume dx = conv2d_backward(params.layers[static_cast<std::size_t>(li)],
                                    tape.conv_in[static_cast<std::size_t>(li)], dy, gl.weights, gl.bias);
        --li;
        return dx;
    };
    // dy of a conv whose output went through ReLU.
    auto through_relu = [&](const Volume& d_act) {
        return relu_backward(tape.conv_out[static_cast<std::size_t>(li)], d_act);
    };

    const int depth = params.config.depth;
    std::vector<Volume> d_skips(static_cast<std::size_t>(depth));
    Volume d = back_conv(upstream);
    for (int l = 0; l < depth; ++l) {
        d = back_conv(through_relu(d));
        d = back_conv(through_relu(d));
        auto [d_up, d_skip] = concat_backward(d, tape.skip_channels[static_cast<std::size_t>(depth - 1 - l)]);
        d_skips[static_cast<std::size_t>(l)] = std::move(d_skip);
        d = upsample2_backward(d_up);
    }
    d = back_conv(through_relu(d));
    d = back_conv(through_relu(d));
    for (int l = depth - 1; l >= 0; --l) {
        d = mean_pool2_backward(d);
        const Volume& ds = d_skips[static_cast<std::size_t>(l)];
        for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] += ds.data()[i];
        d = back_conv(through_relu(d));
        d = back_conv(through_relu(d));
    }
    g.input = std::move(d);
    return g;
}

}  // namespace spectrasweep
