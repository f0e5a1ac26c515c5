#pragma once

// Training loop for the toy network: geometric augmentation, Adam, checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spectrasweep/error.hpp"
#include "spectrasweep/imgproc.hpp"
#include "spectrasweep/io.hpp"
#include "spectrasweep/losses.hpp"
#include "spectrasweep/net.hpp"
#include "spectrasweep/spectral.hpp"

namespace spectrasweep {

struct AugmentConfig {
    bool translate = false;
    int max_shift_px = 8;
    bool rotate = false;
    double max_rotation_deg = 15.0;
    bool crop = false;
    double min_crop_scale = 0.8;
    bool flip_horizontal = false;
    bool flip_vertical = false;
    std::uint64_t seed = 0;

    bool any() const noexcept { return translate || rotate || crop || flip_horizontal || flip_vertical; }
    void validate() const {
        if (max_shift_px < 0 || max_shift_px > 8) throw InvariantError("augment: max_shift_px must be in [0, 8]");
        if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 15.0))
            throw InvariantError("augment: max_rotation_deg must be in [0, 15]");
        if (!(min_crop_scale >= 0.8 && min_crop_scale <= 1.0))
            throw InvariantError("augment: min_crop_scale must be in [0.8, 1]");
    }
};

/// One random draw of the augmentation parameters.
struct AugmentDraw {
    int shift_x = 0;
    int shift_y = 0;
    double rotation_rad = 0.0;
    double crop_scale = 1.0;
    double crop_dx = 0.0;
    double crop_dy = 0.0;
    bool flip_h = false;
    bool flip_v = false;
};

inline AugmentDraw draw_augment(const AugmentConfig& cfg, std::uint64_t sample_index, int height, int width) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed ^ (sample_index * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    AugmentDraw d;
    if (cfg.translate) {
        std::uniform_int_distribution<int> shift(-cfg.max_shift_px, cfg.max_shift_px);
        d.shift_x = shift(rng);
        d.shift_y = shift(rng);
    }
    if (cfg.rotate) d.rotation_rad = (2.0 * unit(rng) - 1.0) * cfg.max_rotation_deg * std::numbers::pi / 180.0;
    if (cfg.crop) {
        d.crop_scale = cfg.min_crop_scale + (1.0 - cfg.min_crop_scale) * unit(rng);
        double slack_x = 0.5 * (1.0 - d.crop_scale) * (width - 1);
        double slack_y = 0.5 * (1.0 - d.crop_scale) * (height - 1);
        d.crop_dx = (2.0 * unit(rng) - 1.0) * slack_x;
        d.crop_dy = (2.0 * unit(rng) - 1.0) * slack_y;
    }
    if (cfg.flip_horizontal) d.flip_h = unit(rng) < 0.5;
    if (cfg.flip_vertical) d.flip_v = unit(rng) < 0.5;
    return d;
}

/// Warps every channel with the same draw. Output pixel p samples the input at
/// centre + R * s * (flip(p) - centre) + crop offset - shift, zero outside.
inline Volume apply_augment(const Volume& v, const AugmentDraw& d) {
    const int H = v.height(), W = v.width();
    const double cx = 0.5 * (W - 1), cy = 0.5 * (H - 1);
    const double cs = std::cos(d.rotation_rad) * d.crop_scale, sn = std::sin(d.rotation_rad) * d.crop_scale;
    Volume out(v.channels(), H, W);
    for (int c = 0; c < v.channels(); ++c) {
        Image src = v.image(c);
        for (int r = 0; r < H; ++r)
            for (int q = 0; q < W; ++q) {
                double x = d.flip_h ? W - 1 - q : q;
                double y = d.flip_v ? H - 1 - r : r;
                double sx = cx + cs * (x - cx) - sn * (y - cy) + d.crop_dx - d.shift_x;
                double sy = cy + sn * (x - cx) + cs * (y - cy) + d.crop_dy - d.shift_y;
                out(c, r, q) = sample_bilinear(src, sx, sy, 0.0);
            }
    }
    return out;
}

struct TrainingPair {
    Volume input;
    Volume target;
};

/// Same geometric transform on input channels and target bands; deterministic per (seed, index).
inline TrainingPair augment(const TrainingPair& pair, const AugmentConfig& cfg, std::uint64_t sample_index = 0) {
    if (pair.input.height() != pair.target.height() || pair.input.width() != pair.target.width())
        throw ShapeError("augment: input and target spatial dims differ");
    if (!cfg.any()) {
        cfg.validate();
        return pair;
    }
    AugmentDraw d = draw_augment(cfg, sample_index, pair.input.height(), pair.input.width());
    return {apply_augment(pair.input, d), apply_augment(pair.target, d)};
}

// ---------------------------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 200;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;
    /// Visit samples in a seeded random order each epoch.
    bool shuffle = true;
    AugmentConfig augment;

    void validate() const {
        if (epochs < 1) throw InvariantError("train: epochs must be at least 1");
        if (!(learning_rate >= 0.0)) throw InvariantError("train: learning_rate must be non-negative");
        augment.validate();
    }
};

struct TrainResult {
    NetParams params;
    /// Mean training loss of each epoch, measured before that sample's update.
    std::vector<double> loss_curve;
};

/// Per-sample Adam on combined_loss(target, net_forward(input)).
inline TrainResult train(const std::vector<TrainingPair>& dataset, const NetConfig& net_config,
                         const LossWeights& weights, const RGBProjection& projection, const TrainConfig& cfg) {
    if (dataset.empty()) throw InsufficientDataError("train: dataset is empty");
    cfg.validate();
    weights.validate();
    for (const auto& s : dataset) {
        if (!s.input.same_shape(dataset.front().input) || !s.target.same_shape(dataset.front().target))
            throw ShapeError("train: all samples must share shapes");
        if (s.input.channels() != net_config.c_in || s.target.channels() != net_config.c_out)
            throw ShapeError("train: sample channels do not match the network configuration");
    }

    TrainResult res{net_init(net_config), {}};
    NetParams& p = res.params;
    std::vector<ConvLayer> m = p.layers, v = p.layers;
    for (auto* bank : {&m, &v})
        for (auto& l : *bank) {
            std::fill(l.weights.begin(), l.weights.end(), 0.0);
            std::fill(l.bias.begin(), l.bias.end(), 0.0);
        }

    std::mt19937_64 order_rng(cfg.seed);
    std::vector<std::size_t> order(dataset.size());
    long long t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        if (cfg.shuffle) std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_loss = 0.0;
        for (std::size_t n = 0; n < order.size(); ++n) {
            const std::size_t idx = order[n];
            TrainingPair sample = cfg.augment.any()
                                      ? augment(dataset[idx], cfg.augment,
                                                static_cast<std::uint64_t>(epoch) * dataset.size() + idx)
                                      : dataset[idx];
            Volume out = net_forward(p, sample.input);
            LossTerms terms;
            Volume g_out = grad_combined(sample.target, out, weights, projection, &terms);
            if (!std::isfinite(terms.total))
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " +
                                      std::to_string(idx) + " (lower the learning rate)");
            epoch_loss += terms.total;
            NetGradients g = net_backward(p, sample.input, g_out);
            ++t;
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
            auto step = [&](std::vector<double>& w, std::vector<double>& mw, std::vector<double>& vw,
                            const std::vector<double>& gw) {
                for (std::size_t j = 0; j < w.size(); ++j) {
                    mw[j] = cfg.beta1 * mw[j] + (1.0 - cfg.beta1) * gw[j];
                    vw[j] = cfg.beta2 * vw[j] + (1.0 - cfg.beta2) * gw[j] * gw[j];
                    w[j] -= cfg.learning_rate * (mw[j] / c1) / (std::sqrt(vw[j] / c2) + cfg.adam_epsilon);
                }
            };
            for (std::size_t l = 0; l < p.layers.size(); ++l) {
                step(p.layers[l].weights, m[l].weights, v[l].weights, g.layers[l].weights);
                step(p.layers[l].bias, m[l].bias, v[l].bias, g.layers[l].bias);
            }
        }
        res.loss_curve.push_back(epoch_loss / static_cast<double>(dataset.size()));
    }
    return res;
}

/// Network output on the band grid, clamped to be non-negative.
inline SpectralCube predict(const NetParams& params, const Volume& preprocessed, const BandGrid& bands) {
    if (bands.size() != params.config.c_out)
        throw ShapeError("predict: band grid has " + std::to_string(bands.size()) + " bands, network emits " +
                         std::to_string(params.config.c_out));
    return to_cube(bands, net_forward(params, preprocessed));
}

// ---------------------------------------------------------------------------------------------
// Checkpoints: one JSON header line (magic, version, config, layer shapes) followed by every
// layer's weights then bias as little-endian float32.

inline constexpr const char* kNetMagic = "SSNET1";
inline constexpr int kNetVersion = 1;

inline void write_checkpoint(const NetParams& params, const std::string& path) {
    nlohmann::ordered_json h;
    h["magic"] = kNetMagic;
    h["version"] = kNetVersion;
    h["config"] = {{"c_in", params.config.c_in},
                   {"c_out", params.config.c_out},
                   {"base_width", params.config.base_width},
                   {"depth", params.config.depth},
                   {"seed", params.config.seed}};
    h["layers"] = nlohmann::ordered_json::array();
    std::vector<double> flat;
    for (const auto& l : params.layers) {
        h["layers"].push_back({{"in", l.in}, {"out", l.out}, {"k", l.k}});
        flat.insert(flat.end(), l.weights.begin(), l.weights.end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    h["dtype"] = kDtypeF32;
    detail::write_file(path, h.dump(), detail::encode_payload(flat));
}

inline NetParams read_checkpoint(const std::string& path) {
    auto bytes = detail::read_file(path);
    auto nl = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
    if (nl == bytes.end()) throw ParseError("checkpoint header is not newline-terminated", 0);
    nlohmann::ordered_json h;
    try {
        h = nlohmann::ordered_json::parse(bytes.begin(), nl);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what(), 0);
    }
    if (h.value("magic", "") != kNetMagic) throw ParseError("not a network checkpoint (bad magic)", 0);
    if (h.value("version", 0) != kNetVersion)
        throw ParseError("unsupported checkpoint version " + h["version"].dump(), 0);
    NetConfig cfg;
    try {
        const auto& c = h.at("config");
        cfg.c_in = c.at("c_in").get<int>();
        cfg.c_out = c.at("c_out").get<int>();
        cfg.base_width = c.at("base_width").get<int>();
        cfg.depth = c.at("depth").get<int>();
        cfg.seed = c.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint config: ") + e.what(), 0);
    }
    NetParams p = net_init(cfg);
    if (h.at("layers").size() != p.layers.size()) throw ParseError("checkpoint layer count mismatch", 0);
    const std::size_t offset = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    const std::size_t expected = offset + 4 * p.parameter_count();
    if (bytes.size() != expected) throw TruncationError(path, expected, bytes.size());
    auto values = detail::decode_payload(std::span<const unsigned char>(bytes.data() + offset, bytes.size() - offset));
    std::size_t at = 0;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        const auto& shape = h["layers"][l];
        if (shape.value("in", -1) != layer.in || shape.value("out", -1) != layer.out || shape.value("k", -1) != layer.k)
            throw ParseError("checkpoint layer " + std::to_string(l) + " shape mismatch", 0);
        for (double& w : layer.weights) w = values[at++];
        for (double& b : layer.bias) b = values[at++];
    }
    return p;
}

}  // namespace spectrasweep
