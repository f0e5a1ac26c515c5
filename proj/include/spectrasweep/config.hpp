#pragma once

// Run configuration: one JSON document covering every stage. Unknown keys are rejected so that
// typos surface as errors instead of silently falling back to defaults. to_json emits the fully
// resolved configuration, which parses back to an identical RunConfig.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spectrasweep/error.hpp"
#include "spectrasweep/forward_sim.hpp"
#include "spectrasweep/losses.hpp"
#include "spectrasweep/net.hpp"
#include "spectrasweep/optics.hpp"
#include "spectrasweep/preprocess.hpp"
#include "spectrasweep/registration.hpp"
#include "spectrasweep/scene.hpp"
#include "spectrasweep/train.hpp"
#include "spectrasweep/variational.hpp"

namespace spectrasweep {

using Json = nlohmann::ordered_json;

enum class ReconstructMethod { Variational, Net };

struct RunConfig {
    SceneSpec scene{64, 64, BandGrid::uniform(470.0, 900.0, 8), {}, 6, 1};
    LensConfig lens;
    AcquisitionGeometry geometry;
    /// "matched": one position per band; "explicit": use `positions_mm`.
    std::string schedule_mode = "matched";
    std::vector<double> positions_mm;
    /// Empty means a flat response of 1/L per band.
    std::vector<double> response_weights;
    NoiseModel noise;
    SimOptions simulation;
    PreprocessOptions preprocess{false, false, false, {}};
    LossWeights weights;
    SolverConfig solver;
    NetConfig net;
    TrainConfig train;
    RegistrationParams registration;
    ReconstructMethod method = ReconstructMethod::Variational;
    std::string checkpoint;
    /// Pixel (x, y) for the signature plot; negative means the image centre.
    int plot_x = -1;
    int plot_y = -1;

    SensorResponse response() const {
        return response_weights.empty() ? SensorResponse::flat(scene.bands.size()) : SensorResponse{response_weights};
    }

    FocusSchedule schedule() const {
        if (schedule_mode == "matched") return schedule_for_bands(lens, geometry, scene.bands);
        FocusSchedule s = reference_schedule(lens, geometry);
        s.positions_mm = positions_mm;
        s.validate();
        return s;
    }

    std::pair<int, int> plot_pixel() const {
        return {plot_x < 0 ? scene.width / 2 : plot_x, plot_y < 0 ? scene.height / 2 : plot_y};
    }
};

namespace detail {

// Walks a JSON object in either direction with one field list per struct.
class Binder {
public:
    Binder(Json& j, bool reading, std::string path) : j_(j), reading_(reading), path_(std::move(path)) {
        if (reading_ && !j_.is_object()) fail("expected an object");
    }

    bool reading() const noexcept { return reading_; }
    const std::string& path() const noexcept { return path_; }

    template <class T>
    void operator()(const char* key, T& value) {
        seen_.insert(key);
        if (!reading_) {
            j_[key] = value;
            return;
        }
        if (!j_.contains(key)) return;
        try {
            value = j_[key].template get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(std::string("bad value for \"") + key + "\": " + j_[key].dump());
        }
    }

    template <class E>
    void choice(const char* key, E& value, const std::vector<std::pair<const char*, E>>& names) {
        seen_.insert(key);
        if (!reading_) {
            for (const auto& [n, e] : names)
                if (e == value) j_[key] = n;
            return;
        }
        if (!j_.contains(key)) return;
        if (j_[key].is_string())
            for (const auto& [n, e] : names)
                if (j_[key] == n) {
                    value = e;
                    return;
                }
        std::string allowed;
        for (const auto& [n, e] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
        fail(std::string("\"") + key + "\" must be one of " + allowed + ", got " + j_[key].dump());
    }

    template <class F>
    void object(const char* key, F&& fn) {
        seen_.insert(key);
        if (!reading_) {
            Json sub = Json::object();
            Binder b(sub, false, path_ + "/" + key);
            fn(b);
            j_[key] = std::move(sub);
            return;
        }
        if (!j_.contains(key)) return;
        Binder b(j_[key], true, path_ + "/" + key);
        fn(b);
        b.finish();
    }

    /// Marks a key as handled by custom code.
    void accept(const char* key) { seen_.insert(key); }
    Json& raw() noexcept { return j_; }

    void finish() const {
        if (!reading_) return;
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) fail("unknown key \"" + item.key() + "\"");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw ConfigError("config " + (path_.empty() ? std::string("/") : path_) + ": " + what);
    }

private:
    Json& j_;
    bool reading_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void bind_peak(Binder& b, SpectralPeak& p) {
    b("center_nm", p.center_nm);
    b("width_nm", p.width_nm);
    b("amplitude", p.amplitude);
}

inline void bind_shape(Binder& b, ShapeSpec& s) {
    b.choice("kind", s.kind,
             {{"rectangle", ShapeSpec::Kind::Rectangle}, {"disc", ShapeSpec::Kind::Disc},
              {"gradient", ShapeSpec::Kind::Gradient}});
    b("x", s.x);
    b("y", s.y);
    b("width", s.width);
    b("height", s.height);
    b("radius", s.radius);
    b.accept("peaks");
    Json& j = b.raw();
    if (!b.reading()) {
        j["peaks"] = Json::array();
        for (auto& p : s.peaks) {
            Json e = Json::object();
            Binder pb(e, false, "");
            bind_peak(pb, p);
            j["peaks"].push_back(std::move(e));
        }
    } else if (j.contains("peaks")) {
        if (!j["peaks"].is_array()) b.fail("\"peaks\" must be an array");
        s.peaks.clear();
        for (std::size_t i = 0; i < j["peaks"].size(); ++i) {
            SpectralPeak p;
            Binder pb(j["peaks"][i], true, b.path() + "/peaks/" + std::to_string(i));
            bind_peak(pb, p);
            pb.finish();
            s.peaks.push_back(p);
        }
    }
}

inline void bind_scene(Binder& b, SceneSpec& s) {
    b("height", s.height);
    b("width", s.width);
    b("random_shapes", s.random_shapes);
    b("seed", s.seed);
    b.accept("bands");
    b.accept("shapes");
    Json& j = b.raw();
    if (!b.reading()) {
        j["bands"] = s.bands.wavelengths_nm();
        j["shapes"] = Json::array();
        for (auto& sh : s.shapes) {
            Json e = Json::object();
            Binder sb(e, false, "");
            bind_shape(sb, sh);
            j["shapes"].push_back(std::move(e));
        }
        return;
    }
    try {
        if (j.contains("bands")) {
            const Json& bands = j["bands"];
            if (bands.is_array()) {
                s.bands = BandGrid(bands.get<std::vector<double>>());
            } else if (bands.is_object()) {
                for (const auto& item : bands.items())
                    if (item.key() != "min_nm" && item.key() != "max_nm" && item.key() != "count")
                        b.fail("unknown key \"bands/" + item.key() + "\"");
                s.bands = BandGrid::uniform(bands.at("min_nm").get<double>(), bands.at("max_nm").get<double>(),
                                            bands.at("count").get<int>());
            } else {
                b.fail("\"bands\" must be a wavelength list or {min_nm, max_nm, count}");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        b.fail(std::string("bad \"bands\": ") + e.what());
    } catch (const InvariantError& e) {
        b.fail(std::string("bad \"bands\": ") + e.what());
    }
    if (j.contains("shapes")) {
        if (!j["shapes"].is_array()) b.fail("\"shapes\" must be an array");
        s.shapes.clear();
        for (std::size_t i = 0; i < j["shapes"].size(); ++i) {
            ShapeSpec sh;
            Binder sb(j["shapes"][i], true, b.path() + "/shapes/" + std::to_string(i));
            bind_shape(sb, sh);
            sb.finish();
            s.shapes.push_back(std::move(sh));
        }
    }
}

inline void bind_harris(Binder& b, HarrisParams& h) {
    b("k", h.k);
    b("window_sigma", h.window_sigma);
    b("nms_radius", h.nms_radius);
}

inline void bind_augment(Binder& b, AugmentConfig& a) {
    b("translate", a.translate);
    b("max_shift_px", a.max_shift_px);
    b("rotate", a.rotate);
    b("max_rotation_deg", a.max_rotation_deg);
    b("crop", a.crop);
    b("min_crop_scale", a.min_crop_scale);
    b("flip_horizontal", a.flip_horizontal);
    b("flip_vertical", a.flip_vertical);
    b("seed", a.seed);
}

inline void bind_run(Binder& b, RunConfig& c) {
    b.object("scene", [&](Binder& s) { bind_scene(s, c.scene); });
    b.object("lens", [&](Binder& s) {
        s("n0", c.lens.n0);
        s("h_nm", c.lens.h_nm);
        s("lambda0_nm", c.lens.lambda0_nm);
        s("f0_mm", c.lens.f0_mm);
        s("aperture_mm", c.lens.aperture_mm);
        s("m", c.lens.m);
    });
    b.object("geometry", [&](Binder& s) {
        s("u_mm", c.geometry.u_mm);
        s("z0_mm", c.geometry.z0_mm);
        s("z1_mm", c.geometry.z1_mm);
        s("pixel_pitch_um", c.geometry.pixel_pitch_um);
    });
    b.object("schedule", [&](Binder& s) {
        s("mode", c.schedule_mode);
        s("positions_mm", c.positions_mm);
    });
    b("response_weights", c.response_weights);
    b.object("noise", [&](Binder& s) {
        s.choice("kind", c.noise.kind,
                 {{"none", NoiseModel::Kind::None},
                  {"gaussian", NoiseModel::Kind::Gaussian},
                  {"poisson_gaussian", NoiseModel::Kind::PoissonGaussian}});
        s("sigma", c.noise.sigma);
        s("photon_scale", c.noise.photon_scale);
        s("seed", c.noise.seed);
    });
    b.object("simulation", [&](Binder& s) {
        s.choice("psf", c.simulation.psf, {{"disc", PsfModel::Disc}, {"gaussian", PsfModel::Gaussian}});
        s("emit_unaligned", c.simulation.emit_unaligned);
        s("reference_z_mm", c.simulation.reference_z_mm);
        s("normalize", c.simulation.normalize);
    });
    b.object("preprocess", [&](Binder& s) {
        s("align", c.preprocess.align);
        s("signed_gradients", c.preprocess.signed_gradients);
        s("raw_frames", c.preprocess.raw_frames);
        s.object("alignment", [&](Binder& a) {
            a("max_corners", c.preprocess.alignment.max_corners);
            a("quality", c.preprocess.alignment.quality);
            a("refine_iters", c.preprocess.alignment.refine_iters);
            a("outlier_px", c.preprocess.alignment.outlier_px);
            a.object("harris", [&](Binder& h) { bind_harris(h, c.preprocess.alignment.harris); });
            a.object("match", [&](Binder& m) {
                m("patch", c.preprocess.alignment.match.patch);
                m("max_dist_px", c.preprocess.alignment.match.max_dist_px);
                m("min_ncc", c.preprocess.alignment.match.min_ncc);
            });
        });
    });
    b.object("weights", [&](Binder& s) {
        s("lambda_tv", c.weights.lambda_tv);
        s("gamma_tvs", c.weights.gamma_tvs);
        s("lambda_ssim", c.weights.lambda_ssim);
        s("tv_on_residual", c.weights.tv_on_residual);
    });
    b.object("solver", [&](Binder& s) {
        s("step_size", c.solver.step_size);
        s("momentum", c.solver.momentum);
        s("max_iters", c.solver.max_iters);
        s("grad_tol", c.solver.grad_tol);
        s("lambda_tv", c.solver.weights.lambda_tv);
        s("gamma_tvs", c.solver.weights.gamma_tvs);
        s("max_rejections", c.solver.max_rejections);
    });
    b.object("net", [&](Binder& s) {
        s("c_in", c.net.c_in);
        s("c_out", c.net.c_out);
        s("base_width", c.net.base_width);
        s("depth", c.net.depth);
        s("seed", c.net.seed);
    });
    b.object("train", [&](Binder& s) {
        s("epochs", c.train.epochs);
        s("learning_rate", c.train.learning_rate);
        s("seed", c.train.seed);
        s("shuffle", c.train.shuffle);
        s.object("augment", [&](Binder& a) { bind_augment(a, c.train.augment); });
    });
    b.object("registration", [&](Binder& s) {
        s("max_features", c.registration.max_features);
        s("min_features", c.registration.min_features);
        s("describe_sigma", c.registration.describe_sigma);
        s("cross_check", c.registration.cross_check);
        s("ransac_threshold_px", c.registration.ransac_threshold_px);
        s("ransac_max_iters", c.registration.ransac_max_iters);
        s("seed", c.registration.seed);
    });
    b.object("reconstruct", [&](Binder& s) {
        s.choice("method", c.method, {{"variational", ReconstructMethod::Variational}, {"net", ReconstructMethod::Net}});
        s("checkpoint", c.checkpoint);
    });
    b.object("plot", [&](Binder& s) {
        s("x", c.plot_x);
        s("y", c.plot_y);
    });
}

}  // namespace detail

/// Top-level keys written into manifests next to the configuration; ignored when parsing.
inline const std::set<std::string>& manifest_only_keys() {
    static const std::set<std::string> keys = {"version", "command", "artifacts"};
    return keys;
}

/// Checks cross-field preconditions. Throws ConfigError.
inline void validate(const RunConfig& c) {
    try {
        c.scene.validate();
        c.lens.validate();
        c.geometry.validate();
        c.response().validate(c.scene.bands.size());
        c.noise.validate();
        c.weights.validate();
        c.solver.validate();
        c.net.validate();
        c.train.validate();
        if (c.schedule_mode != "matched" && c.schedule_mode != "explicit")
            throw InvariantError("schedule mode must be \"matched\" or \"explicit\"");
        (void)c.schedule();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.method == ReconstructMethod::Net) {
        if (c.checkpoint.empty()) throw ConfigError("config: reconstruct.method \"net\" requires reconstruct.checkpoint");
        if (!std::filesystem::exists(c.checkpoint))
            throw ConfigError("config: checkpoint file " + c.checkpoint + " does not exist");
    }
    auto [px, py] = c.plot_pixel();
    if (px >= c.scene.width || py >= c.scene.height) throw ConfigError("config: plot pixel outside the image");
}

inline RunConfig parse_config(Json j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (const auto& k : manifest_only_keys()) j.erase(k);
    RunConfig c;
    detail::Binder b(j, true, "");
    detail::bind_run(b, c);
    b.finish();
    c.geometry.height = c.scene.height;
    c.geometry.width = c.scene.width;
    validate(c);
    return c;
}

inline RunConfig parse_config_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    return parse_config(std::move(j));
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return parse_config_text(text);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Fully resolved configuration, including every default.
inline Json to_json(const RunConfig& config) {
    RunConfig c = config;
    Json j = Json::object();
    detail::Binder b(j, false, "");
    detail::bind_run(b, c);
    return j;
}

}  // namespace spectrasweep
