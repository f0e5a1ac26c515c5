#pragma once

// End-to-end run: synth -> simulate -> preprocess -> reconstruct -> eval, with every artifact
// and a replayable manifest written to one directory.

#include <filesystem>
#include <functional>
#include <string>
#include <utility>

#include "json.hpp"
#include "spectrasweep/config.hpp"
#include "spectrasweep/error.hpp"
#include "spectrasweep/forward_sim.hpp"
#include "spectrasweep/io.hpp"
#include "spectrasweep/metrics.hpp"
#include "spectrasweep/plot.hpp"
#include "spectrasweep/preprocess.hpp"
#include "spectrasweep/scene.hpp"
#include "spectrasweep/train.hpp"
#include "spectrasweep/variational.hpp"

namespace spectrasweep {

inline constexpr const char* kVersion = "0.1.0";

/// Runs `fn`, rethrowing any library error as StageError(stage, cause).
template <class Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

/// Labels for preprocessed channels: the channel index.
inline std::vector<double> channel_labels(int channels) {
    std::vector<double> l(static_cast<std::size_t>(channels));
    for (int i = 0; i < channels; ++i) l[static_cast<std::size_t>(i)] = i;
    return l;
}

inline GrayscaleStack simulate_from_config(const SpectralCube& cube, const RunConfig& c) {
    return simulate_stack(cube, c.lens, c.geometry, c.schedule(), c.response(), c.noise, c.simulation);
}

/// Reconstruction with the configured method. The network path preprocesses the stack itself.
inline SpectralCube reconstruct_from_config(const GrayscaleStack& stack, const RunConfig& c) {
    if (c.method == ReconstructMethod::Variational)
        return variational_reconstruct(stack, c.scene.bands, c.lens, c.geometry, c.schedule(), c.response(), c.solver);
    NetParams params = read_checkpoint(c.checkpoint);
    return predict(params, preprocess_pipeline(stack, c.preprocess), c.scene.bands);
}

struct PipelineArtifacts {
    std::filesystem::path truth;
    std::filesystem::path stack;
    std::filesystem::path preprocessed;
    std::filesystem::path reconstruction;
    std::filesystem::path report;
    std::filesystem::path report_table;
    std::filesystem::path signature_csv;
    std::filesystem::path signature_svg;
    std::filesystem::path manifest;
    MetricReport metrics;
};

inline Json manifest_json(const RunConfig& config, const std::string& command, const Json& artifacts) {
    Json j = to_json(config);
    j["version"] = kVersion;
    j["command"] = command;
    j["artifacts"] = artifacts;
    return j;
}

inline PipelineArtifacts run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir) {
    validate(config);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError(out_dir.string(), "cannot create output directory: " + ec.message());

    PipelineArtifacts a;
    a.truth = out_dir / "truth.mscube";
    a.stack = out_dir / "stack.gstack";
    a.preprocessed = out_dir / "preprocessed.mscube";
    a.reconstruction = out_dir / "reconstruction.mscube";
    a.report = out_dir / "report.json";
    a.report_table = out_dir / "report.txt";
    a.signature_csv = out_dir / "signature.csv";
    a.signature_svg = out_dir / "signature.svg";
    a.manifest = out_dir / "manifest.json";

    SpectralCube truth = run_stage("synth", [&] {
        auto cube = synth(config.scene);
        write_cube(cube, a.truth.string());
        return cube;
    });
    GrayscaleStack stack = run_stage("simulate", [&] {
        auto s = simulate_from_config(truth, config);
        write_stack(s, a.stack.string());
        return s;
    });
    run_stage("preprocess", [&] {
        Volume t = preprocess_pipeline(stack, config.preprocess);
        write_tensor(t, channel_labels(t.channels()), a.preprocessed.string());
    });
    SpectralCube recon = run_stage("reconstruct", [&] {
        auto cube = reconstruct_from_config(stack, config);
        write_cube(cube, a.reconstruction.string());
        return cube;
    });
    a.metrics = run_stage("eval", [&] {
        auto report = evaluate(recon, truth);
        write_text(a.report.string(), report_json(report).dump(2) + "\n");
        write_text(a.report_table.string(), report_table(report));
        return report;
    });
    run_stage("plot", [&] {
        auto [x, y] = config.plot_pixel();
        auto plot = plot_signature(recon, truth, x, y);
        write_text(a.signature_csv.string(), plot.csv);
        write_text(a.signature_svg.string(), plot.svg);
    });

    Json artifacts = {{"truth", a.truth.filename().string()},
                      {"stack", a.stack.filename().string()},
                      {"preprocessed", a.preprocessed.filename().string()},
                      {"reconstruction", a.reconstruction.filename().string()},
                      {"report", a.report.filename().string()},
                      {"report_table", a.report_table.filename().string()},
                      {"signature_csv", a.signature_csv.filename().string()},
                      {"signature_svg", a.signature_svg.filename().string()}};
    write_text(a.manifest.string(), manifest_json(config, "pipeline", artifacts).dump(2) + "\n");
    return a;
}

}  // namespace spectrasweep
