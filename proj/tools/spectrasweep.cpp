// spectrasweep: command-line front end for the focal-sweep imaging pipeline.
//
//   spectrasweep <subcommand> [--config run.json] [--in PATH]... [--out PATH]
//
// Exit status: 0 on success, 2 on configuration or usage errors, 3 on any other failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spectrasweep/spectrasweep.hpp"

namespace fs = std::filesystem;
using namespace spectrasweep;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Options {
    std::string config;
    std::vector<std::string> in;
    std::string out;
    std::string method;
    std::string checkpoint;
    int frame = -1;
    std::vector<int> pixel;
};

RunConfig load(const Options& o) {
    RunConfig c = o.config.empty() ? parse_config(Json::object()) : load_config(o.config);
    if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
    if (!o.method.empty()) {
        if (o.method == "variational")
            c.method = ReconstructMethod::Variational;
        else if (o.method == "net")
            c.method = ReconstructMethod::Net;
        else
            throw ConfigError("--method must be variational or net");
    }
    if (o.pixel.size() == 2) {
        c.plot_x = o.pixel[0];
        c.plot_y = o.pixel[1];
    }
    validate(c);
    return c;
}

void need_inputs(const Options& o, std::size_t n, const char* what) {
    if (o.in.size() != n) throw ConfigError(std::string("expected ") + what);
    if (o.out.empty()) throw ConfigError("--out is required");
}

void write_manifest(const RunConfig& c, const std::string& command, const Options& o, const Json& extra = {}) {
    Json artifacts = {{"inputs", o.in}, {"output", o.out}};
    if (!extra.is_null()) artifacts["details"] = extra;
    write_text(o.out + ".manifest.json", manifest_json(c, command, artifacts).dump(2) + "\n");
}

std::string resolve_relative(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? p : (base / path).string();
}

int run(const std::string& cmd, const Options& o) {
    RunConfig c = load(o);
    if (cmd == "synth") {
        need_inputs(o, 0, "no --in for synth");
        write_cube(run_stage("synth", [&] { return synth(c.scene); }), o.out);
    } else if (cmd == "simulate") {
        need_inputs(o, 1, "--in <cube>");
        auto cube = read_cube(o.in[0]);
        if (cube.height() != c.geometry.height || cube.width() != c.geometry.width) {
            c.scene.height = c.geometry.height = cube.height();
            c.scene.width = c.geometry.width = cube.width();
        }
        if (cube.bands().wavelengths_nm() != c.scene.bands.wavelengths_nm()) c.scene.bands = cube.bands();
        write_stack(run_stage("simulate", [&] { return simulate_from_config(cube, c); }), o.out);
    } else if (cmd == "preprocess") {
        need_inputs(o, 1, "--in <stack>");
        auto stack = read_stack(o.in[0]);
        Volume t = run_stage("preprocess", [&] { return preprocess_pipeline(stack, c.preprocess); });
        write_tensor(t, channel_labels(t.channels()), o.out);
    } else if (cmd == "register") {
        need_inputs(o, 2, "--in <cube> --in <stack>");
        auto cube = read_cube(o.in[0]);
        auto stack = read_stack(o.in[1]);
        int k = o.frame < 0 ? stack.size() / 2 : o.frame;
        if (k >= stack.size()) throw ConfigError("--frame outside the stack");
        auto r = register_label(cube, stack.frame(k), c.registration);
        write_cube(r.cube, o.out);
        Json d = {{"frame", k},
                  {"features_cube", r.diagnostics.features_cube},
                  {"features_frame", r.diagnostics.features_frame},
                  {"matches", r.diagnostics.matches},
                  {"inliers", r.diagnostics.inliers},
                  {"mean_reprojection_px", r.diagnostics.mean_reprojection_px}};
        std::cout << d.dump(2) << "\n";
        write_manifest(c, cmd, o, d);
        return 0;
    } else if (cmd == "reconstruct") {
        need_inputs(o, 1, "--in <stack>");
        auto stack = read_stack(o.in[0]);
        c.scene.height = c.geometry.height = stack.height();
        c.scene.width = c.geometry.width = stack.width();
        write_cube(run_stage("reconstruct", [&] { return reconstruct_from_config(stack, c); }), o.out);
    } else if (cmd == "train") {
        need_inputs(o, 1, "--in <dataset.json>");
        std::ifstream f(o.in[0]);
        if (!f) throw IoError(o.in[0], "cannot open dataset manifest");
        Json list;
        try {
            list = Json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(o.in[0] + ": malformed dataset manifest: " + e.what());
        }
        if (!list.is_array() || list.empty()) throw ConfigError(o.in[0] + ": dataset must be a non-empty JSON list");
        fs::path base = fs::path(o.in[0]).parent_path();
        std::vector<TrainingPair> data;
        BandGrid bands = c.scene.bands;
        for (const auto& e : list) {
            if (!e.is_object() || !e.contains("input") || !e.contains("target"))
                throw ConfigError(o.in[0] + ": every entry needs \"input\" and \"target\"");
            auto input = read_tensor(resolve_relative(base, e["input"].get<std::string>()));
            auto target = read_cube(resolve_relative(base, e["target"].get<std::string>()));
            bands = target.bands();
            data.push_back({std::move(input.tensor), target.data()});
        }
        NetConfig nc = c.net;
        nc.c_in = data.front().input.channels();
        nc.c_out = data.front().target.channels();
        auto res = run_stage("train", [&] {
            return train(data, nc, c.weights, RGBProjection::cie_default(bands), c.train);
        });
        write_checkpoint(res.params, o.out);
        std::string csv = "epoch,loss\n";
        for (std::size_t i = 0; i < res.loss_curve.size(); ++i)
            csv += std::to_string(i + 1) + "," + Json(res.loss_curve[i]).dump() + "\n";
        write_text(o.out + ".loss.csv", csv);
        c.net = nc;
        write_manifest(c, cmd, o, {{"final_loss", res.loss_curve.back()}});
        return 0;
    } else if (cmd == "eval") {
        if (o.in.empty() || o.in.size() % 2) throw ConfigError("eval expects --in <pred> --in <truth> pairs");
        if (o.out.empty()) throw ConfigError("--out is required");
        std::vector<SpectralCube> pred, truth;
        for (std::size_t i = 0; i < o.in.size(); i += 2) {
            pred.push_back(read_cube(o.in[i]));
            truth.push_back(read_cube(o.in[i + 1]));
        }
        auto report = run_stage("eval", [&] { return evaluate(pred, truth); });
        write_text(o.out, report_json(report).dump(2) + "\n");
        std::cout << report_table(report);
    } else if (cmd == "plot") {
        need_inputs(o, 2, "--in <pred> --in <truth>");
        auto pred = read_cube(o.in[0]);
        auto truth = read_cube(o.in[1]);
        int x = o.pixel.size() == 2 ? o.pixel[0] : truth.width() / 2;
        int y = o.pixel.size() == 2 ? o.pixel[1] : truth.height() / 2;
        auto p = run_stage("plot", [&] { return plot_signature(pred, truth, x, y); });
        write_text(o.out + ".csv", p.csv);
        write_text(o.out + ".svg", p.svg);
    } else if (cmd == "pipeline") {
        if (o.out.empty()) throw ConfigError("--out <directory> is required");
        auto a = run_pipeline(c, o.out);
        std::cout << report_table(a.metrics);
        return 0;
    }
    write_manifest(c, cmd, o);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Focal-sweep multispectral imaging pipeline"};
    app.require_subcommand(1);
    Options o;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "Generate a synthetic multispectral cube"},
        {"simulate", "Render the grayscale focal-sweep stack of a cube"},
        {"preprocess", "Align, edge-filter and difference a stack"},
        {"register", "Register a cube onto a grayscale frame"},
        {"reconstruct", "Recover a cube from a stack"},
        {"train", "Train the network on a dataset manifest"},
        {"eval", "Compare predicted and reference cubes"},
        {"plot", "Plot a pixel's spectral signature"},
        {"pipeline", "Run synth, simulate, preprocess, reconstruct and eval"}};
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--in", o.in, "Input file(s)");
        sub->add_option("--out", o.out, "Output file or directory");
        if (name == "reconstruct") {
            sub->add_option("--method", o.method, "variational or net");
            sub->add_option("--checkpoint", o.checkpoint, "Network checkpoint for --method net");
        }
        if (name == "register") sub->add_option("--frame", o.frame, "Stack frame index (default: middle)");
        if (name == "plot") sub->add_option("--pixel", o.pixel, "Pixel x y")->expected(2);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        return run(cmd, o);
    } catch (const ConfigError& e) {
        std::cerr << "spectrasweep " << cmd << ": " << e.what() << "\n";
        return kExitConfig;
    } catch (const StageError& e) {
        std::cerr << "spectrasweep " << cmd << ": stage " << e.what() << "\n";
        return kExitStage;
    } catch (const std::exception& e) {
        std::cerr << "spectrasweep " << cmd << ": " << e.what() << "\n";
        return kExitStage;
    }
}
