#include <gtest/gtest.h>
#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "spectrasweep/spectrasweep.hpp"
#include "test_support.hpp"

using namespace spectrasweep;
using testing_support::TempDir;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

Json toy_json() {
    return Json{{"scene", {{"height", 32}, {"width", 32}, {"random_shapes", 5}, {"seed", 4}}},
                {"solver", {{"max_iters", 150}}}};
}

int cli(const std::string& args) {
    std::string cmd = std::string(SPECTRASWEEP_CLI) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

SpectralCube one_disc(double center_nm) {
    SceneSpec s;
    s.height = s.width = 24;
    ShapeSpec d;
    d.kind = ShapeSpec::Kind::Disc;
    d.x = d.y = 12;
    d.radius = 6;
    d.peaks = {{center_nm, 40.0, 1.0}};
    s.shapes = {d};
    return synth(s);
}

}  // namespace

TEST(Synth, ZeroShapesGiveZeroCube) {
    SceneSpec s;
    auto cube = synth(s);
    for (double v : cube.data().span()) EXPECT_EQ(v, 0.0);
}

TEST(Synth, DiscPeaksAtNearestBand) {
    auto cube = one_disc(550.0);
    const auto& nm = cube.bands().wavelengths_nm();
    int nearest = 0, best = 0;
    for (int b = 0; b < cube.bands_count(); ++b) {
        if (std::abs(nm[b] - 550.0) < std::abs(nm[nearest] - 550.0)) nearest = b;
        if (cube(b, 12, 12) > cube(best, 12, 12)) best = b;
    }
    EXPECT_EQ(best, nearest);
    for (int b = 0; b < cube.bands_count(); ++b) EXPECT_EQ(cube(b, 0, 0), 0.0);
}

TEST(Synth, SeedDeterminism) {
    SceneSpec s;
    s.random_shapes = 8;
    s.seed = 3;
    auto a = synth(s), b = synth(s);
    EXPECT_TRUE(std::equal(a.data().span().begin(), a.data().span().end(), b.data().span().begin()));
    s.seed = 4;
    auto c = synth(s);
    EXPECT_FALSE(std::equal(a.data().span().begin(), a.data().span().end(), c.data().span().begin()));
    for (double v : a.data().span()) EXPECT_GE(v, 0.0);
}

TEST(Synth, PeakOutsideBandsRejected) {
    SceneSpec s;
    ShapeSpec r;
    r.width = r.height = 4;
    r.peaks = {{1000.0, 30.0, 1.0}};
    s.shapes = {r};
    EXPECT_THROW(synth(s), InvariantError);
}

TEST(Plot, IdenticalCubesGiveIdenticalColumns) {
    auto cube = one_disc(700.0);
    auto p = plot_signature(cube, cube, 12, 12);
    std::istringstream csv(p.csv);
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "wavelength_nm,truth,prediction");
    int rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        auto a = line.find(','), b = line.rfind(',');
        EXPECT_EQ(line.substr(a + 1, b - a - 1), line.substr(b + 1));
    }
    EXPECT_EQ(rows, cube.bands_count());
    EXPECT_NE(p.svg.find("<svg"), std::string::npos);
    EXPECT_EQ(std::count(p.svg.begin(), p.svg.end(), '<') - std::count(p.svg.begin(), p.svg.end(), '>'), 0);
    std::size_t polylines = 0;
    for (auto at = p.svg.find("<polyline"); at != std::string::npos; at = p.svg.find("<polyline", at + 1)) ++polylines;
    EXPECT_EQ(polylines, 2u);
}

TEST(Plot, OutOfBoundsPixel) {
    auto cube = one_disc(600.0);
    EXPECT_THROW(plot_signature(cube, cube, 24, 0), RangeError);
    EXPECT_THROW(plot_signature(cube, cube, 0, -1), RangeError);
}

TEST(Config, DefaultsRoundTripThroughJson) {
    RunConfig c = parse_config(toy_json());
    Json full = to_json(c);
    EXPECT_EQ(to_json(parse_config(full)), full);
    EXPECT_EQ(c.scene.bands.size(), 8);
    EXPECT_EQ(c.schedule().positions_mm.size(), 8u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    Json j = toy_json();
    j["solver"]["max_iter"] = 10;
    EXPECT_THROW(parse_config(j), ConfigError);
    j = toy_json();
    j["noise"] = {{"kind", "laplace"}};
    EXPECT_THROW(parse_config(j), ConfigError);
    j = toy_json();
    j["reconstruct"] = {{"method", "net"}, {"checkpoint", "/nonexistent/net.ssnet"}};
    EXPECT_THROW(parse_config(j), ConfigError);
    EXPECT_THROW(parse_config_text("{\"scene\": "), ConfigError);
    EXPECT_THROW(parse_config(Json::array()), ConfigError);
}

TEST(Pipeline, WritesEveryArtifact) {
    TempDir dir("pipeline");
    auto a = run_pipeline(parse_config(toy_json()), dir.path());
    for (const auto& p : {a.truth, a.stack, a.preprocessed, a.reconstruction, a.report, a.report_table,
                          a.signature_csv, a.signature_svg, a.manifest})
        EXPECT_TRUE(std::filesystem::exists(p)) << p;
    auto cube = read_cube(a.reconstruction.string());
    EXPECT_EQ(cube.bands_count(), 8);
    Json report = Json::parse(slurp(a.report.string()));
    for (const char* row : {"PSNR (dB)", "SSIM", "L1"})
        for (const char* col : MetricReport::kColumns) EXPECT_TRUE(report["aggregate"][row].contains(col)) << row;
    Json manifest = Json::parse(slurp(a.manifest.string()));
    EXPECT_EQ(manifest["version"], kVersion);
    EXPECT_EQ(manifest["command"], "pipeline");
    EXPECT_EQ(manifest["scene"]["seed"], 4);
}

TEST(Pipeline, ManifestReplayIsBitIdentical) {
    TempDir first("replay_a"), second("replay_b");
    run_pipeline(parse_config(toy_json()), first.path());
    run_pipeline(load_config(first.file("manifest.json")), second.path());
    for (const char* f : {"truth.mscube", "stack.gstack", "preprocessed.mscube", "reconstruction.mscube",
                          "report.json", "report.txt", "signature.csv", "signature.svg", "manifest.json"})
        EXPECT_EQ(slurp(first.file(f)), slurp(second.file(f))) << f;
}

TEST(Pipeline, StageFailureNamesTheStage) {
    TempDir dir("stagefail");
    RunConfig c = parse_config(toy_json());
    c.solver.step_size = 1e12;
    c.solver.momentum = 0.0;
    try {
        run_pipeline(c, dir.path());
        FAIL() << "expected a stage error";
    } catch (const StageError& e) {
        EXPECT_NE(std::string(e.what()).find("reconstruct"), std::string::npos) << e.what();
    }
}

TEST(Cli, SubcommandsAndExitCodes) {
    TempDir dir("cli");
    write_text(dir.file("toy.json"), toy_json().dump());
    write_text(dir.file("bad.json"), "{\"scene\": {\"hieght\": 3}}");
    const std::string cfg = " --config " + dir.file("toy.json");

    EXPECT_EQ(cli("synth" + cfg + " --out " + dir.file("t.mscube")), 0);
    EXPECT_TRUE(std::filesystem::exists(dir.file("t.mscube.manifest.json")));
    EXPECT_EQ(cli("simulate" + cfg + " --in " + dir.file("t.mscube") + " --out " + dir.file("s.gstack")), 0);
    EXPECT_EQ(cli("preprocess" + cfg + " --in " + dir.file("s.gstack") + " --out " + dir.file("p.mscube")), 0);
    EXPECT_EQ(cli("reconstruct" + cfg + " --in " + dir.file("s.gstack") + " --out " + dir.file("r.mscube")), 0);
    EXPECT_EQ(cli("eval --in " + dir.file("r.mscube") + " --in " + dir.file("t.mscube") + " --out " +
                  dir.file("e.json")),
              0);
    EXPECT_EQ(cli("plot --in " + dir.file("r.mscube") + " --in " + dir.file("t.mscube") + " --pixel 3 4 --out " +
                  dir.file("sig")),
              0);
    EXPECT_NE(slurp(dir.file("sig.svg")).find("pixel (3, 4)"), std::string::npos);

    write_text(dir.file("data.json"), Json::array({{{"input", "p.mscube"}, {"target", "t.mscube"}}}).dump());
    write_text(dir.file("train.json"), Json{{"scene", {{"height", 32}, {"width", 32}}},
                                            {"train", {{"epochs", 2}}}}
                                           .dump());
    EXPECT_EQ(cli("train --config " + dir.file("train.json") + " --in " + dir.file("data.json") + " --out " +
                  dir.file("n.ssnet")),
              0);
    EXPECT_TRUE(std::filesystem::exists(dir.file("n.ssnet.loss.csv")));
    EXPECT_EQ(cli("reconstruct" + cfg + " --method net --checkpoint " + dir.file("n.ssnet") + " --in " +
                  dir.file("s.gstack") + " --out " + dir.file("rn.mscube")),
              0);

    EXPECT_EQ(cli("synth --config " + dir.file("bad.json") + " --out " + dir.file("x.mscube")), 2);
    EXPECT_EQ(cli("synth --config " + dir.file("missing.json") + " --out " + dir.file("x.mscube")), 2);
    EXPECT_EQ(cli("frobnicate"), 2);
    EXPECT_EQ(cli("register" + cfg + " --in " + dir.file("t.mscube") + " --in " + dir.file("s.gstack") + " --out " +
                  dir.file("x.mscube")),
              3);
    EXPECT_EQ(cli("reconstruct" + cfg + " --method magic --in " + dir.file("s.gstack") + " --out " +
                  dir.file("x.mscube")),
              2);
    EXPECT_EQ(cli("simulate" + cfg + " --in " + dir.file("nope.mscube") + " --out " + dir.file("x.gstack")), 3);
    EXPECT_EQ(cli("plot --in " + dir.file("r.mscube") + " --in " + dir.file("t.mscube") + " --pixel 99 0 --out " +
                  dir.file("x")),
              2);
    EXPECT_EQ(cli("plot --in " + dir.file("r.mscube") + " --in " + dir.file("t.mscube") + " --pixel 40 0 --out " +
                  dir.file("x")),
              3);
}

TEST(Cli, PipelineReplayFromManifest) {
    TempDir dir("cli_replay");
    write_text(dir.file("toy.json"), toy_json().dump());
    ASSERT_EQ(cli("pipeline --config " + dir.file("toy.json") + " --out " + dir.file("a")), 0);
    ASSERT_EQ(cli("pipeline --config " + dir.file("a/manifest.json") + " --out " + dir.file("b")), 0);
    EXPECT_EQ(slurp(dir.file("a/reconstruction.mscube")), slurp(dir.file("b/reconstruction.mscube")));
    EXPECT_EQ(slurp(dir.file("a/report.json")), slurp(dir.file("b/report.json")));
}
