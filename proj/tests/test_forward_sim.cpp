#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace spectrasweep;

namespace {

const LensConfig kLens;
const AcquisitionGeometry kGeom;

SpectralCube single_band(double nm, const Image& img) {
    Volume v(1, img.height(), img.width());
    v.set_image(0, img);
    return SpectralCube(BandGrid({nm}), v);
}

double sobel_energy(const Image& img) {
    double e = 0;
    Image edges = sobel_edges(img);
    for (double v : edges.span()) e += v * v;
    return e;
}

double total_variation(const Image& img) {
    double tv = 0;
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c) {
            if (c + 1 < img.width()) tv += std::abs(img(r, c + 1) - img(r, c));
            if (r + 1 < img.height()) tv += std::abs(img(r + 1, c) - img(r, c));
        }
    return tv;
}

SpectralCube blob_cube(int L, int H, int W, int margin) {
    Volume v(L, H, W);
    for (int b = 0; b < L; ++b)
        for (int r = margin; r < H - margin; ++r)
            for (int c = margin; c < W - margin; ++c)
                v(b, r, c) = 0.3 + 0.2 * std::sin(0.4 * r + b) * std::cos(0.3 * c - b);
    return to_cube(BandGrid::uniform(470.0, 900.0, L), v);
}

}  // namespace

TEST(SimulateFrame, InFocusSingleBandEqualsBand) {
    Image img = testing_support::hashed_image(1, 16, 16);
    auto cube = single_band(600.0, img);
    double z = imaging_distance(kLens, kGeom, 600.0);
    Image frame = simulate_frame(cube, kLens, kGeom, z, SensorResponse::flat(1), NoiseModel{});
    double worst = 0;
    for (std::size_t i = 0; i < img.size(); ++i) worst = std::max(worst, std::abs(frame.data()[i] - img.data()[i]));
    EXPECT_LE(worst, 1e-6);
}

TEST(SimulateFrame, UniformCubeGivesUniformFrame) {
    Volume v(8, 32, 32, 0.4);
    SpectralCube cube(BandGrid::uniform(470.0, 900.0, 8), v);
    for (double z : {16.0, 20.0, 27.5}) {
        Image f = simulate_frame(cube, kLens, kGeom, z, SensorResponse::flat(8), NoiseModel{});
        for (int r = 4; r < 28; ++r)
            for (int c = 4; c < 28; ++c) EXPECT_NEAR(f(r, c), f(16, 16), 1e-9);
        EXPECT_NEAR(f(16, 16), 0.4, 1e-9);
    }
}

TEST(SimulateFrame, OffFocusPointMatchesDenseConvolution) {
    const int n = 41, c0 = 20;
    Image img(n, n);
    img(c0, c0) = 1.0;
    auto cube = single_band(470.0, img);
    double z = imaging_distance(kLens, kGeom, 700.0);
    double r = defocus_radius_px(kLens, kGeom, 470.0, z);
    ASSERT_GT(r, 2.0);
    Image frame = simulate_frame(cube, kLens, kGeom, z, SensorResponse::flat(1), NoiseModel{});

    Image k = psf_kernel(r);
    const int h = k.height() / 2;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double expect = 0;
            for (int sy = 0; sy < n; ++sy)
                for (int sx = 0; sx < n; ++sx) {
                    int dy = y - sy + h, dx = x - sx + h;
                    if (dy >= 0 && dy < k.height() && dx >= 0 && dx < k.width()) expect += k(dy, dx) * img(sy, sx);
                }
            EXPECT_NEAR(frame(y, x), expect, 1e-9);
        }
}

TEST(SimulateFrame, EnergyConservation) {
    // Margin wider than the largest blur radius, so no mass reaches the border.
    auto cube = blob_cube(8, 136, 136, 44);
    std::vector<double> w = {0.05, 0.1, 0.15, 0.2, 0.2, 0.15, 0.1, 0.05};
    SimOptions opt;
    opt.normalize = false;
    for (double z : {15.0, 30.0}) {
        for (const auto& k : band_kernels(cube.bands(), kLens, kGeom, z, PsfModel::Disc)) ASSERT_LT(k.height() / 2, 44);
        Image f = simulate_frame(cube, kLens, kGeom, z, SensorResponse{w}, NoiseModel{}, opt);
        double expect = 0;
        for (int b = 0; b < 8; ++b) expect += w[static_cast<std::size_t>(b)] * image_mean(cube.band(b));
        EXPECT_NEAR(image_mean(f), expect, 1e-6);
    }
}

TEST(SimulateFrame, Linearity) {
    auto x = to_cube(BandGrid::uniform(470.0, 900.0, 4), testing_support::hashed_volume(2, 4, 24, 24));
    auto y = to_cube(BandGrid::uniform(470.0, 900.0, 4), testing_support::hashed_volume(3, 4, 24, 24));
    const double a = 0.3, b = 0.45;
    Volume mix(4, 24, 24);
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = a * x.data().data()[i] + b * y.data().data()[i];
    SpectralCube xy(x.bands(), mix);
    SimOptions opt;
    opt.normalize = false;
    auto resp = SensorResponse::flat(4);
    for (double z : {16.5, 24.0}) {
        Image fx = simulate_frame(x, kLens, kGeom, z, resp, NoiseModel{}, opt);
        Image fy = simulate_frame(y, kLens, kGeom, z, resp, NoiseModel{}, opt);
        Image fxy = simulate_frame(xy, kLens, kGeom, z, resp, NoiseModel{}, opt);
        for (std::size_t i = 0; i < fxy.size(); ++i)
            EXPECT_NEAR(fxy.data()[i], a * fx.data()[i] + b * fy.data()[i], 1e-9);
    }
}

TEST(SimulateFrame, RejectsUnfocusableBandAndOutOfSweepPosition) {
    auto cube = single_band(1500.0, Image(8, 8, 0.1));
    EXPECT_THROW(simulate_frame(cube, kLens, kGeom, 20.0, SensorResponse::flat(1), NoiseModel{}), RangeError);
    auto ok = single_band(600.0, Image(8, 8, 0.1));
    EXPECT_THROW(simulate_frame(ok, kLens, kGeom, 40.0, SensorResponse::flat(1), NoiseModel{}), RangeError);
}

TEST(SimulateStack, SingleFrameMatchesSimulateFrame) {
    auto cube = blob_cube(4, 16, 16, 3);
    FocusSchedule s = reference_schedule(kLens, kGeom);
    s.positions_mm = {21.0};
    auto stack = simulate_stack(cube, kLens, kGeom, s, SensorResponse::flat(4), NoiseModel{});
    ASSERT_EQ(stack.size(), 1);
    EXPECT_EQ(stack.frame(0), simulate_frame(cube, kLens, kGeom, 21.0, SensorResponse::flat(4), NoiseModel{}));
    EXPECT_EQ(stack.lens_positions_mm(), s.positions_mm);
}

TEST(SimulateStack, DeterministicPerSeed) {
    auto cube = blob_cube(8, 16, 16, 3);
    auto s = schedule_for_bands(kLens, kGeom, cube.bands());
    NoiseModel noise{NoiseModel::Kind::PoissonGaussian, 0.01, 500.0, 42};
    auto a = simulate_stack(cube, kLens, kGeom, s, SensorResponse::flat(8), noise);
    auto b = simulate_stack(cube, kLens, kGeom, s, SensorResponse::flat(8), noise);
    EXPECT_EQ(a, b);
    noise.seed = 43;
    EXPECT_NE(a, simulate_stack(cube, kLens, kGeom, s, SensorResponse::flat(8), noise));
}

TEST(SimulateStack, FrameSharpestAtFocusedBand) {
    SceneSpec spec;
    spec.random_shapes = 6;
    spec.seed = 1;
    auto scene = synth(spec);
    auto s = schedule_for_bands(kLens, kGeom, scene.bands());
    for (int b = 0; b < scene.bands_count(); ++b) {
        Volume only(scene.bands_count(), scene.height(), scene.width());
        only.set_image(b, scene.band(b));
        auto stack = simulate_stack(SpectralCube(scene.bands(), only), kLens, kGeom, s,
                                    SensorResponse::flat(scene.bands_count()), NoiseModel{});
        int best = 0;
        for (int k = 1; k < stack.size(); ++k)
            if (sobel_energy(stack.frame(k)) > sobel_energy(stack.frame(best))) best = k;
        EXPECT_EQ(focused_band(s, scene.bands(), best), b);
    }
}

TEST(SimulateStack, TotalVariationFallsAwayFromFocus) {
    Image img(33, 33);
    img(16, 16) = 1.0;
    BandGrid bands = BandGrid::uniform(470.0, 900.0, 8);
    auto s = schedule_for_bands(kLens, kGeom, bands);
    const int band = 3;
    Volume v(8, 33, 33);
    v.set_image(band, img);
    SimOptions opt;
    opt.normalize = false;
    auto stack = simulate_stack(SpectralCube(bands, v), kLens, kGeom, s, SensorResponse::flat(8), NoiseModel{}, opt);
    int focus = bands.size() - 1 - band;
    for (int k = focus + 1; k < stack.size(); ++k)
        EXPECT_LT(total_variation(stack.frame(k)), total_variation(stack.frame(k - 1)));
    for (int k = focus - 1; k >= 0; --k)
        EXPECT_LT(total_variation(stack.frame(k)), total_variation(stack.frame(k + 1)));
}

TEST(SimulateStack, UnalignedFramesCarryMagnification) {
    auto cube = blob_cube(8, 32, 32, 6);
    auto s = schedule_for_bands(kLens, kGeom, cube.bands());
    SimOptions opt;
    opt.emit_unaligned = true;
    auto aligned = simulate_stack(cube, kLens, kGeom, s, SensorResponse::flat(8), NoiseModel{});
    auto raw = simulate_stack(cube, kLens, kGeom, s, SensorResponse::flat(8), NoiseModel{}, opt);
    int mid = s.size() / 2;
    EXPECT_EQ(raw.frame(mid), aligned.frame(mid));
    EXPECT_NE(raw.frame(0), aligned.frame(0));
}

TEST(ApplyNoise, NoneIsIdentity) {
    Image img = testing_support::hashed_image(4, 8, 8);
    EXPECT_EQ(apply_noise(img, NoiseModel{}), img);
}

TEST(ApplyNoise, MonteCarloMean) {
    Image half(100, 100, 0.5);
    NoiseModel g{NoiseModel::Kind::Gaussian, 0.05, 1000.0, 9};
    EXPECT_NEAR(image_mean(apply_noise(half, g)), 0.5, 3 * 0.05 / 100);
    NoiseModel pg{NoiseModel::Kind::PoissonGaussian, 0.0, 1000.0, 9};
    double sigma = std::sqrt(0.5 / 1000.0);
    EXPECT_NEAR(image_mean(apply_noise(half, pg)), 0.5, 3 * sigma / 100);
}

TEST(ApplyNoise, SeededAndClamped) {
    Image img = testing_support::hashed_image(5, 16, 16);
    NoiseModel g{NoiseModel::Kind::Gaussian, 0.5, 1000.0, 1};
    Image a = apply_noise(img, g);
    EXPECT_EQ(a, apply_noise(img, g));
    for (double v : a.span()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_THROW(apply_noise(img, NoiseModel{NoiseModel::Kind::Gaussian, -1.0, 1000.0, 1}), InvariantError);
}
