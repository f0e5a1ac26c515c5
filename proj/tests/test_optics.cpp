#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "oracle_values.hpp"
#include "test_support.hpp"

using namespace spectrasweep;

namespace {

LensConfig lens_550() {
    LensConfig l;
    l.lambda0_nm = 550.0;
    l.f0_mm = 100.0;
    return l;
}

}  // namespace

TEST(PhaseShift, ZeroHeightGivesZero) {
    LensConfig l;
    l.h_nm = 0.0;
    EXPECT_EQ(phase_shift(l, 550.0), 0.0);
}

TEST(PhaseShift, HalfWaveHeightGivesPi) {
    LensConfig l;
    l.h_nm = 600.0 / (2.0 * l.n0);
    EXPECT_NEAR(phase_shift(l, 600.0), std::numbers::pi, 1e-12);
}

TEST(PhaseShift, DirectSubstitution) {
    LensConfig l;
    l.n0 = 1.5;
    l.h_nm = 550.0;
    EXPECT_NEAR(phase_shift(l, 550.0), 3.0 * std::numbers::pi, 1e-12);
    EXPECT_THROW(phase_shift(l, 0.0), DomainError);
}

TEST(FocalLength, ReferenceAndHalving) {
    LensConfig l = lens_550();
    EXPECT_DOUBLE_EQ(focal_length(l, 550.0), 100.0);
    EXPECT_NEAR(focal_length(l, 1100.0), 50.0, 1e-12);
    EXPECT_NEAR(focal_length(l, 470.0), oracle::kFocal470, 1e-9);
    EXPECT_THROW(focal_length(l, -1.0), DomainError);
}

TEST(FocalLength, GeneralOrderRatio) {
    EXPECT_DOUBLE_EQ(focal_ratio(1, 1100.0, 1, 550.0), 2.0);
    EXPECT_DOUBLE_EQ(focal_ratio(2, 550.0, 1, 550.0), 2.0);
    EXPECT_THROW(focal_ratio(0, 550.0, 1, 550.0), DomainError);
}

TEST(FocusLaw, ReferencePointAndLinearFrequency) {
    FocusSchedule s{100.0, 685.0, {}};
    EXPECT_DOUBLE_EQ(focused_wavelength(s, 100.0), 685.0);
    EXPECT_NEAR(focused_wavelength(s, 110.0), 685.0 / 1.1, 1e-12);
    EXPECT_NEAR(focused_wavelength(s, 145.7446809), oracle::kLambdaAtZ, 1e-9);
    EXPECT_NEAR(focused_wavelength(s, 145.7446809), 470.0, 1e-6);
    EXPECT_DOUBLE_EQ(position_for_wavelength(s, 685.0), 100.0);
    EXPECT_NEAR(position_for_wavelength(s, 900.0), oracle::kZ900, 1e-12);
    EXPECT_THROW(focused_wavelength(s, 0.0), DomainError);
    EXPECT_THROW(position_for_wavelength(s, -5.0), DomainError);
}

TEST(FocusLaw, PropertiesOverRandomDraws) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> z0(5.0, 200.0), lam(300.0, 1200.0), alpha(0.2, 5.0);
    for (int i = 0; i < 1000; ++i) {
        LensConfig l;
        l.f0_mm = z0(rng);
        l.lambda0_nm = lam(rng);
        double x = lam(rng);
        EXPECT_NEAR(focal_length(l, x) * x / (l.f0_mm * l.lambda0_nm), 1.0, 1e-12);
        FocusSchedule s{z0(rng), lam(rng), {}};
        double back = focused_wavelength(s, position_for_wavelength(s, x));
        EXPECT_LE(std::abs(back - x) / x, 1e-12);
        double z = z0(rng), a = alpha(rng);
        double ratio = focused_wavelength(s, z) / focused_wavelength(s, a * z);
        EXPECT_NEAR(ratio, a, 1e-12 * a);
    }
}

TEST(Schedule, SingleAndTwoBands) {
    LensConfig lens;
    AcquisitionGeometry g;
    FocusSchedule ref = reference_schedule(lens, g);
    auto one = schedule_for_bands(lens, g, BandGrid({lens.lambda0_nm}));
    ASSERT_EQ(one.size(), 1);
    EXPECT_NEAR(one.positions_mm[0], ref.z0_mm, 1e-12);

    auto two = schedule_for_bands(lens, g, BandGrid({lens.lambda0_nm / 1.1, lens.lambda0_nm}));
    ASSERT_EQ(two.size(), 2);
    EXPECT_NEAR(two.positions_mm[0], ref.z0_mm, 1e-12);
    EXPECT_NEAR(two.positions_mm[1], 1.1 * ref.z0_mm, 1e-12);
}

TEST(Schedule, FiftyBandsStrictlyIncreasingAndMatched) {
    LensConfig lens;
    AcquisitionGeometry g;
    BandGrid bands;
    auto s = schedule_for_bands(lens, g, bands);
    ASSERT_EQ(s.size(), 50);
    for (int k = 1; k < s.size(); ++k) EXPECT_GT(s.positions_mm[k], s.positions_mm[k - 1]);
    for (int k = 0; k < s.size(); ++k) EXPECT_EQ(focused_band(s, bands, k), bands.size() - 1 - k);
}

TEST(Schedule, OutOfIntervalNamesBand) {
    LensConfig lens;
    AcquisitionGeometry g;
    g.z1_mm = 20.0;
    try {
        schedule_for_bands(lens, g, BandGrid::uniform(470.0, 900.0, 8));
        FAIL();
    } catch (const RangeError& e) {
        EXPECT_NE(std::string(e.what()).find("470"), std::string::npos);
    }
}

TEST(Defocus, ZeroAtImagingCondition) {
    LensConfig lens;
    AcquisitionGeometry g;
    for (double lam : {470.0, 600.0, 900.0}) {
        double z = imaging_distance(lens, g, lam);
        EXPECT_NEAR(defocus_radius_px(lens, g, lam, z), 0.0, 1e-9);
    }
}

TEST(Defocus, LinearInAperture) {
    LensConfig lens;
    AcquisitionGeometry g;
    double r1 = defocus_radius_px(lens, g, 500.0, 22.0);
    lens.aperture_mm *= 2.0;
    EXPECT_NEAR(defocus_radius_px(lens, g, 500.0, 22.0), 2.0 * r1, 1e-12);
}

TEST(Defocus, HandEvaluatedExample) {
    LensConfig lens;
    lens.f0_mm = 100.0;
    lens.lambda0_nm = 685.0;
    lens.aperture_mm = 10.0;
    AcquisitionGeometry g;
    g.u_mm = 1300.0;
    g.z0_mm = 50.0;
    g.z1_mm = 200.0;
    g.pixel_pitch_um = 2.5;
    double z = reference_schedule(lens, g).z0_mm;
    EXPECT_NEAR(defocus_radius_px(lens, g, 470.0, z), oracle::kDefocusExample, 1e-9);
}

TEST(Defocus, GrowsWithFocalMismatch) {
    LensConfig lens;
    AcquisitionGeometry g;
    const double z = imaging_distance(lens, g, 685.0);
    const double f_star = focal_length(lens, 685.0);
    std::vector<std::pair<double, double>> pts;
    for (double lam = 470.0; lam <= 900.0; lam += 5.0)
        pts.push_back({std::abs(1.0 / focal_length(lens, lam) - 1.0 / f_star), defocus_radius_px(lens, g, lam, z)});
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_GE(pts[i].second, pts[i - 1].second - 1e-12);
}

TEST(Psf, DeltaBelowHalfPixel) {
    Image k = psf_kernel(0.0);
    ASSERT_EQ(k.height(), 1);
    EXPECT_EQ(k(0, 0), 1.0);
    EXPECT_EQ(psf_kernel(0.49).height(), 1);
    EXPECT_THROW(psf_kernel(-1.0), DomainError);
}

TEST(Psf, SumsToOneSymmetricNonNegative) {
    for (double r = 0.0; r <= 12.0; r += 0.37) {
        for (PsfModel m : {PsfModel::Disc, PsfModel::Gaussian}) {
            Image k = psf_kernel(r, m);
            int n = k.height();
            if (r >= 0.5) {
                EXPECT_EQ(n, 2 * static_cast<int>(std::ceil(r)) + 1);
            }
            double sum = 0;
            for (double v : k.span()) {
                EXPECT_GE(v, 0.0);
                sum += v;
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) EXPECT_NEAR(k(i, j), k(j, n - 1 - i), 1e-12);
        }
    }
}

TEST(Psf, MatchesSupersampledRasterization) {
    Image k1 = psf_kernel(1.0);
    ASSERT_EQ(k1.size(), 9u);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(k1.data()[i], oracle::kDiscR1[i], 1e-3);
    Image k2 = psf_kernel(2.3);
    ASSERT_EQ(k2.size(), 49u);
    for (std::size_t i = 0; i < 49; ++i) EXPECT_NEAR(k2.data()[i], oracle::kDiscR2_3[i], 1e-3);
}

TEST(Psf, ExactOverlapOfFullyCoveredPixel) {
    EXPECT_NEAR(disc_rect_overlap(10.0, -0.5, 0.5, -0.5, 0.5), 1.0, 1e-12);
    EXPECT_NEAR(disc_rect_overlap(1.0, -2, 2, -2, 2), std::numbers::pi, 1e-12);
    EXPECT_NEAR(disc_rect_overlap(1.0, 0, 2, 0, 2), std::numbers::pi / 4, 1e-12);
}
