#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "spectrasweep/spectrasweep.hpp"
#include "test_support.hpp"

using namespace spectrasweep;
using testing_support::random_volume;
using testing_support::relative_error;

namespace {

RunConfig small_config(int side) {
    RunConfig c = parse_config(Json::object());
    c.scene.height = c.scene.width = c.geometry.height = c.geometry.width = side;
    c.noise = NoiseModel{};
    return c;
}

double dot(const Volume& a, const Volume& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

Volume zero_pad_conv(const ConvLayer& l, const Volume& x) {
    const int H = x.height(), W = x.width(), p = l.k / 2;
    Volume y(l.out, H, W);
    for (int o = 0; o < l.out; ++o)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                double s = l.bias[static_cast<std::size_t>(o)];
                for (int i = 0; i < l.in; ++i)
                    for (int u = 0; u < l.k; ++u)
                        for (int v = 0; v < l.k; ++v) {
                            int rr = r + u - p, cc = c + v - p;
                            if (rr >= 0 && rr < H && cc >= 0 && cc < W) s += l.w(o, i, u, v) * x(i, rr, cc);
                        }
                y(o, r, c) = s;
            }
    return y;
}

ConvLayer random_layer(std::mt19937_64& rng, int in, int out, int k) {
    std::normal_distribution<double> n(0.0, 0.5);
    ConvLayer l{in, out, k, std::vector<double>(static_cast<std::size_t>(in * out * k * k)),
                std::vector<double>(static_cast<std::size_t>(out))};
    for (double& w : l.weights) w = n(rng);
    for (double& b : l.bias) b = n(rng);
    return l;
}

/// Central-difference check of <r, f(x)> against an analytic input gradient.
template <class F>
double input_fd_error(const Volume& x, const Volume& r, const Volume& analytic, F f) {
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Volume p = x, m = x;
        p.data()[i] += h;
        m.data()[i] -= h;
        double fd = (dot(r, f(p)) - dot(r, f(m))) / (2 * h);
        worst = std::max(worst, relative_error(analytic.data()[i], fd));
    }
    return worst;
}

NetConfig tiny_net() {
    NetConfig c;
    c.c_in = 3;
    c.c_out = 2;
    c.base_width = 2;
    c.depth = 1;
    c.seed = 11;
    return c;
}

TrainingPair overfit_sample(int side) {
    RunConfig c = small_config(side);
    auto truth = synth(c.scene);
    return {preprocess_pipeline(simulate_from_config(truth, c), c.preprocess), truth.data()};
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Variational solver

TEST(SweepOperator, AdjointConsistency) {
    RunConfig c = small_config(20);
    auto sched = c.schedule();
    SweepOperator op(c.scene.bands, c.lens, c.geometry, sched.positions_mm, c.response(), 20, 20);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 3; ++t) {
        Volume x = random_volume(rng, c.scene.bands.size(), 20, 20, -1, 1);
        Volume y = random_volume(rng, op.frames(), 20, 20, -1, 1);
        double lhs = dot(op.apply(x), y), rhs = dot(x, op.adjoint(y));
        EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(SweepOperator, MatchesSimulator) {
    RunConfig c = small_config(24);
    c.simulation.normalize = false;
    auto truth = synth(c.scene);
    auto stack = simulate_from_config(truth, c);
    SweepOperator op(c.scene.bands, c.lens, c.geometry, c.schedule().positions_mm, c.response(), 24, 24);
    Volume y = op.apply(truth.data());
    for (int k = 0; k < stack.size(); ++k)
        for (int r = 0; r < 24; ++r)
            for (int q = 0; q < 24; ++q) ASSERT_NEAR(y(k, r, q), stack.frame(k)(r, q), 1e-9);
}

TEST(Variational, ConstantCubeStaysConstant) {
    RunConfig c = small_config(24);
    c.simulation.normalize = false;
    c.solver.weights.lambda_tv = 0.0;
    c.solver.max_iters = 200;
    SpectralCube flat(c.scene.bands, Volume(c.scene.bands.size(), 24, 24, 0.4));
    auto stack = simulate_from_config(flat, c);
    auto rec = variational_reconstruct(stack, c.scene.bands, c.lens, c.geometry, c.schedule(), c.response(), c.solver);
    for (double v : rec.data().span()) EXPECT_NEAR(v, 0.4, 1e-3);
}

TEST(Variational, ObjectiveNeverRisesAndRunsRepeat) {
    RunConfig c = small_config(32);
    c.solver.max_iters = 60;
    auto truth = synth(c.scene);
    auto stack = simulate_from_config(truth, c);
    auto a = variational_solve(stack, c.scene.bands, c.lens, c.geometry, c.schedule(), c.response(), c.solver);
    ASSERT_GE(a.objective.size(), 2u);
    for (std::size_t i = 1; i < a.objective.size(); ++i) EXPECT_LE(a.objective[i], a.objective[i - 1]);
    EXPECT_LT(a.objective.back(), a.objective.front());
    for (double v : a.cube.data().span()) EXPECT_GE(v, 0.0);
    auto b = variational_solve(stack, c.scene.bands, c.lens, c.geometry, c.schedule(), c.response(), c.solver);
    EXPECT_EQ(a.objective, b.objective);
    EXPECT_EQ(a.cube.data().span()[100], b.cube.data().span()[100]);
}

TEST(Variational, EndToEndPsnr) {
    RunConfig c = small_config(64);
    auto truth = synth(c.scene);
    auto stack = simulate_from_config(truth, c);
    auto rec = variational_reconstruct(stack, c.scene.bands, c.lens, c.geometry, c.schedule(), c.response(), c.solver);
    double p = psnr(truth, rec);
    RecordProperty("psnr_db", std::to_string(p));
    EXPECT_GE(p, 25.0);
}

TEST(Variational, HugeStepIsReportedAsDivergence) {
    RunConfig c = small_config(16);
    c.solver.step_size = 1e12;
    c.solver.momentum = 0.0;
    auto stack = simulate_from_config(synth(c.scene), c);
    EXPECT_THROW(variational_solve(stack, c.scene.bands, c.lens, c.geometry, c.schedule(), c.response(), c.solver),
                 DivergenceError);
}

TEST(Variational, ScheduleMustMatchStack) {
    RunConfig c = small_config(16);
    auto stack = simulate_from_config(synth(c.scene), c);
    FocusSchedule other = c.schedule();
    other.positions_mm[0] += 0.5;
    EXPECT_ANY_THROW(variational_solve(stack, c.scene.bands, c.lens, c.geometry, other, c.response(), c.solver));
}

// ---------------------------------------------------------------------------------------------
// Network

TEST(Net, HeInitialisation) {
    NetConfig wide;
    wide.base_width = 64;
    wide.seed = 5;
    auto p = net_init(wide);
    for (const auto& l : p.layers) {
        ASSERT_GE(l.weights.size(), 500u);
        double mean = 0, var = 0;
        for (double w : l.weights) mean += w;
        mean /= static_cast<double>(l.weights.size());
        for (double w : l.weights) var += (w - mean) * (w - mean);
        var /= static_cast<double>(l.weights.size());
        EXPECT_NEAR(var / (2.0 / l.fan_in()), 1.0, 0.2) << l.in << "->" << l.out;
        for (double b : l.bias) EXPECT_EQ(b, 0.0);
    }
}

TEST(Net, DeterministicPerSeed) {
    NetConfig c;
    c.seed = 9;
    auto a = net_init(c), b = net_init(c);
    ASSERT_EQ(a.layers.size(), b.layers.size());
    for (std::size_t i = 0; i < a.layers.size(); ++i) EXPECT_EQ(a.layers[i].weights, b.layers[i].weights);
    c.seed = 10;
    EXPECT_NE(net_init(c).layers[0].weights, a.layers[0].weights);
}

TEST(Net, Topology) {
    NetConfig c;
    c.depth = 1;
    c.base_width = 4;
    auto p = net_init(c);
    EXPECT_EQ(p.skip_connections().size(), 1u);
    EXPECT_EQ(p.layers.size(), 7u);
    c.depth = 3;
    EXPECT_EQ(net_init(c).skip_connections().size(), 3u);
    EXPECT_EQ(net_init(c).layers.size(), 15u);
}

TEST(Net, ShapeContract) {
    std::mt19937_64 rng(1);
    NetConfig c;
    auto p = net_init(c);
    for (int side : {8, 16, 24}) {
        Volume out = net_forward(p, random_volume(rng, 7, side, side + 8));
        EXPECT_EQ(out.channels(), 8);
        EXPECT_EQ(out.height(), side);
        EXPECT_EQ(out.width(), side + 8);
    }
    EXPECT_THROW(net_forward(p, random_volume(rng, 7, 10, 16)), ShapeError);
    EXPECT_THROW(net_forward(p, random_volume(rng, 6, 16, 16)), ShapeError);

    NetConfig wide;
    wide.c_in = wide.c_out = 50;
    Volume out = net_forward(net_init(wide), random_volume(rng, 50, 32, 32));
    EXPECT_EQ(out.channels(), 50);
    EXPECT_EQ(out.height(), 32);
}

TEST(Net, ZeroParametersGiveZeroOutput) {
    auto p = net_init(NetConfig{});
    for (auto& l : p.layers) std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::mt19937_64 rng(2);
    Volume out = net_forward(p, random_volume(rng, 7, 16, 16));
    for (double v : out.span()) EXPECT_EQ(v, 0.0);
}

TEST(Layers, ConvMatchesLoopOracle) {
    std::mt19937_64 rng(3);
    for (int k : {1, 3}) {
        ConvLayer l = random_layer(rng, 3, 4, k);
        Volume x = random_volume(rng, 3, 7, 9, -1, 1);
        Volume fast = conv2d(l, x), slow = zero_pad_conv(l, x);
        for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast.data()[i], slow.data()[i], 1e-12);
    }
}

TEST(Layers, FiniteDifferenceGradients) {
    std::mt19937_64 rng(6);
    for (int k : {3, 1}) {
        ConvLayer l = random_layer(rng, 2, 3, k);
        Volume x = random_volume(rng, 2, 6, 6, -1, 1), r = random_volume(rng, 3, 6, 6, -1, 1);
        std::vector<double> dw(l.weights.size(), 0.0), db(l.bias.size(), 0.0);
        Volume dx = conv2d_backward(l, x, r, dw, db);
        EXPECT_LE(input_fd_error(x, r, dx, [&](const Volume& v) { return conv2d(l, v); }), 1e-5) << "conv k=" << k;
        const double h = 1e-5;
        for (std::size_t i = 0; i < l.weights.size(); ++i) {
            ConvLayer p = l, m = l;
            p.weights[i] += h;
            m.weights[i] -= h;
            double fd = (dot(r, conv2d(p, x)) - dot(r, conv2d(m, x))) / (2 * h);
            EXPECT_LE(relative_error(dw[i], fd), 1e-5) << "weight " << i;
        }
        for (std::size_t i = 0; i < l.bias.size(); ++i) {
            ConvLayer p = l, m = l;
            p.bias[i] += h;
            m.bias[i] -= h;
            double fd = (dot(r, conv2d(p, x)) - dot(r, conv2d(m, x))) / (2 * h);
            EXPECT_LE(relative_error(db[i], fd), 1e-5) << "bias " << i;
        }
    }

    Volume x = random_volume(rng, 2, 6, 6, -1, 1);
    for (double& v : x.span())
        if (std::abs(v) < 1e-3) v = 0.5;
    Volume r = random_volume(rng, 2, 6, 6, -1, 1);
    EXPECT_LE(input_fd_error(x, r, relu_backward(x, r), [](const Volume& v) { return relu(v); }), 1e-5) << "relu";

    Volume rp = random_volume(rng, 2, 3, 3, -1, 1);
    EXPECT_LE(input_fd_error(x, rp, mean_pool2_backward(rp), [](const Volume& v) { return mean_pool2(v); }), 1e-5)
        << "pool";

    Volume ru = random_volume(rng, 2, 12, 12, -1, 1);
    EXPECT_LE(input_fd_error(x, ru, upsample2_backward(ru), [](const Volume& v) { return upsample2(v); }), 1e-5)
        << "upsample";

    Volume b = random_volume(rng, 3, 6, 6, -1, 1), rc = random_volume(rng, 5, 6, 6, -1, 1);
    auto [ga, gb] = concat_backward(rc, 2);
    EXPECT_LE(input_fd_error(x, rc, ga, [&](const Volume& v) { return concat_channels(v, b); }), 1e-5) << "concat a";
    EXPECT_LE(input_fd_error(b, rc, gb, [&](const Volume& v) { return concat_channels(x, v); }), 1e-5) << "concat b";
}

TEST(NetBackward, FiniteDifferencesOnEveryParameterTensor) {
    std::mt19937_64 rng(12);
    auto p = net_init(tiny_net());
    for (auto& l : p.layers)
        for (double& b : l.bias) b = std::normal_distribution<double>(0.0, 0.1)(rng);
    Volume x = random_volume(rng, 3, 8, 8, -1, 1), u = random_volume(rng, 2, 8, 8, -1, 1);
    auto g = net_backward(p, x, u);
    ASSERT_EQ(g.layers.size(), p.layers.size());
    const double h = 1e-5;
    auto f = [&](const NetParams& q, const Volume& in) { return dot(u, net_forward(q, in)); };
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        for (auto member : {&ConvLayer::weights, &ConvLayer::bias}) {
            const auto& analytic = g.layers[li].*member;
            const std::size_t n = (p.layers[li].*member).size();
            for (std::size_t i = 0; i < n; i += std::max<std::size_t>(1, n / 12)) {
                NetParams a = p, b = p;
                (a.layers[li].*member)[i] += h;
                (b.layers[li].*member)[i] -= h;
                double fd = (f(a, x) - f(b, x)) / (2 * h);
                EXPECT_LE(relative_error(analytic[i], fd), 1e-5) << "layer " << li << " index " << i;
            }
        }
    }
    EXPECT_LE(input_fd_error(x, u, g.input, [&](const Volume& in) { return net_forward(p, in); }), 1e-5);
}

TEST(NetBackward, ZeroUpstreamAndLinearity) {
    std::mt19937_64 rng(13);
    auto p = net_init(tiny_net());
    Volume x = random_volume(rng, 3, 8, 8, -1, 1);
    auto zero = net_backward(p, x, Volume(2, 8, 8));
    for (const auto& l : zero.layers) {
        for (double v : l.weights) EXPECT_EQ(v, 0.0);
        for (double v : l.bias) EXPECT_EQ(v, 0.0);
    }
    for (double v : zero.input.span()) EXPECT_EQ(v, 0.0);

    Volume u1 = random_volume(rng, 2, 8, 8, -1, 1), u2 = random_volume(rng, 2, 8, 8, -1, 1), u12 = u1;
    for (std::size_t i = 0; i < u12.size(); ++i) u12.data()[i] += u2.data()[i];
    auto g1 = net_backward(p, x, u1), g2 = net_backward(p, x, u2), g12 = net_backward(p, x, u12);
    for (std::size_t l = 0; l < p.layers.size(); ++l)
        for (std::size_t i = 0; i < g12.layers[l].weights.size(); ++i)
            EXPECT_NEAR(g12.layers[l].weights[i], g1.layers[l].weights[i] + g2.layers[l].weights[i], 1e-12);
    EXPECT_THROW(net_backward(p, x, Volume(3, 8, 8)), ShapeError);
}

// ---------------------------------------------------------------------------------------------
// Augmentation and training

TEST(Augment, IdentityInvolutionAndDeterminism) {
    std::mt19937_64 rng(14);
    TrainingPair pair{random_volume(rng, 3, 16, 16), random_volume(rng, 4, 16, 16)};
    auto same = augment(pair, AugmentConfig{}, 3);
    EXPECT_EQ(same.input.span()[7], pair.input.span()[7]);
    for (std::size_t i = 0; i < pair.target.size(); ++i) EXPECT_EQ(same.target.data()[i], pair.target.data()[i]);

    for (auto flip : {std::pair{true, false}, std::pair{false, true}, std::pair{true, true}}) {
        AugmentDraw d;
        d.flip_h = flip.first;
        d.flip_v = flip.second;
        Volume twice = apply_augment(apply_augment(pair.target, d), d);
        for (std::size_t i = 0; i < twice.size(); ++i) EXPECT_NEAR(twice.data()[i], pair.target.data()[i], 1e-12);
    }

    AugmentConfig all;
    all.translate = all.rotate = all.crop = all.flip_horizontal = all.flip_vertical = true;
    all.seed = 77;
    auto a = augment(pair, all, 5), b = augment(pair, all, 5), c = augment(pair, all, 6);
    for (std::size_t i = 0; i < a.target.size(); ++i) ASSERT_EQ(a.target.data()[i], b.target.data()[i]);
    bool differs = false;
    for (std::size_t i = 0; i < a.target.size(); ++i) differs = differs || a.target.data()[i] != c.target.data()[i];
    EXPECT_TRUE(differs);

    for (std::uint64_t s = 0; s < 500; ++s) {
        auto d = draw_augment(all, s, 64, 64);
        EXPECT_LE(std::abs(d.shift_x), 8);
        EXPECT_LE(std::abs(d.shift_y), 8);
        EXPECT_LE(std::abs(d.rotation_rad), 15.0 * std::numbers::pi / 180.0 + 1e-12);
        EXPECT_GE(d.crop_scale, 0.8);
        EXPECT_LE(d.crop_scale, 1.0);
    }
    all.max_shift_px = 9;
    EXPECT_THROW(augment(pair, all, 0), InvariantError);
}

TEST(Augment, TranslationShiftsCorrelationPeak) {
    Image tex = filter_separable(testing_support::hashed_image(15, 32, 48), gaussian_taps(1.0));
    Volume v(1, 32, 48);
    std::copy(tex.span().begin(), tex.span().end(), v.plane(0).begin());
    AugmentDraw d;
    d.shift_x = 5;
    Volume moved = apply_augment(v, d);
    int best = 0;
    double best_score = -INFINITY;
    for (int off = -8; off <= 8; ++off) {
        double s = 0;
        for (int r = 0; r < 32; ++r)
            for (int c = 10; c < 38; ++c) s += moved(0, r, c + off) * v(0, r, c);
        if (s > best_score) {
            best_score = s;
            best = off;
        }
    }
    EXPECT_EQ(best, 5);
}

TEST(Train, OneSampleOverfits) {
    auto sample = overfit_sample(32);
    NetConfig nc;
    nc.c_in = sample.input.channels();
    nc.seed = 3;
    auto res = train({sample}, nc, LossWeights{}, RGBProjection::cie_default(BandGrid::uniform(470, 900, 8)), TrainConfig{});
    ASSERT_EQ(res.loss_curve.size(), 200u);
    double ratio = res.loss_curve.back() / res.loss_curve.front();
    RecordProperty("loss_ratio", std::to_string(ratio));
    EXPECT_LT(ratio, 0.2);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
    auto sample = overfit_sample(16);
    NetConfig nc;
    nc.c_in = sample.input.channels();
    TrainConfig tc;
    tc.epochs = 4;
    tc.learning_rate = 0.0;
    auto proj = RGBProjection::cie_default(BandGrid::uniform(470, 900, 8));
    auto res = train({sample}, nc, LossWeights{}, proj, tc);
    for (double l : res.loss_curve) EXPECT_EQ(l, res.loss_curve.front());
    auto init = net_init(nc);
    for (std::size_t i = 0; i < init.layers.size(); ++i) EXPECT_EQ(res.params.layers[i].weights, init.layers[i].weights);
}

TEST(Train, SameSeedSameCurve) {
    auto s1 = overfit_sample(16);
    TrainingPair s2{s1.input, s1.target};
    for (double& v : s2.target.span()) v *= 0.5;
    NetConfig nc;
    nc.c_in = s1.input.channels();
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 21;
    tc.augment.translate = tc.augment.flip_horizontal = true;
    auto proj = RGBProjection::cie_default(BandGrid::uniform(470, 900, 8));
    auto a = train({s1, s2}, nc, LossWeights{}, proj, tc);
    auto b = train({s1, s2}, nc, LossWeights{}, proj, tc);
    EXPECT_EQ(a.loss_curve, b.loss_curve);
    EXPECT_THROW(train({}, nc, LossWeights{}, proj, tc), InsufficientDataError);
    TrainingPair wrong{Volume(2, 16, 16), s1.target};
    EXPECT_THROW(train({wrong}, nc, LossWeights{}, proj, tc), ShapeError);
}

TEST(Predict, OverfitSampleIsReproduced) {
    auto sample = overfit_sample(32);
    auto bands = BandGrid::uniform(470, 900, 8);
    NetConfig nc;
    nc.c_in = sample.input.channels();
    nc.seed = 3;
    TrainConfig tc;
    tc.epochs = 1000;
    tc.learning_rate = 3e-3;
    auto res = train({sample}, nc, LossWeights{}, RGBProjection::cie_default(bands), tc);
    SpectralCube out = predict(res.params, sample.input, bands);
    EXPECT_EQ(out.bands_count(), 8);
    for (double v : out.data().span()) EXPECT_GE(v, 0.0);
    double p = psnr(sample.target, out.data());
    RecordProperty("psnr_db", std::to_string(p));
    EXPECT_GE(p, 30.0);
    EXPECT_THROW(predict(res.params, sample.input, BandGrid::uniform(470, 900, 6)), ShapeError);
}

TEST(Checkpoint, RoundTrip) {
    testing_support::TempDir dir("ckpt");
    NetConfig nc;
    nc.seed = 8;
    nc.depth = 1;
    auto p = net_init(nc);
    p.layers[0].bias[0] = 0.25;
    write_checkpoint(p, dir.file("net.ssnet"));
    auto q = read_checkpoint(dir.file("net.ssnet"));
    EXPECT_EQ(q.config.c_in, nc.c_in);
    EXPECT_EQ(q.config.depth, 1);
    EXPECT_EQ(q.config.seed, 8u);
    ASSERT_EQ(q.layers.size(), p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        for (std::size_t i = 0; i < p.layers[l].weights.size(); ++i)
            EXPECT_EQ(q.layers[l].weights[i], static_cast<double>(static_cast<float>(p.layers[l].weights[i])));
        EXPECT_EQ(q.layers[l].bias, p.layers[l].bias);
    }
    write_text(dir.file("bad.ssnet"), "{\"magic\":\"NOPE\"}\n");
    EXPECT_THROW(read_checkpoint(dir.file("bad.ssnet")), ParseError);
}
