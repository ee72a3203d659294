#include <gtest/gtest.h>

#include <cmath>

#include "atlas_istn/error.hpp"
#include "atlas_istn/transform.hpp"
#include "test_util.hpp"

using namespace atlas_istn;
using namespace atlas_istn::transform;
using atlas_istn::testing::bilinear_border;
using atlas_istn::testing::smooth_field;
using torch::indexing::Slice;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

torch::Tensor interior(const torch::Tensor& t, double keep_fraction) {
    const int64_t h = t.size(-2), w = t.size(-1);
    const int64_t my = static_cast<int64_t>(std::round(h * (1 - keep_fraction) / 2));
    const int64_t mx = static_cast<int64_t>(std::round(w * (1 - keep_fraction) / 2));
    return t.index({"...", Slice(my, h - my), Slice(mx, w - mx)});
}

double mean_norm(const torch::Tensor& disp) { return disp.pow(2).sum(1).sqrt().mean().item<double>(); }

// Integrates dphi/dt = v(phi) with explicit Euler from every pixel centre.
torch::Tensor euler_flow(const torch::Tensor& v, int steps) {
    const int h = v.size(2), w = v.size(3);
    auto vx = atlas_istn::testing::channel(v, 0, 0), vy = atlas_istn::testing::channel(v, 0, 1);
    auto out = torch::zeros({1, 2, h, w}, kF64);
    auto acc = out.accessor<double, 4>();
    const double dt = 1.0 / steps;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double px = x, py = y;
            for (int s = 0; s < steps; ++s) {
                const double dx = bilinear_border(vx, h, w, px, py);
                const double dy = bilinear_border(vy, h, w, px, py);
                px += dt * dx;
                py += dt * dy;
            }
            acc[0][0][y][x] = px - x;
            acc[0][1][y][x] = py - y;
        }
    }
    return out;
}

torch::Tensor small_affine(double angle_deg, double scale, double tx, double ty) {
    const double a = angle_deg * M_PI / 180.0;
    return torch::tensor({scale * std::cos(a), -scale * std::sin(a), tx, scale * std::sin(a), scale * std::cos(a), ty},
                         kF64)
        .view({1, 2, 3});
}

}  // namespace

TEST(ExpVelocity, ZeroFieldIsIdentity) {
    auto u = exp_velocity(torch::zeros({2, 2, 24, 32}, kF64), 6);
    EXPECT_EQ(u.abs().max().item<double>(), 0.0);
}

TEST(ExpVelocity, ConstantFieldIsTranslation) {
    auto v = torch::zeros({1, 2, 24, 32}, kF64);
    v.index_put_({0, 0}, 1.75);
    v.index_put_({0, 1}, -2.5);
    auto u = exp_velocity(v, 6);
    EXPECT_LE((u - v).abs().max().item<double>(), 1e-5);
}

TEST(ExpVelocity, MatchesEulerIntegrationOracle) {
    auto v = smooth_field(48, 64, 4.0, 11);
    auto u = exp_velocity(v, 6);
    auto ref = euler_flow(v, 200);
    const double err = mean_norm(interior(u - ref, 0.8));
    EXPECT_LE(err, 0.1) << "mean interior discrepancy " << err;
}

TEST(ExpVelocity, InverseFlowCancels) {
    auto v = smooth_field(48, 64, 4.0, 5);
    auto fwd = exp_velocity(v, 6);
    auto bwd = exp_velocity(-v, 6);
    EXPECT_LE(mean_norm(interior(compose(bwd, fwd), 0.8)), 0.5);
}

TEST(ExpVelocity, ConvergesWhenDoublingSteps) {
    auto v = smooth_field(48, 64, 4.0, 8);
    auto a = exp_velocity(v, 6);
    auto b = exp_velocity(v, 12);
    EXPECT_LE(mean_norm(a - b), 0.05);
}

TEST(ExpVelocity, RejectsBadInput) {
    auto v = torch::zeros({1, 2, 8, 8}, kF64);
    EXPECT_THROW(exp_velocity(v, 0), InvalidArgument);
    v.index_put_({0, 0, 3, 3}, std::numeric_limits<double>::quiet_NaN());
    EXPECT_THROW(exp_velocity(v, 6), NumericalError);
    EXPECT_THROW(exp_velocity(torch::zeros({1, 3, 8, 8}, kF64), 6), InvalidArgument);
}

TEST(Invert, IdentityGivesZeroDisplacements) {
    auto pair = invert(torch::zeros({1, 2, 20, 28}, kF64), identity_affine(1, kF64));
    EXPECT_LE(pair.forward.abs().max().item<double>(), 1e-12);
    EXPECT_LE(pair.inverse.abs().max().item<double>(), 1e-12);
}

TEST(Invert, PureTranslation) {
    const int h = 21, w = 31;
    // Normalised shift 0.2 in x, -0.1 in y => pixels 0.2*(w-1)/2 = 3, -0.1*(h-1)/2 = -1.
    auto pair = invert(torch::zeros({1, 2, h, w}, kF64), small_affine(0, 1, 0.2, -0.1));
    auto fx = pair.forward.index({0, 0}), fy = pair.forward.index({0, 1});
    EXPECT_LE((fx - 3.0).abs().max().item<double>(), 1e-9);
    EXPECT_LE((fy + 1.0).abs().max().item<double>(), 1e-9);
    auto ix = pair.inverse.index({0, 0}), iy = pair.inverse.index({0, 1});
    EXPECT_LE((ix + 3.0).abs().max().item<double>(), 1e-9);
    EXPECT_LE((iy - 1.0).abs().max().item<double>(), 1e-9);
}

TEST(Invert, ForwardAfterInverseIsIdentity) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto v = smooth_field(48, 64, 4.0, seed);
        const double angle = (seed == 1 ? 10.0 : -7.0), scale = (seed == 2 ? 0.9 : 1.1);
        auto pair = invert(v, small_affine(angle, scale, 0.03, -0.02));
        const double err = mean_norm(interior(compose(pair.forward, pair.inverse), 0.8));
        EXPECT_LE(err, 0.5) << "seed " << seed;
    }
}

TEST(Invert, SingularAffineThrows) {
    auto t = torch::zeros({1, 2, 3}, kF64);
    EXPECT_THROW(invert(torch::zeros({1, 2, 8, 8}, kF64), t), NumericalError);
}

TEST(Warp, ZeroDisplacementIsIdentity) {
    auto f = torch::rand({2, 3, 10, 12}, kF64);
    auto out = warp(f, torch::zeros({2, 2, 10, 12}, kF64));
    EXPECT_LE((out - f).abs().max().item<double>(), 1e-6);
}

TEST(Warp, IntegerTranslation) {
    auto f = torch::rand({1, 1, 10, 12}, kF64);
    auto d = torch::zeros({1, 2, 10, 12}, kF64);
    d.index_put_({0, 0}, 2.0);
    auto out = warp(f, d, Padding::Border);
    auto lhs = out.index({0, 0, Slice(), Slice(0, 10)});
    auto rhs = f.index({0, 0, Slice(), Slice(2, 12)});
    EXPECT_LE((lhs - rhs).abs().max().item<double>(), 1e-12);
}

TEST(Warp, OneHotChannelSumsStayNormalised) {
    auto labels = torch::randint(0, 6, {1, 16, 16}, torch::kLong);
    auto onehot = torch::one_hot(labels, 6).permute({0, 3, 1, 2}).to(torch::kFloat64);
    auto d = smooth_field(16, 16, 3.0, 4);
    auto sums = warp(onehot, d, Padding::Border).sum(1);
    EXPECT_GE(sums.min().item<double>(), 1.0 - 1e-5);
    EXPECT_LE(sums.max().item<double>(), 1.0 + 1e-12);
    auto zsums = warp(onehot, d * 3, Padding::Zeros).sum(1);
    EXPECT_LE(zsums.max().item<double>(), 1.0 + 1e-12);
    EXPECT_GE(zsums.min().item<double>(), 0.0);
}

TEST(Warp, MatchesIndependentBilinearOracle) {
    auto f = torch::rand({1, 1, 12, 14}, kF64);
    auto d = smooth_field(12, 14, 5.0, 9);
    auto out = warp(f, d);
    auto fv = atlas_istn::testing::channel(f, 0, 0);
    auto dx = atlas_istn::testing::channel(d, 0, 0), dy = atlas_istn::testing::channel(d, 0, 1);
    auto acc = out.accessor<double, 4>();
    for (int y = 0; y < 12; ++y) {
        for (int x = 0; x < 14; ++x) {
            const double ref = bilinear_border(fv, 12, 14, x + dx[y * 14 + x], y + dy[y * 14 + x]);
            ASSERT_NEAR(acc[0][0][y][x], ref, 1e-12);
        }
    }
}

TEST(Warp, IsLinearInField) {
    auto a = torch::rand({1, 2, 16, 16}, kF64), b = torch::rand({1, 2, 16, 16}, kF64);
    auto d = smooth_field(16, 16, 2.0, 3);
    auto lhs = warp(0.3 * a - 1.7 * b, d);
    auto rhs = 0.3 * warp(a, d) - 1.7 * warp(b, d);
    EXPECT_LE((lhs - rhs).abs().max().item<double>(), 1e-6);
}

TEST(Warp, BroadcastsBatchOneField) {
    auto f = torch::rand({1, 3, 8, 8}, kF64);
    auto d = torch::cat({smooth_field(8, 8, 1.0, 1), smooth_field(8, 8, 1.0, 2)}, 0);
    auto out = warp(f, d);
    ASSERT_EQ(out.size(0), 2);
    EXPECT_LE((out.index({1}) - warp(f, d.index({Slice(1, 2)})).index({0})).abs().max().item<double>(), 1e-14);
}

TEST(Warp, ShapeMismatchThrows) {
    EXPECT_THROW(warp(torch::rand({1, 1, 8, 8}), torch::zeros({1, 2, 8, 9})), InvalidArgument);
    EXPECT_THROW(warp(torch::rand({3, 1, 8, 8}), torch::zeros({2, 2, 8, 8})), InvalidArgument);
}

TEST(Warp, GradientsMatchFiniteDifferences) {
    auto f = torch::rand({1, 2, 16, 16}, kF64).requires_grad_(true);
    auto d = (smooth_field(16, 16, 2.5, 6) + 0.123).requires_grad_(true);
    auto weights = torch::rand({1, 2, 16, 16}, kF64);
    auto loss = [&] { return (warp(f, d) * weights).sum(); };
    EXPECT_LE(atlas_istn::testing::gradient_relative_error(loss, f), 1e-4);
    EXPECT_LE(atlas_istn::testing::gradient_relative_error(loss, d), 1e-4);
}

TEST(Smoothness, ConstantFieldIsZero) {
    auto u = torch::full({2, 2, 9, 11}, 3.25, kF64);
    EXPECT_EQ(smoothness_penalty(u).item<double>(), 0.0);
}

TEST(Smoothness, LinearFieldScoresSlopeSquared) {
    const double alpha = 0.37;
    auto u = torch::zeros({1, 2, 9, 11}, kF64);
    u.index_put_({0, 0}, identity_grid(9, 11, kF64).index({0, 0}) * alpha);
    EXPECT_NEAR(smoothness_penalty(u).item<double>(), alpha * alpha, 1e-14);
}

TEST(Smoothness, MatchesBruteForce) {
    auto u = torch::randn({2, 2, 7, 9}, kF64);
    auto acc = u.accessor<double, 4>();
    double total = 0;
    for (int n = 0; n < 2; ++n) {
        double sx = 0, sy = 0;
        for (int c = 0; c < 2; ++c) {
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x + 1 < 9; ++x) sx += std::pow(acc[n][c][y][x + 1] - acc[n][c][y][x], 2);
            for (int y = 0; y + 1 < 7; ++y)
                for (int x = 0; x < 9; ++x) sy += std::pow(acc[n][c][y + 1][x] - acc[n][c][y][x], 2);
        }
        total += sx / (7 * 8) + sy / (6 * 9);
    }
    const double expected = total / 2;
    EXPECT_NEAR(smoothness_penalty(u).item<double>(), expected, 1e-10 * expected);
}

TEST(Smoothness, GradientsMatchFiniteDifferences) {
    auto u = torch::randn({1, 2, 16, 16}, kF64).requires_grad_(true);
    EXPECT_LE(atlas_istn::testing::gradient_relative_error([&] { return smoothness_penalty(u); }, u), 1e-4);
}
