#include <gtest/gtest.h>

#include <cmath>

#include "atlas_istn/error.hpp"
#include "atlas_istn/losses.hpp"
#include "atlas_istn/networks.hpp"
#include "atlas_istn/trainer.hpp"
#include "test_util.hpp"

using namespace atlas_istn;
using namespace atlas_istn::loss;
using atlas_istn::testing::bilinear_border;
using atlas_istn::testing::channel;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

torch::Tensor random_onehot(int n, int c, int h, int w, std::uint64_t seed) {
    torch::manual_seed(seed);
    return one_hot(torch::randint(0, c, {n, h, w}, torch::kLong), c, torch::kFloat64);
}

torch::Tensor random_probs(int n, int c, int h, int w, std::uint64_t seed) {
    torch::manual_seed(seed);
    return torch::softmax(torch::randn({n, c, h, w}, kF64), 1);
}

double brute_mse(const torch::Tensor& a, const torch::Tensor& b) {
    auto x = a.contiguous(), y = b.contiguous();
    auto ax = x.accessor<double, 4>(), by = y.accessor<double, 4>();
    double s = 0;
    for (int n = 0; n < x.size(0); ++n)
        for (int c = 0; c < x.size(1); ++c)
            for (int i = 0; i < x.size(2); ++i)
                for (int j = 0; j < x.size(3); ++j) {
                    const double d = ax[n][c][i][j] - by[n][c][i][j];
                    s += d * d;
                }
    return s / double(x.size(0) * x.size(2) * x.size(3));
}

// Resamples every channel of `img` ([B,C,H,W], B = 1 or N) at pixel + disp[n].
torch::Tensor oracle_warp(const torch::Tensor& img, const torch::Tensor& disp) {
    const int n = disp.size(0), c = img.size(1), h = img.size(2), w = img.size(3);
    auto out = torch::zeros({n, c, h, w}, kF64);
    auto acc = out.accessor<double, 4>();
    for (int b = 0; b < n; ++b) {
        auto dx = channel(disp, b, 0), dy = channel(disp, b, 1);
        for (int k = 0; k < c; ++k) {
            auto f = channel(img, img.size(0) == 1 ? 0 : b, k);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    acc[b][k][y][x] = bilinear_border(f, h, w, x + dx[y * w + x], y + dy[y * w + x]);
        }
    }
    return out;
}

torch::Tensor random_disp(int n, int h, int w, double mag, std::uint64_t seed) {
    std::vector<torch::Tensor> parts;
    for (int i = 0; i < n; ++i) parts.push_back(atlas_istn::testing::smooth_field(h, w, mag, seed + i));
    return torch::cat(parts, 0);
}

}  // namespace

TEST(LossSeg, FixedPointAndUniform) {
    auto gt = random_onehot(2, 6, 8, 8, 1);
    EXPECT_DOUBLE_EQ(seg(gt, gt).item<double>(), 0.0);
    auto uniform = torch::full_like(gt, 1.0 / 6);
    EXPECT_NEAR(seg(gt, uniform).item<double>(), 30.0 / 36.0, 1e-12);
}

TEST(LossSeg, MatchesBruteForce) {
    auto gt = random_onehot(3, 6, 9, 7, 2);
    auto p = random_probs(3, 6, 9, 7, 3);
    const double oracle = brute_mse(gt, p);
    EXPECT_NEAR(seg(gt, p).item<double>(), oracle, 1e-10 * oracle);
    EXPECT_THROW(seg(gt, p.slice(2, 0, 8)), InvalidArgument);
}

TEST(LossA2S, FixedPointAndConstantAtlas) {
    auto gt = random_onehot(2, 6, 12, 10, 4);
    auto id = torch::zeros({2, 2, 12, 10}, kF64);
    EXPECT_NEAR(atlas_to_seg(gt, gt, id).item<double>(), 0.0, 1e-15);
    auto uniform = torch::full({1, 6, 12, 10}, 1.0 / 6, kF64);
    EXPECT_NEAR(atlas_to_seg(gt, uniform, random_disp(2, 12, 10, 3.0, 9)).item<double>(), 30.0 / 36.0, 1e-12);
}

TEST(LossA2S, MatchesComposedOracle) {
    auto gt = random_onehot(2, 6, 14, 11, 5);
    auto atlas = random_probs(1, 6, 14, 11, 6);
    auto disp = random_disp(2, 14, 11, 2.5, 31);
    const double oracle = brute_mse(gt, oracle_warp(atlas, disp));
    EXPECT_NEAR(atlas_to_seg(gt, atlas, disp).item<double>(), oracle, 1e-8);
}

TEST(LossS2A, FixedPointSymmetryAndOracle) {
    auto gt = random_onehot(2, 6, 14, 11, 7);
    auto id = torch::zeros({2, 2, 14, 11}, kF64);
    EXPECT_NEAR(seg_to_atlas(gt, id, gt).item<double>(), 0.0, 1e-15);
    auto atlas = random_probs(1, 6, 14, 11, 8);
    EXPECT_NEAR(seg_to_atlas(gt, id, atlas).item<double>(), atlas_to_seg(gt, atlas, id).item<double>(), 1e-14);
    auto disp = random_disp(2, 14, 11, 2.5, 41);
    const double oracle = brute_mse(oracle_warp(gt, disp), atlas.expand({2, -1, -1, -1}));
    EXPECT_NEAR(seg_to_atlas(gt, disp, atlas).item<double>(), oracle, 1e-8);
}

TEST(LossHlhs, ValuesAndBruteForce) {
    EXPECT_NEAR(hlhs(torch::ones({1}, kF64), torch::full({1}, 0.5, kF64)).item<double>(), std::log(2.0), 1e-15);
    EXPECT_LT(hlhs(torch::ones({1}, kF64), torch::ones({1}, kF64)).item<double>(), 1e-6);
    EXPECT_TRUE(std::isfinite(hlhs(torch::zeros({1}, kF64), torch::ones({1}, kF64)).item<double>()));
    torch::manual_seed(3);
    auto p = torch::rand({17}, kF64) * 0.98 + 0.01;
    auto y = torch::randint(0, 2, {17}, kF64);
    double s = 0;
    for (int i = 0; i < 17; ++i) {
        const double pi = p[i].item<double>(), yi = y[i].item<double>();
        s += -(yi * std::log(pi) + (1 - yi) * std::log(1 - pi));
    }
    EXPECT_NEAR(hlhs(y, p).item<double>(), s / 17, 1e-12);
}

TEST(LossTotal, WeightedSum) {
    auto one = torch::ones({}, kF64);
    LossParts parts{one, one, one, one, one};
    EXPECT_DOUBLE_EQ(total(parts, {1, 1, 1}).item<double>(), 5.0);
    auto t = [](double v) { return torch::full({}, v, kF64); };
    LossParts p2{t(0.3), t(0.7), t(1.1), t(2.9), t(0.4)};
    EXPECT_DOUBLE_EQ(total(p2, {0, 1, 0}).item<double>(), 0.3);
    EXPECT_NEAR(total(p2, {0, 5, 2}).item<double>(), 0.3 + 2 * 0.4, 1e-15);
    EXPECT_NEAR(total(p2, {1, 1000, 0}).item<double>(), 0.3 + 0.7 + 1.1 + 2900, 1e-9);
    EXPECT_NEAR(total(p2, {2, 3, 0.5}).item<double>(), 0.3 + 2 * (0.7 + 1.1 + 3 * 2.9) + 0.5 * 0.4, 1e-12);
}

TEST(LossTotal, MonotoneInEachPart) {
    auto t = [](double v) { return torch::full({}, v, kF64); };
    const LossWeights w{0.5, 10, 2};
    for (int k = 0; k < 5; ++k) {
        double prev = -1;
        for (double v : {0.0, 0.1, 1.0, 3.0}) {
            LossParts p{t(0.2), t(0.2), t(0.2), t(0.2), t(0.2)};
            torch::Tensor* slots[] = {&p.seg, &p.a2s, &p.s2a, &p.reg, &p.hlhs};
            *slots[k] = t(v);
            const double cur = total(p, w).item<double>();
            EXPECT_GE(cur, prev);
            prev = cur;
        }
    }
}

TEST(LossTotal, NonFiniteTermIsNamed) {
    auto t = [](double v) { return torch::full({}, v, kF64); };
    LossParts p{t(1), t(1), t(NAN), t(1), t(1)};
    try {
        total(p, {1, 1, 1});
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("L_s2a"), std::string::npos);
    }
    p.s2a = t(1);
    p.hlhs = t(INFINITY);
    EXPECT_THROW(total(p, {1, 1, 1}), NumericalError);
    EXPECT_THROW(total(p, {-1, 1, 1}), InvalidArgument);
}

TEST(LossTotal, GradientsMatchFiniteDifferences) {
    nn::ModelConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.seg.base_channels = 4;
    cfg.seg.depth = 3;
    cfg.seg.ssn_rank = 2;
    cfg.mapper.bottleneck_dim = 16;
    cfg.head = {8, 4};
    torch::manual_seed(12);
    nn::AtlasIstn model(cfg);
    model->to(torch::kFloat64);
    {
        torch::NoGradGuard guard;
        // Make the deformation and atlas non-trivial so every branch carries signal.
        for (auto& p : model->named_parameters()) {
            if (p.key() == "mapper.velocity_gain") p.value().fill_(2.0);
            if (p.key() == "atlas.logits") p.value().copy_(torch::randn_like(p.value()));
            if (p.key().find("affine_fc2.bias") != std::string::npos) p.value().add_(0.02 * torch::randn_like(p.value()));
        }
    }
    auto x = torch::rand({2, 1, 16, 16}, kF64);
    auto gt = random_onehot(2, 6, 16, 16, 13);
    auto y = torch::tensor({0.0, 1.0}, kF64);
    const LossWeights w{1.0, 1.0, 1.0};
    auto loss = [&] { return train::compute_losses(model, x, gt, y, w, 4).total; };
    int checked = 0;
    for (auto& p : model->named_parameters()) {
        // The stochastic heads do not enter the mean-field objective.
        if (p.key().find("factor_head") != std::string::npos || p.key().find("diag_head") != std::string::npos) continue;
        const double err = atlas_istn::testing::gradient_relative_error(loss, p.value(), 8, 1e-6);
        EXPECT_LE(err, 1e-4) << p.key();
        ++checked;
    }
    EXPECT_GT(checked, 20);
}

TEST(OneHot, Layout) {
    auto l = torch::tensor({{{0, 5}, {2, 1}}}, torch::kLong);
    auto oh = one_hot(l, 6);
    EXPECT_EQ(oh.sizes(), (std::vector<int64_t>{1, 6, 2, 2}));
    EXPECT_EQ(oh[0][5][0][1].item<float>(), 1.0f);
    EXPECT_EQ(oh[0][2][1][0].item<float>(), 1.0f);
    EXPECT_EQ(oh.sum().item<float>(), 4.0f);
}
