#include <gtest/gtest.h>

#include <random>

#include "atlas_istn/error.hpp"
#include "atlas_istn/metrics.hpp"

using namespace atlas_istn;
using namespace atlas_istn::eval;

namespace {

double pair_count_auc(const std::vector<int>& y, const std::vector<double>& s) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                den += 1;
                num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return num / den;
}

}  // namespace

TEST(Dice, HandValues) {
    LabelMap a(4, 6, 2), b(4, 6, 2);
    EXPECT_DOUBLE_EQ(dice(a, b, 2), 1.0);
    EXPECT_DOUBLE_EQ(dice(a, b, 3), 1.0);  // both empty
    LabelMap c(4, 6, 3);
    EXPECT_DOUBLE_EQ(dice(a, c, 2), 0.0);
    LabelMap half(4, 6, 0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 3; ++x) half(y, x) = 2;
    EXPECT_DOUBLE_EQ(dice(half, a, 2), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(dice(a, half, 2), dice(half, a, 2));
    EXPECT_THROW(dice(a, LabelMap(4, 5), 1), InvalidArgument);
}

TEST(Dice, SummaryStatistics) {
    LabelMap gt(2, 2, 1), p1(2, 2, 1), p2(2, 2, 0);
    p2(0, 0) = 1;
    std::vector<LabelMap> preds = {p1, p2}, gts = {gt, gt};
    auto s = summarize_dice(preds, gts);
    EXPECT_DOUBLE_EQ(s.mean[1], (1.0 + 0.4) / 2);
    EXPECT_DOUBLE_EQ(s.std[1], 0.3);
    EXPECT_DOUBLE_EQ(s.mean[2], 1.0);
}

TEST(Auc, PerfectTiesAndBruteForce) {
    std::vector<int> y = {0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(roc_auc(y, std::vector<double>{0.1, 0.2, 0.3, 0.9}), 1.0);
    EXPECT_DOUBLE_EQ(roc_auc(y, std::vector<double>{0.4, 0.4, 0.4, 0.4}), 0.5);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> labels(20);
        std::vector<double> scores(20);
        for (int i = 0; i < 20; ++i) {
            labels[i] = i < 3 ? i % 2 : static_cast<int>(rng() % 2);
            scores[i] = static_cast<double>(rng() % 8) / 8.0;  // plenty of ties
        }
        EXPECT_EQ(roc_auc(labels, scores), pair_count_auc(labels, scores));
        std::vector<double> distinct(20), negated(20);
        for (int i = 0; i < 20; ++i) {
            distinct[i] = static_cast<double>(rng()) / 1e19 + i * 1e-3;
            negated[i] = -distinct[i];
        }
        EXPECT_NEAR(roc_auc(labels, distinct) + roc_auc(labels, negated), 1.0, 1e-15);
    }
    EXPECT_THROW(roc_auc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}), InvalidArgument);
    EXPECT_THROW(roc_auc(std::vector<int>{1, 0}, std::vector<double>{0.1}), InvalidArgument);
}

TEST(F1, HandCounts) {
    std::vector<int> y = {0, 0, 0, 1, 1};
    auto all = f1_and_confusion(y, y);
    EXPECT_EQ(all.confusion.counts[0][0], 3);
    EXPECT_EQ(all.confusion.counts[1][1], 2);
    EXPECT_EQ(all.confusion.counts[0][1] + all.confusion.counts[1][0], 0);
    EXPECT_DOUBLE_EQ(all.f1_nc, 1.0);
    EXPECT_DOUBLE_EQ(all.f1_hlhs, 1.0);

    std::vector<int> prev(10, 0), none(10, 0);
    prev[4] = 1;
    auto z = f1_and_confusion(prev, none);
    EXPECT_DOUBLE_EQ(z.f1_hlhs, 0.0);
    EXPECT_DOUBLE_EQ(z.f1_nc, 2 * 0.9 * 1.0 / 1.9);

    std::mt19937_64 rng(5);
    std::vector<int> t(40), p(40);
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (int i = 0; i < 40; ++i) {
        t[i] = static_cast<int>(rng() % 2);
        p[i] = static_cast<int>(rng() % 2);
        tp += t[i] && p[i];
        fp += !t[i] && p[i];
        fn += t[i] && !p[i];
        tn += !t[i] && !p[i];
    }
    auto r = f1_and_confusion(t, p);
    EXPECT_EQ(r.confusion.counts[1][1], tp);
    EXPECT_EQ(r.confusion.counts[0][1], fp);
    EXPECT_EQ(r.confusion.counts[1][0], fn);
    EXPECT_EQ(r.confusion.counts[0][0], tn);
    EXPECT_EQ(r.confusion.total(), 40);
    EXPECT_DOUBLE_EQ(r.f1_hlhs, 2.0 * tp / (2.0 * tp + fp + fn));
    EXPECT_DOUBLE_EQ(r.f1_nc, 2.0 * tn / (2.0 * tn + fn + fp));
    EXPECT_THROW(f1_and_confusion(t, std::vector<int>(3)), InvalidArgument);
}

TEST(Report, JsonRoundTripAndTotals) {
    MetricsReport r;
    r.variant = "atlas_g1_l1";
    r.classifier = "gp";
    r.seg_source = "seg_prediction";
    r.lambda = 1;
    r.gamma = 1;
    r.has_dice = true;
    r.dice.mean = {0.99, 0.9, 0.91, 0.88, 0.87, 0.86};
    std::vector<int> y = {0, 1, 0, 1, 0};
    std::vector<double> p = {0.1, 0.8, 0.6, 0.4, 0.2};
    fill_classification(r, y, p);
    EXPECT_EQ(r.classification.confusion.total(), 5);
    EXPECT_EQ(r.n_test, 5);
    auto j = to_json(r);
    EXPECT_EQ(j.at("format_version"), kMetricsFormatVersion);
    auto back = report_from_json(j);
    EXPECT_EQ(to_json(back), j);
    EXPECT_EQ(back.classification.confusion, r.classification.confusion);
}
