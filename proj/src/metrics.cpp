#include "atlas_istn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "atlas_istn/error.hpp"

namespace atlas_istn::eval {

using nlohmann::json;

double dice(const LabelMap& pred, const LabelMap& gt, int class_id) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) throw InvalidArgument("dice: shape mismatch");
    std::int64_t inter = 0, np = 0, ng = 0;
    const auto p = pred.values(), g = gt.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool a = p[i] == class_id, b = g[i] == class_id;
        np += a;
        ng += b;
        inter += a && b;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

double roc_auc(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) throw InvalidArgument("roc_auc: length mismatch");
    const std::size_t n = labels.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mid-ranks over tie groups (1-based).
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double n_pos = 0, n_neg = 0, rank_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("roc_auc: labels must be 0/1");
        if (labels[i] == 1) {
            n_pos += 1;
            rank_sum += rank[i];
        } else {
            n_neg += 1;
        }
    }
    if (n_pos == 0 || n_neg == 0) throw InvalidArgument("roc_auc: both classes must be present");
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

F1Result f1_and_confusion(std::span<const int> labels, std::span<const int> predictions) {
    if (labels.size() != predictions.size()) throw InvalidArgument("f1_and_confusion: length mismatch");
    F1Result r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = predictions[i];
        if ((t != 0 && t != 1) || (p != 0 && p != 1)) throw InvalidArgument("f1_and_confusion: inputs must be binary");
        ++r.confusion.counts[t][p];
    }
    auto f1 = [&](int c) {
        const double tp = static_cast<double>(r.confusion.counts[c][c]);
        const double fp = static_cast<double>(r.confusion.counts[1 - c][c]);
        const double fn = static_cast<double>(r.confusion.counts[c][1 - c]);
        const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    };
    r.f1_nc = f1(0);
    r.f1_hlhs = f1(1);
    return r;
}

double DiceSummary::mean_foreground() const {
    double s = 0;
    for (int c = 1; c < kNumClasses; ++c) s += mean[c];
    return s / (kNumClasses - 1);
}

DiceSummary summarize_dice(std::span<const LabelMap> preds, std::span<const LabelMap> gts) {
    if (preds.size() != gts.size() || preds.empty()) throw InvalidArgument("summarize_dice: need equal, non-empty sets");
    DiceSummary s;
    const double n = static_cast<double>(preds.size());
    for (int c = 0; c < kNumClasses; ++c) {
        double sum = 0, sum2 = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const double d = dice(preds[i], gts[i], c);
            sum += d;
            sum2 += d * d;
        }
        s.mean[c] = sum / n;
        s.std[c] = std::sqrt(std::max(0.0, sum2 / n - s.mean[c] * s.mean[c]));
    }
    return s;
}

void fill_classification(MetricsReport& report, std::span<const int> labels, std::span<const double> probabilities,
                         double threshold) {
    std::vector<int> hard(probabilities.size());
    for (std::size_t i = 0; i < hard.size(); ++i) hard[i] = probabilities[i] >= threshold ? 1 : 0;
    report.classification = f1_and_confusion(labels, hard);
    report.auc = roc_auc(labels, probabilities);
    report.threshold = threshold;
    report.n_test = static_cast<std::int64_t>(labels.size());
}

json to_json(const MetricsReport& r) {
    json dice_block = nullptr;
    if (r.has_dice) {
        dice_block = json::object();
        for (int c = 0; c < kNumClasses; ++c) {
            dice_block[kClassNames[c]] = {{"mean", r.dice.mean[c]}, {"std", r.dice.std[c]}};
        }
    }
    const auto& cm = r.classification.confusion.counts;
    return json{{"format_version", kMetricsFormatVersion},
                {"provenance",
                 {{"variant", r.variant},
                  {"classifier", r.classifier},
                  {"seg_source", r.seg_source},
                  {"lambda", r.lambda},
                  {"gamma", r.gamma}}},
                {"dice", dice_block},
                {"confusion", {{"rows", "true [NC, HLHS]"}, {"cols", "pred [NC, HLHS]"}, {"counts", cm}}},
                {"f1", {{"NC", r.classification.f1_nc}, {"HLHS", r.classification.f1_hlhs}}},
                {"auc", r.auc},
                {"threshold", r.threshold},
                {"n_test", r.n_test}};
}

MetricsReport report_from_json(const json& j) {
    if (j.at("format_version").get<int>() != kMetricsFormatVersion) throw IoError("unsupported report format_version");
    MetricsReport r;
    const auto& p = j.at("provenance");
    r.variant = p.at("variant").get<std::string>();
    r.classifier = p.at("classifier").get<std::string>();
    r.seg_source = p.at("seg_source").get<std::string>();
    r.lambda = p.at("lambda").get<double>();
    r.gamma = p.at("gamma").get<double>();
    if (!j.at("dice").is_null()) {
        r.has_dice = true;
        for (int c = 0; c < kNumClasses; ++c) {
            r.dice.mean[c] = j.at("dice").at(kClassNames[c]).at("mean").get<double>();
            r.dice.std[c] = j.at("dice").at(kClassNames[c]).at("std").get<double>();
        }
    }
    r.classification.confusion.counts =
        j.at("confusion").at("counts").get<std::array<std::array<std::int64_t, 2>, 2>>();
    r.classification.f1_nc = j.at("f1").at("NC").get<double>();
    r.classification.f1_hlhs = j.at("f1").at("HLHS").get<double>();
    r.auc = j.at("auc").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.n_test = j.at("n_test").get<std::int64_t>();
    return r;
}

}  // namespace atlas_istn::eval
