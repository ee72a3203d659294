#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "atlas_istn/image.hpp"

namespace atlas_istn::eval {

inline constexpr int kMetricsFormatVersion = 1;

// 2|P n G| / (|P| + |G|) for one class; 1.0 when both masks are empty.
double dice(const LabelMap& pred, const LabelMap& gt, int class_id);

// Mann-Whitney AUC; ties between a positive and a negative count 1/2.
// Labels are 0/1; throws InvalidArgument when only one class is present.
double roc_auc(std::span<const int> labels, std::span<const double> scores);

// Rows are the true class, columns the predicted class: [NC, HLHS].
struct Confusion {
    std::array<std::array<std::int64_t, 2>, 2> counts{};
    std::int64_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
    bool operator==(const Confusion&) const = default;
};

struct F1Result {
    Confusion confusion;
    double f1_nc = 0.0;
    double f1_hlhs = 0.0;
};

// Per-class F1 = 2PR/(P+R), defined as 0 when P + R = 0.
F1Result f1_and_confusion(std::span<const int> labels, std::span<const int> predictions);

struct DiceSummary {
    std::array<double, kNumClasses> mean{};
    std::array<double, kNumClasses> std{};
    double mean_foreground() const;
};

// Per-class Dice mean and (population) standard deviation over samples.
DiceSummary summarize_dice(std::span<const LabelMap> preds, std::span<const LabelMap> gts);

struct MetricsReport {
    std::string variant;      // expert, unet, ssn, atlas_g0_l1, ...
    std::string classifier;   // lr, gp, h
    std::string seg_source;   // expert_gt or seg_prediction
    double lambda = 0.0;
    double gamma = 0.0;
    bool has_dice = false;
    DiceSummary dice;
    F1Result classification;
    double auc = 0.0;
    double threshold = 0.5;
    std::int64_t n_test = 0;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

// Builds the report's classification block from labels, probabilities and a
// hard-label threshold.
void fill_classification(MetricsReport& report, std::span<const int> labels, std::span<const double> probabilities,
                         double threshold = 0.5);

}  // namespace atlas_istn::eval
