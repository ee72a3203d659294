#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "atlas_istn/image.hpp"

namespace atlas_istn::features {

inline constexpr int kNumFeatures = 10;

// expert_gt: ground-truth label maps. seg_prediction: argmax of the mean
// logits. atlas_warped: atlas resampled into image space (robustness study).
enum class Source { ExpertGt, SegPrediction, AtlasWarped };
std::string to_string(Source s);
Source source_from_string(const std::string& s);

using AreaCounts = std::array<std::int64_t, kNumClasses>;

// Pixel count per class id, background included.
AreaCounts area_counts(const LabelMap& labels);

// Canonical feature order: class-id pairs (a, b) with 1 <= a < b <= 5 in
// lexicographic order, i.e. LA/RA, LA/LV, LA/RV, LA/WH, RA/LV, RA/RV, RA/WH,
// LV/RV, LV/WH, RV/WH. Each feature is A_a / A_b.
const std::array<std::pair<int, int>, kNumFeatures>& feature_pairs();
const std::array<std::string, kNumFeatures>& feature_names();  // "r_LA_RA", ...

struct RatioFeatures {
    std::array<double, kNumFeatures> f{};
    Source source = Source::SegPrediction;
    bool eps_floored = false;  // some class area was 0 and replaced by eps
};

// With wh_excludes_chambers = false the WH area is taken as the filled heart
// (WH plus the four chambers). Zero areas are floored to eps pixels and
// flagged. Throws InvalidArgument("empty segmentation") when every foreground
// class is empty.
RatioFeatures ratio_features(const AreaCounts& areas, Source source, bool wh_excludes_chambers = true,
                             double eps = 1.0);

struct FeatureRow {
    std::string id;
    RatioFeatures features;
    int hlhs = 0;
};

// CSV columns: id, the ten ratio columns, source, hlhs, eps_floored.
void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_feature_csv(const std::filesystem::path& path);

Eigen::MatrixXd to_matrix(const std::vector<FeatureRow>& rows);
std::vector<int> to_labels(const std::vector<FeatureRow>& rows);

// Per-column mean and population standard deviation from training rows.
// Constant columns keep a scale of 1.
struct Standardizer {
    Eigen::VectorXd mean, scale;

    static Standardizer fit(const Eigen::MatrixXd& x);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

}  // namespace atlas_istn::features
